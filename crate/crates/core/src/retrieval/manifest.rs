use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset manifest listing tagged image sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    /// Optional embedding table (`token v1 ... ve` lines).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Optional `MFV1` file with precomputed whole-image features, keyed by
    /// each image's `featureId`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_file: Option<PathBuf>,
    pub sets: Vec<SetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SetEntry {
    pub set_id: String,
    pub tags: Vec<String>,
    pub images: Vec<ImageEntry>,
    #[serde(default)]
    pub annotated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImageEntry {
    pub id: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_id: Option<String>,
}

impl Manifest {
    /// Reads and validates a manifest; relative paths are resolved against
    /// the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut manifest: Manifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::ManifestInvalid(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.resolve_paths(base);
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.embeddings.as_mut() {
            fix(p);
        }
        if let Some(p) = self.feature_file.as_mut() {
            fix(p);
        }
        for set in &mut self.sets {
            for img in &mut set.images {
                fix(&mut img.path);
                if let Some(m) = img.mask_path.as_mut() {
                    fix(m);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut set_ids = BTreeSet::new();
        let mut image_ids = BTreeSet::new();
        for set in &self.sets {
            if !set_ids.insert(set.set_id.as_str()) {
                return Err(Error::ManifestInvalid(format!("duplicate set {:?}", set.set_id)));
            }
            if set.tags.iter().all(|t| t.trim().is_empty()) {
                return Err(Error::ManifestInvalid(format!("set {:?} has no tags", set.set_id)));
            }
            if set.images.is_empty() {
                return Err(Error::ManifestInvalid(format!("set {:?} has no images", set.set_id)));
            }
            for img in &set.images {
                if !image_ids.insert(img.id.as_str()) {
                    return Err(Error::ManifestInvalid(format!("duplicate image {:?}", img.id)));
                }
            }
        }
        if self.sets.is_empty() {
            return Err(Error::ManifestInvalid("no sets".into()));
        }
        Ok(())
    }

    pub fn set(&self, set_id: &str) -> Option<&SetEntry> {
        self.sets.iter().find(|s| s.set_id == set_id)
    }

    /// The set containing `image_id` and the image entry.
    pub fn image(&self, image_id: &str) -> Option<(&SetEntry, &ImageEntry)> {
        self.sets
            .iter()
            .find_map(|s| s.images.iter().find(|i| i.id == image_id).map(|i| (s, i)))
    }
}
