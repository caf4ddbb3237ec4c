//! A manifest together with its embeddings and per-image descriptors.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{describe_image, load_embeddings, load_feature_file, EmbeddingTable, FeatureVector};
use crate::imaging::{load_image, load_mask_png, Mask, RasterImage};
use crate::retrieval::{
    build_agent_knowledge, object_feature, AgentKnowledge, FeatureStore, ImageEntry,
    ImageSetRecord, Manifest, SetEntry,
};

#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: Manifest,
    table: EmbeddingTable,
    records: Vec<ImageSetRecord>,
    store: FeatureStore,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        Self::from_manifest(Manifest::load(manifest_path)?)
    }

    /// Reads every image once to compute whole-image descriptors, and every
    /// mask of an annotated set to compute object descriptors.
    pub fn from_manifest(manifest: Manifest) -> Result<Self> {
        manifest.validate()?;
        let table = match &manifest.embeddings {
            Some(p) => load_embeddings(p)?,
            None => {
                log::warn!("manifest has no embeddings; only identical tags will match");
                EmbeddingTable::default()
            }
        };
        let jobs: Vec<(&SetEntry, &ImageEntry)> = manifest
            .sets
            .iter()
            .flat_map(|s| s.images.iter().map(move |i| (s, i)))
            .collect();
        type Described = (String, FeatureVector, Option<Option<FeatureVector>>);
        let described: Vec<Described> = jobs
            .par_iter()
            .map(|(set, entry)| {
                let img = load_image(&entry.path)?;
                let object = if set.annotated {
                    let path = entry
                        .mask_path
                        .as_ref()
                        .ok_or_else(|| Error::MissingMask(entry.id.clone()))?;
                    let mask = load_truth_mask(path, &img)?;
                    Some(object_feature(&img, &mask)?)
                } else {
                    None
                };
                Ok((entry.id.clone(), describe_image(&img), object))
            })
            .collect::<Result<_>>()?;
        let mut store = FeatureStore::default();
        for (id, image, object) in described {
            store.images.insert(id.clone(), image);
            if let Some(o) = object {
                store.objects.insert(id, o);
            }
        }

        let visual = match &manifest.feature_file {
            Some(path) => {
                let external: BTreeMap<String, FeatureVector> =
                    load_feature_file(path)?.into_iter().collect();
                let mut out = BTreeMap::new();
                for (_, entry) in &jobs {
                    let key = entry.feature_id.as_ref().unwrap_or(&entry.id);
                    let v = external
                        .get(key)
                        .ok_or_else(|| Error::MissingFeatures(key.clone()))?;
                    out.insert(entry.id.clone(), v.clone());
                }
                out
            }
            None => store.images.clone(),
        };
        let records = manifest
            .sets
            .iter()
            .map(|s| {
                ImageSetRecord::new(
                    s.set_id.clone(),
                    s.tags.clone(),
                    s.images.iter().map(|i| i.id.clone()).collect(),
                    &visual,
                    s.annotated,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            manifest,
            table,
            records,
            store,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn records(&self) -> &[ImageSetRecord] {
        &self.records
    }

    pub fn record(&self, set_id: &str) -> Option<&ImageSetRecord> {
        self.records.iter().find(|r| r.set_id == set_id)
    }

    pub fn store(&self) -> &FeatureStore {
        &self.store
    }

    /// Sets without masks, i.e. those that need annotating.
    pub fn query_sets(&self) -> Vec<&SetEntry> {
        self.manifest.sets.iter().filter(|s| !s.annotated).collect()
    }

    pub fn image_entry(&self, image_id: &str) -> Result<(&SetEntry, &ImageEntry)> {
        self.manifest
            .image(image_id)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown image {image_id:?}")))
    }

    pub fn load_image(&self, image_id: &str) -> Result<RasterImage> {
        load_image(&self.image_entry(image_id)?.1.path)
    }

    /// Reference mask of an image, checked against the image size.
    pub fn load_truth(&self, image_id: &str, img: &RasterImage) -> Result<Mask> {
        let (_, entry) = self.image_entry(image_id)?;
        let path = entry
            .mask_path
            .as_ref()
            .ok_or_else(|| Error::MissingMask(image_id.to_string()))?;
        load_truth_mask(path, img)
    }

    pub fn knowledge(&self, set_id: &str, cfg: &PipelineConfig) -> Result<AgentKnowledge> {
        let query = self
            .record(set_id)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown set {set_id:?}")))?;
        build_agent_knowledge(query, &self.records, &self.table, &self.store, cfg)
    }
}

fn load_truth_mask(path: &Path, img: &RasterImage) -> Result<Mask> {
    let mask = load_mask_png(path)?;
    if (mask.width(), mask.height()) != (img.width(), img.height()) {
        return Err(Error::dims(
            format!("{}x{}", img.width(), img.height()),
            format!("{}x{}", mask.width(), mask.height()),
        ));
    }
    Ok(mask)
}
