use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{file, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DictionaryKind {
    Weak,
    Strong,
    /// Recorded false positives.
    FlipPos,
    /// Recorded false negatives.
    FlipNeg,
}

/// Where an atom came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AtomSource {
    pub set_id: String,
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<u32>,
}

/// Column matrix of unit-norm atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    kind: DictionaryKind,
    dims: usize,
    /// Atom `k` occupies `atoms[k * dims..(k + 1) * dims]`.
    atoms: Vec<f64>,
    provenance: Vec<AtomSource>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DictionarySidecar {
    kind: DictionaryKind,
    dims: usize,
    atoms: Vec<AtomSource>,
}

impl Dictionary {
    pub fn new(kind: DictionaryKind, dims: usize) -> Self {
        Dictionary {
            kind,
            dims,
            atoms: Vec::new(),
            provenance: Vec::new(),
        }
    }

    /// Builds a dictionary from raw columns, normalizing each one.
    pub fn from_columns(kind: DictionaryKind, dims: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut dict = Dictionary::new(kind, dims);
        for (k, col) in columns.iter().enumerate() {
            let source = AtomSource {
                set_id: String::new(),
                item_id: k.to_string(),
                scale: None,
            };
            if !dict.push(&FeatureVector::unit(col.clone()), source)? {
                return Err(Error::InvalidParameter(format!("column {k} is zero")));
            }
        }
        Ok(dict)
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.dims..(k + 1) * self.dims]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks_exact(self.dims.max(1))
    }

    pub fn provenance(&self) -> &[AtomSource] {
        &self.provenance
    }

    /// Appends a normalized copy of `atom`. Degenerate vectors are skipped
    /// and reported with `Ok(false)`.
    pub fn push(&mut self, atom: &FeatureVector, source: AtomSource) -> Result<bool> {
        if atom.dims() != self.dims {
            return Err(Error::dims(self.dims, atom.dims()));
        }
        let unit = FeatureVector::unit(atom.values().to_vec());
        if unit.is_degenerate() {
            log::warn!(
                "skipping degenerate {:?} atom {}/{}",
                self.kind,
                source.set_id,
                source.item_id
            );
            return Ok(false);
        }
        self.atoms.extend_from_slice(unit.values());
        self.provenance.push(source);
        Ok(true)
    }

    pub fn extend(&mut self, other: &Dictionary) -> Result<()> {
        if other.dims != self.dims {
            return Err(Error::dims(self.dims, other.dims));
        }
        self.atoms.extend_from_slice(&other.atoms);
        self.provenance.extend(other.provenance.iter().cloned());
        Ok(())
    }

    /// Writes the atoms as an `MFV1` file plus a JSON sidecar with the kind
    /// and per-atom provenance.
    pub fn save(&self, features_path: &Path, sidecar_path: &Path) -> Result<()> {
        let ids: Vec<String> = (0..self.len()).map(|k| k.to_string()).collect();
        file::write_feature_file(
            features_path,
            self.dims,
            ids.iter().enumerate().map(|(k, id)| (id.as_str(), self.atom(k))),
        )?;
        let sidecar = DictionarySidecar {
            kind: self.kind,
            dims: self.dims,
            atoms: self.provenance.clone(),
        };
        std::fs::write(sidecar_path, serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(features_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let sidecar: DictionarySidecar = serde_json::from_slice(&std::fs::read(sidecar_path)?)?;
        let items = file::load_feature_file_with_dims(features_path, sidecar.dims)?;
        if items.len() != sidecar.atoms.len() {
            return Err(Error::MalformedFile(format!(
                "{} atoms but {} provenance entries",
                items.len(),
                sidecar.atoms.len()
            )));
        }
        let mut dict = Dictionary::new(sidecar.kind, sidecar.dims);
        for ((_, vector), source) in items.into_iter().zip(sidecar.atoms) {
            if !dict.push(&vector, source)? {
                return Err(Error::MalformedFile("stored atom is zero".into()));
            }
        }
        Ok(dict)
    }
}
