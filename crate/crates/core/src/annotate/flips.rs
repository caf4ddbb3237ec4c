use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnnotationSession;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{describe_image, project, FeatureVector, PcaModel};
use crate::imaging::{context_box, crop_context, RasterImage, SuperpixelPartition};
use crate::retrieval::{AtomSource, Dictionary, DictionaryKind};
use crate::sparsecode::omp_encode;

/// Context features of recorded label corrections: `pos` holds regions
/// wrongly presented as object, `neg` regions wrongly presented as
/// background.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipDictionaries {
    pub pos: Dictionary,
    pub neg: Dictionary,
    /// A side is consulted only once it holds at least this many atoms.
    pub min_atoms: usize,
}

/// Coarse regions whose corrections were added by [`record_flips`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FlipRecord {
    pub false_positives: Vec<u32>,
    pub false_negatives: Vec<u32>,
}

impl FlipRecord {
    pub fn is_empty(&self) -> bool {
        self.false_positives.is_empty() && self.false_negatives.is_empty()
    }
}

impl FlipDictionaries {
    pub fn new(dims: usize, min_atoms: usize) -> Self {
        FlipDictionaries {
            pos: Dictionary::new(DictionaryKind::FlipPos, dims),
            neg: Dictionary::new(DictionaryKind::FlipNeg, dims),
            min_atoms,
        }
    }

    fn side(&self, label: bool) -> &Dictionary {
        if label {
            &self.pos
        } else {
            &self.neg
        }
    }

    pub fn is_active(&self, label: bool) -> bool {
        let d = self.side(label);
        !d.is_empty() && d.len() >= self.min_atoms
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.pos
            .save(&dir.join("flip_pos.mfv"), &dir.join("flip_pos.json"))?;
        self.neg
            .save(&dir.join("flip_neg.mfv"), &dir.join("flip_neg.json"))
    }

    /// Loads saved dictionaries, or starts empty ones when none exist.
    pub fn load_or_new(dir: &Path, dims: usize, min_atoms: usize) -> Result<Self> {
        if !dir.join("flip_pos.json").exists() {
            return Ok(Self::new(dims, min_atoms));
        }
        let pos = Dictionary::load(&dir.join("flip_pos.mfv"), &dir.join("flip_pos.json"))?;
        let neg = Dictionary::load(&dir.join("flip_neg.mfv"), &dir.join("flip_neg.json"))?;
        if pos.dims() != dims || neg.dims() != dims {
            return Err(Error::dims(dims, pos.dims()));
        }
        Ok(FlipDictionaries {
            pos,
            neg,
            min_atoms,
        })
    }
}

/// Projected descriptors of the context boxes of orders `1..=scales` around
/// a coarse region.
pub fn context_features(
    img: &RasterImage,
    coarse: &SuperpixelPartition,
    region: u32,
    scales: u32,
    pca: &PcaModel,
) -> Result<Vec<FeatureVector>> {
    (1..=scales)
        .map(|n| {
            let cb = context_box(coarse, region, n)?;
            let crop = crop_context(img, &cb.rect, None)?;
            project(pca, &describe_image(&crop))
        })
        .collect()
}

const BAND_SLACK: f64 = 1e-12;

/// Inverts the presented label of every coarse region in the uncertainty
/// band whose context is explained by a short code over the matching flip
/// dictionary. Runs once, before any click. Returns the flipped regions.
pub fn auto_refine(
    session: &mut AnnotationSession,
    img: &RasterImage,
    flips: &FlipDictionaries,
    pca: &PcaModel,
    cfg: &PipelineConfig,
) -> Result<Vec<u32>> {
    if session.is_refined() || !session.clicks().is_empty() || session.is_sealed() {
        return Err(Error::InvalidParameter(
            "auto refinement must run once on an untouched session".into(),
        ));
    }
    let (lo, hi) = (cfg.beta0 - cfg.delta_beta, cfg.beta0 + cfg.delta_beta);
    let omp = cfg.omp();
    let candidates: Vec<(u32, bool)> = session
        .probabilities()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= lo - BAND_SLACK && p <= hi + BAND_SLACK)
        .map(|(c, _)| (c as u32, session.presented_labels()[c]))
        .filter(|&(_, label)| flips.is_active(label))
        .collect();
    let decisions: Vec<Option<u32>> = candidates
        .par_iter()
        .map(|&(c, label)| {
            let dict = flips.side(label);
            let feats = context_features(img, session.coarse(), c, cfg.context_scales, pca)?;
            let mut best = 1.0f64;
            for f in feats.iter().filter(|f| !f.is_degenerate()) {
                best = best.min(omp_encode(dict, f, &omp)?.normalized_length(&omp));
            }
            Ok((best <= cfg.beta1).then_some(c))
        })
        .collect::<Result<_>>()?;
    let flipped: Vec<u32> = decisions.into_iter().flatten().collect();
    for &c in &flipped {
        let label = session.presented_labels()[c as usize];
        session.set_presented(c, !label);
    }
    session.mark_refined(&flipped);
    Ok(flipped)
}

/// Adds the context features of every coarse region whose final label
/// differs from the presented one to the matching flip dictionary.
pub fn record_flips(
    session: &AnnotationSession,
    img: &RasterImage,
    flips: &mut FlipDictionaries,
    pca: &PcaModel,
    scales: u32,
    set_id: &str,
) -> Result<FlipRecord> {
    let finals = session.final_coarse_labels();
    let mut record = FlipRecord::default();
    for (c, (&shown, &now)) in session.presented_labels().iter().zip(&finals).enumerate() {
        if shown == now {
            continue;
        }
        let c = c as u32;
        let feats = context_features(img, session.coarse(), c, scales, pca)?;
        let dict = if shown {
            record.false_positives.push(c);
            &mut flips.pos
        } else {
            record.false_negatives.push(c);
            &mut flips.neg
        };
        for (n, f) in feats.iter().enumerate() {
            dict.push(
                f,
                AtomSource {
                    set_id: set_id.to_string(),
                    item_id: format!("{}/{c}", session.image_id()),
                    scale: Some(n as u32 + 1),
                },
            )?;
        }
    }
    Ok(record)
}
