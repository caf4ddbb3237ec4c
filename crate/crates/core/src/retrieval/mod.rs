//! Image-set similarity, related-set selection and weak/strong dictionary
//! construction.

mod dictionary;
mod manifest;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dictionary::{AtomSource, Dictionary, DictionaryKind};
pub use manifest::{ImageEntry, Manifest, SetEntry};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{dot, fit_pca, project, tag_vector, EmbeddingTable, FeatureVector, PcaModel};
use crate::imaging::{crop_context, Mask, RasterImage};

/// Summary of one tagged image set.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSetRecord {
    pub set_id: String,
    pub tags: Vec<String>,
    pub image_ids: Vec<String>,
    /// Unnormalized mean of the member images' unit features.
    pub mean_feature: Vec<f64>,
    pub has_masks: bool,
}

impl ImageSetRecord {
    pub fn new(
        set_id: impl Into<String>,
        tags: Vec<String>,
        image_ids: Vec<String>,
        features: &BTreeMap<String, FeatureVector>,
        has_masks: bool,
    ) -> Result<Self> {
        let set_id = set_id.into();
        if tags.is_empty() {
            return Err(Error::EmptyTagList);
        }
        if image_ids.is_empty() {
            return Err(Error::InvalidParameter(format!("set {set_id} has no images")));
        }
        let vectors = image_ids
            .iter()
            .map(|id| features.get(id).ok_or_else(|| Error::MissingFeatures(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        let mean_feature = mean_vector(&vectors)?;
        Ok(ImageSetRecord {
            set_id,
            tags,
            image_ids,
            mean_feature,
            has_masks,
        })
    }

    /// Mean feature renormalized to unit length.
    pub fn mean_visual(&self) -> FeatureVector {
        FeatureVector::unit(self.mean_feature.clone())
    }
}

fn mean_vector(vectors: &[&FeatureVector]) -> Result<Vec<f64>> {
    let dims = vectors.first().map(|v| v.dims()).unwrap_or(0);
    let mut mean = vec![0.0; dims];
    for v in vectors {
        if v.dims() != dims {
            return Err(Error::dims(dims, v.dims()));
        }
        for (m, x) in mean.iter_mut().zip(v.values()) {
            *m += x;
        }
    }
    let n = vectors.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Mean cosine similarity over all tag pairs.
pub fn linguistic_similarity(a: &[String], b: &[String], table: &EmbeddingTable) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyTagList);
    }
    let va: Vec<_> = a.iter().map(|t| tag_vector(table, t)).collect();
    let vb: Vec<_> = b.iter().map(|t| tag_vector(table, t)).collect();
    let total: f64 = va
        .iter()
        .flat_map(|x| vb.iter().map(move |y| x.similarity(y)))
        .sum();
    Ok(total / (a.len() * b.len()) as f64)
}

/// Mean inner product over all image pairs, computed as the inner product
/// of the two mean vectors.
pub fn visual_similarity(a: &[FeatureVector], b: &[FeatureVector]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::MissingFeatures("empty image set".into()));
    }
    let ma = mean_vector(&a.iter().collect::<Vec<_>>())?;
    let mb = mean_vector(&b.iter().collect::<Vec<_>>())?;
    if ma.len() != mb.len() {
        return Err(Error::dims(ma.len(), mb.len()));
    }
    Ok(dot(&ma, &mb))
}

/// Visual similarity of two records from their stored means.
pub fn record_visual_similarity(a: &ImageSetRecord, b: &ImageSetRecord) -> Result<f64> {
    if a.mean_feature.len() != b.mean_feature.len() {
        return Err(Error::dims(a.mean_feature.len(), b.mean_feature.len()));
    }
    Ok(dot(&a.mean_feature, &b.mean_feature))
}

/// Harmonic combination `2·sl·sv / (sl + sv)`; 0 when the denominator
/// vanishes.
pub fn set_similarity(sl: f64, sv: f64) -> f64 {
    let denom = sl + sv;
    if denom <= 1e-12 {
        return 0.0;
    }
    2.0 * sl * sv / denom
}

/// [`set_similarity`] after clamping both inputs to [0, 1].
pub fn combined_similarity(sl: f64, sv: f64) -> f64 {
    set_similarity(sl.clamp(0.0, 1.0), sv.clamp(0.0, 1.0))
}

/// A set chosen as supervision for a query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RelatedSet {
    pub set_id: String,
    pub similarity: f64,
    pub annotated: bool,
}

/// Ranks `corpus` (minus the query itself) by combined similarity and keeps
/// those above `threshold`; if none pass, keeps the top `fallback` sets.
pub fn select_related_sets<'a>(
    query: &ImageSetRecord,
    corpus: &'a [ImageSetRecord],
    table: &EmbeddingTable,
    threshold: f64,
    fallback: usize,
) -> Result<Vec<(&'a ImageSetRecord, f64)>> {
    let mut ranked = Vec::with_capacity(corpus.len());
    for record in corpus.iter().filter(|r| r.set_id != query.set_id) {
        let sl = linguistic_similarity(&query.tags, &record.tags, table)?;
        let sv = record_visual_similarity(query, record)?;
        ranked.push((record, combined_similarity(sl, sv)));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.set_id.cmp(&b.0.set_id)));
    let passing = ranked.iter().take_while(|(_, s)| *s > threshold).count();
    if passing > 0 {
        ranked.truncate(passing);
    } else {
        log::warn!(
            "no set above similarity {threshold} for {}; keeping top {fallback}",
            query.set_id
        );
        ranked.truncate(fallback);
    }
    Ok(ranked)
}

/// Feature of a masked object: the mask's bounding box cropped with
/// out-of-mask pixels zeroed. `None` for an empty mask.
pub fn object_feature(img: &RasterImage, mask: &Mask) -> Result<Option<FeatureVector>> {
    let Some(rect) = mask.bounding_box() else {
        return Ok(None);
    };
    let crop = crop_context(img, &rect, Some(mask))?;
    crate::features::describe_region(&crop, &mask.crop(&rect)).map(Some)
}

fn build_dictionary<'a>(
    kind: DictionaryKind,
    sets: &[&ImageSetRecord],
    lookup: impl Fn(&str) -> Result<Option<&'a FeatureVector>>,
    pca: &PcaModel,
) -> Result<Dictionary> {
    let mut dict = Dictionary::new(kind, pca.output_dims);
    for set in sets {
        for id in &set.image_ids {
            let Some(feature) = lookup(id)? else {
                log::warn!("{kind:?} dictionary: image {id} has an empty mask, skipped");
                continue;
            };
            let source = AtomSource {
                set_id: set.set_id.clone(),
                item_id: id.clone(),
                scale: None,
            };
            let projected = project(pca, feature)?;
            dict.push(&projected, source)?;
        }
    }
    if dict.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    Ok(dict)
}

/// One atom per whole image of the given sets.
pub fn build_weak_dictionary(
    sets: &[&ImageSetRecord],
    image_features: &BTreeMap<String, FeatureVector>,
    pca: &PcaModel,
) -> Result<Dictionary> {
    build_dictionary(
        DictionaryKind::Weak,
        sets,
        |id| {
            image_features
                .get(id)
                .map(Some)
                .ok_or_else(|| Error::MissingFeatures(id.to_string()))
        },
        pca,
    )
}

/// One atom per annotated object; `None` entries are empty masks.
pub fn build_strong_dictionary(
    sets: &[&ImageSetRecord],
    object_features: &BTreeMap<String, Option<FeatureVector>>,
    pca: &PcaModel,
) -> Result<Dictionary> {
    build_dictionary(
        DictionaryKind::Strong,
        sets,
        |id| {
            object_features
                .get(id)
                .map(Option::as_ref)
                .ok_or_else(|| Error::MissingMask(id.to_string()))
        },
        pca,
    )
}

/// Supervision assembled for one query set.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentKnowledge {
    pub query_set: String,
    pub related: Vec<RelatedSet>,
    pub pca: PcaModel,
    pub weak: Dictionary,
    pub strong: Option<Dictionary>,
}

/// Descriptor-space features available for dictionary construction.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    /// Whole-image descriptors by image id.
    pub images: BTreeMap<String, FeatureVector>,
    /// Masked-object descriptors by image id (`None` for an empty mask).
    pub objects: BTreeMap<String, Option<FeatureVector>>,
}

/// Selects related sets and builds the PCA model and dictionaries.
///
/// Weak atoms come from related sets without masks. When every related set
/// is annotated, their whole images stand in as weak atoms.
pub fn build_agent_knowledge(
    query: &ImageSetRecord,
    corpus: &[ImageSetRecord],
    table: &EmbeddingTable,
    store: &FeatureStore,
    cfg: &PipelineConfig,
) -> Result<AgentKnowledge> {
    let ranked = select_related_sets(
        query,
        corpus,
        table,
        cfg.similarity_threshold,
        cfg.fallback_sets,
    )?;
    let strong_sets: Vec<&ImageSetRecord> =
        ranked.iter().filter(|(r, _)| r.has_masks).map(|(r, _)| *r).collect();
    let mut weak_sets: Vec<&ImageSetRecord> =
        ranked.iter().filter(|(r, _)| !r.has_masks).map(|(r, _)| *r).collect();
    if weak_sets.is_empty() {
        log::warn!(
            "{}: no unannotated related sets, using annotated images as weak atoms",
            query.set_id
        );
        weak_sets = strong_sets.clone();
    }
    if strong_sets.is_empty() {
        log::warn!("{}: no annotated related sets, weak supervision only", query.set_id);
    }

    let mut samples = Vec::new();
    for set in &weak_sets {
        for id in &set.image_ids {
            let f = store
                .images
                .get(id)
                .ok_or_else(|| Error::MissingFeatures(id.clone()))?;
            samples.push(f.clone());
        }
    }
    for set in &strong_sets {
        for id in &set.image_ids {
            match store.objects.get(id) {
                Some(Some(f)) => samples.push(f.clone()),
                Some(None) => {}
                None => return Err(Error::MissingMask(id.clone())),
            }
        }
    }
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let dims = cfg.pca_dims.min(samples.len() - 1).min(samples[0].dims());
    let pca = fit_pca(&samples, dims)?;
    let weak = build_weak_dictionary(&weak_sets, &store.images, &pca)?;
    let strong = if strong_sets.is_empty() {
        None
    } else {
        match build_strong_dictionary(&strong_sets, &store.objects, &pca) {
            Ok(d) => Some(d),
            Err(Error::EmptyDictionary) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(AgentKnowledge {
        query_set: query.set_id.clone(),
        related: ranked
            .iter()
            .map(|(r, s)| RelatedSet {
                set_id: r.set_id.clone(),
                similarity: *s,
                annotated: r.has_masks,
            })
            .collect(),
        pca,
        weak,
        strong,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct KnowledgeIndex {
    query_set: String,
    related: Vec<RelatedSet>,
    has_strong: bool,
}

impl AgentKnowledge {
    /// Writes `index.json`, `pca.json` and the dictionaries into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let index = KnowledgeIndex {
            query_set: self.query_set.clone(),
            related: self.related.clone(),
            has_strong: self.strong.is_some(),
        };
        std::fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
        std::fs::write(dir.join("pca.json"), serde_json::to_vec_pretty(&self.pca)?)?;
        self.weak.save(&dir.join("weak.mfv"), &dir.join("weak.json"))?;
        let strong_paths = (dir.join("strong.mfv"), dir.join("strong.json"));
        match &self.strong {
            Some(s) => s.save(&strong_paths.0, &strong_paths.1)?,
            None => {
                for p in [strong_paths.0, strong_paths.1] {
                    if p.exists() {
                        std::fs::remove_file(p)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: KnowledgeIndex = serde_json::from_slice(&std::fs::read(dir.join("index.json"))?)?;
        let pca: PcaModel = serde_json::from_slice(&std::fs::read(dir.join("pca.json"))?)?;
        let weak = Dictionary::load(&dir.join("weak.mfv"), &dir.join("weak.json"))?;
        let strong = if index.has_strong {
            Some(Dictionary::load(&dir.join("strong.mfv"), &dir.join("strong.json"))?)
        } else {
            None
        };
        Ok(AgentKnowledge {
            query_set: index.query_set,
            related: index.related,
            pca,
            weak,
            strong,
        })
    }
}
