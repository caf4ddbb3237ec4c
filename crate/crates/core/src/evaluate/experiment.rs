use serde::{Deserialize, Serialize};

use super::{mask_metrics, oracle_annotate, Condition, ExperimentReport, ImageResult};
use crate::annotate::{prepare_session, record_flips, AnnotationSession, FlipDictionaries};
use crate::config::PipelineConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::retrieval::AgentKnowledge;

/// Prepares a session for one image, lets the oracle annotate it and
/// measures the presented and final masks against the reference.
pub fn annotate_image(
    dataset: &Dataset,
    knowledge: &AgentKnowledge,
    image_id: &str,
    flips: Option<&FlipDictionaries>,
    cfg: &PipelineConfig,
) -> Result<(ImageResult, AnnotationSession)> {
    let img = dataset.load_image(image_id)?;
    let truth = dataset.load_truth(image_id, &img)?;
    let mut session = prepare_session(image_id, &img, knowledge, flips, cfg)?;
    let init_metrics = mask_metrics(&session.export_mask(), &truth)?;
    let outcome = oracle_annotate(&mut session, &truth, cfg.oracle_budget)?;
    let final_metrics = mask_metrics(&session.export_mask(), &truth)?;
    let result = ImageResult {
        image_id: image_id.to_string(),
        init_metrics,
        final_metrics,
        click_count: outcome.clicks,
        auto_flip_count: session.auto_flipped().len(),
        budget_exceeded: outcome.budget_exceeded,
    };
    Ok((result, session))
}

fn record(
    dataset: &Dataset,
    knowledge: &AgentKnowledge,
    session: &AnnotationSession,
    flips: &mut FlipDictionaries,
    cfg: &PipelineConfig,
) -> Result<()> {
    let img = dataset.load_image(session.image_id())?;
    record_flips(
        session,
        &img,
        flips,
        &knowledge.pca,
        cfg.context_scales,
        &knowledge.query_set,
    )?;
    Ok(())
}

/// Result of annotating a whole set in order.
#[derive(Debug, Clone)]
pub struct SetSimulation {
    pub report: ExperimentReport,
    pub sessions: Vec<AnnotationSession>,
    /// Flip dictionaries after the last image, when enabled.
    pub flips: Option<FlipDictionaries>,
}

/// Annotates every image of a set in manifest order. With flip
/// dictionaries enabled, each committed image adds its corrections before
/// the next image is prepared.
pub fn simulate_set(
    dataset: &Dataset,
    knowledge: &AgentKnowledge,
    set_id: &str,
    use_flips: bool,
    cfg: &PipelineConfig,
) -> Result<SetSimulation> {
    let set = dataset
        .manifest()
        .set(set_id)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown set {set_id:?}")))?;
    let mut flips = use_flips
        .then(|| FlipDictionaries::new(knowledge.pca.output_dims, cfg.context_scales as usize));
    let mut rows = Vec::new();
    let mut sessions = Vec::new();
    for entry in &set.images {
        let (row, session) = annotate_image(dataset, knowledge, &entry.id, flips.as_ref(), cfg)?;
        if let Some(f) = flips.as_mut() {
            record(dataset, knowledge, &session, f, cfg)?;
        }
        rows.push(row);
        sessions.push(session);
    }
    let condition = Condition {
        flip_dict_enabled: use_flips,
        split_label: set_id.to_string(),
    };
    Ok(SetSimulation {
        report: ExperimentReport::new(condition, rows),
        sessions,
        flips,
    })
}

/// Image ids of the two click-collection splits and the verification split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvolvabilitySplits {
    pub collect_a: Vec<String>,
    pub collect_b: Vec<String>,
    pub verify: Vec<String>,
}

impl EvolvabilitySplits {
    /// First quarter, second quarter, remaining half, by manifest order.
    pub fn by_order(image_ids: &[String]) -> Result<Self> {
        let n = image_ids.len();
        if n < 3 {
            return Err(Error::TooFewImages { needed: 3, got: n });
        }
        let q = (n / 4).max(1);
        Ok(EvolvabilitySplits {
            collect_a: image_ids[..q].to_vec(),
            collect_b: image_ids[q..2 * q].to_vec(),
            verify: image_ids[2 * q..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvolvabilityReport {
    pub set_id: String,
    pub splits: EvolvabilitySplits,
    /// Verification results with flip dictionaries built from zero, one and
    /// two collection splits.
    pub conditions: Vec<ExperimentReport>,
}

/// Verification passes with flip dictionaries grown from zero, one and two
/// collection splits. Collection images are annotated from the plain
/// initialization; verification images see a frozen copy of the
/// dictionaries.
pub fn run_evolvability(
    dataset: &Dataset,
    knowledge: &AgentKnowledge,
    set_id: &str,
    splits: Option<EvolvabilitySplits>,
    cfg: &PipelineConfig,
) -> Result<EvolvabilityReport> {
    let set = dataset
        .manifest()
        .set(set_id)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown set {set_id:?}")))?;
    let ids: Vec<String> = set.images.iter().map(|i| i.id.clone()).collect();
    let splits = match splits {
        Some(s) => s,
        None => EvolvabilitySplits::by_order(&ids)?,
    };
    if ids.len() < 3 {
        return Err(Error::TooFewImages { needed: 3, got: ids.len() });
    }
    let labels = ["zero", "one", "two"];
    let mut conditions = Vec::new();
    for (k, label) in labels.iter().enumerate() {
        let collect: Vec<&String> = [&splits.collect_a, &splits.collect_b]
            .into_iter()
            .take(k)
            .flatten()
            .collect();
        let flips = if k == 0 {
            None
        } else {
            let mut f =
                FlipDictionaries::new(knowledge.pca.output_dims, cfg.context_scales as usize);
            for id in collect {
                let (_, session) = annotate_image(dataset, knowledge, id, None, cfg)?;
                record(dataset, knowledge, &session, &mut f, cfg)?;
            }
            Some(f)
        };
        let mut rows = Vec::new();
        for id in &splits.verify {
            rows.push(annotate_image(dataset, knowledge, id, flips.as_ref(), cfg)?.0);
        }
        let condition = Condition {
            flip_dict_enabled: k > 0,
            split_label: label.to_string(),
        };
        conditions.push(ExperimentReport::new(condition, rows));
    }
    Ok(EvolvabilityReport {
        set_id: set_id.to_string(),
        splits,
        conditions,
    })
}
