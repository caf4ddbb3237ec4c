//! On-disk workspace: the manifest pointer, per-set knowledge and flip
//! dictionaries, sessions, exported masks and reports.
//!
//! ```text
//! <root>/workspace.json            manifest path and prepared sets
//! <root>/config.json               configuration used by `init`
//! <root>/sets/<setId>/             PCA model, weak and strong dictionaries
//! <root>/sets/<setId>/flips/       flip dictionaries learned from commits
//! <root>/sessions/<id>.json        session snapshots
//! <root>/sessions/<id>.jsonl       click logs
//! <root>/masks/<imageId>.png       committed masks
//! <root>/reports/                  simulation and evaluation output
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use maskforge::annotate::{write_click_log, FlipDictionaries};
use maskforge::evaluate::{mask_metrics, run_evolvability, simulate_set, EvolvabilityReport, MaskMetrics};
use maskforge::imaging::{load_mask_png, save_mask_png};
use maskforge::retrieval::{AgentKnowledge, Manifest};
use maskforge::{Dataset, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkspaceInfo {
    pub manifest: PathBuf,
    pub sets: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn info_path(&self) -> PathBuf {
        self.root.join("workspace.json")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn set_dir(&self, set_id: &str) -> PathBuf {
        self.root.join("sets").join(set_id)
    }

    pub fn flips_dir(&self, set_id: &str) -> PathBuf {
        self.set_dir(set_id).join("flips")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn session_path(&self, id: &str) -> PathBuf {
        self.sessions_dir().join(format!("{id}.json"))
    }

    pub fn click_log_path(&self, id: &str) -> PathBuf {
        self.sessions_dir().join(format!("{id}.jsonl"))
    }

    pub fn mask_path(&self, image_id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{image_id}.png"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn info(&self) -> Result<WorkspaceInfo> {
        let path = self.info_path();
        if !path.exists() {
            return Err(ServiceError::NotInitialized(self.root.clone()));
        }
        let bytes = std::fs::read(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| ServiceError::Data(format!("{}: {e}", path.display())))
    }

    pub fn manifest(&self) -> Result<Manifest> {
        Ok(Manifest::load(&self.info()?.manifest)?)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Ok(Dataset::load(&self.info()?.manifest)?)
    }

    pub fn knowledge(&self, set_id: &str) -> Result<AgentKnowledge> {
        let dir = self.set_dir(set_id);
        if !dir.join("index.json").exists() {
            return Err(ServiceError::SetNotPrepared(set_id.to_string()));
        }
        Ok(AgentKnowledge::load(&dir)?)
    }

    pub fn flips(&self, set_id: &str, knowledge: &AgentKnowledge, cfg: &PipelineConfig) -> Result<FlipDictionaries> {
        Ok(FlipDictionaries::load_or_new(
            &self.flips_dir(set_id),
            knowledge.pca.output_dims,
            cfg.context_scales as usize,
        )?)
    }
}

/// What `init` built for one set.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PreparedSet {
    pub set_id: String,
    pub related: Vec<String>,
    pub weak_atoms: usize,
    pub strong_atoms: Option<usize>,
    pub pca_dims: usize,
}

/// Builds knowledge for every unannotated set of the manifest and records
/// the manifest in the workspace. Re-running overwrites the derived files
/// and leaves flip dictionaries, sessions and masks alone.
pub fn init(manifest_path: &Path, root: &Path, cfg: &PipelineConfig) -> Result<Vec<PreparedSet>> {
    cfg.validate()?;
    let manifest_path = std::fs::canonicalize(manifest_path).map_err(|e| maskforge::Error::UnreadableFile {
        path: manifest_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let dataset = Dataset::load(&manifest_path)?;
    let layout = Layout::new(root);
    std::fs::create_dir_all(root)?;
    let mut prepared = Vec::new();
    for set in dataset.query_sets() {
        let knowledge = dataset.knowledge(&set.set_id, cfg)?;
        if knowledge.strong.is_none() {
            log::warn!("set {}: no annotated related sets, weak dictionary only", set.set_id);
        }
        knowledge.save(&layout.set_dir(&set.set_id))?;
        log::info!(
            "set {}: {} weak atoms, {} strong atoms, {} dims",
            set.set_id,
            knowledge.weak.len(),
            knowledge.strong.as_ref().map_or(0, |s| s.len()),
            knowledge.pca.output_dims
        );
        prepared.push(PreparedSet {
            set_id: set.set_id.clone(),
            related: knowledge.related.iter().map(|r| r.set_id.clone()).collect(),
            weak_atoms: knowledge.weak.len(),
            strong_atoms: knowledge.strong.as_ref().map(|s| s.len()),
            pca_dims: knowledge.pca.output_dims,
        });
    }
    let info = WorkspaceInfo {
        manifest: manifest_path,
        sets: prepared.iter().map(|p| p.set_id.clone()).collect(),
    };
    write_json(&layout.info_path(), &info)?;
    write_json(&layout.config_path(), cfg)?;
    Ok(prepared)
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| ServiceError::Internal(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Summary of one simulated set.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulatedSet {
    pub set_id: String,
    pub images: usize,
    pub init_f: f64,
    pub final_f: f64,
    pub total_clicks: usize,
}

/// Directory of a simulation run inside the workspace.
pub fn simulation_dir(layout: &Layout, use_flips: bool) -> PathBuf {
    layout
        .reports_dir()
        .join(if use_flips { "simulate-flips" } else { "simulate-plain" })
}

/// Lets the oracle annotate every prepared set in manifest order.
///
/// Each set gets `<setId>.json` and `<setId>.csv` reports, and every image
/// its final mask and click log, under [`simulation_dir`]. Flip
/// dictionaries start empty and never touch the workspace's own.
pub fn simulate(layout: &Layout, sets: &[String], use_flips: bool, cfg: &PipelineConfig) -> Result<Vec<SimulatedSet>> {
    let info = layout.info()?;
    let dataset = Dataset::load(&info.manifest)?;
    let chosen: Vec<&String> = if sets.is_empty() {
        info.sets.iter().collect()
    } else {
        sets.iter().collect()
    };
    let out = simulation_dir(layout, use_flips);
    std::fs::create_dir_all(out.join("masks"))?;
    std::fs::create_dir_all(out.join("clicks"))?;
    let mut summary = Vec::new();
    for set_id in chosen {
        let knowledge = layout.knowledge(set_id)?;
        let sim = simulate_set(&dataset, &knowledge, set_id, use_flips, cfg)?;
        sim.report.write_json(&out.join(format!("{set_id}.json")))?;
        sim.report.write_csv(&out.join(format!("{set_id}.csv")))?;
        for session in &sim.sessions {
            let id = session.image_id();
            save_mask_png(&session.export_mask(), &out.join("masks").join(format!("{id}.png")))?;
            write_click_log(&out.join("clicks").join(format!("{id}.jsonl")), session.clicks())?;
        }
        let agg = &sim.report.aggregates;
        log::info!(
            "set {set_id}: {} images, init F {:.4}, final F {:.4}, {} clicks",
            agg.images,
            agg.init_f,
            agg.final_f,
            agg.total_clicks
        );
        summary.push(SimulatedSet {
            set_id: set_id.clone(),
            images: agg.images,
            init_f: agg.init_f,
            final_f: agg.final_f,
            total_clicks: agg.total_clicks,
        });
    }
    Ok(summary)
}

/// Runs the zero, one and two collection-split comparison on one set and
/// writes `reports/evolvability-<setId>.json`.
pub fn evolve(layout: &Layout, set_id: &str, cfg: &PipelineConfig) -> Result<EvolvabilityReport> {
    let dataset = layout.dataset()?;
    let knowledge = layout.knowledge(set_id)?;
    let report = run_evolvability(&dataset, &knowledge, set_id, None, cfg)?;
    std::fs::create_dir_all(layout.reports_dir())?;
    write_json(&layout.reports_dir().join(format!("evolvability-{set_id}.json")), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalRow {
    pub image_id: String,
    #[serde(flatten)]
    pub metrics: MaskMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub images: Vec<EvalRow>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f: f64,
    /// Images with a reference mask but no prediction.
    pub missing: Vec<String>,
}

/// Scores `<predictions>/<imageId>.png` against each image's reference
/// mask and writes `reports/eval.json` and `reports/eval.csv`.
pub fn eval(layout: &Layout, predictions: &Path) -> Result<EvalReport> {
    if !predictions.is_dir() {
        return Err(ServiceError::Data(format!("{} is not a directory", predictions.display())));
    }
    let manifest = layout.manifest()?;
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    let mut by_id = BTreeMap::new();
    for set in &manifest.sets {
        for entry in &set.images {
            if let Some(mask_path) = &entry.mask_path {
                by_id.insert(entry.id.clone(), mask_path.clone());
            }
        }
    }
    for (id, truth_path) in by_id {
        let pred_path = predictions.join(format!("{id}.png"));
        if !pred_path.exists() {
            missing.push(id);
            continue;
        }
        let truth = load_mask_png(&truth_path)?;
        let pred = load_mask_png(&pred_path)?;
        rows.push(EvalRow {
            image_id: id,
            metrics: mask_metrics(&pred, &truth)?,
        });
    }
    if rows.is_empty() {
        return Err(ServiceError::Data(format!(
            "no prediction in {} matches an image with a reference mask",
            predictions.display()
        )));
    }
    let mean = |f: fn(&MaskMetrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / rows.len() as f64;
    let report = EvalReport {
        mean_precision: mean(|m| m.precision),
        mean_recall: mean(|m| m.recall),
        mean_f: mean(|m| m.f_measure),
        images: rows,
        missing,
    };
    std::fs::create_dir_all(layout.reports_dir())?;
    write_json(&layout.reports_dir().join("eval.json"), &report)?;
    let mut csv = String::from("imageId,precision,recall,fMeasure,tp,fp,fn\n");
    for r in &report.images {
        let m = &r.metrics;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.image_id, m.precision, m.recall, m.f_measure, m.tp, m.fp, m.fn_
        ));
    }
    std::fs::write(layout.reports_dir().join("eval.csv"), csv)?;
    Ok(report)
}
