use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MaskMetrics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImageResult {
    pub image_id: String,
    pub init_metrics: MaskMetrics,
    pub final_metrics: MaskMetrics,
    pub click_count: usize,
    pub auto_flip_count: usize,
    pub budget_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Condition {
    pub flip_dict_enabled: bool,
    pub split_label: String,
}

/// Means over the per-image rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Aggregates {
    pub images: usize,
    pub init_precision: f64,
    pub init_recall: f64,
    pub init_f: f64,
    pub final_f: f64,
    pub clicks: f64,
    pub auto_flips: f64,
    pub total_clicks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentReport {
    pub condition: Condition,
    pub per_image: Vec<ImageResult>,
    pub aggregates: Aggregates,
}

impl ExperimentReport {
    pub fn new(condition: Condition, per_image: Vec<ImageResult>) -> Self {
        let n = per_image.len();
        let mean = |f: &dyn Fn(&ImageResult) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_image.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let aggregates = Aggregates {
            images: n,
            init_precision: mean(&|r| r.init_metrics.precision),
            init_recall: mean(&|r| r.init_metrics.recall),
            init_f: mean(&|r| r.init_metrics.f_measure),
            final_f: mean(&|r| r.final_metrics.f_measure),
            clicks: mean(&|r| r.click_count as f64),
            auto_flips: mean(&|r| r.auto_flip_count as f64),
            total_clicks: per_image.iter().map(|r| r.click_count).sum(),
        };
        ExperimentReport {
            condition,
            per_image,
            aggregates,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// One row per image: imageId, initP, initR, initF, finalF, clicks,
    /// autoFlips.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["imageId", "initP", "initR", "initF", "finalF", "clicks", "autoFlips"])
            .map_err(csv_err)?;
        for r in &self.per_image {
            w.write_record([
                r.image_id.clone(),
                r.init_metrics.precision.to_string(),
                r.init_metrics.recall.to_string(),
                r.init_metrics.f_measure.to_string(),
                r.final_metrics.f_measure.to_string(),
                r.click_count.to_string(),
                r.auto_flip_count.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}
