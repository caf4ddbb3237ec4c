use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparsecode::OmpConfig;

/// Every tunable of the pipeline. Defaults follow the published settings
/// where one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase", deny_unknown_fields)]
pub struct PipelineConfig {
    /// Label threshold on superpixel probability.
    pub beta0: f64,
    /// Half-width of the uncertainty band around `beta0`.
    pub delta_beta: f64,
    /// Normalized flip-code length at or below which a label is inverted.
    pub beta1: f64,
    /// Squared-residual threshold for sparse coding.
    pub epsilon: f64,
    /// Exponent of the coding-length probability.
    pub q: f64,
    pub max_proposals: usize,
    /// Number of context scales per coarse superpixel.
    pub context_scales: u32,
    pub coarse_regions: usize,
    pub fine_regions: usize,
    pub compactness: f64,
    pub slic_iterations: usize,
    pub max_atoms: usize,
    pub pca_dims: usize,
    pub similarity_threshold: f64,
    /// Sets kept when none pass the similarity threshold.
    pub fallback_sets: usize,
    pub merge_weights: MergeWeights,
    /// Click budget of the simulated annotator.
    pub oracle_budget: usize,
    /// Seed for synthetic data generation.
    pub seed: u64,
}

/// Weights of the region-merging similarity used to grow proposals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MergeWeights {
    pub color: f64,
    pub size: f64,
    pub fill: f64,
}

impl Default for MergeWeights {
    fn default() -> Self {
        MergeWeights {
            color: 0.5,
            size: 0.3,
            fill: 0.2,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            beta0: 0.4,
            delta_beta: 0.15,
            beta1: 0.1,
            epsilon: 0.1,
            q: 2.0,
            max_proposals: 200,
            context_scales: 3,
            coarse_regions: 100,
            fine_regions: 1000,
            compactness: 10.0,
            slic_iterations: 10,
            max_atoms: 20,
            pca_dims: 100,
            similarity_threshold: 0.95,
            fallback_sets: 5,
            merge_weights: MergeWeights::default(),
            oracle_budget: 2000,
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn omp(&self) -> OmpConfig {
        OmpConfig {
            epsilon: self.epsilon,
            max_atoms: self.max_atoms,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("beta0", self.beta0)?;
        unit("deltaBeta", self.delta_beta)?;
        unit("beta1", self.beta1)?;
        unit("similarityThreshold", self.similarity_threshold)?;
        let positive = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive")))
            }
        };
        positive("epsilon", self.epsilon > 0.0)?;
        positive("q", self.q > 0.0)?;
        positive("compactness", self.compactness > 0.0)?;
        positive("maxProposals", self.max_proposals > 0)?;
        positive("contextScales", self.context_scales > 0)?;
        positive("maxAtoms", self.max_atoms > 0)?;
        positive("pcaDims", self.pca_dims > 0)?;
        positive("fallbackSets", self.fallback_sets > 0)?;
        positive("slicIterations", self.slic_iterations > 0)?;
        if self.coarse_regions < 2 || self.fine_regions < self.coarse_regions {
            return Err(Error::InvalidParameter(
                "need 2 <= coarseRegions <= fineRegions".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_partial_json_fills_in() {
        PipelineConfig::default().validate().unwrap();
        let c: PipelineConfig = serde_json::from_str(r#"{"beta0": 0.5}"#).unwrap();
        assert_eq!(c.beta0, 0.5);
        assert_eq!(c.q, 2.0);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
        let bad = PipelineConfig {
            beta0: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
