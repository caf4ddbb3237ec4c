//! Orthogonal matching pursuit, coding length and the coding-length to
//! probability mapping.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{dot, FeatureVector, DEGENERATE_NORM};
use crate::retrieval::Dictionary;

/// Ridge added to the support Gram matrix before solving.
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OmpConfig {
    /// Stop once the squared residual norm is at most this.
    pub epsilon: f64,
    /// Cap on the support size. The effective cap for a given dictionary is
    /// `min(max_atoms, atoms, dims)`; unconverged codes are penalized
    /// relative to this configured value.
    pub max_atoms: usize,
}

impl Default for OmpConfig {
    fn default() -> Self {
        OmpConfig {
            epsilon: 0.1,
            max_atoms: 20,
        }
    }
}

impl OmpConfig {
    fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if self.max_atoms == 0 {
            return Err(Error::InvalidParameter("max_atoms must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SparseCode {
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
    /// Whether the residual reached `epsilon` before the atom cap.
    #[serde(skip)]
    pub converged: bool,
}

impl SparseCode {
    /// `|α|₀`.
    pub fn coding_length(&self) -> usize {
        self.support.len()
    }

    /// Length used for ranking: the support size, or `max_atoms + 1` when
    /// the code never met the residual threshold.
    pub fn effective_length(&self, cfg: &OmpConfig) -> usize {
        if self.converged {
            self.support.len()
        } else {
            cfg.max_atoms + 1
        }
    }

    /// Coding length as a fraction of the configured cap; 1.0 if unconverged.
    pub fn normalized_length(&self, cfg: &OmpConfig) -> f64 {
        if self.converged {
            self.support.len() as f64 / cfg.max_atoms as f64
        } else {
            1.0
        }
    }
}

/// Greedy OMP of `x` over the atoms of `dict`.
pub fn omp_encode(dict: &Dictionary, x: &FeatureVector, cfg: &OmpConfig) -> Result<SparseCode> {
    omp_trace(dict, x, cfg).map(|(code, _)| code)
}

/// Like [`omp_encode`], also returning the residual norm after each step
/// (the first entry is `‖x‖`).
pub fn omp_trace(
    dict: &Dictionary,
    x: &FeatureVector,
    cfg: &OmpConfig,
) -> Result<(SparseCode, Vec<f64>)> {
    cfg.validate()?;
    if x.dims() != dict.dims() {
        return Err(Error::dims(dict.dims(), x.dims()));
    }
    let target = x.values();
    let x_norm = dot(target, target).sqrt();
    if x.is_degenerate() || x_norm < DEGENERATE_NORM {
        let code = SparseCode {
            support: Vec::new(),
            coefficients: Vec::new(),
            residual_norm: 0.0,
            converged: true,
        };
        return Ok((code, vec![0.0]));
    }
    if dict.is_empty() {
        return Err(Error::EmptyDictionary);
    }

    let cap = cfg.max_atoms.min(dict.len()).min(dict.dims());
    let mut support: Vec<usize> = Vec::with_capacity(cap);
    let mut coefficients: Vec<f64> = Vec::new();
    let mut residual = target.to_vec();
    let mut residual_sq = x_norm * x_norm;
    let mut trace = vec![x_norm];
    let converged = loop {
        if residual_sq <= cfg.epsilon {
            break true;
        }
        if support.len() >= cap {
            break false;
        }
        let mut best: Option<(usize, f64)> = None;
        for k in 0..dict.len() {
            if support.contains(&k) {
                continue;
            }
            let c = dot(dict.atom(k), &residual).abs();
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((k, c));
            }
        }
        let Some((pick, corr)) = best.filter(|&(_, c)| c > 1e-14) else {
            break false;
        };
        log::trace!("omp picks atom {pick} with |corr| {corr:.6}");
        support.push(pick);
        coefficients = solve_support(dict, &support, target);
        residual.copy_from_slice(target);
        for (&k, &a) in support.iter().zip(&coefficients) {
            for (r, d) in residual.iter_mut().zip(dict.atom(k)) {
                *r -= a * d;
            }
        }
        residual_sq = dot(&residual, &residual);
        trace.push(residual_sq.sqrt());
    };
    let code = SparseCode {
        support,
        coefficients,
        residual_norm: residual_sq.sqrt(),
        converged,
    };
    Ok((code, trace))
}

/// Least squares on the selected atoms via ridge-regularized normal equations.
fn solve_support(dict: &Dictionary, support: &[usize], target: &[f64]) -> Vec<f64> {
    let n = support.len();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        dot(dict.atom(support[i]), dict.atom(support[j])) + if i == j { RIDGE } else { 0.0 }
    });
    let rhs = DVector::from_fn(n, |i, _| dot(dict.atom(support[i]), target));
    match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs).iter().copied().collect(),
        None => gram
            .lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_else(|| vec![0.0; n]),
    }
}

/// Minimum of the present codes' effective lengths.
pub fn coding_length(
    weak: Option<&SparseCode>,
    strong: Option<&SparseCode>,
    cfg: &OmpConfig,
) -> Result<usize> {
    [weak, strong]
        .into_iter()
        .flatten()
        .map(|c| c.effective_length(cfg))
        .min()
        .ok_or(Error::NoCodesPresent)
}

/// Probability that proposal `index` belongs to the tagged object:
/// `((max − L) / (max − min))^q`, or 0.5 for every entry when all lengths
/// are equal.
pub fn tag_probability(lengths: &[usize], index: usize, q: f64) -> Result<f64> {
    if index >= lengths.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: lengths.len(),
        });
    }
    let (min, max) = min_max(lengths);
    Ok(probability(lengths[index], min, max, q))
}

/// [`tag_probability`] for every entry.
pub fn tag_probabilities(lengths: &[usize], q: f64) -> Vec<f64> {
    if lengths.is_empty() {
        return Vec::new();
    }
    let (min, max) = min_max(lengths);
    if min == max {
        log::debug!("all {} coding lengths equal {min}; using 0.5", lengths.len());
    }
    lengths.iter().map(|&l| probability(l, min, max, q)).collect()
}

fn min_max(lengths: &[usize]) -> (usize, usize) {
    let min = lengths.iter().copied().min().unwrap_or(0);
    let max = lengths.iter().copied().max().unwrap_or(0);
    (min, max)
}

fn probability(length: usize, min: usize, max: usize, q: f64) -> f64 {
    if max == min {
        return 0.5;
    }
    ((max - length) as f64 / (max - min) as f64).powf(q)
}
