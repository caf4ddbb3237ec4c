use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{dot, FeatureVector};
use crate::error::{Error, Result};

/// Mean-centred linear projection onto the top principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PcaModel {
    pub input_dims: usize,
    pub output_dims: usize,
    pub mean: Vec<f64>,
    /// `output_dims` orthonormal rows of length `input_dims`.
    pub basis: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    /// Coordinates of `x` in the basis, without normalization.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dims {
            return Err(Error::dims(self.input_dims, x.len()));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.basis.iter().map(|row| dot(row, &centered)).collect())
    }

    pub fn inverse_transform(&self, coords: &[f64]) -> Result<Vec<f64>> {
        if coords.len() != self.output_dims {
            return Err(Error::dims(self.output_dims, coords.len()));
        }
        let mut out = self.mean.clone();
        for (row, &c) in self.basis.iter().zip(coords) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += c * r;
            }
        }
        Ok(out)
    }
}

/// Fits PCA on `samples`, keeping `out_dims` components.
///
/// Works on the smaller of the feature covariance and the sample Gram
/// matrix. Each basis vector's largest-magnitude entry is made positive.
pub fn fit_pca(samples: &[FeatureVector], out_dims: usize) -> Result<PcaModel> {
    let n = samples.len();
    if out_dims == 0 || n < out_dims {
        return Err(Error::TooFewSamples {
            needed: out_dims.max(1),
            got: n,
        });
    }
    let dims = samples[0].dims();
    if let Some(bad) = samples.iter().find(|s| s.dims() != dims) {
        return Err(Error::dims(dims, bad.dims()));
    }
    if out_dims > dims {
        return Err(Error::InvalidParameter(format!(
            "cannot keep {out_dims} components of {dims}-D data"
        )));
    }

    let mut mean = vec![0.0; dims];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dims, |i, j| samples[i].values()[j] - mean[j]);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };

    let (eigenvalues, mut vectors): (Vec<f64>, Vec<Vec<f64>>) = if dims <= n {
        let cov = centered.transpose() * &centered / denom;
        let eig = SymmetricEigen::new(cov);
        let order = descending(eig.eigenvalues.as_slice());
        order
            .iter()
            .map(|&k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
            .unzip()
    } else {
        // Dual form: eigenvectors of X Xᵀ mapped back through Xᵀ.
        let gram = &centered * centered.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(eig.eigenvalues.as_slice());
        let scale = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max).max(1.0);
        order
            .iter()
            .map(|&k| {
                let lambda = eig.eigenvalues[k].max(0.0);
                let v = if lambda > 1e-12 * scale {
                    let u = eig.eigenvectors.column(k);
                    let mapped = centered.transpose() * u;
                    mapped.iter().map(|x| x / lambda.sqrt()).collect()
                } else {
                    Vec::new()
                };
                (lambda / denom, v)
            })
            .unzip()
    };
    vectors.truncate(out_dims);
    complete_orthonormal(&mut vectors, dims);
    for v in &mut vectors {
        let lead = v
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, &x)| if x.abs() > best.1.abs() + 1e-12 { (i, x) } else { best });
        if lead.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(PcaModel {
        input_dims: dims,
        output_dims: out_dims,
        mean,
        basis: vectors,
        explained_variance: eigenvalues.into_iter().take(out_dims).map(|e| e.max(0.0)).collect(),
    })
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Re-orthonormalizes the rows and fills empty ones (null-space directions)
/// from the standard basis.
fn complete_orthonormal(rows: &mut [Vec<f64>], dims: usize) {
    let mut done: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    let mut next_axis = 0usize;
    for row in rows.iter_mut() {
        let mut candidate = if row.is_empty() { None } else { Some(row.clone()) };
        loop {
            let mut v = match candidate.take() {
                Some(v) => v,
                None => {
                    let mut e = vec![0.0; dims];
                    e[next_axis] = 1.0;
                    next_axis += 1;
                    e
                }
            };
            for u in &done {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|a| *a /= norm);
                *row = v.clone();
                done.push(v);
                break;
            }
        }
    }
}

/// Projects onto the model basis and L2-normalizes; a zero projection comes
/// back flagged degenerate.
pub fn project(model: &PcaModel, x: &FeatureVector) -> Result<FeatureVector> {
    Ok(FeatureVector::unit(model.transform(x.values())?))
}
