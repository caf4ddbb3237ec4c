//! Region descriptors, PCA compression, tag embeddings and feature files.

mod embedding;
pub(crate) mod file;
mod pca;

pub use embedding::{load_embeddings, normalize_tag, tag_vector, EmbeddingTable, TagVector};
pub use file::{load_feature_file, load_feature_file_with_dims, write_feature_file, FEATURE_MAGIC};
pub use pca::{fit_pca, project, PcaModel};

use crate::error::{Error, Result};
use crate::imaging::{Mask, RasterImage};

/// Length of the built-in region descriptor.
pub const DESCRIPTOR_DIMS: usize = 84;
const COLOR_BINS: usize = 64;
const ORIENTATION_BINS: usize = 16;
/// Norm below which a vector cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Real-valued feature vector.
///
/// Vectors built with [`FeatureVector::unit`] have unit L2 norm unless they
/// were (near) zero, in which case they are kept as zeros and flagged
/// degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    degenerate: bool,
}

impl FeatureVector {
    pub fn raw(values: Vec<f64>) -> Self {
        FeatureVector {
            values,
            degenerate: false,
        }
    }

    pub fn unit(mut values: Vec<f64>) -> Self {
        let norm = l2_norm(&values);
        if norm < DEGENERATE_NORM || !norm.is_finite() {
            values.iter_mut().for_each(|v| *v = 0.0);
            return FeatureVector {
                values,
                degenerate: true,
            };
        }
        values.iter_mut().for_each(|v| *v /= norm);
        FeatureVector {
            values,
            degenerate: false,
        }
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn color_bin(p: [u8; 3]) -> usize {
    (p[0] as usize >> 6) * 16 + (p[1] as usize >> 6) * 4 + (p[2] as usize >> 6)
}

/// 84-D descriptor of the masked pixels of `img`, L2-normalized.
///
/// Layout: 4x4x4 RGB histogram (64), magnitude-weighted Sobel orientation
/// histogram (16), then relative area, bbox aspect `w / (w + h)` and the
/// normalized centroid (4). Histograms are mass-normalized before the final
/// scaling; a region without gradient gets a uniform orientation histogram.
pub fn describe_region(img: &RasterImage, mask: &Mask) -> Result<FeatureVector> {
    if mask.width() != img.width() || mask.height() != img.height() {
        return Err(Error::dims(
            format!("{}x{}", img.width(), img.height()),
            format!("{}x{}", mask.width(), mask.height()),
        ));
    }
    let bbox = mask.bounding_box().ok_or(Error::EmptyMask)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = img.grayscale();
    let at = |x: isize, y: isize| -> f64 {
        let xx = x.clamp(0, w as isize - 1) as usize;
        let yy = y.clamp(0, h as isize - 1) as usize;
        gray[yy * w + xx]
    };

    let mut out = vec![0.0; DESCRIPTOR_DIMS];
    let mut count = 0usize;
    let mut grad_total = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, _) in mask.bits().iter().enumerate().filter(|(_, &b)| b) {
        count += 1;
        out[color_bin(img.pixel_at(i))] += 1.0;
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
        let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
        let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        let magnitude = (gx * gx + gy * gy).sqrt();
        if magnitude > 0.0 {
            let angle = gy.atan2(gx) + std::f64::consts::PI;
            let bin = ((angle / std::f64::consts::TAU * ORIENTATION_BINS as f64) as usize)
                % ORIENTATION_BINS;
            out[COLOR_BINS + bin] += magnitude;
            grad_total += magnitude;
        }
    }
    let n = count as f64;
    out[..COLOR_BINS].iter_mut().for_each(|v| *v /= n);
    let orientation = &mut out[COLOR_BINS..COLOR_BINS + ORIENTATION_BINS];
    if grad_total > 1e-9 {
        orientation.iter_mut().for_each(|v| *v /= grad_total);
    } else {
        orientation.fill(1.0 / ORIENTATION_BINS as f64);
    }
    let geo = COLOR_BINS + ORIENTATION_BINS;
    out[geo] = n / (w * h) as f64;
    out[geo + 1] = bbox.width() as f64 / (bbox.width() + bbox.height()) as f64;
    out[geo + 2] = sx / n / w as f64;
    out[geo + 3] = sy / n / h as f64;
    Ok(FeatureVector::unit(out))
}

/// Descriptor of a whole image.
pub fn describe_image(img: &RasterImage) -> FeatureVector {
    describe_region(img, &Mask::full(img.width(), img.height())).expect("full mask is non-empty")
}
