//! SLIC-style superpixels: k-means over (L, a, b, x/S, y/S) with a local
//! search window, followed by connectivity enforcement.

use super::partition::{absorb_components, label_components, Scale, SuperpixelPartition};
use super::RasterImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub target_regions: usize,
    /// Weight of spatial distance against colour distance.
    pub compactness: f64,
    pub iterations: usize,
    pub scale: Scale,
}

impl SlicParams {
    pub fn new(target_regions: usize, scale: Scale) -> Self {
        SlicParams {
            target_regions,
            compactness: 10.0,
            iterations: 10,
            scale,
        }
    }
}

/// sRGB (D65) to CIELAB.
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    fn linear(c: u8) -> f64 {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    }
    let (r, g, b) = (linear(rgb[0]), linear(rgb[1]), linear(rgb[2]));
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

pub fn segment_superpixels(img: &RasterImage, params: &SlicParams) -> Result<SuperpixelPartition> {
    let (width, height) = (img.width(), img.height());
    let n = img.pixel_count();
    let k = params.target_regions;
    if k < 2 || k > n / 4 {
        return Err(Error::InvalidParameter(format!(
            "target regions {k} outside [2, {}]",
            n / 4
        )));
    }
    if params.compactness.is_nan() || params.compactness <= 0.0 {
        return Err(Error::InvalidParameter("compactness must be positive".into()));
    }
    let (w, h) = (width as usize, height as usize);
    let lab: Vec<[f64; 3]> = (0..n).map(|i| rgb_to_lab(img.pixel_at(i))).collect();

    // Grid whose cell count approximates k while following the aspect ratio.
    let cols = ((k as f64 * w as f64 / h as f64).sqrt().round() as usize).clamp(1, w);
    let rows = ((k as f64 / cols as f64).round() as usize).clamp(1, h);
    let step_x = w as f64 / cols as f64;
    let step_y = h as f64 / rows as f64;
    let step = (n as f64 / (cols * rows) as f64).sqrt();

    let gradient = |x: usize, y: usize| -> f64 {
        let at = |xx: usize, yy: usize| lab[yy * w + xx];
        let l = at(x.saturating_sub(1), y);
        let r = at((x + 1).min(w - 1), y);
        let u = at(x, y.saturating_sub(1));
        let d = at(x, (y + 1).min(h - 1));
        (0..3).map(|c| (r[c] - l[c]).powi(2) + (d[c] - u[c]).powi(2)).sum()
    };

    let mut centers = Vec::with_capacity(cols * rows);
    for row in 0..rows {
        for col in 0..cols {
            let cx = ((col as f64 + 0.5) * step_x) as usize;
            let cy = ((row as f64 + 0.5) * step_y) as usize;
            // Nudge the seed to the lowest-gradient pixel in its 3x3 neighbourhood.
            let mut best = (gradient(cx, cy), cx, cy);
            for yy in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for xx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    let g = gradient(xx, yy);
                    if g < best.0 {
                        best = (g, xx, yy);
                    }
                }
            }
            let (_, bx, by) = best;
            centers.push(Center {
                lab: lab[by * w + bx],
                x: bx as f64 + 0.5,
                y: by as f64 + 0.5,
            });
        }
    }

    // Start from the grid cells so every pixel has a label before the first pass.
    let mut labels: Vec<u32> = (0..n)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let col = ((x as f64 / step_x) as usize).min(cols - 1);
            let row = ((y as f64 / step_y) as usize).min(rows - 1);
            (row * cols + col) as u32
        })
        .collect();
    let spatial_weight = (params.compactness / step).powi(2);
    let radius_x = step_x.ceil() as isize;
    let radius_y = step_y.ceil() as isize;
    let mut distance = vec![f64::INFINITY; n];

    for _ in 0..params.iterations {
        distance.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let x0 = (c.x.floor() as isize - radius_x).max(0) as usize;
            let x1 = (c.x.floor() as isize + radius_x).min(w as isize - 1) as usize;
            let y0 = (c.y.floor() as isize - radius_y).max(0) as usize;
            let y1 = (c.y.floor() as isize + radius_y).min(h as isize - 1) as usize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let p = lab[i];
                    let dc = (p[0] - c.lab[0]).powi(2)
                        + (p[1] - c.lab[1]).powi(2)
                        + (p[2] - c.lab[2]).powi(2);
                    let ds = (x as f64 + 0.5 - c.x).powi(2) + (y as f64 + 0.5 - c.y).powi(2);
                    let d = dc + ds * spatial_weight;
                    if d < distance[i] {
                        distance[i] = d;
                        labels[i] = ci as u32;
                    }
                }
            }
        }
        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let a = &mut acc[l as usize];
            a[0] += lab[i][0];
            a[1] += lab[i][1];
            a[2] += lab[i][2];
            a[3] += (i % w) as f64 + 0.5;
            a[4] += (i / w) as f64 + 0.5;
            a[5] += 1.0;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                c.lab = [a[0] / a[5], a[1] / a[5], a[2] / a[5]];
                c.x = a[3] / a[5];
                c.y = a[4] / a[5];
            }
        }
    }

    // Keep the largest piece of each cluster; orphans join their largest neighbour.
    let keys: Vec<u64> = labels.iter().map(|&l| l as u64).collect();
    let (components, count) = label_components(width, height, &keys);
    let mut comp_cluster = vec![0u32; count];
    let mut comp_size = vec![0usize; count];
    for (i, &c) in components.iter().enumerate() {
        comp_cluster[c as usize] = labels[i];
        comp_size[c as usize] += 1;
    }
    let mut primary = vec![u32::MAX; centers.len()];
    for c in 0..count as u32 {
        let cluster = comp_cluster[c as usize] as usize;
        let current = primary[cluster];
        if current == u32::MAX || comp_size[c as usize] > comp_size[current as usize] {
            primary[cluster] = c;
        }
    }
    let absorb: Vec<bool> = (0..count)
        .map(|c| primary[comp_cluster[c] as usize] != c as u32)
        .collect();
    let (dense, count) = absorb_components(width, height, &components, count, &absorb, |_, _| true);
    Ok(SuperpixelPartition::from_dense(
        width,
        height,
        dense,
        count,
        params.scale,
    ))
}
