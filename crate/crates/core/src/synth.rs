//! Synthetic tagged image sets: coloured shapes on textured backgrounds,
//! with reference masks and a matching embedding table.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imaging::{save_mask_png, Mask, RasterImage};
use crate::retrieval::{ImageEntry, Manifest, SetEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Shape {
    Disc,
    Square,
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthSet {
    pub set_id: String,
    pub tags: Vec<String>,
    pub images: usize,
    pub shape: Shape,
    pub color: [u8; 3],
    pub annotated: bool,
    /// Colour of a striped patch painted at the same spot in every image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor: Option<[u8; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthSpec {
    pub size: u32,
    pub seed: u64,
    pub sets: Vec<SynthSet>,
    /// `token v1 ... ve` lines written to `embeddings.txt`.
    pub embeddings: Vec<(String, Vec<f64>)>,
}

impl SynthSpec {
    fn set(id: &str, tags: &[&str], images: usize, shape: Shape, color: [u8; 3], annotated: bool) -> SynthSet {
        SynthSet {
            set_id: id.into(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            images,
            shape,
            color,
            annotated,
            distractor: None,
        }
    }

    fn vocabulary() -> Vec<(String, Vec<f64>)> {
        [
            ("ball", vec![1.0, 0.05, 0.0, 0.0]),
            ("toy", vec![0.95, 0.2, 0.05, 0.0]),
            ("sphere", vec![0.97, 0.0, 0.15, 0.0]),
            ("box", vec![0.1, 0.0, 1.0, 0.1]),
            ("crate", vec![0.05, 0.1, 0.95, 0.2]),
        ]
        .into_iter()
        .map(|(t, v)| (t.to_string(), v))
        .collect()
    }

    /// Three sets of ten: annotated red discs, unannotated red discs and
    /// unannotated blue squares.
    pub fn end_to_end(seed: u64) -> Self {
        SynthSpec {
            size: 96,
            seed,
            sets: vec![
                Self::set("balls-annotated", &["ball", "sphere"], 10, Shape::Disc, [210, 40, 40], true),
                Self::set("balls", &["ball", "toy"], 10, Shape::Disc, [215, 45, 35], false),
                Self::set("boxes", &["box", "crate"], 10, Shape::Square, [40, 70, 200], false),
            ],
            embeddings: Self::vocabulary(),
        }
    }

    /// A 20-image target set with a recurring distractor patch, plus an
    /// annotated and an unannotated support set.
    pub fn evolvability(seed: u64) -> Self {
        let mut target = Self::set("target", &["ball", "toy"], 20, Shape::Disc, [215, 45, 35], false);
        target.distractor = Some(DISTRACTOR_COLOR);
        SynthSpec {
            size: 96,
            seed,
            sets: vec![
                Self::set("support-annotated", &["ball", "sphere"], 10, Shape::Disc, [210, 40, 40], true),
                Self::set("support", &["ball"], 10, Shape::Disc, [220, 50, 40], false),
                target,
            ],
            embeddings: Self::vocabulary(),
        }
    }

    /// Writes images, masks, `embeddings.txt` and `manifest.json` into
    /// `dir` and returns the manifest path.
    pub fn generate(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::create_dir_all(dir.join("masks"))?;
        let mut text = String::new();
        for (token, v) in &self.embeddings {
            let values: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            text.push_str(&format!("{token} {}\n", values.join(" ")));
        }
        std::fs::write(dir.join("embeddings.txt"), text)?;

        let mut sets = Vec::new();
        for (si, set) in self.sets.iter().enumerate() {
            let mut images = Vec::new();
            for k in 0..set.images {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ((si as u64) << 32) ^ k as u64);
                let (img, mask) = render(self.size, set, &mut rng);
                let id = format!("{}-{k:02}", set.set_id);
                let image_rel = PathBuf::from(format!("images/{id}.png"));
                let mask_rel = PathBuf::from(format!("masks/{id}.png"));
                img.save_png(&dir.join(&image_rel))?;
                save_mask_png(&mask, &dir.join(&mask_rel))?;
                images.push(ImageEntry {
                    id,
                    path: image_rel,
                    mask_path: Some(mask_rel),
                    feature_id: None,
                });
            }
            sets.push(SetEntry {
                set_id: set.set_id.clone(),
                tags: set.tags.clone(),
                images,
                annotated: set.annotated,
            });
        }
        let manifest = Manifest {
            embeddings: Some(PathBuf::from("embeddings.txt")),
            feature_file: None,
            sets,
        };
        let path = dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes)?;
        Ok(path)
    }
}

/// Colour of the recurring patch in [`SynthSpec::evolvability`].
pub const DISTRACTOR_COLOR: [u8; 3] = [200, 75, 50];

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Square region reserved for the distractor patch.
fn distractor_box(size: u32) -> (u32, u32, u32) {
    let side = size / 4;
    (size / 16, size - size / 16 - side, side)
}

fn render(size: u32, set: &SynthSet, rng: &mut ChaCha8Rng) -> (RasterImage, Mask) {
    let s = size as f64;
    let base = [
        rng.random_range(150.0..175.0),
        rng.random_range(160.0..185.0),
        rng.random_range(135.0..160.0),
    ];
    let freq = rng.random_range(0.25..0.45);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise: Vec<f64> = (0..size * size).map(|_| rng.random_range(-5.0..5.0)).collect();

    let radius = rng.random_range(0.2 * s..0.28 * s);
    let margin = radius + 2.0;
    let (dx, dy, dside) = distractor_box(size);
    let (cx, cy) = loop {
        let c = (rng.random_range(margin..s - margin), rng.random_range(margin..s - margin));
        if set.distractor.is_none() {
            break c;
        }
        // Keep the object clear of the distractor patch.
        let (px, py) = (c.0.clamp(dx as f64, (dx + dside) as f64), c.1.clamp(dy as f64, (dy + dside) as f64));
        if ((c.0 - px).powi(2) + (c.1 - py).powi(2)).sqrt() > radius + 4.0 {
            break c;
        }
    };
    let jitter: Vec<f64> = (0..3).map(|_| rng.random_range(-12.0..12.0)).collect();
    let color: Vec<f64> = set.color.iter().zip(&jitter).map(|(&c, j)| c as f64 + j).collect();

    let inside = |x: u32, y: u32| {
        let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        match set.shape {
            Shape::Disc => px * px + py * py <= radius * radius,
            Shape::Square => px.abs() <= radius * 0.9 && py.abs() <= radius * 0.9,
            Shape::Triangle => py <= radius * 0.8 && py >= -radius && px.abs() <= (py + radius) * 0.6,
        }
    };
    let mask = Mask::from_fn(size, size, inside);
    let img = RasterImage::from_fn(size, size, |x, y| {
        let i = (y * size + x) as usize;
        if inside(x, y) {
            let shade = 1.0 - 0.15 * ((y as f64 + 0.5 - cy) / radius).clamp(-1.0, 1.0);
            return [
                clamp_u8(color[0] * shade + noise[i] * 0.6),
                clamp_u8(color[1] * shade + noise[i] * 0.6),
                clamp_u8(color[2] * shade + noise[i] * 0.6),
            ];
        }
        if let Some(patch) = set.distractor.filter(|_| {
            x >= dx && x < dx + dside && y >= dy && y < dy + dside
        }) {
            let stripe = if ((x - dx) / 3 + (y - dy) / 3) % 2 == 0 { 1.0 } else { 0.8 };
            return patch.map(|c| clamp_u8(c as f64 * stripe + noise[i] * 0.3));
        }
        let wave = 8.0 * ((x as f64 + 0.6 * y as f64) * freq + phase).sin();
        [
            clamp_u8(base[0] + wave + noise[i]),
            clamp_u8(base[1] + wave + noise[i]),
            clamp_u8(base[2] + wave * 0.5 + noise[i]),
        ]
    });
    (img, mask)
}
