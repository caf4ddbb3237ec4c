//! Pixel containers, superpixel partitions and local context boxes.

mod mask;
mod partition;
mod slic;

use std::path::Path;

use image::{ImageFormat, ImageReader};

pub use mask::{Mask, Rect};
pub use partition::{
    context_box, refine_partition, ContextBox, PartitionSidecar, RegionStats, Scale,
    SuperpixelPartition,
};
pub use slic::{rgb_to_lab, segment_superpixels, SlicParams};

use crate::error::{Error, Result};

/// Smallest side accepted by [`load_image`].
pub const MIN_IMAGE_SIDE: u32 = 16;

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image has a zero dimension".into()));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::dims(expected, data.len()));
        }
        Ok(RasterImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        RasterImage {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RasterImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixel_at(&self, index: usize) -> [u8; 3] {
        let i = index * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Luma in [0, 255] per pixel.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::MalformedFile(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

/// Decodes a PNG or binary PPM file into 8-bit RGB.
pub fn load_image(path: &Path) -> Result<RasterImage> {
    let unreadable = |reason: String| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| unreadable(e.to_string()))?;
    let format = image::guess_format(&bytes)
        .map_err(|_| Error::UnsupportedFormat(path.display().to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(Error::UnsupportedFormat(format!("{format:?}")));
    }
    let decoded = ImageReader::with_format(std::io::Cursor::new(bytes), format)
        .decode()
        .map_err(|e| unreadable(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (width, height) = rgb.dimensions();
    if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
        return Err(Error::ImageTooSmall {
            width,
            height,
            min: MIN_IMAGE_SIDE,
        });
    }
    RasterImage::new(width, height, rgb.into_raw())
}

/// Cuts `rect` out of `img`; with a mask, pixels outside it are zeroed first.
pub fn crop_context(img: &RasterImage, rect: &Rect, mask: Option<&Mask>) -> Result<RasterImage> {
    if rect.x1 >= img.width || rect.y1 >= img.height || rect.x0 > rect.x1 || rect.y0 > rect.y1 {
        return Err(Error::InvalidParameter(format!(
            "box {rect:?} outside {}x{} image",
            img.width, img.height
        )));
    }
    if let Some(m) = mask {
        if m.width() != img.width || m.height() != img.height {
            return Err(Error::dims(
                format!("{}x{}", img.width, img.height),
                format!("{}x{}", m.width(), m.height()),
            ));
        }
    }
    Ok(RasterImage::from_fn(rect.width(), rect.height(), |x, y| {
        let (sx, sy) = (rect.x0 + x, rect.y0 + y);
        match mask {
            Some(m) if !m.get(sx, sy) => [0, 0, 0],
            _ => img.pixel(sx, sy),
        }
    }))
}

/// Writes a binary mask as 8-bit grayscale PNG (0 background, 255 object).
pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask_png(mask)?)?;
    Ok(())
}

pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let raw = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width(), mask.height(), raw)
        .expect("mask buffer length matches dims");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::MalformedFile(e.to_string()))?;
    Ok(out.into_inner())
}

/// Reads a grayscale mask image; any non-zero luma counts as foreground.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Mask::from_bits(w, h, gray.into_raw().into_iter().map(|v| v > 0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solid_red_png_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.png");
        RasterImage::filled(64, 64, [255, 0, 0]).save_png(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
        assert!(img.data().chunks(3).all(|p| p == [255, 0, 0]));
    }

    #[test]
    fn grayscale_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let gray = image::GrayImage::from_fn(32, 32, |x, y| image::Luma([(x * 7 + y) as u8]));
        gray.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let v = (x * 7 + y) as u8;
                assert_eq!(img.pixel(x, y), [v, v, v]);
            }
        }
    }

    #[test]
    fn ppm_is_supported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut bytes = b"P6\n16 16\n255\n".to_vec();
        for i in 0..256u32 {
            bytes.extend_from_slice(&[i as u8, 0, 255 - i as u8]);
        }
        std::fs::write(&path, bytes).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixel(1, 0), [1, 0, 254]);
    }

    #[test]
    fn truncated_file_is_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.png");
        let bytes = RasterImage::filled(64, 64, [1, 2, 3]).encode_png().unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&path), Err(Error::UnreadableFile { .. })));
        assert!(matches!(
            load_image(&dir.path().join("missing.png")),
            Err(Error::UnreadableFile { .. })
        ));
    }

    #[test]
    fn small_and_foreign_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.png");
        RasterImage::filled(8, 20, [0, 0, 0]).save_png(&path).unwrap();
        assert!(matches!(load_image(&path), Err(Error::ImageTooSmall { .. })));
        let txt = dir.path().join("notes.txt");
        std::fs::write(&txt, "hello there, not an image").unwrap();
        assert!(matches!(load_image(&txt), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn crop_copies_and_masks() {
        let img = RasterImage::from_fn(4, 4, |x, y| [(y * 4 + x) as u8, 0, 0]);
        let full = crop_context(&img, &Rect::full(4, 4), None).unwrap();
        assert_eq!(full, img);

        let rect = Rect { x0: 1, y0: 2, x1: 2, y1: 3 };
        let crop = crop_context(&img, &rect, None).unwrap();
        let reds: Vec<u8> = crop.data().chunks(3).map(|p| p[0]).collect();
        assert_eq!(reds, vec![9, 10, 13, 14]);

        let zeros = Mask::new(4, 4);
        let black = crop_context(&img, &Rect::full(4, 4), Some(&zeros)).unwrap();
        assert!(black.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = Mask::from_fn(20, 17, |x, y| (x + y) % 3 == 0);
        save_mask_png(&mask, &path).unwrap();
        assert_eq!(load_mask_png(&path).unwrap(), mask);
    }
}
