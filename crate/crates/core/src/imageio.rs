//! Conversions between 8-bit RGB images and `[-1, 1]` image tensors.

use std::io::Cursor;
use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::error::{ensure_input, Error, Result};
use crate::tensor::{to_vec_f32, ImageTensor};

/// Where a model-resolution image came from inside its source: a centered
/// square crop of side `crop_side` at `(crop_left, crop_top)`, resized to
/// `resolution`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub source_width: u32,
    pub source_height: u32,
    pub crop_left: u32,
    pub crop_top: u32,
    pub crop_side: u32,
    pub resolution: u32,
}

impl Geometry {
    /// Model pixels per source pixel.
    pub fn scale(&self) -> f64 {
        self.resolution as f64 / self.crop_side as f64
    }
}

/// Center-crops to a square and resizes (bicubic) to `resolution`.
pub fn center_crop_resize(img: &DynamicImage, resolution: u32) -> (RgbImage, Geometry) {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let side = w.min(h);
    let left = (w - side) / 2;
    let top = (h - side) / 2;
    let crop = image::imageops::crop_imm(&rgb, left, top, side, side).to_image();
    let out = if side == resolution {
        crop
    } else {
        image::imageops::resize(&crop, resolution, resolution, FilterType::CatmullRom)
    };
    let geom = Geometry {
        source_width: w,
        source_height: h,
        crop_left: left,
        crop_top: top,
        crop_side: side,
        resolution,
    };
    (out, geom)
}

/// 8-bit value to `[-1, 1]`: 0 maps to -1 and 255 to +1 exactly.
pub fn byte_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn unit_to_byte(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// `(1, 3, h, w)` tensor from an RGB image.
pub fn rgb_to_tensor(img: &RgbImage) -> ImageTensor {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = byte_to_unit(p.0[c]);
        }
    }
    ImageTensor::new(Tensor::from_slice(&data).view([1, 3, h as i64, w as i64]))
        .expect("rgb layout")
}

/// Converts batch entry `index` back to 8-bit RGB.
pub fn tensor_to_rgb(img: &ImageTensor, index: i64) -> RgbImage {
    let (h, w) = (img.height() as usize, img.width() as usize);
    let plane = img.tensor().get(index).detach().to_kind(Kind::Float);
    let data = to_vec_f32(&plane);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([
            unit_to_byte(data[i]),
            unit_to_byte(data[h * w + i]),
            unit_to_byte(data[2 * h * w + i]),
        ])
    })
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| Error::rejected("image", e.to_string()))?;
    Ok(out)
}

pub fn decode_image(bytes: &[u8], field: &str) -> Result<DynamicImage> {
    image::load_from_memory(bytes)
        .map_err(|e| Error::rejected(field, format!("undecodable image: {e}")))
}

pub fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an image file at model resolution.
pub fn load_image_tensor(path: &Path, resolution: u32) -> Result<ImageTensor> {
    let (rgb, _) = center_crop_resize(&open_image(path)?, resolution);
    Ok(rgb_to_tensor(&rgb))
}

pub fn save_image_tensor(img: &ImageTensor, index: i64, path: &Path) -> Result<()> {
    tensor_to_rgb(img, index)
        .save(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Tiles a list of equally sized image batches into a grid PNG: one column
/// per batch in `columns`, one row per batch entry.
pub fn image_grid(columns: &[&ImageTensor]) -> Result<RgbImage> {
    ensure_input!(!columns.is_empty(), "columns", "empty grid");
    let rows = columns[0].batch();
    let (h, w) = (columns[0].height() as u32, columns[0].width() as u32);
    for c in columns {
        ensure_input!(
            c.batch() == rows && c.height() as u32 == h && c.width() as u32 == w,
            "columns",
            "grid columns must share batch and size"
        );
    }
    let mut grid = RgbImage::new(w * columns.len() as u32, h * rows as u32);
    for (ci, col) in columns.iter().enumerate() {
        for r in 0..rows {
            let tile = tensor_to_rgb(col, r);
            image::imageops::replace(
                &mut grid,
                &tile,
                (ci as u32 * w) as i64,
                (r as u32 * h) as i64,
            );
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_range_maps_to_unit_interval() {
        assert_eq!(byte_to_unit(255), 1.0);
        assert_eq!(byte_to_unit(0), -1.0);
        for v in 0..=255u8 {
            assert_eq!(unit_to_byte(byte_to_unit(v)), v);
        }
    }

    #[test]
    fn crop_geometry_for_wide_source() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_fn(256, 128, |x, _| {
            image::Rgb([(x % 256) as u8, 0, 0])
        }));
        let (out, g) = center_crop_resize(&img, 64);
        assert_eq!(out.dimensions(), (64, 64));
        assert_eq!((g.crop_left, g.crop_top, g.crop_side), (64, 0, 128));
        assert_eq!(g.scale(), 0.5);
        // The leftmost output column comes from source column ~64, not 0.
        assert!(out.get_pixel(0, 32).0[0] >= 60);
    }

    #[test]
    fn tensor_round_trip_is_lossless() {
        let img = RgbImage::from_fn(8, 6, |x, y| image::Rgb([x as u8 * 30, y as u8 * 40, 7]));
        let t = rgb_to_tensor(&img);
        assert_eq!(t.size(), vec![1, 3, 6, 8]);
        assert_eq!(tensor_to_rgb(&t, 0), img);
    }
}
