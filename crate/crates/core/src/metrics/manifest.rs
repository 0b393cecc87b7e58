//! CSV manifest evaluation.
//!
//! Every row compares an output image with its content reference (SSIM,
//! RMSE, PSNR, SSD, SIFID; with a mask also the mean absolute difference
//! inside and outside it). FID compares all outputs with a real-image set:
//! a configured directory, whose statistics are cached beside it, or else
//! the manifest's content references.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use tch::Tensor;

use super::{fid, psnr_from_rmse, rmse, sifid, ssd, ssim, FeatureExtractor, FeatureStats};
use crate::error::{Error, Result};
use crate::imageio::{center_crop_resize, open_image, rgb_to_tensor};
use crate::mask::RegionMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub output: PathBuf,
    pub content_ref: PathBuf,
    pub style_ref: PathBuf,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub mask: Option<PathBuf>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<PathBuf>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.trim().is_empty()).map(PathBuf::from))
}

#[derive(Debug, Clone, Default)]
pub struct EvalManifest {
    pub rows: Vec<EvalRow>,
}

impl EvalManifest {
    /// Reads a CSV with header `output,content_ref,style_ref[,mask]`.
    /// Relative paths are resolved against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)?;
        let mut rows = Vec::new();
        for (i, rec) in reader.deserialize::<EvalRow>().enumerate() {
            let mut row = rec.map_err(|e| {
                Error::config("manifest", format!("{}: row {}: {e}", path.display(), i + 1))
            })?;
            let fix = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
            row.output = fix(&row.output);
            row.content_ref = fix(&row.content_ref);
            row.style_ref = fix(&row.style_ref);
            row.mask = row.mask.as_deref().map(fix);
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::config("manifest", format!("{} has no rows", path.display())));
        }
        Ok(Self { rows })
    }

    /// Fails on the first path that does not exist.
    pub fn check_paths(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            let mut paths = vec![
                ("output", &r.output),
                ("content_ref", &r.content_ref),
                ("style_ref", &r.style_ref),
            ];
            if let Some(m) = &r.mask {
                paths.push(("mask", m));
            }
            for (field, p) in paths {
                if !p.exists() {
                    return Err(Error::config(
                        format!("manifest.{field}"),
                        format!("row {}: {} not found", i + 1, p.display()),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Directory of real images for FID.
    pub real_dir: Option<PathBuf>,
    pub cache_stats: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowMetrics {
    pub output: String,
    pub ssim: f64,
    pub rmse: f64,
    pub psnr: f64,
    pub ssd: f64,
    pub sifid: f64,
    pub fg_l1: Option<f64>,
    pub bg_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    /// Mean over finite values; `None` when there are none.
    pub mean: Option<f64>,
    pub count: usize,
    pub non_finite: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<RowMetrics>,
    pub summary: BTreeMap<String, MetricSummary>,
    pub fid: Option<f64>,
    pub extractor: String,
}

fn summarize(values: impl Iterator<Item = f64>) -> MetricSummary {
    let (mut sum, mut n, mut bad) = (0.0, 0usize, 0usize);
    for v in values {
        if v.is_finite() {
            sum += v;
            n += 1;
        } else {
            bad += 1;
        }
    }
    MetricSummary {
        mean: (n > 0).then(|| sum / n as f64),
        count: n + bad,
        non_finite: bad,
    }
}

fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(open_image(path)?.to_rgb8())
}

/// Brings `img` to `w × h`, center-cropping to a square first when needed.
fn fit_to(img: RgbImage, w: u32, h: u32) -> Result<RgbImage> {
    if img.dimensions() == (w, h) {
        return Ok(img);
    }
    if w != h {
        return Err(Error::rejected(
            "content_ref",
            format!("cannot map {:?} onto non-square output {w}x{h}", img.dimensions()),
        ));
    }
    Ok(center_crop_resize(&image::DynamicImage::ImageRgb8(img), w).0)
}

fn masked_l1(out: &RgbImage, content: &RgbImage, mask: &RegionMask) -> (f64, f64) {
    let bits = mask.bits(0);
    let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for (i, (p, q)) in out.pixels().zip(content.pixels()).enumerate() {
        let d: f64 = (0..3).map(|c| (p.0[c] as f64 - q.0[c] as f64).abs()).sum::<f64>() / 3.0;
        if bits[i] {
            fg += d;
            nf += 1;
        } else {
            bg += d;
            nb += 1;
        }
    }
    (fg / nf.max(1) as f64, bg / nb.max(1) as f64)
}

fn pooled_stats(
    extractor: &dyn FeatureExtractor,
    images: impl Iterator<Item = Result<RgbImage>>,
) -> Result<FeatureStats> {
    let mut feats = Vec::new();
    for img in images {
        feats.push(extractor.pooled(&rgb_to_tensor(&img?))?);
    }
    if feats.len() < 2 {
        return Err(Error::rejected("fid", "FID needs at least two images per set"));
    }
    FeatureStats::from_features(&Tensor::cat(&feats, 0))
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["png", "jpg", "jpeg"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Statistics of a real-image directory at `res`, cached beside it.
pub fn real_stats(
    extractor: &dyn FeatureExtractor,
    dir: &Path,
    res: u32,
    cache: bool,
) -> Result<FeatureStats> {
    let cache_path = dir.join(format!(".regionswap-stats-{}-{res}.safetensors", extractor.id()));
    if cache && cache_path.exists() {
        return FeatureStats::load(&cache_path);
    }
    let files = list_images(dir)?;
    let stats = pooled_stats(
        extractor,
        files
            .iter()
            .map(|p| Ok(center_crop_resize(&open_image(p)?, res).0)),
    )?;
    if cache {
        stats.save(&cache_path)?;
    }
    Ok(stats)
}

pub fn evaluate(
    manifest: &EvalManifest,
    extractor: &dyn FeatureExtractor,
    options: &EvalOptions,
) -> Result<EvalReport> {
    manifest.check_paths()?;
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    let mut contents = Vec::new();
    for row in &manifest.rows {
        let out = load_rgb(&row.output)?;
        let (w, h) = out.dimensions();
        let content = fit_to(load_rgb(&row.content_ref)?, w, h)?;
        let e = rmse(&out, &content)?;
        let (ot, ct) = (rgb_to_tensor(&out), rgb_to_tensor(&content));
        let (fg_l1, bg_l1) = match &row.mask {
            Some(m) => {
                let mask = RegionMask::load_png(m)?;
                if (mask.width() as u32, mask.height() as u32) != (w, h) {
                    return Err(Error::rejected(
                        "mask",
                        format!("{}: mask size differs from output", m.display()),
                    ));
                }
                let (f, b) = masked_l1(&out, &content, &mask);
                (Some(f), Some(b))
            }
            None => (None, None),
        };
        rows.push(RowMetrics {
            output: row.output.display().to_string(),
            ssim: ssim(&out, &content)?,
            rmse: e,
            psnr: psnr_from_rmse(e),
            ssd: ssd(extractor, &ot, &ct)?,
            sifid: sifid(extractor, &ot, &ct)?,
            fg_l1,
            bg_l1,
        });
        outputs.push(out);
        contents.push(content);
    }
    let res = outputs[0].width();
    let fid_value = if outputs.len() >= 2 && outputs.iter().all(|o| o.dimensions() == (res, res)) {
        let gen = pooled_stats(extractor, outputs.into_iter().map(Ok))?;
        let real = match &options.real_dir {
            Some(dir) => real_stats(extractor, dir, res, options.cache_stats)?,
            None => pooled_stats(extractor, contents.into_iter().map(Ok))?,
        };
        Some(fid(&gen, &real)?)
    } else {
        None
    };
    let mut summary = BTreeMap::new();
    summary.insert("ssim".into(), summarize(rows.iter().map(|r| r.ssim)));
    summary.insert("rmse".into(), summarize(rows.iter().map(|r| r.rmse)));
    summary.insert("psnr".into(), summarize(rows.iter().map(|r| r.psnr)));
    summary.insert("ssd".into(), summarize(rows.iter().map(|r| r.ssd)));
    summary.insert("sifid".into(), summarize(rows.iter().map(|r| r.sifid)));
    summary.insert("fg_l1".into(), summarize(rows.iter().filter_map(|r| r.fg_l1)));
    summary.insert("bg_l1".into(), summarize(rows.iter().filter_map(|r| r.bg_l1)));
    Ok(EvalReport {
        rows,
        summary,
        fid: fid_value,
        extractor: extractor.id(),
    })
}

impl EvalReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["output", "ssim", "rmse", "psnr", "ssd", "sifid", "fg_l1", "bg_l1"])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.output.clone(),
                r.ssim.to_string(),
                r.rmse.to_string(),
                r.psnr.to_string(),
                r.ssd.to_string(),
                r.sifid.to_string(),
                opt(r.fg_l1),
                opt(r.bg_l1),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-metric mean and count, plus the set-level FID.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "metrics": self.summary,
            "fid": self.fid,
            "rows": self.rows.len(),
            "extractor": self.extractor,
        })
    }
}
