//! Binary region masks: random free-form training masks, downsampling to
//! feature resolution, and single-channel PNG import/export.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::error::{ensure_input, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Full,
    Feature,
}

/// Strictly binary mask tensor `(batch, 1, h, w)`; 1 marks the edited region.
#[derive(Debug)]
pub struct RegionMask {
    data: Tensor,
    resolution: Resolution,
}

impl RegionMask {
    /// Wraps a tensor, rejecting anything that is not `(b, 1, h, w)` with
    /// values in `{0, 1}`.
    pub fn new(data: Tensor, resolution: Resolution) -> Result<Self> {
        let s = data.size();
        ensure_input!(
            s.len() == 4 && s[1] == 1,
            "mask",
            "expected (batch, 1, h, w), got {s:?}"
        );
        let data = data.detach().to_kind(Kind::Float);
        let binary = data.eq(0.0).logical_or(&data.eq(1.0)).all().int64_value(&[]) != 0;
        ensure_input!(binary, "mask", "mask must be binary (values 0 or 1)");
        Ok(Self { data, resolution })
    }

    pub fn filled(batch: i64, h: i64, w: i64, value: bool, resolution: Resolution) -> Self {
        let v = if value { 1.0 } else { 0.0 };
        Self {
            data: Tensor::full([batch, 1, h, w], v, (Kind::Float, tch::Device::Cpu)),
            resolution,
        }
    }

    /// Builds a single mask from a row-major `h × w` boolean raster.
    pub fn from_bits(bits: &[bool], h: i64, w: i64, resolution: Resolution) -> Result<Self> {
        ensure_input!(
            bits.len() as i64 == h * w,
            "mask",
            "raster has {} cells, expected {h}x{w}",
            bits.len()
        );
        let v: Vec<f32> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(Self {
            data: Tensor::from_slice(&v).view([1, 1, h, w]),
            resolution,
        })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn size(&self) -> Vec<i64> {
        self.data.size()
    }

    pub fn height(&self) -> i64 {
        self.data.size()[2]
    }

    pub fn width(&self) -> i64 {
        self.data.size()[3]
    }

    /// Boolean tensor suitable for `where_self`.
    pub fn selector(&self) -> Tensor {
        self.data.ge(0.5)
    }

    /// Fraction of foreground cells over the whole batch.
    pub fn coverage(&self) -> f64 {
        self.data.mean(Kind::Double).double_value(&[])
    }

    /// Row-major booleans of batch entry `index`.
    pub fn bits(&self, index: i64) -> Vec<bool> {
        let plane = self.data.get(index).view(-1);
        crate::tensor::to_vec_f32(&plane)
            .into_iter()
            .map(|v| v >= 0.5)
            .collect()
    }

    pub fn select(&self, index: i64) -> RegionMask {
        Self {
            data: self.data.narrow(0, index, 1),
            resolution: self.resolution,
        }
    }

    pub fn cat(masks: &[RegionMask]) -> Result<RegionMask> {
        ensure_input!(!masks.is_empty(), "mask", "no masks to concatenate");
        let ts: Vec<&Tensor> = masks.iter().map(|m| &m.data).collect();
        Ok(Self {
            data: Tensor::cat(&ts, 0),
            resolution: masks[0].resolution,
        })
    }

    /// Encodes batch entry 0 as an 8-bit grayscale PNG (0 or 255).
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let (h, w) = (self.height() as u32, self.width() as u32);
        let bits = self.bits(0);
        let img = GrayImage::from_fn(w, h, |x, y| {
            Luma([if bits[(y * w + x) as usize] { 255 } else { 0 }])
        });
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
            .map_err(|e| Error::rejected("mask", e.to_string()))?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    /// Decodes any image as a mask: luminance >= 128 is foreground.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| Error::rejected("mask_png", format!("undecodable mask: {e}")))?
            .to_luma8();
        Ok(Self::from_gray(&img))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        Ok(Self::from_gray(&img))
    }

    fn from_gray(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let bits: Vec<bool> = img.pixels().map(|p| p.0[0] >= 128).collect();
        Self::from_bits(&bits, h as i64, w as i64, Resolution::Full).expect("sizes agree")
    }
}

/// Downsamples a full-resolution mask by `factor`: a cell is foreground iff
/// at least half of its `factor × factor` block is.
pub fn downsample_mask(mask: &RegionMask, factor: i64) -> Result<RegionMask> {
    ensure_input!(factor >= 1, "factor", "factor must be positive, got {factor}");
    ensure_input!(
        mask.height() % factor == 0 && mask.width() % factor == 0,
        "mask",
        "mask {}x{} is not divisible by {factor}",
        mask.height(),
        mask.width()
    );
    // Integer counts per block, so the threshold comparison is exact.
    let counts = mask.tensor().avg_pool2d(
        [factor, factor],
        [factor, factor],
        [0, 0],
        false,
        true,
        Some(1),
    );
    let data = (counts * 2.0).ge((factor * factor) as f64).to_kind(Kind::Float);
    Ok(RegionMask {
        data,
        resolution: Resolution::Feature,
    })
}

/// Statistics of the random training masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskParams {
    /// Upper bound on strokes per mask is drawn from this range.
    pub stroke_count_range: (u32, u32),
    /// Brush diameter in pixels.
    pub stroke_width_range: (u32, u32),
    pub vertex_count_range: (u32, u32),
    pub rect_count_range: (u32, u32),
    /// Side of each rectangle as a fraction of the image side.
    pub rect_size_range: (f64, f64),
    pub target_coverage_range: (f64, f64),
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            stroke_count_range: (1, 6),
            stroke_width_range: (4, 10),
            vertex_count_range: (4, 10),
            rect_count_range: (0, 2),
            rect_size_range: (0.1, 0.3),
            target_coverage_range: (0.1, 0.5),
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("mask.stroke_count_range", self.stroke_count_range),
            ("mask.stroke_width_range", self.stroke_width_range),
            ("mask.vertex_count_range", self.vertex_count_range),
            ("mask.rect_count_range", self.rect_count_range),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(Error::config(name, format!("empty range ({lo}, {hi})")));
            }
        }
        if self.stroke_count_range.1 == 0 {
            return Err(Error::config("mask.stroke_count_range", "need at least one stroke"));
        }
        if self.stroke_width_range.0 == 0 {
            return Err(Error::config("mask.stroke_width_range", "width must be >= 1"));
        }
        if self.vertex_count_range.0 < 2 {
            return Err(Error::config("mask.vertex_count_range", "a stroke needs two vertices"));
        }
        let (a, b) = self.rect_size_range;
        if !(a > 0.0 && a <= b && b < 1.0) {
            return Err(Error::config("mask.rect_size_range", format!("({a}, {b}) not in (0, 1)")));
        }
        let (lo, hi) = self.target_coverage_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::config(
                "mask.target_coverage_range",
                format!("({lo}, {hi}) must satisfy 0 < min <= max < 1"),
            ));
        }
        Ok(())
    }
}

const MAX_ATTEMPTS: usize = 20;

struct Canvas {
    h: i64,
    w: i64,
    cells: Vec<bool>,
    filled: usize,
}

impl Canvas {
    fn new(h: i64, w: i64) -> Self {
        Self {
            h,
            w,
            cells: vec![false; (h * w) as usize],
            filled: 0,
        }
    }

    fn coverage(&self) -> f64 {
        self.filled as f64 / self.cells.len() as f64
    }

    fn set(&mut self, y: i64, x: i64) {
        if y >= 0 && y < self.h && x >= 0 && x < self.w {
            let i = (y * self.w + x) as usize;
            if !self.cells[i] {
                self.cells[i] = true;
                self.filled += 1;
            }
        }
    }

    fn disc(&mut self, cy: f64, cx: f64, radius: f64) {
        let r = radius.ceil() as i64;
        let (iy, ix) = (cy.round() as i64, cx.round() as i64);
        for y in iy - r..=iy + r {
            for x in ix - r..=ix + r {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                if dy * dy + dx * dx <= radius * radius {
                    self.set(y, x);
                }
            }
        }
    }

    fn segment(&mut self, y0: f64, x0: f64, y1: f64, x1: f64, radius: f64) {
        let len = ((y1 - y0).powi(2) + (x1 - x0).powi(2)).sqrt();
        let steps = (len / (radius * 0.5).max(0.5)).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.disc(y0 + t * (y1 - y0), x0 + t * (x1 - x0), radius);
        }
    }

    fn rect(&mut self, top: i64, left: i64, hh: i64, ww: i64) {
        for y in top..top + hh {
            for x in left..left + ww {
                self.set(y, x);
            }
        }
    }

    fn morph(&self, dilate: bool) -> Canvas {
        let mut out = Canvas::new(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                let mut any = false;
                let mut all = true;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (yy, xx) = (y + dy, x + dx);
                        let v = yy >= 0
                            && yy < self.h
                            && xx >= 0
                            && xx < self.w
                            && self.cells[(yy * self.w + xx) as usize];
                        any |= v;
                        all &= v;
                    }
                }
                if (dilate && any) || (!dilate && all) {
                    out.set(y, x);
                }
            }
        }
        out
    }
}

fn draw_candidate<R: Rng + ?Sized>(
    h: i64,
    w: i64,
    p: &MaskParams,
    target: f64,
    rng: &mut R,
) -> Canvas {
    let mut c = Canvas::new(h, w);
    let n_rect = rng.gen_range(p.rect_count_range.0..=p.rect_count_range.1);
    for _ in 0..n_rect {
        let rh = ((rng.gen_range(p.rect_size_range.0..=p.rect_size_range.1) * h as f64).round()
            as i64)
            .clamp(1, h);
        let rw = ((rng.gen_range(p.rect_size_range.0..=p.rect_size_range.1) * w as f64).round()
            as i64)
            .clamp(1, w);
        c.rect(rng.gen_range(0..=h - rh), rng.gen_range(0..=w - rw), rh, rw);
        if c.coverage() >= target {
            return c;
        }
    }
    // Free-form strokes: random-walk polylines with round joints, drawn one
    // segment at a time until the target coverage is reached.
    let max_len = (h.min(w) as f64) / 4.0;
    let n_strokes = rng.gen_range(p.stroke_count_range.0.max(1)..=p.stroke_count_range.1);
    for _ in 0..n_strokes {
        let radius = rng.gen_range(p.stroke_width_range.0..=p.stroke_width_range.1) as f64 / 2.0;
        let n_vert = rng.gen_range(p.vertex_count_range.0..=p.vertex_count_range.1);
        let mut y = rng.gen_range(0.0..h as f64);
        let mut x = rng.gen_range(0.0..w as f64);
        let mut angle = rng.gen_range(0.0..std::f64::consts::TAU);
        c.disc(y, x, radius);
        for _ in 1..n_vert {
            angle += rng.gen_range(-1.2..1.2);
            let len = rng.gen_range(max_len / 3.0..=max_len);
            let ny = (y + len * angle.sin()).clamp(0.0, (h - 1) as f64);
            let nx = (x + len * angle.cos()).clamp(0.0, (w - 1) as f64);
            c.segment(y, x, ny, nx, radius);
            y = ny;
            x = nx;
            if c.coverage() >= target {
                return c;
            }
        }
    }
    c
}

/// Draws a random free-form mask of size `h × w` (batch of one).
///
/// A target coverage is drawn uniformly from `params.target_coverage_range`
/// and candidates are redrawn until one reaches it without leaving the range
/// (at most 20 attempts). Failing that, the last candidate is pushed toward
/// the target by 3×3 dilation, or into range by erosion.
pub fn random_mask<R: Rng + ?Sized>(
    h: i64,
    w: i64,
    params: &MaskParams,
    rng: &mut R,
) -> Result<RegionMask> {
    ensure_input!(h >= 8 && w >= 8, "mask", "mask must be at least 8x8, got {h}x{w}");
    params.validate()?;
    let (lo, hi) = params.target_coverage_range;
    let target = rng.gen_range(lo..=hi);
    let accept = |c: &Canvas| (target..=hi).contains(&c.coverage());
    let mut canvas = draw_candidate(h, w, params, target, rng);
    for _ in 1..MAX_ATTEMPTS {
        if accept(&canvas) {
            break;
        }
        canvas = draw_candidate(h, w, params, target, rng);
    }
    while canvas.coverage() < target {
        let next = canvas.morph(true);
        if next.filled == canvas.filled || next.coverage() > hi {
            break;
        }
        canvas = next;
    }
    let in_range = |c: &Canvas| (lo..=hi).contains(&c.coverage());
    while !in_range(&canvas) {
        let grow = canvas.coverage() < lo;
        let next = canvas.morph(grow);
        let stuck = next.filled == canvas.filled;
        let overshot = if grow {
            next.coverage() > hi
        } else {
            next.coverage() < lo
        };
        if stuck || overshot {
            return Err(Error::MaskGeneration(format!(
                "coverage {:.3} cannot be brought into [{lo}, {hi}] at {h}x{w}",
                canvas.coverage()
            )));
        }
        canvas = next;
    }
    RegionMask::from_bits(&canvas.cells, h, w, Resolution::Full)
}

/// One independent random mask per batch entry, stacked.
pub fn random_masks<R: Rng + ?Sized>(
    batch: i64,
    h: i64,
    w: i64,
    params: &MaskParams,
    rng: &mut R,
) -> Result<RegionMask> {
    let masks = (0..batch)
        .map(|_| random_mask(h, w, params, rng))
        .collect::<Result<Vec<_>>>()?;
    RegionMask::cat(&masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_downsample(bits: &[bool], h: usize, w: usize, f: usize) -> Vec<bool> {
        let mut out = Vec::new();
        for by in 0..h / f {
            for bx in 0..w / f {
                let mut n = 0;
                for y in 0..f {
                    for x in 0..f {
                        if bits[(by * f + y) * w + bx * f + x] {
                            n += 1;
                        }
                    }
                }
                out.push(n as f64 / (f * f) as f64 >= 0.5);
            }
        }
        out
    }

    #[test]
    fn rejects_non_binary() {
        let t = Tensor::from_slice(&[0.0f32, 0.5, 1.0, 1.0]).view([1, 1, 2, 2]);
        assert!(matches!(
            RegionMask::new(t, Resolution::Full),
            Err(Error::Rejected { .. })
        ));
    }

    #[test]
    fn downsample_ones_and_zeros() {
        for v in [true, false] {
            let m = RegionMask::filled(2, 64, 64, v, Resolution::Full);
            let d = downsample_mask(&m, 8).unwrap();
            assert_eq!(d.size(), vec![2, 1, 8, 8]);
            assert!(d.bits(1).iter().all(|&b| b == v));
            assert_eq!(d.resolution(), Resolution::Feature);
        }
    }

    #[test]
    fn downsample_block_checkerboard() {
        let bits: Vec<bool> = (0..64 * 64)
            .map(|i| {
                let (y, x) = (i / 64, i % 64);
                (y / 8 + x / 8) % 2 == 0
            })
            .collect();
        let m = RegionMask::from_bits(&bits, 64, 64, Resolution::Full).unwrap();
        let d = downsample_mask(&m, 8).unwrap();
        let expect: Vec<bool> = (0..64).map(|i| (i / 8 + i % 8) % 2 == 0).collect();
        assert_eq!(d.bits(0), expect);
    }

    #[test]
    fn downsample_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let bits: Vec<bool> = (0..32 * 48).map(|_| rng.gen_bool(0.5)).collect();
            let m = RegionMask::from_bits(&bits, 32, 48, Resolution::Full).unwrap();
            for f in [2, 4, 8] {
                let d = downsample_mask(&m, f).unwrap();
                assert_eq!(d.bits(0), brute_downsample(&bits, 32, 48, f as usize));
            }
        }
    }

    #[test]
    fn downsample_rejects_indivisible() {
        let m = RegionMask::filled(1, 30, 32, true, Resolution::Full);
        assert!(matches!(downsample_mask(&m, 8), Err(Error::Rejected { .. })));
    }

    #[test]
    fn random_mask_respects_coverage() {
        let p = MaskParams {
            target_coverage_range: (0.2, 0.5),
            ..MaskParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = random_mask(64, 64, &p, &mut rng).unwrap();
            let c = m.coverage();
            assert!((0.2..=0.5).contains(&c), "coverage {c}");
        }
    }

    #[test]
    fn random_mask_is_reproducible() {
        let p = MaskParams::default();
        let a = random_mask(64, 64, &p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = random_mask(64, 64, &p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.bits(0), b.bits(0));
    }

    #[test]
    fn random_mask_mean_coverage_near_midpoint() {
        let p = MaskParams::default();
        let (lo, hi) = p.target_coverage_range;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1000;
        let mean: f64 = (0..n)
            .map(|_| random_mask(64, 64, &p, &mut rng).unwrap().coverage())
            .sum::<f64>()
            / n as f64;
        let mid = 0.5 * (lo + hi);
        assert!((mean - mid).abs() <= 0.05, "mean coverage {mean} vs {mid}");
    }

    #[test]
    fn png_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_mask(32, 40, &MaskParams::default(), &mut rng).unwrap();
        let back = RegionMask::from_png_bytes(&m.to_png_bytes().unwrap()).unwrap();
        assert_eq!(back.size(), vec![1, 1, 32, 40]);
        assert_eq!(back.bits(0), m.bits(0));
    }

    #[test]
    fn png_loader_thresholds_at_128() {
        let img = GrayImage::from_fn(4, 1, |x, _| Luma([[0u8, 127, 128, 255][x as usize]]));
        let mut bytes = Vec::new();
        img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
            .unwrap();
        let m = RegionMask::from_png_bytes(&bytes).unwrap();
        assert_eq!(m.bits(0), vec![false, false, true, true]);
    }

    #[test]
    fn params_validation() {
        let p = MaskParams {
            target_coverage_range: (0.6, 0.4),
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = MaskParams {
            vertex_count_range: (1, 4),
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(random_mask(4, 64, &MaskParams::default(), &mut rand::thread_rng()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn downsample_is_monotone(seed in 0u64..1000, extra in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut bits: Vec<bool> = (0..32 * 32).map(|_| rng.gen_bool(0.4)).collect();
            let before = downsample_mask(
                &RegionMask::from_bits(&bits, 32, 32, Resolution::Full).unwrap(), 4).unwrap().bits(0);
            for _ in 0..extra {
                let i = rng.gen_range(0..bits.len());
                bits[i] = true;
            }
            let after = downsample_mask(
                &RegionMask::from_bits(&bits, 32, 32, Resolution::Full).unwrap(), 4).unwrap().bits(0);
            for (b, a) in before.iter().zip(&after) {
                proptest::prop_assert!(!*b || *a);
            }
        }
    }
}
