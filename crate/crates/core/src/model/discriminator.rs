use rand::Rng;
use tch::{nn, Kind, Tensor};

use super::layers::{lrelu, Conv2d, Init, Linear, ResBlock};
use super::NetworkConfig;
use crate::error::{ensure_input, Error, Result};
use crate::tensor::ImageTensor;

/// Whole-image realism discriminator `D`.
#[derive(Debug)]
pub struct Discriminator {
    from_rgb: Conv2d,
    blocks: Vec<ResBlock>,
    fc: Linear,
    out: Linear,
    resolution: i64,
}

impl Discriminator {
    pub fn new(p: nn::Path, init: &mut Init, cfg: &NetworkConfig) -> Self {
        let w = cfg.disc_width;
        let from_rgb = Conv2d::new(&p / "from_rgb", init, 3, w, 1, 1, true);
        let mut ch = w;
        let mut blocks = Vec::new();
        for i in 0..cfg.disc_blocks {
            let next = (ch * 2).min(8 * w);
            blocks.push(ResBlock::new(&p / format!("block{i}"), init, ch, next, true));
            ch = next;
        }
        let side = cfg.base_resolution >> cfg.disc_blocks;
        let fc = Linear::new(&p / "fc", init, ch * side * side, ch, 0.0);
        let out = Linear::new(&p / "out", init, ch, 1, 0.0);
        Self {
            from_rgb,
            blocks,
            fc,
            out,
            resolution: cfg.base_resolution,
        }
    }

    /// One realness logit per batch element.
    pub fn forward_tensor(&self, images: &Tensor) -> Result<Tensor> {
        let s = images.size();
        ensure_input!(
            s.len() == 4 && s[1] == 3 && s[2] == self.resolution && s[3] == self.resolution,
            "image",
            "expected (_, 3, {0}, {0}), got {s:?}",
            self.resolution
        );
        let mut h = lrelu(&self.from_rgb.forward(images));
        for b in &self.blocks {
            h = b.forward(&h);
        }
        let h = lrelu(&self.fc.forward(&h.flatten(1, -1)));
        Ok(self.out.forward(&h).view([-1]))
    }

    pub fn discriminate(&self, image: &ImageTensor) -> Result<Tensor> {
        self.forward_tensor(image.tensor())
    }
}

/// Integer crop rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub top: i64,
    pub left: i64,
    pub side: i64,
}

/// Draws square crops whose side is a uniform fraction of the image side and
/// whose position is uniform over all placements fully inside the image.
#[derive(Debug, Clone, Copy)]
pub struct PatchSampler {
    pub size_range: (f64, f64),
    pub patch_resolution: i64,
}

impl PatchSampler {
    pub fn from_config(cfg: &NetworkConfig) -> Self {
        Self {
            size_range: cfg.patch_size_range,
            patch_resolution: cfg.patch_resolution(),
        }
    }

    pub fn draw_crop<R: Rng + ?Sized>(&self, h: i64, w: i64, rng: &mut R) -> Result<CropBox> {
        let (lo, hi) = self.size_range;
        let short = h.min(w) as f64;
        let frac = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let side = (frac * short).round() as i64;
        if side < 1 {
            return Err(Error::config(
                "network.patch_size_range",
                format!("patch side {frac} x {short} rounds below one pixel"),
            ));
        }
        let side = side.min(h.min(w));
        Ok(CropBox {
            top: rng.gen_range(0..=h - side),
            left: rng.gen_range(0..=w - side),
            side,
        })
    }

    /// Crops `count` patches from every image, resized to the patch resolution.
    /// Output is image-major: `(batch * count, 3, p, p)`.
    pub fn crop_patches<R: Rng + ?Sized>(
        &self,
        images: &Tensor,
        count: i64,
        rng: &mut R,
    ) -> Result<Tensor> {
        ensure_input!(count >= 1, "count", "patch count must be >= 1, got {count}");
        let s = images.size();
        ensure_input!(s.len() == 4, "image", "expected 4-d image batch, got {s:?}");
        let p = self.patch_resolution;
        let mut patches = Vec::with_capacity((s[0] * count) as usize);
        for b in 0..s[0] {
            let img = images.narrow(0, b, 1);
            for _ in 0..count {
                let c = self.draw_crop(s[2], s[3], rng)?;
                let crop = img.narrow(2, c.top, c.side).narrow(3, c.left, c.side);
                patches.push(if c.side == p {
                    crop
                } else {
                    crop.upsample_bilinear2d([p, p], false, None::<f64>, None::<f64>)
                });
            }
        }
        Ok(Tensor::cat(&patches, 0))
    }
}

/// Patch co-occurrence discriminator `D_co`. Judged patches and reference
/// patches share a patch encoder; the reference features of each image are
/// mean-pooled and concatenated with every judged patch feature before the
/// classifier. Per-patch logits are averaged within each image's group.
#[derive(Debug)]
pub struct CooccurDiscriminator {
    from_rgb: Conv2d,
    blocks: Vec<ResBlock>,
    fc1: Linear,
    fc2: Linear,
    out: Linear,
    patch_resolution: i64,
}

impl CooccurDiscriminator {
    pub fn new(p: nn::Path, init: &mut Init, cfg: &NetworkConfig) -> Self {
        let w = cfg.cooccur_width;
        let pr = cfg.patch_resolution();
        let n_down = pr.trailing_zeros() as i64 - 1;
        let from_rgb = Conv2d::new(&p / "from_rgb", init, 3, w, 1, 1, true);
        let mut ch = w;
        let mut blocks = Vec::new();
        for i in 0..n_down {
            let next = (ch * 2).min(4 * w);
            blocks.push(ResBlock::new(&p / format!("block{i}"), init, ch, next, true));
            ch = next;
        }
        let feat = ch * 4;
        Self {
            from_rgb,
            blocks,
            fc1: Linear::new(&p / "fc1", init, 2 * feat, feat, 0.0),
            fc2: Linear::new(&p / "fc2", init, feat, feat, 0.0),
            out: Linear::new(&p / "out", init, feat, 1, 0.0),
            patch_resolution: pr,
        }
    }

    fn features(&self, patches: &Tensor) -> Tensor {
        let mut h = lrelu(&self.from_rgb.forward(patches));
        for b in &self.blocks {
            h = b.forward(&h);
        }
        h.flatten(1, -1)
    }

    /// `patches` holds `batch * n` judged patches and `reference` holds
    /// `batch * m` reference patches, both image-major. Returns `(batch,)`.
    pub fn cooccur(&self, patches: &Tensor, reference: &Tensor, batch: i64) -> Result<Tensor> {
        ensure_input!(batch >= 1, "batch", "batch must be positive");
        ensure_input!(
            reference.size()[0] >= batch,
            "reference_patches",
            "need at least one reference patch per image, got {} for batch {batch}",
            reference.size()[0]
        );
        let pr = self.patch_resolution;
        for (name, t) in [("patches", patches), ("reference_patches", reference)] {
            let s = t.size();
            ensure_input!(
                s.len() == 4 && s[1] == 3 && s[2] == pr && s[3] == pr,
                name,
                "expected (_, 3, {pr}, {pr}), got {s:?}"
            );
            ensure_input!(
                s[0] % batch == 0,
                name,
                "{} patches do not split evenly over batch {batch}",
                s[0]
            );
        }
        let n = patches.size()[0] / batch;
        ensure_input!(n >= 1, "patches", "no judged patches");
        let m = reference.size()[0] / batch;
        let judged = self.features(patches);
        let d = judged.size()[1];
        let refs = self
            .features(reference)
            .view([batch, m, d])
            .mean_dim([1i64].as_slice(), false, Kind::Float);
        let refs = refs
            .unsqueeze(1)
            .expand([batch, n, d], false)
            .reshape([batch * n, d]);
        let h = Tensor::cat(&[&judged, &refs], 1);
        let h = lrelu(&self.fc1.forward(&h));
        let h = lrelu(&self.fc2.forward(&h));
        let logits = self.out.forward(&h).view([batch, n]);
        Ok(logits.mean_dim([1i64].as_slice(), false, Kind::Float))
    }
}
