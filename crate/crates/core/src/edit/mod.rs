//! Inference-time editing: global style swap, mask-guided region edits with
//! feature-space composition, code interpolation, and edit sessions that
//! chain successive edits.

pub mod session;

use std::path::Path;

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::Tensor;

use crate::error::{ensure_input, Error, Result};
use crate::imageio::{center_crop_resize, rgb_to_tensor, tensor_to_rgb, Geometry};
use crate::mask::{downsample_mask, RegionMask};
use crate::model::{Encoded, Networks};
use crate::objectives::compose_features;
use crate::tensor::{ContentCode, FeatureMap, ImageTensor, StyleCode};
use crate::train::checkpoint::{load_checkpoint, FORMAT_TAG};

pub use session::{EditSession, HistoryEntry};

/// Read-only model wrapper used for all inference.
///
/// Weights are frozen on construction and never change afterwards, so an
/// `Editor` can be shared between threads.
#[derive(Debug)]
pub struct Editor {
    nets: Networks,
    format: String,
}

// SAFETY: every weight tensor is frozen (no autograd state is created) and
// only read after construction. libtorch kernels are reentrant for
// concurrent reads of the same storage.
unsafe impl Sync for Editor {}
unsafe impl Send for Editor {}

/// Output of a region edit together with its intermediate values.
#[derive(Debug)]
pub struct RegionEdit {
    /// `I_h`, the edited image.
    pub result: ImageTensor,
    /// `I_g = G(C_A, S_B)`, the global swap the foreground is taken from.
    pub swap: ImageTensor,
    /// The composed feature map fed to the two heads.
    pub composed: FeatureMap,
    /// Feature-resolution mask used for the composition.
    pub mask_e: RegionMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Content,
    Style,
}

impl std::str::FromStr for CodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(CodeKind::Content),
            "style" => Ok(CodeKind::Style),
            other => Err(Error::rejected(
                "kind",
                format!("expected `content` or `style`, got `{other}`"),
            )),
        }
    }
}

/// A content or style code tagged with its kind and source image.
#[derive(Debug)]
pub struct CodeHandle {
    kind: CodeKind,
    tensor: Tensor,
    pub source: String,
}

impl CodeHandle {
    /// Rejects tensors whose rank does not match the kind: content codes
    /// are spatial `(b, c, h, w)`, style codes flat `(b, d)`.
    pub fn new(kind: CodeKind, tensor: Tensor, source: impl Into<String>) -> Result<Self> {
        let rank = tensor.dim();
        let want = match kind {
            CodeKind::Content => 4,
            CodeKind::Style => 2,
        };
        ensure_input!(
            rank == want,
            "code",
            "{kind:?} code must have rank {want}, got {rank}"
        );
        Ok(Self {
            kind,
            tensor,
            source: source.into(),
        })
    }

    pub fn content(code: &ContentCode, source: impl Into<String>) -> Self {
        Self::new(CodeKind::Content, code.tensor().shallow_clone(), source).expect("rank 4")
    }

    pub fn style(code: &StyleCode, source: impl Into<String>) -> Self {
        Self::new(CodeKind::Style, code.tensor().shallow_clone(), source).expect("rank 2")
    }

    pub fn kind(&self) -> CodeKind {
        self.kind
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }
}

/// `(1 − t)·a + t·b`. `t = 0` and `t = 1` return the endpoints exactly.
pub fn interpolate(a: &CodeHandle, b: &CodeHandle, t: f64) -> Result<CodeHandle> {
    ensure_input!(
        a.kind == b.kind,
        "kind",
        "cannot interpolate a {:?} code with a {:?} code",
        a.kind,
        b.kind
    );
    ensure_input!(
        a.tensor.size() == b.tensor.size(),
        "code",
        "shape mismatch: {:?} vs {:?}",
        a.tensor.size(),
        b.tensor.size()
    );
    ensure_input!((0.0..=1.0).contains(&t), "t", "t must lie in [0, 1], got {t}");
    let tensor = if t == 0.0 {
        a.tensor.copy()
    } else if t == 1.0 {
        b.tensor.copy()
    } else {
        &a.tensor * (1.0 - t) + &b.tensor * t
    };
    Ok(CodeHandle {
        kind: a.kind,
        tensor,
        source: format!("lerp({},{},{t})", a.source, b.source),
    })
}

/// `n` evenly spaced values from 0 to 1 inclusive.
pub fn linspace(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Short content hash used to name images in session histories.
pub fn image_id(img: &ImageTensor) -> String {
    let rgb = tensor_to_rgb(img, 0);
    let digest = Sha256::new()
        .chain_update(rgb.width().to_le_bytes())
        .chain_update(rgb.height().to_le_bytes())
        .chain_update(rgb.as_raw())
        .finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Rounds an image to 8-bit precision, the form in which results leave the
/// editor and come back as inputs.
pub fn quantize(img: &ImageTensor) -> ImageTensor {
    let rows: Vec<ImageTensor> = (0..img.batch())
        .map(|i| rgb_to_tensor(&tensor_to_rgb(img, i)))
        .collect();
    ImageTensor::cat(&rows.iter().collect::<Vec<_>>())
}

impl Editor {
    pub fn new(mut nets: Networks) -> Self {
        nets.freeze();
        Self {
            nets,
            format: FORMAT_TAG.to_string(),
        }
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let (_, nets) = load_checkpoint(path)?;
        Ok(Self::new(nets))
    }

    pub fn networks(&self) -> &Networks {
        &self.nets
    }

    pub fn format_tag(&self) -> &str {
        &self.format
    }

    pub fn resolution(&self) -> i64 {
        self.nets.config().base_resolution
    }

    /// Center-crops and resizes an arbitrary image to model resolution.
    pub fn prepare(&self, img: &DynamicImage) -> (ImageTensor, Geometry) {
        let (rgb, geom) = center_crop_resize(img, self.resolution() as u32);
        (rgb_to_tensor(&rgb), geom)
    }

    fn check_image(&self, img: &ImageTensor, field: &str) -> Result<()> {
        let r = self.resolution();
        ensure_input!(
            img.height() == r && img.width() == r,
            field,
            "expected {r}x{r} image, got {}x{}",
            img.height(),
            img.width()
        );
        Ok(())
    }

    pub fn encode(&self, img: &ImageTensor) -> Result<Encoded> {
        self.check_image(img, "image")?;
        tch::no_grad(|| self.nets.encode_all(img))
    }

    pub fn generate(&self, content: &ContentCode, style: &StyleCode) -> Result<ImageTensor> {
        tch::no_grad(|| self.nets.generate(content, style))
    }

    /// `G(C_A, S_A)`.
    pub fn reconstruct(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let e = self.encode(img)?;
        self.generate(&e.content, &e.style)
    }

    /// `G(C_A, S_B)`.
    pub fn swap_styles(&self, content: &ImageTensor, style: &ImageTensor) -> Result<ImageTensor> {
        self.check_image(content, "content")?;
        self.check_image(style, "style")?;
        let a = self.encode(content)?;
        let b = self.encode(style)?;
        self.generate(&a.content, &b.style)
    }

    /// Region edit from cached base codes.
    ///
    /// Computes `I_g = G(C_A, S_B)`, re-encodes it, composes the two encoder
    /// feature maps under the downsampled mask, and decodes the codes of the
    /// composite.
    pub fn region_edit_encoded(
        &self,
        base: &Encoded,
        style: &ImageTensor,
        mask: &RegionMask,
    ) -> Result<RegionEdit> {
        self.check_image(style, "style")?;
        let r = self.resolution();
        ensure_input!(
            mask.height() == r && mask.width() == r,
            "mask",
            "mask is {}x{}, image is {r}x{r}",
            mask.height(),
            mask.width()
        );
        let b = self.encode(style)?;
        tch::no_grad(|| {
            let swap = self.nets.generate(&base.content, &b.style)?;
            let e_g = self.nets.encode(&swap)?;
            let mask_e = downsample_mask(mask, self.nets.config().reduction)?;
            let composed =
                FeatureMap::new(compose_features(e_g.tensor(), base.feature.tensor(), &mask_e)?)?;
            let codes = self.nets.codes(composed.shallow_clone())?;
            let result = self.nets.generate(&codes.content, &codes.style)?;
            Ok(RegionEdit {
                result,
                swap,
                composed,
                mask_e,
            })
        })
    }

    pub fn region_edit(
        &self,
        base: &ImageTensor,
        style: &ImageTensor,
        mask: &RegionMask,
    ) -> Result<RegionEdit> {
        let e = self.encode(base)?;
        self.region_edit_encoded(&e, style, mask)
    }

    /// The decoder path shared by the degenerate masks: `G` applied to the
    /// codes of the given feature map.
    pub fn decode_feature(&self, feature: &FeatureMap) -> Result<ImageTensor> {
        tch::no_grad(|| {
            let c = self.nets.codes(feature.shallow_clone())?;
            self.nets.generate(&c.content, &c.style)
        })
    }

    /// Frames `G(C, lerp(S_a, S_b, t))` (style) or `G(lerp(C_a, C_b, t), S)`
    /// (content) for each `t`. `fixed` supplies the code that is held.
    pub fn interpolate_frames(
        &self,
        kind: CodeKind,
        a: &ImageTensor,
        b: &ImageTensor,
        fixed: &ImageTensor,
        ts: &[f64],
    ) -> Result<Vec<ImageTensor>> {
        let (ea, eb, ef) = (self.encode(a)?, self.encode(b)?, self.encode(fixed)?);
        let (ha, hb) = match kind {
            CodeKind::Content => (
                CodeHandle::content(&ea.content, "a"),
                CodeHandle::content(&eb.content, "b"),
            ),
            CodeKind::Style => (
                CodeHandle::style(&ea.style, "a"),
                CodeHandle::style(&eb.style, "b"),
            ),
        };
        ts.iter()
            .map(|&t| {
                let mid = interpolate(&ha, &hb, t)?;
                match kind {
                    CodeKind::Content => {
                        self.generate(&ContentCode::new(mid.tensor)?, &ef.style)
                    }
                    CodeKind::Style => self.generate(&ef.content, &StyleCode::new(mid.tensor)?),
                }
            })
            .collect()
    }
}
