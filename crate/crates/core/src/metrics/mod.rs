//! Image-quality metrics: FID, single-image FID, self-similarity distance,
//! SSIM, RMSE and PSNR, plus manifest-driven batch evaluation.
//!
//! SSD is a reimplementation choice: the cosine self-similarity matrix over
//! spatial hypercolumn vectors is built for both images and compared by mean
//! absolute difference.

mod features;
mod fid;
pub mod manifest;
mod pixel;

pub use features::{BuiltinExtractor, FeatureExtractor, TorchScriptExtractor};
pub use fid::{fid, sqrtm_product, sqrtm_psd, trace_sqrt_product, FeatureStats};
pub use manifest::{evaluate, EvalManifest, EvalOptions, EvalReport, EvalRow, RowMetrics};
pub use pixel::{psnr, psnr_from_rmse, rmse, ssim};

use tch::{Kind, Tensor};

use crate::error::{ensure_input, Result};
use crate::tensor::ImageTensor;

/// Spatial positions of a `(1, c, h, w)` map as an `(h·w, c)` sample matrix.
fn positions(map: &Tensor) -> Result<Tensor> {
    let s = map.size();
    ensure_input!(
        s.len() == 4 && s[0] == 1,
        "image",
        "expected a single image feature map, got {s:?}"
    );
    ensure_input!(
        s[2] * s[3] >= 2,
        "image",
        "feature map has fewer than 2 spatial positions"
    );
    Ok(map.view([s[1], s[2] * s[3]]).tr().to_kind(Kind::Double))
}

/// FID between the early-layer feature distributions of two single images,
/// each spatial position counting as one sample. Reported raw.
pub fn sifid(
    extractor: &dyn FeatureExtractor,
    generated: &ImageTensor,
    reference: &ImageTensor,
) -> Result<f64> {
    let a = FeatureStats::from_features(&positions(&extractor.early(generated)?)?)?;
    let b = FeatureStats::from_features(&positions(&extractor.early(reference)?)?)?;
    fid(&a, &b)
}

/// Mean absolute difference of the cosine self-similarity matrices of two
/// `(1, c, h, w)` feature maps. Lies in `[0, 2]`.
pub fn ssd_from_features(a: &Tensor, b: &Tensor) -> Result<f64> {
    ensure_input!(
        a.size() == b.size(),
        "features",
        "feature maps differ in shape: {:?} vs {:?}",
        a.size(),
        b.size()
    );
    let sim = |t: &Tensor| -> Result<Tensor> {
        let p = positions(t)?;
        let norm = p
            .norm_scalaropt_dim(2.0, [1i64].as_slice(), true)
            .clamp_min(1e-12);
        let u = p / norm;
        Ok(u.matmul(&u.tr()))
    };
    let d = (sim(a)? - sim(b)?).abs().mean(Kind::Double);
    Ok(d.double_value(&[]))
}

pub fn ssd(
    extractor: &dyn FeatureExtractor,
    output: &ImageTensor,
    content_ref: &ImageTensor,
) -> Result<f64> {
    ensure_input!(
        output.size() == content_ref.size(),
        "image",
        "images differ in shape: {:?} vs {:?}",
        output.size(),
        content_ref.size()
    );
    ssd_from_features(
        &extractor.hypercolumn(output)?,
        &extractor.hypercolumn(content_ref)?,
    )
}
