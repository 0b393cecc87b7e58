//! Fréchet distance between Gaussian fits of feature sets.

use std::path::Path;

use tch::{Kind, Tensor};

use crate::error::{ensure_input, Error, Result};

/// Mean and covariance of a set of feature vectors (double precision).
#[derive(Debug)]
pub struct FeatureStats {
    /// `(d,)`
    pub mean: Tensor,
    /// `(d, d)`, symmetric.
    pub covariance: Tensor,
    pub sample_count: usize,
}

impl FeatureStats {
    /// Fits an `(n, d)` feature matrix, `n >= 2`; covariance uses `n - 1`.
    pub fn from_features(features: &Tensor) -> Result<Self> {
        let s = features.size();
        ensure_input!(s.len() == 2, "features", "expected (n, d), got {s:?}");
        ensure_input!(
            s[0] >= 2,
            "features",
            "need at least 2 samples for a covariance, got {}",
            s[0]
        );
        let x = features.detach().to_kind(Kind::Double);
        let mean = x.mean_dim([0i64].as_slice(), false, Kind::Double);
        let c = &x - &mean;
        let cov = c.tr().matmul(&c) / (s[0] - 1) as f64;
        let covariance = (&cov + cov.tr()) * 0.5;
        Ok(Self {
            mean,
            covariance,
            sample_count: s[0] as usize,
        })
    }

    pub fn dim(&self) -> i64 {
        self.mean.size()[0]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mean = self.mean.to_kind(Kind::Double);
        let cov = self.covariance.to_kind(Kind::Double);
        let n = Tensor::from_slice(&[self.sample_count as f64]);
        Tensor::write_safetensors(
            &[("mean", &mean), ("covariance", &cov), ("count", &n)],
            path,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let named = Tensor::read_safetensors(path)?;
        let get = |k: &str| {
            named
                .iter()
                .find(|(n, _)| n == k)
                .map(|(_, t)| t.shallow_clone())
                .ok_or_else(|| Error::rejected("stats", format!("{}: missing {k}", path.display())))
        };
        Ok(Self {
            mean: get("mean")?,
            covariance: get("covariance")?,
            sample_count: get("count")?.double_value(&[0]) as usize,
        })
    }
}

/// Symmetric eigendecomposition with eigenvalues clamped at zero.
fn eigh_clamped(m: &Tensor) -> (Tensor, Tensor) {
    let sym = (m + m.tr()) * 0.5;
    let (vals, vecs) = sym.linalg_eigh("L");
    (vals.clamp_min(0.0), vecs)
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn sqrtm_psd(m: &Tensor) -> Tensor {
    let (vals, vecs) = eigh_clamped(m);
    (&vecs * vals.sqrt().unsqueeze(0)).matmul(&vecs.tr())
}

/// `Tr((Σ_a Σ_b)^{1/2})`, evaluated as `Tr((√Σ_a Σ_b √Σ_a)^{1/2})` so that
/// only symmetric decompositions are needed.
pub fn trace_sqrt_product(a: &Tensor, b: &Tensor) -> f64 {
    let ra = sqrtm_psd(a);
    let inner = ra.matmul(b).matmul(&ra);
    let (vals, _) = eigh_clamped(&inner);
    vals.sqrt().sum(Kind::Double).double_value(&[])
}

/// A matrix `X` with `X X = A B` for SPD `A` and PSD `B`:
/// `A^{1/2} (A^{1/2} B A^{1/2})^{1/2} A^{-1/2}`.
pub fn sqrtm_product(a: &Tensor, b: &Tensor) -> Tensor {
    let (vals, vecs) = eigh_clamped(a);
    let ra = (&vecs * vals.sqrt().unsqueeze(0)).matmul(&vecs.tr());
    let ra_inv = (&vecs * vals.clamp_min(1e-300).rsqrt().unsqueeze(0)).matmul(&vecs.tr());
    ra.matmul(&sqrtm_psd(&ra.matmul(b).matmul(&ra))).matmul(&ra_inv)
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2 (Σ_a Σ_b)^{1/2})`, floored at zero.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    ensure_input!(
        a.dim() == b.dim(),
        "stats",
        "feature dimensions differ: {} vs {}",
        a.dim(),
        b.dim()
    );
    let (ca, cb) = (
        a.covariance.to_kind(Kind::Double),
        b.covariance.to_kind(Kind::Double),
    );
    let d = (&a.mean - &b.mean).to_kind(Kind::Double);
    let mean_term = d.dot(&d).double_value(&[]);
    let tr = ca.trace().double_value(&[]) + cb.trace().double_value(&[]);
    let value = mean_term + tr - 2.0 * trace_sqrt_product(&ca, &cb);
    Ok(value.max(0.0))
}
