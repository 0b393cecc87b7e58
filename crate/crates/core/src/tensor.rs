//! Typed wrappers around `tch::Tensor` for the quantities that flow between
//! the networks: images, encoder feature maps, and the two latent codes.
//!
//! The wrappers only check rank and fixed axes; resolution contracts that
//! depend on a [`NetworkConfig`](crate::model::NetworkConfig) are checked by
//! the networks themselves.

use tch::{Kind, Tensor};

use crate::error::{ensure_input, Result};

macro_rules! tensor_newtype {
    ($name:ident) => {
        impl $name {
            pub fn tensor(&self) -> &Tensor {
                &self.0
            }

            pub fn into_tensor(self) -> Tensor {
                self.0
            }

            pub fn batch(&self) -> i64 {
                self.0.size()[0]
            }

            pub fn size(&self) -> Vec<i64> {
                self.0.size()
            }

            /// Cheap handle sharing the same storage.
            pub fn shallow_clone(&self) -> Self {
                Self(self.0.shallow_clone())
            }

            pub fn detach(&self) -> Self {
                Self(self.0.detach())
            }

            /// Deep copy that owns its own storage.
            pub fn deep_clone(&self) -> Self {
                Self(self.0.detach().copy())
            }
        }

        impl AsRef<Tensor> for $name {
            fn as_ref(&self) -> &Tensor {
                &self.0
            }
        }
    };
}

/// Batched RGB images `(batch, 3, height, width)` with values in `[-1, 1]`.
#[derive(Debug)]
pub struct ImageTensor(Tensor);

/// Encoder output `(batch, channels_e, height / r, width / r)`.
#[derive(Debug)]
pub struct FeatureMap(Tensor);

/// Spatial content code `(batch, channels_c, height / r, width / r)`.
#[derive(Debug)]
pub struct ContentCode(Tensor);

/// Flat style code `(batch, dim_s)`.
#[derive(Debug)]
pub struct StyleCode(Tensor);

tensor_newtype!(ImageTensor);
tensor_newtype!(FeatureMap);
tensor_newtype!(ContentCode);
tensor_newtype!(StyleCode);

impl ImageTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let size = t.size();
        ensure_input!(
            size.len() == 4 && size[1] == 3,
            "image",
            "expected (batch, 3, h, w), got {size:?}"
        );
        Ok(Self(t))
    }

    /// Like [`ImageTensor::new`] but also checks the `[-1, 1]` value range.
    pub fn new_checked(t: Tensor) -> Result<Self> {
        let img = Self::new(t)?;
        if img.0.numel() > 0 {
            let lo = img.0.min().double_value(&[]);
            let hi = img.0.max().double_value(&[]);
            ensure_input!(
                lo >= -1.0 && hi <= 1.0,
                "image",
                "values must lie in [-1, 1], found [{lo}, {hi}]"
            );
        }
        Ok(img)
    }

    pub fn height(&self) -> i64 {
        self.0.size()[2]
    }

    pub fn width(&self) -> i64 {
        self.0.size()[3]
    }

    /// Single image `index` as a batch of one.
    pub fn select(&self, index: i64) -> ImageTensor {
        Self(self.0.narrow(0, index, 1))
    }

    pub fn cat(images: &[&ImageTensor]) -> ImageTensor {
        let ts: Vec<&Tensor> = images.iter().map(|i| &i.0).collect();
        Self(Tensor::cat(&ts, 0))
    }
}

impl FeatureMap {
    pub fn new(t: Tensor) -> Result<Self> {
        let size = t.size();
        ensure_input!(
            size.len() == 4,
            "feature",
            "expected (batch, channels, h, w), got {size:?}"
        );
        Ok(Self(t))
    }

    pub fn channels(&self) -> i64 {
        self.0.size()[1]
    }

    pub fn spatial(&self) -> (i64, i64) {
        let s = self.0.size();
        (s[2], s[3])
    }
}

impl ContentCode {
    pub fn new(t: Tensor) -> Result<Self> {
        let size = t.size();
        ensure_input!(
            size.len() == 4,
            "content",
            "content code must be spatial (batch, channels, h, w), got {size:?}"
        );
        Ok(Self(t))
    }

    pub fn channels(&self) -> i64 {
        self.0.size()[1]
    }
}

impl StyleCode {
    pub fn new(t: Tensor) -> Result<Self> {
        let size = t.size();
        ensure_input!(
            size.len() == 2,
            "style",
            "style code must be flat (batch, dim), got {size:?}"
        );
        Ok(Self(t))
    }

    pub fn dim(&self) -> i64 {
        self.0.size()[1]
    }
}

/// Returns true when every element is finite.
pub fn all_finite(t: &Tensor) -> bool {
    t.numel() == 0 || t.isfinite().all().int64_value(&[]) != 0
}

/// Short statistics string used in non-finite diagnostics.
pub fn describe(t: &Tensor) -> String {
    let t = t.detach().to_kind(Kind::Double);
    let finite = t.isfinite();
    let n = t.numel();
    let n_bad = n as i64 - finite.sum(Kind::Int64).int64_value(&[]);
    let clean = t.where_scalarother(&finite, 0.0);
    format!(
        "shape={:?} non_finite={} min={:.4e} max={:.4e} mean={:.4e}",
        t.size(),
        n_bad,
        clean.min().double_value(&[]),
        clean.max().double_value(&[]),
        clean.mean(Kind::Double).double_value(&[]),
    )
}

/// Copies a tensor into a flat `Vec<f32>` in row-major order.
pub fn to_vec_f32(t: &Tensor) -> Vec<f32> {
    let flat = t.detach().to_kind(Kind::Float).contiguous().view(-1);
    Vec::<f32>::try_from(&flat).expect("float tensor to vec")
}

pub fn to_vec_f64(t: &Tensor) -> Vec<f64> {
    let flat = t.detach().to_kind(Kind::Double).contiguous().view(-1);
    Vec::<f64>::try_from(&flat).expect("double tensor to vec")
}
