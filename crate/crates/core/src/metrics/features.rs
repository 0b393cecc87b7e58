//! Feature extractors behind FID, SIFID and SSD.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tch::{IValue, Kind, Tensor};

use crate::error::{ensure_input, Error, Result};
use crate::tensor::ImageTensor;

/// Three feature views of an image batch in `[-1, 1]`.
pub trait FeatureExtractor {
    /// Identifier used to key cached statistics.
    fn id(&self) -> String;
    /// Global descriptor `(b, d)` for FID.
    fn pooled(&self, images: &ImageTensor) -> Result<Tensor>;
    /// Early-layer map `(b, c, h, w)` for SIFID.
    fn early(&self, images: &ImageTensor) -> Result<Tensor>;
    /// Multi-layer hypercolumn `(b, c, h, w)` for SSD.
    fn hypercolumn(&self, images: &ImageTensor) -> Result<Tensor>;
}

/// Fixed random-weight convolutional network. Deterministic for a given
/// seed and needs no downloads; used when no pretrained network is supplied.
#[derive(Debug)]
pub struct BuiltinExtractor {
    convs: Vec<Tensor>,
    head: Tensor,
    seed: u64,
}

const WIDTHS: [i64; 4] = [3, 32, 64, 128];
const POOL_DIM: i64 = 2048;
const HYPER_MAX: i64 = 32;

fn he(rng: &mut ChaCha8Rng, shape: [i64; 4]) -> Tensor {
    let n: i64 = shape.iter().product();
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let std = (2.0 / fan_in).sqrt();
    let v: Vec<f32> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * std) as f32
        })
        .collect();
    Tensor::from_slice(&v).view(shape)
}

impl BuiltinExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = WIDTHS
            .windows(2)
            .map(|w| he(&mut rng, [w[1], w[0], 3, 3]))
            .collect();
        let head = he(&mut rng, [POOL_DIM, WIDTHS[3], 1, 1]);
        Self { convs, head, seed }
    }

    /// Outputs of the three pooling blocks.
    fn blocks(&self, images: &ImageTensor) -> Result<Vec<Tensor>> {
        ensure_input!(
            images.height() >= 16 && images.width() >= 16,
            "image",
            "feature extraction needs at least 16x16 pixels"
        );
        let mut h = images.tensor().detach().to_kind(Kind::Float);
        let mut out = Vec::new();
        for w in &self.convs {
            h = h
                .conv2d(w, None::<Tensor>, [1, 1], [1, 1], [1, 1], 1)
                .relu()
                .avg_pool2d([2, 2], [2, 2], [0, 0], false, true, None::<i64>);
            out.push(h.shallow_clone());
        }
        Ok(out)
    }
}

impl Default for BuiltinExtractor {
    fn default() -> Self {
        Self::new(0)
    }
}

impl FeatureExtractor for BuiltinExtractor {
    fn id(&self) -> String {
        format!("builtin-random-v1-s{}", self.seed)
    }

    fn pooled(&self, images: &ImageTensor) -> Result<Tensor> {
        tch::no_grad(|| {
            let b = self.blocks(images)?;
            let h = b[2]
                .conv2d(&self.head, None::<Tensor>, [1, 1], [0, 0], [1, 1], 1)
                .relu();
            Ok(h.mean_dim([2i64, 3].as_slice(), false, Kind::Float))
        })
    }

    fn early(&self, images: &ImageTensor) -> Result<Tensor> {
        tch::no_grad(|| Ok(self.blocks(images)?.remove(0)))
    }

    fn hypercolumn(&self, images: &ImageTensor) -> Result<Tensor> {
        tch::no_grad(|| {
            let b = self.blocks(images)?;
            let s = b[1].size();
            let (h, w) = (s[2].min(HYPER_MAX), s[3].min(HYPER_MAX));
            let parts: Vec<Tensor> = b
                .iter()
                .map(|t| t.upsample_bilinear2d([h, w], false, None::<f64>, None::<f64>))
                .collect();
            Ok(Tensor::cat(&parts, 1))
        })
    }
}

/// TorchScript module whose `forward(x)` takes images in `[-1, 1]` and
/// returns the tuple `(pooled, early, hypercolumn)`.
pub struct TorchScriptExtractor {
    module: tch::CModule,
    id: String,
}

impl std::fmt::Debug for TorchScriptExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorchScriptExtractor").field("id", &self.id).finish()
    }
}

impl TorchScriptExtractor {
    pub fn load(path: &Path) -> Result<Self> {
        let module = tch::CModule::load(path).map_err(|e| {
            Error::config("eval.extractor", format!("{}: {e}", path.display()))
        })?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("module");
        Ok(Self {
            module,
            id: format!("torchscript-{stem}"),
        })
    }

    fn run(&self, images: &ImageTensor, index: usize) -> Result<Tensor> {
        let out = tch::no_grad(|| {
            self.module
                .forward_is(&[IValue::Tensor(images.tensor().detach())])
        })?;
        match out {
            IValue::Tuple(mut items) if items.len() == 3 => match items.swap_remove(index) {
                IValue::Tensor(t) => Ok(t),
                _ => Err(Error::rejected("extractor", "tuple entries must be tensors")),
            },
            _ => Err(Error::rejected(
                "extractor",
                "forward must return (pooled, early, hypercolumn)",
            )),
        }
    }
}

impl FeatureExtractor for TorchScriptExtractor {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn pooled(&self, images: &ImageTensor) -> Result<Tensor> {
        self.run(images, 0)
    }

    fn early(&self, images: &ImageTensor) -> Result<Tensor> {
        self.run(images, 1)
    }

    fn hypercolumn(&self, images: &ImageTensor) -> Result<Tensor> {
        self.run(images, 2)
    }
}
