//! Building blocks shared by the networks.
//!
//! Weights use the equalized learning-rate convention of the StyleGAN family:
//! parameters are stored with unit variance and rescaled by `1/sqrt(fan_in)`
//! at run time. All initialisation goes through [`Init`], which draws from an
//! explicit ChaCha stream so that two models built from the same seed are
//! bit-identical regardless of what other threads do with libtorch's global
//! generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tch::{nn, Kind, Tensor};

const LRELU_SLOPE: f64 = 0.2;

pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, shape: &[i64]) -> Tensor {
        let n: i64 = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect();
        Tensor::from_slice(&data).reshape(shape)
    }

    pub fn constant(&mut self, shape: &[i64], value: f64) -> Tensor {
        Tensor::full(shape, value, (Kind::Float, tch::Device::Cpu))
    }
}

/// Leaky ReLU with the `sqrt(2)` gain that keeps activations at unit scale.
pub fn lrelu(x: &Tensor) -> Tensor {
    x.maximum(&(x * LRELU_SLOPE)) * std::f64::consts::SQRT_2
}

pub fn downsample2(x: &Tensor) -> Tensor {
    x.avg_pool2d([2, 2], [2, 2], [0, 0], false, true, None::<i64>)
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let s = x.size();
    x.upsample_bilinear2d([s[2] * 2, s[3] * 2], false, None::<f64>, None::<f64>)
}

#[derive(Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    gain: f64,
    stride: i64,
    padding: i64,
}

impl Conv2d {
    pub fn new(
        p: nn::Path,
        init: &mut Init,
        c_in: i64,
        c_out: i64,
        kernel: i64,
        stride: i64,
        bias: bool,
    ) -> Self {
        let weight = p.var_copy("weight", &init.normal(&[c_out, c_in, kernel, kernel]));
        let bias = bias.then(|| p.var_copy("bias", &init.constant(&[c_out], 0.0)));
        Self {
            weight,
            bias,
            gain: 1.0 / ((c_in * kernel * kernel) as f64).sqrt(),
            stride,
            padding: kernel / 2,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.conv2d(
            &(&self.weight * self.gain),
            self.bias.as_ref(),
            [self.stride, self.stride],
            [self.padding, self.padding],
            [1, 1],
            1,
        )
    }
}

#[derive(Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
    gain: f64,
}

impl Linear {
    pub fn new(p: nn::Path, init: &mut Init, d_in: i64, d_out: i64, bias_init: f64) -> Self {
        Self {
            weight: p.var_copy("weight", &init.normal(&[d_out, d_in])),
            bias: p.var_copy("bias", &init.constant(&[d_out], bias_init)),
            gain: 1.0 / (d_in as f64).sqrt(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.linear(&(&self.weight * self.gain), Some(&self.bias))
    }
}

/// Residual block: two 3x3 convolutions, optional 2x average-pool downsample,
/// and a 1x1 projection on the skip path.
#[derive(Debug)]
pub struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Conv2d,
    down: bool,
}

impl ResBlock {
    pub fn new(p: nn::Path, init: &mut Init, c_in: i64, c_out: i64, down: bool) -> Self {
        Self {
            conv1: Conv2d::new(&p / "conv1", init, c_in, c_in, 3, 1, true),
            conv2: Conv2d::new(&p / "conv2", init, c_in, c_out, 3, 1, true),
            skip: Conv2d::new(&p / "skip", init, c_in, c_out, 1, 1, false),
            down,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = lrelu(&self.conv1.forward(x));
        let mut s = x.shallow_clone();
        if self.down {
            h = downsample2(&h);
            s = downsample2(&s);
        }
        let h = lrelu(&self.conv2.forward(&h));
        (h + self.skip.forward(&s)) * std::f64::consts::FRAC_1_SQRT_2
    }
}

/// Style-modulated convolution. The style vector is mapped to per-input-channel
/// scales; with demodulation on, each output filter is renormalised to unit
/// norm per sample.
#[derive(Debug)]
pub struct ModulatedConv {
    weight: Tensor,
    bias: Tensor,
    affine: Linear,
    gain: f64,
    c_in: i64,
    c_out: i64,
    kernel: i64,
    demodulate: bool,
    upsample: bool,
}

impl ModulatedConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: nn::Path,
        init: &mut Init,
        dim_s: i64,
        c_in: i64,
        c_out: i64,
        kernel: i64,
        demodulate: bool,
        upsample: bool,
    ) -> Self {
        Self {
            weight: p.var_copy("weight", &init.normal(&[c_out, c_in, kernel, kernel])),
            bias: p.var_copy("bias", &init.constant(&[c_out], 0.0)),
            affine: Linear::new(&p / "affine", init, dim_s, c_in, 1.0),
            gain: 1.0 / ((c_in * kernel * kernel) as f64).sqrt(),
            c_in,
            c_out,
            kernel,
            demodulate,
            upsample,
        }
    }

    /// Modulation is applied to the activations rather than the weights,
    /// which is equivalent and lets the batch share one ordinary convolution.
    pub fn forward(&self, x: &Tensor, style: &Tensor) -> Tensor {
        let x = if self.upsample { upsample2(x) } else { x.shallow_clone() };
        let k = self.kernel;
        let s = self.affine.forward(style);
        let w = &self.weight * self.gain;
        let y = (x * s.view([-1, self.c_in, 1, 1])).conv2d(
            &w,
            None::<Tensor>,
            [1, 1],
            [k / 2, k / 2],
            [1, 1],
            1,
        );
        let y = if self.demodulate {
            let wsq = w.square().sum_dim_intlist([2i64, 3].as_slice(), false, Kind::Float);
            let d = (s.square().matmul(&wsq.tr()) + 1e-8).rsqrt();
            y * d.view([-1, self.c_out, 1, 1])
        } else {
            y
        };
        y + self.bias.view([1, self.c_out, 1, 1])
    }
}
