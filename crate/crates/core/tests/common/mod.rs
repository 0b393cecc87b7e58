//! Scalar reference implementations and a finite-difference checker shared
//! by the objectives and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionswap::mask::{RegionMask, Resolution};
use regionswap::tensor::to_vec_f64;
use tch::{Kind, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[i64], kind: Kind) -> Tensor {
    let n: i64 = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_slice(&v).view(shape).to_kind(kind)
}

/// Random binary mask `(b, 1, h, w)` as both a tensor wrapper and bits.
pub fn random_bits_mask(rng: &mut ChaCha8Rng, b: i64, h: i64, w: i64) -> (RegionMask, Vec<bool>) {
    let bits: Vec<bool> = (0..b * h * w).map(|_| rng.gen_bool(0.5)).collect();
    let v: Vec<f32> = bits.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
    let m = RegionMask::new(Tensor::from_slice(&v).view([b, 1, h, w]), Resolution::Full).unwrap();
    (m, bits)
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_kind(Kind::Double).double_value(&[])
}

pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

pub fn mean_softplus(v: &[f64], sign: f64) -> f64 {
    v.iter().map(|&x| softplus(sign * x)).sum::<f64>() / v.len() as f64
}

/// Index of the mask cell for element `i` of a `(b, c, h, w)` tensor.
pub fn mask_index(i: usize, c: usize, h: usize, w: usize) -> usize {
    let b = i / (c * h * w);
    let hw = i % (h * w);
    b * h * w + hw
}

/// `select(g, a, m)` elementwise with the mask broadcast over channels.
pub fn select(g: &[f64], a: &[f64], bits: &[bool], c: usize, h: usize, w: usize) -> Vec<f64> {
    (0..g.len())
        .map(|i| if bits[mask_index(i, c, h, w)] { g[i] } else { a[i] })
        .collect()
}

/// Masked-L1 pair of content alignment, each term normalised by the full
/// element count.
pub fn ca_oracle(
    ih: &[f64],
    ig: &[f64],
    ia: &[f64],
    bits: &[bool],
    c: usize,
    h: usize,
    w: usize,
) -> (f64, f64) {
    let n = ih.len() as f64;
    let (mut fg, mut bg) = (0.0, 0.0);
    for i in 0..ih.len() {
        let m = if bits[mask_index(i, c, h, w)] { 1.0 } else { 0.0 };
        fg += (ih[i] * m - ig[i] * m).abs();
        bg += (ih[i] * (1.0 - m) - ia[i] * (1.0 - m)).abs();
    }
    (fg / n, bg / n)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

/// Largest elementwise relative error between the autograd gradient of `f`
/// at `x0` and a central finite difference with step `h`, in f64.
pub fn grad_check(x0: &[f64], shape: &[i64], h: f64, f: impl Fn(&Tensor) -> Tensor) -> f64 {
    let x = Tensor::from_slice(x0).view(shape).set_requires_grad(true);
    let y = f(&x);
    let analytic = to_vec_f64(&Tensor::run_backward(&[y], &[&x], false, false)[0]);
    let eval = |v: &[f64]| scalar(&f(&Tensor::from_slice(v).view(shape)));
    let mut worst: f64 = 0.0;
    for i in 0..x0.len() {
        let mut p = x0.to_vec();
        let mut m = x0.to_vec();
        p[i] += h;
        m[i] -= h;
        let numeric = (eval(&p) - eval(&m)) / (2.0 * h);
        let err = (analytic[i] - numeric).abs();
        let scale = analytic[i].abs().max(numeric.abs());
        let rel = if err <= 1e-10 { 0.0 } else { err / scale };
        worst = worst.max(rel);
    }
    worst
}

/// Draws 10 values in `[-1, 1]` kept at least `gap` apart from `avoid`
/// elementwise, so L1 kinks stay outside the finite-difference stencil.
pub fn away_from(rng: &mut ChaCha8Rng, avoid: &[f64], gap: f64) -> Vec<f64> {
    avoid
        .iter()
        .map(|&a| loop {
            let v = rng.gen_range(-1.0..1.0);
            if (v - a).abs() > gap {
                break v;
            }
        })
        .collect()
}

/// A 16 px network small enough for per-test construction.
pub fn micro_net() -> regionswap::NetworkConfig {
    regionswap::NetworkConfig {
        base_resolution: 16,
        reduction: 4,
        encoder_width: 4,
        channels_e: 16,
        channels_c: 2,
        dim_s: 8,
        generator_width: 8,
        generator_blocks: 2,
        disc_width: 4,
        disc_blocks: 2,
        cooccur_width: 4,
        patches_per_image: 2,
        seed: 3,
        ..regionswap::NetworkConfig::default()
    }
}
