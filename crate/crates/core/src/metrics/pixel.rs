//! Full-reference pixel metrics on 8-bit RGB, all channels pooled.

use image::RgbImage;

use crate::error::{ensure_input, Result};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L: f64 = 255.0;

fn same_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    ensure_input!(
        a.dimensions() == b.dimensions(),
        "image",
        "size mismatch: {:?} vs {:?}",
        a.dimensions(),
        b.dimensions()
    );
    Ok(())
}

/// Root mean squared error on the 0..255 scale over all channels.
pub fn rmse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.as_raw().len() as f64;
    let se: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok((se / n).sqrt())
}

/// `20·log10(255 / rmse)`; `+∞` for identical images.
pub fn psnr_from_rmse(rmse: f64) -> f64 {
    if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (L / rmse).log10()
    }
}

pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    rmse(a, b).map(psnr_from_rmse)
}

fn gaussian() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter, valid region only.
fn filter(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| plane[y * w + x + i] * k[i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| rows[(y + i) * ow + x] * k[i]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, computed per channel over the valid region and
/// averaged across the three channels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    ensure_input!(
        w >= WINDOW && h >= WINDOW,
        "image",
        "SSIM needs at least {WINDOW}x{WINDOW} pixels, got {w}x{h}"
    );
    let k = gaussian();
    let c1 = (K1 * L).powi(2);
    let c2 = (K2 * L).powi(2);
    let mut total = 0.0;
    for ch in 0..3 {
        let pa: Vec<f64> = a.pixels().map(|p| p.0[ch] as f64).collect();
        let pb: Vec<f64> = b.pixels().map(|p| p.0[ch] as f64).collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_a = filter(&pa, w, h, &k);
        let mu_b = filter(&pb, w, h, &k);
        let e_aa = filter(&prod(&pa, &pa), w, h, &k);
        let e_bb = filter(&prod(&pb, &pb), w, h, &k);
        let e_ab = filter(&prod(&pa, &pb), w, h, &k);
        let n = mu_a.len();
        let mut s = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += s / n as f64;
    }
    Ok(total / 3.0)
}
