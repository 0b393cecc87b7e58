//! Loss functions and composition operators.
//!
//! Every function here is a pure tensor expression: gradients flow into all
//! tensor arguments. Callers decide what to detach; the trainer treats the
//! code-consistency targets `(C_A, S_B)` and the content-alignment foreground
//! target `I_g` as constants.
//!
//! All L1 terms are means over every element of their operands. The masked
//! terms of content alignment therefore divide by the full tensor size rather
//! than by the mask area.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::error::{ensure_input, Error, Result};
use crate::mask::RegionMask;

/// Weights of the composite objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the style term inside code consistency.
    pub lambda_style: f64,
    pub w_rec: f64,
    pub w_adv: f64,
    pub w_cc: f64,
    pub w_ca: f64,
    pub w_r1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_style: 1.0,
            w_rec: 1.0,
            w_adv: 1.0,
            w_cc: 1.0,
            w_ca: 1.0,
            w_r1: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("loss.lambda_style", self.lambda_style),
            ("loss.w_rec", self.w_rec),
            ("loss.w_adv", self.w_adv),
            ("loss.w_cc", self.w_cc),
            ("loss.w_ca", self.w_ca),
            ("loss.w_r1", self.w_r1),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar losses of one training iteration.
///
/// `total_g = w_rec·rec + w_adv·adv_g + w_cc·(cc_content + λ·cc_style)
///            + w_ca·(ca_fg + ca_bg)`
/// and `total_d = adv_d + w_r1·r1`, with absent terms counted as zero.
/// `adv_g` already contains the co-occurrence term, which is also reported
/// on its own as `cooccur`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: u64,
    pub rec: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub cooccur: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cc_content: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cc_style: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ca_fg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ca_bg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r1: Option<f64>,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    pub fn has_aux(&self) -> bool {
        self.cc_content.is_some() || self.ca_fg.is_some()
    }

    /// Recomputes the two totals from the components.
    pub fn weighted_totals(&self, w: &LossWeights) -> (f64, f64) {
        let cc = self.cc_content.unwrap_or(0.0) + w.lambda_style * self.cc_style.unwrap_or(0.0);
        let ca = self.ca_fg.unwrap_or(0.0) + self.ca_bg.unwrap_or(0.0);
        let g = w.w_rec * self.rec + w.w_adv * self.adv_g + w.w_cc * cc + w.w_ca * ca;
        let d = self.adv_d + w.w_r1 * self.r1.unwrap_or(0.0);
        (g, d)
    }

    /// Flat key to value record; absent terms are omitted.
    pub fn to_record(&self) -> BTreeMap<&'static str, f64> {
        let mut m = BTreeMap::new();
        m.insert("iteration", self.iteration as f64);
        m.insert("rec", self.rec);
        m.insert("adv_g", self.adv_g);
        m.insert("adv_d", self.adv_d);
        m.insert("cooccur", self.cooccur);
        for (k, v) in [
            ("cc_content", self.cc_content),
            ("cc_style", self.cc_style),
            ("ca_fg", self.ca_fg),
            ("ca_bg", self.ca_bg),
            ("r1", self.r1),
        ] {
            if let Some(v) = v {
                m.insert(k, v);
            }
        }
        m.insert("total_g", self.total_g);
        m.insert("total_d", self.total_d);
        m
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("finite floats serialize")
    }

    pub fn all_finite(&self) -> bool {
        self.to_record().values().all(|v| v.is_finite())
    }
}

fn same_shape(field: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    ensure_input!(
        a.size() == b.size(),
        field,
        "shape mismatch: {:?} vs {:?}",
        a.size(),
        b.size()
    );
    Ok(())
}

fn scalar_kind(t: &Tensor) -> Kind {
    match t.kind() {
        Kind::Double => Kind::Double,
        _ => Kind::Float,
    }
}

/// Mean absolute difference over all elements.
pub fn l1(a: &Tensor, b: &Tensor) -> Tensor {
    (a - b).abs().mean(scalar_kind(a))
}

/// Reconstruction loss: `L1(I_{A→A}, I_A)`.
pub fn loss_rec(generated: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape("generated", generated, target)?;
    Ok(l1(generated, target))
}

/// Which player an adversarial loss is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Generator,
    Discriminator,
}

/// Logits feeding the adversarial loss.
///
/// `fake` lists one logit tensor per generated image set (reconstructions
/// and swaps); each contributes its own expectation. `cooccur_real` scores
/// real patches against real references and is used on the discriminator
/// side only.
#[derive(Debug, Default)]
pub struct AdvLogits<'a> {
    pub real: Option<&'a Tensor>,
    pub fake: Vec<&'a Tensor>,
    pub cooccur_real: Option<&'a Tensor>,
    pub cooccur_fake: Option<&'a Tensor>,
}

/// Non-saturating GAN loss written with softplus:
/// `-log σ(x) = softplus(-x)` and `-log(1 - σ(x)) = softplus(x)`.
///
/// Returns `(total, cooccur_part)`.
// `+=` on tch tensors runs in place, which autograd must not see here.
#[allow(clippy::assign_op_pattern)]
pub fn loss_adv(logits: &AdvLogits<'_>, side: Side) -> Result<(Tensor, Tensor)> {
    let kind = logits
        .fake
        .first()
        .map(|t| scalar_kind(t))
        .unwrap_or(Kind::Float);
    let zero = || Tensor::zeros([], (kind, tch::Device::Cpu));
    let mean_sp = |t: &Tensor, sign: f64| (t * sign).softplus().mean(kind);
    let fake_sign = match side {
        Side::Generator => -1.0,
        Side::Discriminator => 1.0,
    };
    let mut total = zero();
    for f in &logits.fake {
        total = total + mean_sp(f, fake_sign);
    }
    let mut co = zero();
    if let Some(cf) = logits.cooccur_fake {
        co = co + mean_sp(cf, fake_sign);
    }
    if side == Side::Discriminator {
        let real = logits
            .real
            .ok_or_else(|| Error::rejected("real", "discriminator loss needs real logits"))?;
        total = total + mean_sp(real, -1.0);
        if let Some(cr) = logits.cooccur_real {
            co = co + mean_sp(cr, -1.0);
        }
    }
    Ok((total + &co, co))
}

/// Code consistency parts.
#[derive(Debug)]
pub struct CcLoss {
    pub content: Tensor,
    pub style: Tensor,
    pub combined: Tensor,
}

/// `L1(C_g, C_A) + λ·L1(S_g, S_B)`.
pub fn loss_cc(
    c_g: &Tensor,
    c_a: &Tensor,
    s_g: &Tensor,
    s_b: &Tensor,
    weights: &LossWeights,
) -> Result<CcLoss> {
    same_shape("content", c_g, c_a)?;
    same_shape("style", s_g, s_b)?;
    let content = l1(c_g, c_a);
    let style = l1(s_g, s_b);
    let combined = &content + &style * weights.lambda_style;
    Ok(CcLoss {
        content,
        style,
        combined,
    })
}

fn check_mask_for(mask: &RegionMask, t: &Tensor, field: &str) -> Result<()> {
    let ms = mask.size();
    let ts = t.size();
    ensure_input!(
        ts.len() == 4 && ms[0] == ts[0] && ms[2] == ts[2] && ms[3] == ts[3],
        field,
        "mask {:?} does not match tensor {:?}",
        ms,
        ts
    );
    Ok(())
}

/// Per-pixel selection: `i_g` where the mask is 1, `i_a` where it is 0.
pub fn compose_pixels(i_g: &Tensor, i_a: &Tensor, mask: &RegionMask) -> Result<Tensor> {
    same_shape("i_a", i_g, i_a)?;
    check_mask_for(mask, i_g, "mask")?;
    Ok(i_g.where_self(&mask.selector(), i_a))
}

/// Per-cell selection of encoder features under a feature-resolution mask,
/// broadcast over channels.
pub fn compose_features(e_g: &Tensor, e_a: &Tensor, mask_e: &RegionMask) -> Result<Tensor> {
    same_shape("e_a", e_g, e_a)?;
    check_mask_for(mask_e, e_g, "mask_e")?;
    Ok(e_g.where_self(&mask_e.selector(), e_a))
}

/// Content alignment parts.
#[derive(Debug)]
pub struct CaLoss {
    pub fg: Tensor,
    pub bg: Tensor,
    pub combined: Tensor,
}

/// `L1(I_h·M, I_g·M) + L1(I_h·(1-M), I_A·(1-M))`.
pub fn loss_ca(i_h: &Tensor, i_g: &Tensor, i_a: &Tensor, mask: &RegionMask) -> Result<CaLoss> {
    same_shape("i_g", i_h, i_g)?;
    same_shape("i_a", i_h, i_a)?;
    check_mask_for(mask, i_h, "mask")?;
    let m = mask.tensor().to_kind(i_h.kind());
    let inv = 1.0 - &m;
    let fg = l1(&(i_h * &m), &(i_g * &m));
    let bg = l1(&(i_h * &inv), &(i_a * &inv));
    let combined = &fg + &bg;
    Ok(CaLoss { fg, bg, combined })
}

/// R1 gradient penalty: the batch mean of `‖∇ₓ D(x)‖²` at real samples.
///
/// `real_images` must have been marked `requires_grad` before `logits` were
/// computed from it. The result is differentiable with respect to the
/// discriminator weights.
pub fn r1_penalty(logits: &Tensor, real_images: &Tensor) -> Result<Tensor> {
    ensure_input!(
        real_images.requires_grad(),
        "real_images",
        "gradients w.r.t. the real images are not tracked"
    );
    let kind = scalar_kind(real_images);
    if !logits.requires_grad() {
        // The logits do not depend on the input at all.
        return Ok(Tensor::zeros([], (kind, tch::Device::Cpu)));
    }
    let grads = match Tensor::f_run_backward(&[logits.sum(kind)], &[real_images], true, true) {
        Ok(g) => g,
        // Logits that depend on the weights but not on the input.
        Err(e) if e.to_string().contains("not have been used in the graph") => {
            return Ok(Tensor::zeros([], (kind, tch::Device::Cpu)));
        }
        Err(e) => return Err(e.into()),
    };
    let g = &grads[0];
    if !g.defined() {
        return Ok(Tensor::zeros([], (kind, tch::Device::Cpu)));
    }
    let per_sample = g.square().flatten(1, -1).sum_dim_intlist([1i64].as_slice(), false, kind);
    Ok(per_sample.mean(kind))
}
