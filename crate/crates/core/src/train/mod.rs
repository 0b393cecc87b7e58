//! Training loop: reconstruction and adversarial updates every iteration,
//! code consistency and content alignment once every `k_interval`
//! iterations, plus data ingestion and checkpointing.

mod adam;
pub mod checkpoint;
pub mod data;

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

pub use adam::{AdamParams, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_TAG};
pub use data::{DataRoot, Dataset, DatasetSpec};

use crate::error::{Error, Result};
use crate::imageio::image_grid;
use crate::mask::{downsample_mask, random_masks, MaskParams, RegionMask};
use crate::model::{NetKind, Networks};
use crate::objectives::{
    compose_features, loss_adv, loss_ca, loss_cc, loss_rec, r1_penalty, AdvLogits, LossReport,
    LossWeights, Side,
};
use crate::tensor::{all_finite, describe, FeatureMap, ImageTensor};

/// True on the iterations that carry the auxiliary losses.
pub fn should_apply_aux(iteration: u64, k: u64) -> bool {
    assert!(k >= 1, "k_interval must be >= 1");
    iteration.is_multiple_of(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: i64,
    pub k_interval: u64,
    /// Iterations before the auxiliary losses switch on.
    pub warmup: u64,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// R1 is evaluated every `r1_interval` steps and scaled up accordingly.
    pub r1_interval: u64,
    /// Keep encoder and heads out of the auxiliary-loss update.
    pub freeze_encoder_for_aux: bool,
    pub seed: u64,
    pub history: usize,
    pub log_every: u64,
    pub sample_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            k_interval: 16,
            warmup: 0,
            lr: 2e-3,
            betas: (0.0, 0.99),
            eps: 1e-8,
            r1_interval: 16,
            freeze_encoder_for_aux: false,
            seed: 0,
            history: 256,
            log_every: 1,
            sample_every: 500,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("train.batch_size", self.batch_size as f64),
            ("train.k_interval", self.k_interval as f64),
            ("train.r1_interval", self.r1_interval as f64),
            ("train.lr", self.lr),
            ("train.eps", self.eps),
        ];
        for (field, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config(
                "train.betas",
                format!("({b1}, {b2}) must lie in [0, 1)"),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps,
        }
    }
}

/// Mutable training progress; everything needed to resume bit-exactly.
#[derive(Debug)]
pub struct TrainState {
    pub iteration: u64,
    pub k_interval: u64,
    pub warmup: u64,
    pub seed: u64,
    pub history: VecDeque<LossReport>,
    pub history_len: usize,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            iteration: 0,
            k_interval: cfg.k_interval,
            warmup: cfg.warmup,
            seed: cfg.seed,
            history: VecDeque::new(),
            history_len: cfg.history,
            opt_g: AdamState::default(),
            opt_d: AdamState::default(),
        }
    }

    pub fn aux_due(&self) -> bool {
        self.iteration >= self.warmup && should_apply_aux(self.iteration, self.k_interval)
    }

    fn record(&mut self, r: LossReport) {
        if self.history_len > 0 {
            if self.history.len() == self.history_len {
                self.history.pop_front();
            }
            self.history.push_back(r);
        }
    }

    /// Generator for iteration `it` of stream `salt`; independent of how
    /// many numbers earlier iterations consumed.
    pub fn rng_for(&self, salt: u64, it: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed ^ salt);
        r.set_stream(it);
        r
    }
}

const STEP_SALT: u64 = 0x5eed_0001;
const DATA_SALT: u64 = 0x5eed_0002;

fn check(what: &str, t: &Tensor) -> Result<f64> {
    let v = t.to_kind(Kind::Double).double_value(&[]);
    if v.is_finite() && all_finite(t) {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            stats: describe(t),
        })
    }
}

/// Tensors kept from a step for sample grids.
#[derive(Debug)]
pub struct StepImages {
    pub a: ImageTensor,
    pub b: ImageTensor,
    pub rec: ImageTensor,
    pub swap: ImageTensor,
    pub mask: RegionMask,
    pub hybrid: ImageTensor,
}

pub struct Trainer {
    pub nets: Networks,
    pub weights: LossWeights,
    pub masks: MaskParams,
    pub config: TrainConfig,
    pub state: TrainState,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("iteration", &self.state.iteration)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Trainer {
    pub fn new(
        nets: Networks,
        weights: LossWeights,
        masks: MaskParams,
        config: TrainConfig,
    ) -> Result<Self> {
        weights.validate()?;
        masks.validate()?;
        config.validate()?;
        let state = TrainState::new(&config);
        Ok(Self {
            nets,
            weights,
            masks,
            config,
            state,
        })
    }

    fn adv_inputs(
        &self,
        swap: &ImageTensor,
        b: &ImageTensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, Tensor)> {
        let n = self.nets.config().patches_per_image;
        let judged = self.nets.crop_patches(swap, n, rng)?;
        let reference = self.nets.crop_patches(b, n, rng)?;
        Ok((judged, reference))
    }

    #[allow(clippy::assign_op_pattern)]
    fn d_step(
        &mut self,
        a: &ImageTensor,
        b: &ImageTensor,
        rng: &mut ChaCha8Rng,
        report: &mut LossReport,
    ) -> Result<()> {
        let batch = a.batch();
        let (rec, swap) = tch::no_grad(|| -> Result<_> {
            let ea = self.nets.encode_all(a)?;
            let eb = self.nets.encode_all(b)?;
            Ok((
                self.nets.generate(&ea.content, &ea.style)?,
                self.nets.generate(&ea.content, &eb.style)?,
            ))
        })?;
        let lazy_r1 = self.state.iteration.is_multiple_of(self.config.r1_interval) && self.weights.w_r1 > 0.0;
        let real_in = if lazy_r1 {
            a.tensor().detach().set_requires_grad(true)
        } else {
            a.tensor().shallow_clone()
        };
        let real = self.nets.discriminator.forward_tensor(&real_in)?;
        let fake_swap = self.nets.discriminate(&swap)?;
        let fake_rec = self.nets.discriminate(&rec)?;
        let (judged, reference) = self.adv_inputs(&swap, b, rng)?;
        let n = self.nets.config().patches_per_image;
        let real_patches = self.nets.crop_patches(b, n, rng)?;
        let co_fake = self.nets.cooccur(&judged, &reference, batch)?;
        let co_real = self.nets.cooccur(&real_patches, &reference, batch)?;
        let (adv_d, _) = loss_adv(
            &AdvLogits {
                real: Some(&real),
                fake: vec![&fake_rec, &fake_swap],
                cooccur_real: Some(&co_real),
                cooccur_fake: Some(&co_fake),
            },
            Side::Discriminator,
        )?;
        report.adv_d = check("adv_d", &adv_d)?;
        let mut total = adv_d;
        if lazy_r1 {
            let r1 = r1_penalty(&real, &real_in)?;
            report.r1 = Some(check("r1", &r1)?);
            total = total + r1 * (self.weights.w_r1 * self.config.r1_interval as f64);
        }
        let params = self.nets.parameters(&NetKind::CRITICS);
        adam::zero_grads(&params);
        total.backward();
        self.state.opt_d.step(&params, &self.config.adam());
        Ok(())
    }

    fn g_step(
        &mut self,
        a: &ImageTensor,
        b: &ImageTensor,
        rng: &mut ChaCha8Rng,
        report: &mut LossReport,
    ) -> Result<StepImages> {
        let w = self.weights.clone();
        let batch = a.batch();
        let ea = self.nets.encode_all(a)?;
        let eb = self.nets.encode_all(b)?;
        let rec = self.nets.generate(&ea.content, &ea.style)?;
        let swap = self.nets.generate(&ea.content, &eb.style)?;

        let l_rec = loss_rec(rec.tensor(), a.tensor())?;
        report.rec = check("rec", &l_rec)?;
        let fake_rec = self.nets.discriminate(&rec)?;
        let fake_swap = self.nets.discriminate(&swap)?;
        let (judged, reference) = self.adv_inputs(&swap, b, rng)?;
        let co_fake = self.nets.cooccur(&judged, &reference, batch)?;
        let (adv_g, co) = loss_adv(
            &AdvLogits {
                fake: vec![&fake_rec, &fake_swap],
                cooccur_fake: Some(&co_fake),
                ..Default::default()
            },
            Side::Generator,
        )?;
        report.adv_g = check("adv_g", &adv_g)?;
        report.cooccur = check("cooccur", &co)?;
        let main = l_rec * w.w_rec + adv_g * w.w_adv;

        let params = self.nets.parameters(&NetKind::AUTOENCODER);
        adam::zero_grads(&params);

        let res = a.height();
        let mask;
        let hybrid;
        if self.state.aux_due() {
            // Code consistency on I_g = G(C_A, S_B) against fixed targets.
            let g = self.nets.encode_all(&swap)?;
            let cc = loss_cc(
                g.content.tensor(),
                &ea.content.tensor().detach(),
                g.style.tensor(),
                &eb.style.tensor().detach(),
                &w,
            )?;
            report.cc_content = Some(check("cc_content", &cc.content)?);
            report.cc_style = Some(check("cc_style", &cc.style)?);

            // Content alignment through the feature-composition pipeline.
            mask = random_masks(batch, res, res, &self.masks, rng)?;
            let mask_e = downsample_mask(&mask, self.nets.config().reduction)?;
            let composed = compose_features(g.feature.tensor(), ea.feature.tensor(), &mask_e)?;
            let h = self.nets.codes(FeatureMap::new(composed)?)?;
            hybrid = self.nets.generate(&h.content, &h.style)?;
            let ca = loss_ca(
                hybrid.tensor(),
                &swap.tensor().detach(),
                a.tensor(),
                &mask,
            )?;
            report.ca_fg = Some(check("ca_fg", &ca.fg)?);
            report.ca_bg = Some(check("ca_bg", &ca.bg)?);
            let aux = cc.combined * w.w_cc + ca.combined * w.w_ca;

            if self.config.freeze_encoder_for_aux {
                // Auxiliary gradients reach the generator only.
                let gen = self.nets.parameters(&[NetKind::Generator]);
                let inputs: Vec<&Tensor> = gen.iter().map(|(_, p)| p).collect();
                let grads = Tensor::run_backward(&[aux], &inputs, true, false);
                main.backward();
                tch::no_grad(|| {
                    for ((_, p), g) in gen.iter().zip(&grads) {
                        let _ = p.grad().g_add_(g);
                    }
                });
            } else {
                (main + aux).backward();
            }
        } else {
            main.backward();
            mask = RegionMask::filled(batch, res, res, false, crate::mask::Resolution::Full);
            hybrid = rec.detach();
        }
        self.state.opt_g.step(&params, &self.config.adam());
        Ok(StepImages {
            a: a.shallow_clone(),
            b: b.shallow_clone(),
            rec: rec.detach(),
            swap: swap.detach(),
            mask,
            hybrid: hybrid.detach(),
        })
    }

    /// One iteration: critic update, then autoencoder update.
    pub fn train_step(&mut self, a: &ImageTensor, b: &ImageTensor) -> Result<LossReport> {
        self.step_with_images(a, b).map(|(r, _)| r)
    }

    pub fn step_with_images(
        &mut self,
        a: &ImageTensor,
        b: &ImageTensor,
    ) -> Result<(LossReport, StepImages)> {
        crate::error::ensure_input!(
            a.size() == b.size(),
            "batch_b",
            "batches must have equal shapes: {:?} vs {:?}",
            a.size(),
            b.size()
        );
        let mut rng = self.state.rng_for(STEP_SALT, self.state.iteration);
        let mut report = LossReport {
            iteration: self.state.iteration,
            ..Default::default()
        };
        self.d_step(a, b, &mut rng, &mut report)?;
        let images = self.g_step(a, b, &mut rng, &mut report)?;
        let (g, d) = report.weighted_totals(&self.weights);
        report.total_g = g;
        report.total_d = d;
        self.state.record(report.clone());
        self.state.iteration += 1;
        Ok((report, images))
    }

    /// Draws the batch pair for the current iteration.
    pub fn next_batches(&self, data: &mut Dataset) -> Result<(ImageTensor, ImageTensor)> {
        let mut rng = self.state.rng_for(DATA_SALT, self.state.iteration);
        data.pair(self.config.batch_size, &mut rng)
    }

    /// Runs until `config.steps` iterations are done, writing a JSON-lines
    /// log, sample grids and checkpoints under `out`.
    pub fn fit(&mut self, data: &mut Dataset, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out.join("samples"))?;
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out.join("metrics.jsonl"))?;
        while self.state.iteration < self.config.steps {
            let (a, b) = self.next_batches(data)?;
            let (report, images) = self.step_with_images(&a, &b)?;
            let it = report.iteration;
            if self.config.log_every > 0 && it % self.config.log_every == 0 {
                writeln!(log, "{}", report.to_json_line())?;
            }
            let last = self.state.iteration == self.config.steps;
            if (self.config.sample_every > 0 && it % self.config.sample_every == 0) || last {
                save_grid(&images, &out.join("samples").join(format!("step_{it:07}.png")))?;
            }
            if (self.config.checkpoint_every > 0
                && self.state.iteration.is_multiple_of(self.config.checkpoint_every))
                || last
            {
                save_checkpoint(&out.join("checkpoint.safetensors"), &self.state, &self.nets)?;
            }
            if it % 100 == 0 {
                log::info!(
                    "iter {it} rec {:.4} adv_g {:.4} adv_d {:.4}",
                    report.rec,
                    report.adv_g,
                    report.adv_d
                );
            }
        }
        Ok(())
    }
}

fn mask_as_image(mask: &RegionMask) -> Result<ImageTensor> {
    ImageTensor::new(mask.tensor().expand([-1, 3, -1, -1], false) * 2.0 - 1.0)
}

/// Rows per batch entry; columns `A, B, G(C_A,S_A), G(C_A,S_B), M, I_h`.
pub fn save_grid(images: &StepImages, path: &Path) -> Result<()> {
    let m = mask_as_image(&images.mask)?;
    let grid = image_grid(&[
        &images.a,
        &images.b,
        &images.rec,
        &images.swap,
        &m,
        &images.hybrid,
    ])?;
    grid.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Held-out code-consistency probe: mean `L1(C_g, C_A)` and `L1(S_g, S_B)`
/// for `I_g = G(C_A, S_B)`.
pub fn consistency_probe(nets: &Networks, a: &ImageTensor, b: &ImageTensor) -> Result<(f64, f64)> {
    tch::no_grad(|| {
        let ea = nets.encode_all(a)?;
        let eb = nets.encode_all(b)?;
        let g = nets.encode_all(&nets.generate(&ea.content, &eb.style)?)?;
        let c = crate::objectives::l1(g.content.tensor(), ea.content.tensor());
        let s = crate::objectives::l1(g.style.tensor(), eb.style.tensor());
        Ok((c.double_value(&[]), s.double_value(&[])))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkConfig;

    fn micro() -> Trainer {
        let cfg = NetworkConfig {
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
            ..NetworkConfig::default()
        };
        let tc = TrainConfig {
            batch_size: 2,
            k_interval: 2,
            r1_interval: 1,
            ..TrainConfig::default()
        };
        Trainer::new(
            Networks::new(cfg).unwrap(),
            LossWeights::default(),
            MaskParams::default(),
            tc,
        )
        .unwrap()
    }

    fn snapshot(t: &Trainer, kinds: &[NetKind]) -> Vec<Tensor> {
        t.nets.parameters(kinds).iter().map(|(_, p)| p.copy()).collect()
    }

    fn same(a: &[Tensor], b: &[Tensor]) -> bool {
        a.iter().zip(b).all(|(x, y)| x.equal(y))
    }

    #[test]
    fn updates_touch_only_their_own_networks() {
        let mut t = micro();
        let mut r = t.state.rng_for(1, 0);
        let a = ImageTensor::new(Tensor::rand([2, 3, 16, 16], (Kind::Float, tch::Device::Cpu)) * 2.0 - 1.0).unwrap();
        let b = ImageTensor::new(a.tensor().flip([3])).unwrap();
        for aux in [true, false] {
            t.state.iteration = if aux { 0 } else { 1 };
            let ae = snapshot(&t, &NetKind::AUTOENCODER);
            let cr = snapshot(&t, &NetKind::CRITICS);
            t.d_step(&a, &b, &mut r, &mut LossReport::default()).unwrap();
            assert!(same(&ae, &snapshot(&t, &NetKind::AUTOENCODER)));
            assert!(!same(&cr, &snapshot(&t, &NetKind::CRITICS)));

            let cr = snapshot(&t, &NetKind::CRITICS);
            t.g_step(&a, &b, &mut r, &mut LossReport::default()).unwrap();
            assert!(same(&cr, &snapshot(&t, &NetKind::CRITICS)));
            assert!(!same(&ae, &snapshot(&t, &NetKind::AUTOENCODER)));
        }
    }

    #[test]
    fn frozen_encoder_ignores_aux_gradients() {
        let a = ImageTensor::new(Tensor::rand([2, 3, 16, 16], (Kind::Float, tch::Device::Cpu)) * 2.0 - 1.0).unwrap();
        let b = ImageTensor::new(a.tensor().flip([2])).unwrap();
        let enc = [NetKind::Encoder, NetKind::ContentHead, NetKind::StyleHead];
        let run = |freeze: bool, aux: bool| {
            let mut t = micro();
            t.config.freeze_encoder_for_aux = freeze;
            t.weights.w_cc = if aux { 1.0 } else { 0.0 };
            t.weights.w_ca = if aux { 1.0 } else { 0.0 };
            let mut r = t.state.rng_for(1, 0);
            t.g_step(&a, &b, &mut r, &mut LossReport::default()).unwrap();
            (snapshot(&t, &enc), snapshot(&t, &[NetKind::Generator]))
        };
        let (enc_frozen, gen_frozen) = run(true, true);
        let (enc_plain, _) = run(false, false);
        let (enc_full, gen_full) = run(false, true);
        assert!(same(&enc_frozen, &enc_plain));
        assert!(!same(&enc_full, &enc_plain));
        // Same generator update up to summation order.
        for (x, y) in gen_frozen.iter().zip(&gen_full) {
            assert!(x.allclose(y, 1e-5, 1e-6, false));
        }
    }
}
