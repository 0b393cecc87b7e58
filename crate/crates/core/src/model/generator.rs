use tch::{nn, Tensor};

use super::layers::{lrelu, upsample2, Init, ModulatedConv};
use super::NetworkConfig;
use crate::error::{ensure_input, Result};
use crate::tensor::{ContentCode, ImageTensor, StyleCode};

#[derive(Debug)]
struct SynthesisBlock {
    conv1: ModulatedConv,
    conv2: ModulatedConv,
    to_rgb: ModulatedConv,
}

/// StyleGAN2-style generator `G`. The learned constant input is replaced by
/// the content code and every modulation reads the style code directly.
/// Per-layer noise inputs are omitted, so the output is a pure function of
/// `(C, S)`.
#[derive(Debug)]
pub struct Generator {
    blocks: Vec<SynthesisBlock>,
    channels_c: i64,
    dim_s: i64,
    feature_resolution: i64,
}

impl Generator {
    pub fn new(p: nn::Path, init: &mut Init, cfg: &NetworkConfig) -> Self {
        let n = cfg.generator_blocks;
        let first_up = n - cfg.upsample_blocks();
        let mut c_in = cfg.channels_c;
        let mut width = cfg.generator_width;
        let mut blocks = Vec::new();
        for i in 0..n {
            let up = i >= first_up;
            if up && i > first_up {
                width = (width / 2).max(16);
            }
            let bp = &p / format!("block{i}");
            let s = cfg.dim_s;
            blocks.push(SynthesisBlock {
                conv1: ModulatedConv::new(&bp / "conv1", init, s, c_in, width, 3, true, up),
                conv2: ModulatedConv::new(&bp / "conv2", init, s, width, width, 3, true, false),
                to_rgb: ModulatedConv::new(&bp / "to_rgb", init, s, width, 3, 1, false, false),
            });
            c_in = width;
        }
        Self {
            blocks,
            channels_c: cfg.channels_c,
            dim_s: cfg.dim_s,
            feature_resolution: cfg.feature_resolution(),
        }
    }

    pub fn generate(&self, content: &ContentCode, style: &StyleCode) -> Result<ImageTensor> {
        ensure_input!(
            content.batch() == style.batch(),
            "style",
            "batch size mismatch: content {} vs style {}",
            content.batch(),
            style.batch()
        );
        let cs = content.size();
        let fr = self.feature_resolution;
        ensure_input!(
            cs[1] == self.channels_c && cs[2] == fr && cs[3] == fr,
            "content",
            "expected (_, {}, {fr}, {fr}), got {cs:?}",
            self.channels_c
        );
        ensure_input!(
            style.dim() == self.dim_s,
            "style",
            "expected style dim {}, got {}",
            self.dim_s,
            style.dim()
        );
        let s = style.tensor();
        let mut h = content.tensor().shallow_clone();
        let mut rgb: Option<Tensor> = None;
        for block in &self.blocks {
            h = lrelu(&block.conv1.forward(&h, s));
            h = lrelu(&block.conv2.forward(&h, s));
            let y = block.to_rgb.forward(&h, s);
            rgb = Some(match rgb {
                None => y,
                Some(prev) if prev.size()[2] != y.size()[2] => upsample2(&prev) + y,
                Some(prev) => prev + y,
            });
        }
        ImageTensor::new(rgb.expect("at least one block").tanh())
    }
}
