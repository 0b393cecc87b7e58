use tch::nn;

use super::layers::{lrelu, Conv2d, Init, ResBlock};
use super::NetworkConfig;
use crate::error::{ensure_input, Result};
use crate::tensor::{ContentCode, FeatureMap, ImageTensor, StyleCode};

/// Image encoder `E`: a stack of downsampling residual blocks mapping an
/// image to a feature map at `1/r` of its resolution.
#[derive(Debug)]
pub struct Encoder {
    from_rgb: Conv2d,
    blocks: Vec<ResBlock>,
    out: Conv2d,
    resolution: i64,
}

impl Encoder {
    pub fn new(p: nn::Path, init: &mut Init, cfg: &NetworkConfig) -> Self {
        let from_rgb = Conv2d::new(&p / "from_rgb", init, 3, cfg.encoder_width, 1, 1, true);
        let mut blocks = Vec::new();
        let mut ch = cfg.encoder_width;
        for i in 0..cfg.upsample_blocks() {
            let next = (ch * 2).min(cfg.channels_e);
            blocks.push(ResBlock::new(&p / format!("block{i}"), init, ch, next, true));
            ch = next;
        }
        let out = Conv2d::new(&p / "out", init, ch, cfg.channels_e, 1, 1, true);
        Self {
            from_rgb,
            blocks,
            out,
            resolution: cfg.base_resolution,
        }
    }

    pub fn encode(&self, image: &ImageTensor) -> Result<FeatureMap> {
        let s = image.size();
        ensure_input!(
            s[2] == self.resolution && s[3] == self.resolution,
            "image",
            "expected {0}x{0} input, got {1}x{2}",
            self.resolution,
            s[2],
            s[3]
        );
        let mut h = lrelu(&self.from_rgb.forward(image.tensor()));
        for block in &self.blocks {
            h = block.forward(&h);
        }
        FeatureMap::new(self.out.forward(&h))
    }
}

/// Content sub-network `H_c`: resolution-preserving convolutions that
/// compress the channel dimension.
#[derive(Debug)]
pub struct ContentHead {
    conv1: Conv2d,
    conv2: Conv2d,
    out: Conv2d,
    channels_e: i64,
    resolution: i64,
}

impl ContentHead {
    pub fn new(p: nn::Path, init: &mut Init, cfg: &NetworkConfig) -> Self {
        let ce = cfg.channels_e;
        Self {
            conv1: Conv2d::new(&p / "conv1", init, ce, ce, 3, 1, true),
            conv2: Conv2d::new(&p / "conv2", init, ce, ce, 3, 1, true),
            out: Conv2d::new(&p / "out", init, ce, cfg.channels_c, 1, 1, true),
            channels_e: ce,
            resolution: cfg.feature_resolution(),
        }
    }

    pub fn forward(&self, feature: &FeatureMap) -> Result<ContentCode> {
        check_feature(feature, self.channels_e, self.resolution)?;
        let h = lrelu(&self.conv1.forward(feature.tensor()));
        let h = lrelu(&self.conv2.forward(&h));
        ContentCode::new(self.out.forward(&h))
    }
}

/// Style sub-network `H_s`: strided convolutions down to `1x1`, then a
/// projection to `dim_s` and a flatten. The output has no spatial axes.
#[derive(Debug)]
pub struct StyleHead {
    downs: Vec<Conv2d>,
    out: Conv2d,
    channels_e: i64,
    resolution: i64,
}

impl StyleHead {
    pub fn new(p: nn::Path, init: &mut Init, cfg: &NetworkConfig) -> Self {
        let ce = cfg.channels_e;
        let n_down = cfg.feature_resolution().trailing_zeros() as i64;
        let downs = (0..n_down)
            .map(|i| Conv2d::new(&p / format!("down{i}"), init, ce, ce, 3, 2, true))
            .collect();
        Self {
            downs,
            out: Conv2d::new(&p / "out", init, ce, cfg.dim_s, 1, 1, true),
            channels_e: ce,
            resolution: cfg.feature_resolution(),
        }
    }

    pub fn forward(&self, feature: &FeatureMap) -> Result<StyleCode> {
        check_feature(feature, self.channels_e, self.resolution)?;
        let mut h = feature.tensor().shallow_clone();
        for d in &self.downs {
            h = lrelu(&d.forward(&h));
        }
        StyleCode::new(self.out.forward(&h).flatten(1, -1))
    }
}

fn check_feature(f: &FeatureMap, channels: i64, res: i64) -> Result<()> {
    let s = f.size();
    ensure_input!(
        s[1] == channels && s[2] == res && s[3] == res,
        "feature",
        "expected (_, {channels}, {res}, {res}), got {s:?}"
    );
    Ok(())
}
