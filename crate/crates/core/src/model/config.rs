use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture knobs shared by all five networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Side length of square input and output images.
    pub base_resolution: i64,
    /// Spatial reduction factor `r` between images and feature maps.
    pub reduction: i64,
    /// Encoder channels at full resolution; doubled at every downsample.
    pub encoder_width: i64,
    pub channels_e: i64,
    pub channels_c: i64,
    pub dim_s: i64,
    /// Generator channels at feature resolution; halved at every upsample.
    pub generator_width: i64,
    /// Number of style-modulated synthesis blocks. The last `log2(reduction)`
    /// of them upsample.
    pub generator_blocks: i64,
    pub disc_width: i64,
    /// Downsampling residual blocks in the image discriminator.
    pub disc_blocks: i64,
    pub cooccur_width: i64,
    /// Patch side as a fraction of the image side, drawn uniformly.
    pub patch_size_range: (f64, f64),
    pub patches_per_image: i64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_resolution: 64,
            reduction: 8,
            encoder_width: 64,
            channels_e: 512,
            channels_c: 8,
            dim_s: 2048,
            generator_width: 256,
            generator_blocks: 4,
            disc_width: 64,
            disc_blocks: 4,
            cooccur_width: 64,
            patch_size_range: (0.125, 0.25),
            patches_per_image: 8,
            seed: 0,
        }
    }
}

fn is_pow2(n: i64) -> bool {
    n > 0 && n & (n - 1) == 0
}

impl NetworkConfig {
    /// A narrow model for single-core desk-scale runs and tests.
    pub fn tiny() -> Self {
        Self {
            encoder_width: 16,
            channels_e: 64,
            channels_c: 8,
            dim_s: 128,
            generator_width: 64,
            generator_blocks: 3,
            disc_width: 16,
            disc_blocks: 4,
            cooccur_width: 32,
            patches_per_image: 4,
            ..Self::default()
        }
    }

    pub fn feature_resolution(&self) -> i64 {
        self.base_resolution / self.reduction
    }

    pub fn upsample_blocks(&self) -> i64 {
        self.reduction.trailing_zeros() as i64
    }

    /// Patch resolution fed to the co-occurrence discriminator.
    pub fn patch_resolution(&self) -> i64 {
        self.base_resolution / 4
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: String| Err(Error::config(f, m));
        if !is_pow2(self.base_resolution) || self.base_resolution < 16 {
            return err(
                "network.base_resolution",
                format!("must be a power of two >= 16, got {}", self.base_resolution),
            );
        }
        if !is_pow2(self.reduction) || self.reduction >= self.base_resolution {
            return err(
                "network.reduction",
                format!(
                    "must be a power of two below base_resolution, got {}",
                    self.reduction
                ),
            );
        }
        if !is_pow2(self.feature_resolution()) {
            return err(
                "network.reduction",
                "feature resolution must be a power of two".to_string(),
            );
        }
        for (f, v) in [
            ("network.encoder_width", self.encoder_width),
            ("network.channels_e", self.channels_e),
            ("network.channels_c", self.channels_c),
            ("network.dim_s", self.dim_s),
            ("network.generator_width", self.generator_width),
            ("network.disc_width", self.disc_width),
            ("network.cooccur_width", self.cooccur_width),
            ("network.patches_per_image", self.patches_per_image),
        ] {
            if v < 1 {
                return err(f, format!("must be positive, got {v}"));
            }
        }
        if self.channels_c >= self.channels_e {
            return err(
                "network.channels_c",
                format!(
                    "must be smaller than channels_e ({} >= {})",
                    self.channels_c, self.channels_e
                ),
            );
        }
        if self.generator_blocks < self.upsample_blocks() {
            return err(
                "network.generator_blocks",
                format!(
                    "need at least log2(reduction) = {} blocks to reach the output resolution",
                    self.upsample_blocks()
                ),
            );
        }
        if self.disc_blocks < 1 || (self.base_resolution >> self.disc_blocks) < 1 {
            return err(
                "network.disc_blocks",
                format!("{} downsamples exceed the image size", self.disc_blocks),
            );
        }
        let (lo, hi) = self.patch_size_range;
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return err(
                "network.patch_size_range",
                format!("fractions must satisfy 0 < min <= max < 1, got ({lo}, {hi})"),
            );
        }
        if (lo * self.base_resolution as f64).round() < 1.0 {
            return err(
                "network.patch_size_range",
                format!(
                    "minimum patch side is below one pixel at resolution {}",
                    self.base_resolution
                ),
            );
        }
        if !is_pow2(self.patch_resolution()) || self.patch_resolution() < 4 {
            return err(
                "network.base_resolution",
                "patch resolution (base / 4) must be a power of two >= 4".to_string(),
            );
        }
        Ok(())
    }
}
