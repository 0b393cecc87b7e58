//! The five networks of the auto-encoder: encoder `E`, content head `H_c`,
//! style head `H_s`, generator `G`, and the discriminators `D` and `D_co`.

mod config;
mod discriminator;
mod encoder;
mod generator;
pub mod layers;

use rand::Rng;
use tch::{nn, Device, Tensor};

pub use config::NetworkConfig;
pub use discriminator::{CooccurDiscriminator, CropBox, Discriminator, PatchSampler};
pub use encoder::{ContentHead, Encoder, StyleHead};
pub use generator::Generator;

use crate::error::Result;
use crate::tensor::{ContentCode, FeatureMap, ImageTensor, StyleCode};
use layers::Init;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetKind {
    Encoder,
    ContentHead,
    StyleHead,
    Generator,
    Discriminator,
    Cooccur,
}

impl NetKind {
    pub const ALL: [NetKind; 6] = [
        NetKind::Encoder,
        NetKind::ContentHead,
        NetKind::StyleHead,
        NetKind::Generator,
        NetKind::Discriminator,
        NetKind::Cooccur,
    ];

    /// Networks updated by the generator-side optimizer step.
    pub const AUTOENCODER: [NetKind; 4] = [
        NetKind::Encoder,
        NetKind::ContentHead,
        NetKind::StyleHead,
        NetKind::Generator,
    ];

    pub const CRITICS: [NetKind; 2] = [NetKind::Discriminator, NetKind::Cooccur];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Encoder => "encoder",
            NetKind::ContentHead => "content_head",
            NetKind::StyleHead => "style_head",
            NetKind::Generator => "generator",
            NetKind::Discriminator => "discriminator",
            NetKind::Cooccur => "cooccur",
        }
    }
}

/// Encoder output together with the two codes derived from it.
#[derive(Debug)]
pub struct Encoded {
    pub feature: FeatureMap,
    pub content: ContentCode,
    pub style: StyleCode,
}

impl Encoded {
    pub fn detach(&self) -> Encoded {
        Encoded {
            feature: self.feature.detach(),
            content: self.content.detach(),
            style: self.style.detach(),
        }
    }
}

pub struct Networks {
    config: NetworkConfig,
    stores: Vec<(NetKind, nn::VarStore)>,
    pub encoder: Encoder,
    pub content_head: ContentHead,
    pub style_head: StyleHead,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub cooccur: CooccurDiscriminator,
    patch_sampler: PatchSampler,
}

impl std::fmt::Debug for Networks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Networks")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Networks {
    /// Builds all networks with weights drawn from `config.seed`.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(config.seed);
        let stores: Vec<(NetKind, nn::VarStore)> = NetKind::ALL
            .iter()
            .map(|&k| (k, nn::VarStore::new(Device::Cpu)))
            .collect();
        let root = |k: NetKind| {
            let vs = &stores.iter().find(|(kk, _)| *kk == k).unwrap().1;
            vs.root() / k.name()
        };
        let encoder = Encoder::new(root(NetKind::Encoder), &mut init, &config);
        let content_head = ContentHead::new(root(NetKind::ContentHead), &mut init, &config);
        let style_head = StyleHead::new(root(NetKind::StyleHead), &mut init, &config);
        let generator = Generator::new(root(NetKind::Generator), &mut init, &config);
        let discriminator = Discriminator::new(root(NetKind::Discriminator), &mut init, &config);
        let cooccur = CooccurDiscriminator::new(root(NetKind::Cooccur), &mut init, &config);
        Ok(Self {
            patch_sampler: PatchSampler::from_config(&config),
            config,
            stores,
            encoder,
            content_head,
            style_head,
            generator,
            discriminator,
            cooccur,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn store(&self, kind: NetKind) -> &nn::VarStore {
        &self.stores.iter().find(|(k, _)| *k == kind).unwrap().1
    }

    pub fn store_mut(&mut self, kind: NetKind) -> &mut nn::VarStore {
        &mut self.stores.iter_mut().find(|(k, _)| *k == kind).unwrap().1
    }

    /// Trainable parameters of the given networks, sorted by name so that
    /// iteration order is stable.
    pub fn parameters(&self, kinds: &[NetKind]) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for &k in kinds {
            let mut vars: Vec<_> = self.store(k).variables().into_iter().collect();
            vars.sort_by(|a, b| a.0.cmp(&b.0));
            out.extend(vars);
        }
        out
    }

    /// Turns off gradient tracking on every weight; used for inference.
    pub fn freeze(&mut self) {
        for (_, vs) in self.stores.iter_mut() {
            vs.freeze();
        }
    }

    pub fn encode(&self, image: &ImageTensor) -> Result<FeatureMap> {
        self.encoder.encode(image)
    }

    pub fn to_content_code(&self, feature: &FeatureMap) -> Result<ContentCode> {
        self.content_head.forward(feature)
    }

    pub fn to_style_code(&self, feature: &FeatureMap) -> Result<StyleCode> {
        self.style_head.forward(feature)
    }

    pub fn codes(&self, feature: FeatureMap) -> Result<Encoded> {
        let content = self.to_content_code(&feature)?;
        let style = self.to_style_code(&feature)?;
        Ok(Encoded {
            feature,
            content,
            style,
        })
    }

    pub fn encode_all(&self, image: &ImageTensor) -> Result<Encoded> {
        self.codes(self.encode(image)?)
    }

    pub fn generate(&self, content: &ContentCode, style: &StyleCode) -> Result<ImageTensor> {
        self.generator.generate(content, style)
    }

    pub fn discriminate(&self, image: &ImageTensor) -> Result<Tensor> {
        self.discriminator.discriminate(image)
    }

    pub fn patch_sampler(&self) -> &PatchSampler {
        &self.patch_sampler
    }

    pub fn crop_patches<R: Rng + ?Sized>(
        &self,
        image: &ImageTensor,
        count: i64,
        rng: &mut R,
    ) -> Result<Tensor> {
        self.patch_sampler.crop_patches(image.tensor(), count, rng)
    }

    pub fn cooccur(&self, patches: &Tensor, reference: &Tensor, batch: i64) -> Result<Tensor> {
        self.cooccur.cooccur(patches, reference, batch)
    }
}
