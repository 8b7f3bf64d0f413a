//! The segmentation networks: improved ResNet50 encoder + feature pyramid
//! attention + decoder, and the U-Net baseline.

mod decoder;
mod fpa;
mod layers;
mod params;
mod resnet;
mod unet;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NormMode, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use decoder::Decoder;
pub use fpa::{Fpa, FPA_MIN_SPATIAL};
pub use layers::{BnUpdate, ForwardCtx};
pub use params::{Bindings, Entry, EntryKind, ParamId, ParamStore};
pub use resnet::{Encoder, ResidualBlock, STAGE_BLOCKS};
pub use unet::Unet;

/// Background, peripheral zone, transition zone.
pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    Proposed,
    UnetBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Scales every channel count; 1.0 is the full-width network.
    pub width_multiplier: f64,
    /// Restores ResNet's stem max-pool (the ablation arm).
    pub include_initial_maxpool: bool,
    /// Square input side in pixels.
    pub input_size: usize,
    pub arch: Arch,
    /// Blocks in the fourth encoder stage: 3, or 2 to drop the last
    /// dilated bottleneck.
    pub layer4_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: NUM_CLASSES,
            width_multiplier: 1.0,
            include_initial_maxpool: false,
            input_size: 192,
            arch: Arch::Proposed,
            layer4_blocks: 3,
        }
    }
}

impl ModelConfig {
    /// `base` channels scaled by the width multiplier, at least 1.
    pub fn channels(&self, base: usize) -> usize {
        ((base as f64 * self.width_multiplier).round() as usize).max(1)
    }

    /// Encoder output stride of the proposed network.
    pub fn output_stride(&self) -> usize {
        if self.include_initial_maxpool {
            16
        } else {
            8
        }
    }

    /// Decoder upsampling split restoring the encoder's output stride.
    pub fn decoder_upsample(&self) -> [usize; 2] {
        if self.include_initial_maxpool {
            [4, 4]
        } else {
            [4, 2]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 {
            return fail("in_channels must be positive".into());
        }
        if self.num_classes != NUM_CLASSES {
            return fail(format!("num_classes is fixed at {NUM_CLASSES}, got {}", self.num_classes));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return fail(format!("width_multiplier must lie in (0, 1], got {}", self.width_multiplier));
        }
        if (64.0 * self.width_multiplier).round() < 1.0 {
            return fail("width_multiplier leaves the stem with no channels".into());
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(8) {
            return fail(format!("input_size must be a positive multiple of 8, got {}", self.input_size));
        }
        match self.arch {
            Arch::UnetBaseline if !self.input_size.is_multiple_of(16) => {
                fail(format!("U-Net input_size must be divisible by 16, got {}", self.input_size))
            }
            Arch::Proposed if self.include_initial_maxpool && !self.input_size.is_multiple_of(16) => fail(format!(
                "input_size must be divisible by 16 with the stem max-pool, got {}",
                self.input_size
            )),
            Arch::Proposed if !(2..=3).contains(&self.layer4_blocks) => {
                fail(format!("layer4_blocks must be 2 or 3, got {}", self.layer4_blocks))
            }
            _ => Ok(()),
        }
    }
}

/// A network component that maps one feature map to another.
pub trait SubNetwork {
    fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var>;
}

/// A sub-network together with the parameters it owns.
#[derive(Clone, Debug)]
pub struct Network<M> {
    pub module: M,
    pub store: ParamStore,
}

impl<M: SubNetwork> Network<M> {
    pub fn forward(&self, tape: &mut Tape<f32>, x: Var, mode: NormMode, track_grads: bool) -> Result<(Var, Bindings, Vec<BnUpdate>)> {
        let mut ctx = ForwardCtx::new(tape, &self.store, mode, track_grads);
        let y = self.module.forward(&mut ctx, x)?;
        let (bindings, updates) = ctx.finish();
        Ok((y, bindings, updates))
    }
}

/// Encoder stage of the proposed network as a standalone sub-network.
pub fn build_improved_resnet50(config: &ModelConfig, seed: u64) -> Result<Network<Encoder>> {
    config.validate()?;
    let mut store = ParamStore::new();
    let module = Encoder::build(&mut params::Builder::new(&mut store, seed), "encoder", config)?;
    Ok(Network { module, store })
}

pub fn build_fpa(in_channels: usize, out_channels: usize, seed: u64) -> Result<Network<Fpa>> {
    let mut store = ParamStore::new();
    let module = Fpa::build(&mut params::Builder::new(&mut store, seed), "fpa", in_channels, out_channels)?;
    Ok(Network { module, store })
}

pub fn build_decoder(in_channels: usize, config: &ModelConfig, seed: u64) -> Result<Network<Decoder>> {
    let mut store = ParamStore::new();
    let module = Decoder::build(
        &mut params::Builder::new(&mut store, seed),
        "decoder",
        in_channels,
        config.channels(128),
        config.num_classes,
        config.decoder_upsample(),
    )?;
    Ok(Network { module, store })
}

pub fn build_unet_baseline(config: &ModelConfig, seed: u64) -> Result<ZonalNet> {
    ZonalNet::new(ModelConfig { arch: Arch::UnetBaseline, ..config.clone() }, seed)
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)] // one per model
enum Body {
    Proposed { encoder: Encoder, fpa: Fpa, decoder: Decoder },
    Unet(Unet),
}

/// A complete segmentation model: configuration, named parameters and the
/// forward plan.
#[derive(Clone, Debug)]
pub struct ZonalNet {
    config: ModelConfig,
    store: ParamStore,
    body: Body,
}

/// Result of one forward pass on a tape.
pub struct ForwardOutput {
    /// N×3×S×S class logits.
    pub logits: Var,
    /// Encoder output (proposed) or U-Net bottleneck.
    pub features: Var,
    pub bindings: Bindings,
    pub bn_updates: Vec<BnUpdate>,
}

/// Softmax probabilities and per-pixel argmax labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub probs: Tensor<f32>,
    /// N×S×S labels in {0, 1, 2}.
    pub labels: Vec<u8>,
}

impl ZonalNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = params::Builder::new(&mut store, seed);
        let body = match config.arch {
            Arch::Proposed => {
                let encoder = Encoder::build(&mut b, "encoder", &config)?;
                let fpa_out = config.channels(512);
                let fpa = Fpa::build(&mut b, "fpa", encoder.out_channels, fpa_out)?;
                let decoder = Decoder::build(
                    &mut b,
                    "decoder",
                    fpa_out,
                    config.channels(128),
                    config.num_classes,
                    config.decoder_upsample(),
                )?;
                Body::Proposed { encoder, fpa, decoder }
            }
            Arch::UnetBaseline => Body::Unet(Unet::build(&mut b, "unet", &config)?),
        };
        Ok(Self { config, store, body })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Records a forward pass. Train mode uses batch statistics and returns
    /// running-stat updates, which take effect only through
    /// [`ZonalNet::apply_bn_updates`].
    pub fn forward(&self, tape: &mut Tape<f32>, input: Var, mode: NormMode, track_grads: bool) -> Result<ForwardOutput> {
        let (n, c, h, w) = tape.value(input).dims4()?;
        let s = self.config.input_size;
        if c != self.config.in_channels || h != s || w != s {
            return Err(Error::Geometry(format!(
                "expected N×{}×{s}×{s} input, got {n}×{c}×{h}×{w}",
                self.config.in_channels
            )));
        }
        let mut ctx = ForwardCtx::new(tape, &self.store, mode, track_grads);
        let (logits, features) = match &self.body {
            Body::Proposed { encoder, fpa, decoder } => {
                let features = encoder.forward(&mut ctx, input)?;
                let attended = fpa.forward(&mut ctx, features)?;
                (decoder.forward(&mut ctx, attended)?, features)
            }
            Body::Unet(unet) => unet.forward_with_bottleneck(&mut ctx, input)?,
        };
        let (bindings, bn_updates) = ctx.finish();
        Ok(ForwardOutput { logits, features, bindings, bn_updates })
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        layers::apply_bn_updates(&mut self.store, updates);
    }

    /// Eval-mode probabilities and labels for an N×in×S×S batch.
    pub fn forward_segment(&self, image: &Tensor<f32>) -> Result<Segmentation> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, x, NormMode::Eval, false)?;
        let probs = tape.softmax_channel(out.logits)?;
        let probs = tape.value(probs).clone();
        let labels = argmax_channels(&probs)?;
        Ok(Segmentation { probs, labels })
    }
}

/// Per-pixel argmax over channels; ties go to the lowest class index.
pub fn argmax_channels(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let (n, c, h, w) = t.dims4()?;
    let hw = h * w;
    let d = t.data();
    let mut labels = Vec::with_capacity(n * hw);
    for ni in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for ch in 1..c {
                if d[(ni * c + ch) * hw + p] > d[(ni * c + best) * hw + p] {
                    best = ch;
                }
            }
            labels.push(best as u8);
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small(arch: Arch, maxpool: bool, size: usize) -> ModelConfig {
        ModelConfig { width_multiplier: 0.125, input_size: size, arch, include_initial_maxpool: maxpool, ..Default::default() }
    }

    fn run(net: &ZonalNet, n: usize) -> (Vec<usize>, Vec<usize>) {
        let s = net.config().input_size;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([n, 1, s, s], |i| ((i % 97) as f32 / 97.0) - 0.5));
        let out = net.forward(&mut tape, x, NormMode::Train, false).unwrap();
        (tape.shape(out.logits).to_vec(), tape.shape(out.features).to_vec())
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { input_size: 100, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { width_multiplier: 0.0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { width_multiplier: 0.001, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { num_classes: 4, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { input_size: 104, arch: Arch::UnetBaseline, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn proposed_shape_trace() {
        let net = ZonalNet::new(small(Arch::Proposed, false, 96), 0).unwrap();
        assert_eq!(run(&net, 2), (vec![2, 3, 96, 96], vec![2, 256, 12, 12]));
        let net = ZonalNet::new(small(Arch::Proposed, true, 128), 0).unwrap();
        assert_eq!(run(&net, 1), (vec![1, 3, 128, 128], vec![1, 256, 8, 8]));
    }

    #[test]
    fn unet_shape_trace() {
        let net = build_unet_baseline(&small(Arch::Proposed, false, 64), 0).unwrap();
        assert_eq!(run(&net, 1), (vec![1, 3, 64, 64], vec![1, 128, 4, 4]));
    }

    #[test]
    fn maxpool_toggle_keeps_parameter_names() {
        let names = |maxpool| -> BTreeSet<String> {
            let net = ZonalNet::new(small(Arch::Proposed, maxpool, 128), 0).unwrap();
            net.store().entries().iter().map(|e| e.name.clone()).collect()
        };
        assert_eq!(names(false), names(true));
    }

    #[test]
    fn builds_are_deterministic() {
        let a = ZonalNet::new(small(Arch::Proposed, false, 64), 3).unwrap();
        let b = ZonalNet::new(small(Arch::Proposed, false, 64), 3).unwrap();
        assert_eq!(a.store(), b.store());
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let net = ZonalNet::new(small(Arch::Proposed, false, 64), 0).unwrap();
        assert!(net.forward_segment(&Tensor::zeros([1, 1, 72, 72])).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        let t = Tensor::new([1, 3, 1, 2], vec![2.0, 0.5, 1.0, 0.5, 0.0, 0.1]).unwrap();
        assert_eq!(argmax_channels(&t).unwrap(), vec![0, 0]);
    }

    #[test]
    fn layer4_can_drop_to_two_blocks() {
        let cfg = ModelConfig { layer4_blocks: 2, ..small(Arch::Proposed, false, 64) };
        let enc = build_improved_resnet50(&cfg, 0).unwrap();
        assert_eq!(enc.module.layers[3].len(), 2);
        assert!(matches!(enc.module.layers[3][0], ResidualBlock::Basic(_)));
    }
}
