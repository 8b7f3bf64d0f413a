use crate::autodiff::Conv2dParams;
use crate::error::Result;

use super::layers::{BasicBlock, Bottleneck, ConvBn, ForwardCtx};
use super::params::Builder;
use super::{ModelConfig, SubNetwork};
use crate::autodiff::Var;

#[derive(Clone, Debug)]
pub enum ResidualBlock {
    Bottleneck(Bottleneck),
    Basic(BasicBlock),
}

impl ResidualBlock {
    fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        match self {
            Self::Bottleneck(b) => b.forward(ctx, x),
            Self::Basic(b) => b.forward(ctx, x),
        }
    }
}

/// ResNet50 encoder without the stem max-pool (unless the ablation flag is
/// set) and with a stride-1 fourth stage: a basic block followed by
/// dilation-2 bottlenecks.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub stem: ConvBn,
    pub maxpool: bool,
    pub layers: Vec<Vec<ResidualBlock>>,
    pub out_channels: usize,
}

/// Standard ResNet50 stage depths.
pub const STAGE_BLOCKS: [usize; 4] = [3, 4, 6, 3];

impl Encoder {
    pub(crate) fn build(b: &mut Builder, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let ch = |c: usize| cfg.channels(c);
        let stem = ConvBn::build(
            b,
            &format!("{prefix}.stem.conv"),
            &format!("{prefix}.stem.bn"),
            cfg.in_channels,
            ch(64),
            7,
            Conv2dParams::new(2, 3, 1),
        )?;

        let mut layers = Vec::with_capacity(4);
        let mut cin = ch(64);
        for (stage, (&blocks, (mid, stride))) in STAGE_BLOCKS[..3].iter().zip([(64, 1), (128, 2), (256, 2)]).enumerate() {
            let cout = ch(mid * 4);
            let mut layer = Vec::with_capacity(blocks);
            for i in 0..blocks {
                let name = format!("{prefix}.layer{}.{i}", stage + 1);
                let s = if i == 0 { stride } else { 1 };
                layer.push(ResidualBlock::Bottleneck(Bottleneck::build(b, &name, cin, ch(mid), cout, s, 1)?));
                cin = cout;
            }
            layers.push(layer);
        }

        let mut layer4 = Vec::with_capacity(cfg.layer4_blocks);
        let regular_width = ch(1024);
        layer4.push(ResidualBlock::Basic(BasicBlock::build(b, &format!("{prefix}.layer4.0"), cin, regular_width, 1)?));
        cin = regular_width;
        for i in 1..cfg.layer4_blocks {
            let cout = ch(2048);
            layer4.push(ResidualBlock::Bottleneck(Bottleneck::build(
                b,
                &format!("{prefix}.layer4.{i}"),
                cin,
                ch(512),
                cout,
                1,
                2,
            )?));
            cin = cout;
        }
        layers.push(layer4);

        Ok(Self { stem, maxpool: cfg.include_initial_maxpool, layers, out_channels: cin })
    }
}

impl SubNetwork for Encoder {
    fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let mut y = self.stem.forward(ctx, x, true)?;
        if self.maxpool {
            y = ctx.tape.max_pool2d(y, 3, 2, 1)?;
        }
        for layer in &self.layers {
            for block in layer {
                y = block.forward(ctx, y)?;
            }
        }
        Ok(y)
    }
}
