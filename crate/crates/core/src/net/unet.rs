use crate::autodiff::{Conv2dParams, Var};
use crate::error::Result;

use super::layers::{Conv, ConvBn, ForwardCtx};
use super::params::Builder;
use super::{ModelConfig, SubNetwork};

#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub first: ConvBn,
    pub second: ConvBn,
}

impl DoubleConv {
    fn build(b: &mut Builder, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let p = Conv2dParams::new(1, 1, 1);
        Ok(Self {
            first: ConvBn::build_named(b, &format!("{name}.0"), cin, cout, 3, p)?,
            second: ConvBn::build_named(b, &format!("{name}.1"), cout, cout, 3, p)?,
        })
    }

    fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let y = self.first.forward(ctx, x, true)?;
        self.second.forward(ctx, y, true)
    }
}

/// Four 2×2 max-pool downsamplings, four bilinear ×2 upsamplings with skip
/// concatenation, and a 1×1 class head.
#[derive(Clone, Debug)]
pub struct Unet {
    pub inc: DoubleConv,
    pub down: Vec<DoubleConv>,
    pub up: Vec<DoubleConv>,
    pub head: Conv,
}

impl Unet {
    pub(crate) fn build(b: &mut Builder, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let widths: Vec<usize> = [64, 128, 256, 512, 1024].iter().map(|&c| cfg.channels(c)).collect();
        let inc = DoubleConv::build(b, &format!("{prefix}.inc"), cfg.in_channels, widths[0])?;
        let down = (0..4)
            .map(|i| DoubleConv::build(b, &format!("{prefix}.down{}", i + 1), widths[i], widths[i + 1]))
            .collect::<Result<Vec<_>>>()?;
        let up = (0..4)
            .map(|i| {
                let deep = widths[4 - i];
                let skip = widths[3 - i];
                DoubleConv::build(b, &format!("{prefix}.up{}", i + 1), deep + skip, skip)
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Conv::build(b, &format!("{prefix}.head"), widths[0], cfg.num_classes, 1, Conv2dParams::default(), true)?;
        Ok(Self { inc, down, up, head })
    }

    /// Returns `(logits, bottleneck features)`.
    pub(crate) fn forward_with_bottleneck(&self, ctx: &mut ForwardCtx, x: Var) -> Result<(Var, Var)> {
        let mut skips = vec![self.inc.forward(ctx, x)?];
        for block in &self.down {
            let pooled = ctx.tape.max_pool2d(*skips.last().expect("non-empty"), 2, 2, 0)?;
            skips.push(block.forward(ctx, pooled)?);
        }
        let bottleneck = skips.pop().expect("five levels");
        let mut y = bottleneck;
        for block in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let up = ctx.tape.bilinear_upsample(y, 2)?;
            let cat = ctx.tape.concat_channels(&[up, skip])?;
            y = block.forward(ctx, cat)?;
        }
        Ok((self.head.forward(ctx, y)?, bottleneck))
    }
}

impl SubNetwork for Unet {
    fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        Ok(self.forward_with_bottleneck(ctx, x)?.0)
    }
}
