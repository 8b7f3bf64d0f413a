use crate::autodiff::{Conv2dParams, Var};
use crate::error::{Error, Result};

use super::layers::{Conv, ConvBn, ForwardCtx};
use super::params::Builder;
use super::SubNetwork;

/// Smallest spatial input the three stride-2 pyramid levels accept.
pub const FPA_MIN_SPATIAL: usize = 8;

/// Feature pyramid attention.
///
/// A 7×7 → 5×5 → 3×3 stride-2 pyramid is merged bottom-up, resized to the
/// input grid and used as a multiplicative attention map on the 1×1-projected
/// main branch. The global-pooling prior and the main branch itself are then
/// added on top.
#[derive(Clone, Debug)]
pub struct Fpa {
    pub main: ConvBn,
    pub global: Conv,
    pub down7: ConvBn,
    pub down5: ConvBn,
    pub down3: ConvBn,
    pub out_channels: usize,
}

impl Fpa {
    pub(crate) fn build(b: &mut Builder, prefix: &str, cin: usize, cout: usize) -> Result<Self> {
        if cin == 0 || cout == 0 {
            return Err(Error::Config("feature pyramid channels must be positive".into()));
        }
        Ok(Self {
            main: ConvBn::build_named(b, &format!("{prefix}.main"), cin, cout, 1, Conv2dParams::default())?,
            global: Conv::build(b, &format!("{prefix}.global.conv"), cin, cout, 1, Conv2dParams::default(), true)?,
            down7: ConvBn::build_named(b, &format!("{prefix}.down7"), cin, cout, 7, Conv2dParams::new(2, 3, 1))?,
            down5: ConvBn::build_named(b, &format!("{prefix}.down5"), cout, cout, 5, Conv2dParams::new(2, 2, 1))?,
            down3: ConvBn::build_named(b, &format!("{prefix}.down3"), cout, cout, 3, Conv2dParams::new(2, 1, 1))?,
            out_channels: cout,
        })
    }
}

impl SubNetwork for Fpa {
    fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let (_, _, h, w) = ctx.tape.value(x).dims4()?;
        if h < FPA_MIN_SPATIAL || w < FPA_MIN_SPATIAL {
            return Err(Error::Geometry(format!(
                "feature pyramid needs at least {FPA_MIN_SPATIAL}×{FPA_MIN_SPATIAL} input, got {h}×{w}"
            )));
        }
        let main = self.main.forward(ctx, x, true)?;

        let pooled = ctx.tape.global_avg_pool(x)?;
        let global = self.global.forward(ctx, pooled)?;
        let global = ctx.tape.resize_bilinear(global, h, w)?;

        let p1 = self.down7.forward(ctx, x, true)?;
        let p2 = self.down5.forward(ctx, p1, true)?;
        let p3 = self.down3.forward(ctx, p2, true)?;
        let merged = upsample_onto(ctx, p3, p2)?;
        let merged = upsample_onto(ctx, merged, p1)?;
        let (_, _, h1, w1) = ctx.tape.value(merged).dims4()?;
        let attention = if (h1, w1) == (h, w) { merged } else { ctx.tape.resize_bilinear(merged, h, w)? };

        let attended = ctx.tape.mul(main, attention)?;
        let with_prior = ctx.tape.add(attended, global)?;
        Ok(ctx.tape.add(with_prior, main)?)
    }
}

/// `coarse` resized to `fine`'s grid and added to it (×2 when sizes are even).
fn upsample_onto(ctx: &mut ForwardCtx, coarse: Var, fine: Var) -> Result<Var> {
    let (_, _, h, w) = ctx.tape.value(fine).dims4()?;
    let up = ctx.tape.resize_bilinear(coarse, h, w)?;
    Ok(ctx.tape.add(up, fine)?)
}
