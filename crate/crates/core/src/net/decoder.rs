use crate::autodiff::{Conv2dParams, Var};
use crate::error::{Error, Result};

use super::layers::{Conv, ConvBn, ForwardCtx};
use super::params::Builder;
use super::SubNetwork;

/// conv3×3+BN+ReLU → bilinear ×`upsample[0]` → conv3×3 to class logits →
/// bilinear ×`upsample[1]`.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub hidden: ConvBn,
    pub classifier: Conv,
    pub upsample: [usize; 2],
}

impl Decoder {
    pub(crate) fn build(
        b: &mut Builder,
        prefix: &str,
        cin: usize,
        hidden: usize,
        num_classes: usize,
        upsample: [usize; 2],
    ) -> Result<Self> {
        if upsample.contains(&0) {
            return Err(Error::Config("decoder upsample factors must be positive".into()));
        }
        Ok(Self {
            hidden: ConvBn::build_named(b, &format!("{prefix}.conv1"), cin, hidden, 3, Conv2dParams::new(1, 1, 1))?,
            classifier: Conv::build(b, &format!("{prefix}.conv2"), hidden, num_classes, 3, Conv2dParams::new(1, 1, 1), true)?,
            upsample,
        })
    }

    pub fn total_upsample(&self) -> usize {
        self.upsample[0] * self.upsample[1]
    }
}

impl SubNetwork for Decoder {
    fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let y = self.hidden.forward(ctx, x, true)?;
        let y = ctx.tape.bilinear_upsample(y, self.upsample[0])?;
        let y = self.classifier.forward(ctx, y)?;
        Ok(ctx.tape.bilinear_upsample(y, self.upsample[1])?)
    }
}
