use crate::autodiff::{Conv2dParams, NormMode, RunningStats, Tape, Var, BN_EPSILON};
use crate::error::Result;

use super::params::{Bindings, Builder, EntryKind, ParamId, ParamStore};

/// New running statistics for one batch-norm layer, produced by a
/// train-mode forward and applied afterwards with [`ParamStore`] access.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub new_mean: Vec<f32>,
    pub new_var: Vec<f32>,
}

/// State threaded through one forward pass. The store is borrowed
/// immutably, so eval-mode forwards can share a network.
pub struct ForwardCtx<'a> {
    pub tape: &'a mut Tape<f32>,
    store: &'a ParamStore,
    pub mode: NormMode,
    track_grads: bool,
    pub(crate) bindings: Bindings,
    pub(crate) bn_updates: Vec<BnUpdate>,
}

impl<'a> ForwardCtx<'a> {
    pub fn new(tape: &'a mut Tape<f32>, store: &'a ParamStore, mode: NormMode, track_grads: bool) -> Self {
        Self { tape, store, mode, track_grads, bindings: Bindings::default(), bn_updates: Vec::new() }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let v = self.tape.leaf(self.store.value(id).clone(), self.track_grads);
        self.bindings.0.push((id, v));
        v
    }

    pub fn finish(self) -> (Bindings, Vec<BnUpdate>) {
        (self.bindings, self.bn_updates)
    }
}

pub(crate) fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    for u in updates {
        store.value_mut(u.mean).data_mut().copy_from_slice(&u.new_mean);
        store.value_mut(u.var).data_mut().copy_from_slice(&u.new_var);
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub params: Conv2dParams,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        b: &mut Builder,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        params: Conv2dParams,
        bias: bool,
    ) -> Result<Self> {
        let weight = b.conv_weight(name, cin, cout, k)?;
        let bias = if bias { Some(b.zeros(format!("{name}.bias"), &[cout], EntryKind::Param)?) } else { None };
        Ok(Self { weight, bias, params })
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|id| ctx.param(id));
        Ok(ctx.tape.conv2d(x, w, b, self.params)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub(crate) fn build(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.ones(format!("{name}.gamma"), &[channels], EntryKind::Param)?,
            beta: b.zeros(format!("{name}.beta"), &[channels], EntryKind::Param)?,
            running_mean: b.zeros(format!("{name}.running_mean"), &[channels], EntryKind::Buffer)?,
            running_var: b.ones(format!("{name}.running_var"), &[channels], EntryKind::Buffer)?,
        })
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let mut stats = RunningStats {
            mean: ctx.store.value(self.running_mean).data().to_vec(),
            var: ctx.store.value(self.running_var).data().to_vec(),
            initialized: true,
        };
        let y = ctx.tape.batch_norm2d(x, gamma, beta, &mut stats, ctx.mode, BN_EPSILON)?;
        if ctx.mode == NormMode::Train {
            ctx.bn_updates.push(BnUpdate {
                mean: self.running_mean,
                var: self.running_var,
                new_mean: stats.mean,
                new_var: stats.var,
            });
        }
        Ok(y)
    }
}

/// Bias-free convolution followed by batch norm.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBn {
    pub(crate) fn build(
        b: &mut Builder,
        conv_name: &str,
        bn_name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        params: Conv2dParams,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv::build(b, conv_name, cin, cout, k, params, false)?,
            bn: BatchNorm::build(b, bn_name, cout)?,
        })
    }

    /// `name.conv` / `name.bn` naming.
    pub(crate) fn build_named(b: &mut Builder, name: &str, cin: usize, cout: usize, k: usize, params: Conv2dParams) -> Result<Self> {
        Self::build(b, &format!("{name}.conv"), &format!("{name}.bn"), cin, cout, k, params)
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, x: Var, relu: bool) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(if relu { ctx.tape.relu(y)? } else { y })
    }
}

/// 1×1 → 3×3 → 1×1 residual block; the 3×3 carries stride and dilation.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub reduce: ConvBn,
    pub spatial: ConvBn,
    pub expand: ConvBn,
    pub projection: Option<ConvBn>,
}

impl Bottleneck {
    pub(crate) fn build(
        b: &mut Builder,
        name: &str,
        cin: usize,
        mid: usize,
        cout: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        let projection = if cin != cout || stride != 1 {
            Some(ConvBn::build(
                b,
                &format!("{name}.downsample.conv"),
                &format!("{name}.downsample.bn"),
                cin,
                cout,
                1,
                Conv2dParams::new(stride, 0, 1),
            )?)
        } else {
            None
        };
        Ok(Self {
            reduce: ConvBn::build(b, &format!("{name}.conv1"), &format!("{name}.bn1"), cin, mid, 1, Conv2dParams::default())?,
            spatial: ConvBn::build(
                b,
                &format!("{name}.conv2"),
                &format!("{name}.bn2"),
                mid,
                mid,
                3,
                Conv2dParams::new(stride, dilation, dilation),
            )?,
            expand: ConvBn::build(b, &format!("{name}.conv3"), &format!("{name}.bn3"), mid, cout, 1, Conv2dParams::default())?,
            projection,
        })
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let y = self.reduce.forward(ctx, x, true)?;
        let y = self.spatial.forward(ctx, y, true)?;
        let y = self.expand.forward(ctx, y, false)?;
        let skip = match &self.projection {
            Some(p) => p.forward(ctx, x, false)?,
            None => x,
        };
        let sum = ctx.tape.add(y, skip)?;
        Ok(ctx.tape.relu(sum)?)
    }
}

/// Two 3×3 convolutions with an identity (or 1×1 projected) skip.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub first: ConvBn,
    pub second: ConvBn,
    pub projection: Option<ConvBn>,
}

impl BasicBlock {
    pub(crate) fn build(b: &mut Builder, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        let projection = if cin != cout || stride != 1 {
            Some(ConvBn::build(
                b,
                &format!("{name}.downsample.conv"),
                &format!("{name}.downsample.bn"),
                cin,
                cout,
                1,
                Conv2dParams::new(stride, 0, 1),
            )?)
        } else {
            None
        };
        Ok(Self {
            first: ConvBn::build(b, &format!("{name}.conv1"), &format!("{name}.bn1"), cin, cout, 3, Conv2dParams::new(stride, 1, 1))?,
            second: ConvBn::build(b, &format!("{name}.conv2"), &format!("{name}.bn2"), cout, cout, 3, Conv2dParams::new(1, 1, 1))?,
            projection,
        })
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let y = self.first.forward(ctx, x, true)?;
        let y = self.second.forward(ctx, y, false)?;
        let skip = match &self.projection {
            Some(p) => p.forward(ctx, x, false)?,
            None => x,
        };
        let sum = ctx.tape.add(y, skip)?;
        Ok(ctx.tape.relu(sum)?)
    }
}
