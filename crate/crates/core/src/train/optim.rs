use crate::error::{Error, Result};
use crate::net::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One classical-momentum SGD update with L2 weight decay folded into the
/// gradient: `g' = g + wd·p; v = μ·v + g'; p -= lr·v`.
pub fn sgd_step<T: Scalar>(params: &mut [T], grads: &[T], velocity: &mut [T], hyper: SgdHyper) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Validation(format!(
            "sgd_step: {} params, {} grads, {} velocity entries",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    let lr = T::from_f64_lossy(hyper.learning_rate);
    let mu = T::from_f64_lossy(hyper.momentum);
    let wd = T::from_f64_lossy(hyper.weight_decay);
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + wd * *p;
        *v = mu * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum buffers for every trainable parameter of a store, in
/// [`ParamStore::param_ids`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub velocity: Vec<Tensor<f32>>,
}

impl Sgd {
    pub fn new(store: &ParamStore) -> Self {
        Self { velocity: store.param_ids().iter().map(|&id| Tensor::zeros(store.value(id).shape().to_vec())).collect() }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor<f32>)], hyper: SgdHyper) -> Result<()> {
        let ids = store.param_ids();
        if grads.len() != ids.len() || self.velocity.len() != ids.len() {
            return Err(Error::Validation(format!(
                "optimizer tracks {} parameters, got {} gradients for {}",
                self.velocity.len(),
                grads.len(),
                ids.len()
            )));
        }
        for ((&id, (gid, g)), v) in ids.iter().zip(grads).zip(&mut self.velocity) {
            if id != *gid || g.shape() != store.value(id).shape() {
                return Err(Error::Validation(format!("gradient for {} is misaligned", store.entry(id).name)));
            }
            sgd_step(store.value_mut(id).data_mut(), g.data(), v.data_mut(), hyper)?;
        }
        Ok(())
    }
}
