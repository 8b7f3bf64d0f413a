use super::{Op, Tape, Var};
use crate::tensor::{arg_err, shape_err, Scalar, Tensor, TensorError};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Per-channel running mean and variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub initialized: bool,
}

impl<T: Scalar> RunningStats<T> {
    /// Stats that must see a training batch before eval mode is allowed.
    pub fn uninitialized(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels], initialized: false }
    }

    /// Explicitly initialized to mean 0, variance 1.
    pub fn identity(channels: usize) -> Self {
        Self { initialized: true, ..Self::uninitialized(channels) }
    }
}

fn channel_sums(n: usize, c: usize, hw: usize, ch: usize, f: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for ni in 0..n {
        let base = (ni * c + ch) * hw;
        for i in base..base + hw {
            acc += f(i);
        }
    }
    acc
}

impl<T: Scalar> Tape<T> {
    /// Per-channel batch normalization followed by the affine `gamma·x̂ + beta`.
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: NormMode,
        epsilon: f64,
    ) -> Result<Var, TensorError> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let m = n * hw;
        if m == 0 {
            return Err(shape_err("batch_norm2d", "N·H·W must be at least 1"));
        }
        if epsilon <= 0.0 {
            return Err(arg_err("batch_norm2d", "epsilon must be positive"));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(shape_err("batch_norm2d", format!("{name} must have shape [{c}], got {:?}", self.shape(v))));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(shape_err("batch_norm2d", format!("running stats must have {c} channels")));
        }
        let xd = x.data();
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            NormMode::Train => (0..c)
                .map(|ch| {
                    let mu = channel_sums(n, c, hw, ch, |i| xd[i].to_f64_lossy()) / m as f64;
                    let var = channel_sums(n, c, hw, ch, |i| {
                        let d = xd[i].to_f64_lossy() - mu;
                        d * d
                    }) / m as f64;
                    (mu, var)
                })
                .unzip(),
            NormMode::Eval => {
                if !stats.initialized {
                    return Err(TensorError::UninitializedStats);
                }
                (
                    stats.mean.iter().map(|v| v.to_f64_lossy()).collect(),
                    stats.var.iter().map(|v| v.to_f64_lossy()).collect(),
                )
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![T::zero(); xd.len()];
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * hw;
                let scale = g[ch].to_f64_lossy() * inv_std[ch];
                let shift = b[ch].to_f64_lossy() - mean[ch] * scale;
                for i in base..base + hw {
                    out[i] = T::from_f64_lossy(xd[i].to_f64_lossy() * scale + shift);
                }
            }
        }

        if mode == NormMode::Train {
            let unbias = if m > 1 { m as f64 / (m as f64 - 1.0) } else { 1.0 };
            for ch in 0..c {
                let rm = stats.mean[ch].to_f64_lossy();
                let rv = stats.var[ch].to_f64_lossy();
                stats.mean[ch] = T::from_f64_lossy((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * mean[ch]);
                stats.var[ch] = T::from_f64_lossy((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * var[ch] * unbias);
            }
            stats.initialized = true;
        }

        let shape = x.shape().to_vec();
        self.push(
            "batch_norm2d",
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean: mean.into_iter().map(T::from_f64_lossy).collect(),
                inv_std: inv_std.into_iter().map(T::from_f64_lossy).collect(),
                batch_stats: mode == NormMode::Train,
            },
        )
    }
}

pub(super) fn batch_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    upstream: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    batch_stats: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = input.dims4().expect("batch norm input is rank 4");
    let hw = h * w;
    let m = (n * hw) as f64;
    let x = input.data();
    let dy = upstream.data();
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mu = mean[ch].to_f64_lossy();
        let istd = inv_std[ch].to_f64_lossy();
        let xhat = |i: usize| (x[i].to_f64_lossy() - mu) * istd;
        let sum_dy = channel_sums(n, c, hw, ch, |i| dy[i].to_f64_lossy());
        let sum_dy_xhat = channel_sums(n, c, hw, ch, |i| dy[i].to_f64_lossy() * xhat(i));
        dgamma[ch] = T::from_f64_lossy(sum_dy_xhat);
        dbeta[ch] = T::from_f64_lossy(sum_dy);
        let g = gamma.data()[ch].to_f64_lossy();
        for ni in 0..n {
            let base = (ni * c + ch) * hw;
            for i in base..base + hw {
                let d = if batch_stats {
                    g * istd / m * (m * dy[i].to_f64_lossy() - sum_dy - xhat(i) * sum_dy_xhat)
                } else {
                    g * istd * dy[i].to_f64_lossy()
                };
                dx[i] = T::from_f64_lossy(d);
            }
        }
    }
    let shape = input.shape().to_vec();
    (
        Tensor::new(shape, dx).expect("shape preserved"),
        Tensor::new([c], dgamma).expect("shape preserved"),
        Tensor::new([c], dbeta).expect("shape preserved"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(x: Tensor<f64>, gamma: f64, beta: f64, mode: NormMode, stats: &mut RunningStats<f64>) -> Result<Tensor<f64>, TensorError> {
        let c = x.shape()[1];
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::full([c], gamma));
        let b = tape.constant(Tensor::full([c], beta));
        let y = tape.batch_norm2d(xv, g, b, stats, mode, BN_EPSILON)?;
        Ok(tape.value(y).clone())
    }

    #[test]
    fn constant_input_normalizes_to_beta() {
        let mut stats = RunningStats::uninitialized(2);
        let y = run(Tensor::full([2, 2, 3, 3], 4.0), 1.0, 0.0, NormMode::Train, &mut stats).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = run(Tensor::full([2, 2, 3, 3], 4.0), 1.0, 3.0, NormMode::Train, &mut stats).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor::<f64>(&mut rng, &[4, 2, 5, 5]);
        let mut stats = RunningStats::uninitialized(2);
        let y = run(x, 1.0, 0.0, NormMode::Train, &mut stats).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|n| y.data()[(n * 2 + ch) * 25..(n * 2 + ch + 1) * 25].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut stats = RunningStats::uninitialized(1);
        let x = Tensor::new([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        run(x, 1.0, 0.0, NormMode::Train, &mut stats).unwrap();
        assert!((stats.mean[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((stats.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
        assert!(stats.initialized);
    }

    #[test]
    fn eval_requires_initialized_stats() {
        let mut stats = RunningStats::uninitialized(1);
        let err = run(Tensor::full([1, 1, 2, 2], 1.0), 1.0, 0.0, NormMode::Eval, &mut stats).unwrap_err();
        assert_eq!(err, TensorError::UninitializedStats);
        let mut stats = RunningStats::identity(1);
        let y = run(Tensor::full([1, 1, 2, 2], 2.0), 1.0, 0.0, NormMode::Eval, &mut stats).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.0 / (1.0 + BN_EPSILON).sqrt()).abs() < 1e-12));
    }

    #[test]
    fn gradients_match_finite_differences_in_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for mode in [NormMode::Train, NormMode::Eval] {
            let x = random_tensor::<f64>(&mut rng, &[3, 2, 4, 3]);
            let g = random_tensor::<f64>(&mut rng, &[2]);
            let b = random_tensor::<f64>(&mut rng, &[2]);
            let stats = RunningStats { mean: vec![0.1, -0.2], var: vec![0.8, 1.3], initialized: true };
            let report = check_gradients(&[x, g, b], |tape, v| {
                let mut s = stats.clone();
                tape.batch_norm2d(v[0], v[1], v[2], &mut s, mode, BN_EPSILON)
            });
            assert!(report.max_rel_error < 1e-4, "{mode:?}: {report:?}");
        }
    }
}
