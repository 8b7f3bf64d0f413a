use super::{Op, Tape, Var};
use crate::tensor::{arg_err, shape_err, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Mean over the full spatial extent; kernel and stride are ignored.
    GlobalAvg,
}

impl<T: Scalar> Tape<T> {
    pub fn pool2d(&mut self, input: Var, kind: PoolKind, kernel: usize, stride: usize) -> Result<Var, TensorError> {
        match kind {
            PoolKind::Max => self.max_pool2d(input, kernel, stride, 0),
            PoolKind::GlobalAvg => self.global_avg_pool(input),
        }
    }

    /// Max pooling with implicit −∞ padding. Ties go to the lowest linear
    /// input index, which then receives the whole gradient.
    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var, TensorError> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        if kernel == 0 || stride == 0 {
            return Err(arg_err("max_pool2d", "kernel and stride must be positive"));
        }
        if padding * 2 > kernel {
            return Err(arg_err("max_pool2d", "padding may be at most half the kernel"));
        }
        if kernel > h + 2 * padding || kernel > w + 2 * padding {
            return Err(shape_err("max_pool2d", format!("kernel {kernel} exceeds padded {h}×{w} input")));
        }
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<(usize, T)> = None;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if best.is_none_or(|(_, v)| xd[idx] > v) {
                                best = Some((idx, xd[idx]));
                            }
                        }
                    }
                    let (idx, v) = best.expect("window overlaps the input");
                    out.push(v);
                    argmax.push(idx as u32);
                }
            }
        }
        self.push("max_pool2d", Tensor::new([n, c, oh, ow], out)?, Op::MaxPool { input, argmax })
    }

    /// N×C×H×W → N×C×1×1 spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var, TensorError> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        if hw == 0 {
            return Err(shape_err("global_avg_pool", "empty spatial extent"));
        }
        let out: Vec<T> = x
            .data()
            .chunks(hw)
            .map(|plane| T::from_f64_lossy(plane.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / hw as f64))
            .collect();
        self.push("global_avg_pool", Tensor::new([n, c, 1, 1], out)?, Op::GlobalAvgPool { input })
    }
}

pub(super) fn max_pool_backward<T: Scalar>(input_shape: &[usize], argmax: &[u32], upstream: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(upstream.data()) {
        d[idx as usize] += g;
    }
    dx
}

pub(super) fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], upstream: &Tensor<T>) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let scale = T::from_f64_lossy(1.0 / hw as f64);
    let mut dx = Tensor::zeros(input_shape.to_vec());
    for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(upstream.data()) {
        plane.fill(g * scale);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn global_avg_of_constant() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full([2, 3, 4, 5], 7.0));
        let y = tape.pool2d(x, PoolKind::GlobalAvg, 0, 0).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 1, 1]);
        assert!(tape.value(y).data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn max_pool_forward_and_argmax_routing() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let y = tape.pool2d(x, PoolKind::Max, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_route_to_lowest_index() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full([1, 1, 2, 2], 1.0), true);
        let y = tape.max_pool2d(x, 2, 2, 0).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn resnet_style_padded_pool_halves() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 1, 96, 96]));
        let y = tape.max_pool2d(x, 3, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 48, 48]);
    }

    #[test]
    fn oversized_kernel_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 1, 2, 2]));
        assert!(tape.pool2d(x, PoolKind::Max, 3, 1).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // Distinct, well-separated values keep the argmax stable under ±h.
        let mut vals: Vec<f64> = (0..2 * 3 * 6 * 6).map(|i| i as f64 * 0.05).collect();
        vals.shuffle(&mut rng);
        let x = Tensor::new([2, 3, 6, 6], vals).unwrap();
        for (k, s, p) in [(2, 2, 0), (3, 2, 1), (3, 1, 1)] {
            let r = check_gradients(std::slice::from_ref(&x), |tape, v| tape.max_pool2d(v[0], k, s, p));
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
        let r = check_gradients(&[x], |tape, v| tape.global_avg_pool(v[0]));
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
