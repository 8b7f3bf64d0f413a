use super::{Op, Tape, Var};
use crate::parallel::for_each_chunk_mut;
use crate::tensor::{arg_err, gemm, shape_err, Scalar, Tensor, TensorError, Transpose};

/// Stride, zero padding and dilation shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self { stride: 1, padding: 0, dilation: 1 }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self { stride, padding, dilation }
    }

    /// Output extent along one axis, `None` when the kernel does not fit.
    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    p: Conv2dParams,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1×1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.p.stride == 1 && self.p.padding == 0
    }

    fn im2col<T: Scalar>(&self, input: &[T], cols: &mut [T]) {
        let (s, pad, d) = (self.p.stride as isize, self.p.padding as isize, self.p.dilation as isize);
        let (h, w) = (self.height as isize, self.width as isize);
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &input[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh as isize {
                for kj in 0..self.kw as isize {
                    let dst = &mut cols[row * self.out_pixels()..(row + 1) * self.out_pixels()];
                    for oy in 0..self.out_h {
                        let iy = oy as isize * s - pad + ki * d;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= h {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s - pad + kj * d;
                            *v = if ix >= 0 && ix < w { src[ix as usize] } else { T::zero() };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], out: &mut [T]) {
        let (s, pad, d) = (self.p.stride as isize, self.p.padding as isize, self.p.dilation as isize);
        let (h, w) = (self.height as isize, self.width as isize);
        out.fill(T::zero());
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut out[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh as isize {
                for kj in 0..self.kw as isize {
                    let src = &cols[row * self.out_pixels()..(row + 1) * self.out_pixels()];
                    for oy in 0..self.out_h {
                        let iy = oy as isize * s - pad + ki * d;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let dst = &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = ox as isize * s - pad + kj * d;
                            if ix >= 0 && ix < w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn geometry(input: &[usize], weight: &[usize], p: Conv2dParams) -> Result<(usize, usize, Geometry), TensorError> {
    let [n, c, h, w] = input[..] else {
        return Err(shape_err("conv2d", format!("input must be N×C×H×W, got {input:?}")));
    };
    let [f, wc, kh, kw] = weight[..] else {
        return Err(shape_err("conv2d", format!("weight must be F×C×kH×kW, got {weight:?}")));
    };
    if p.stride == 0 || p.dilation == 0 {
        return Err(arg_err("conv2d", "stride and dilation must be positive"));
    }
    if wc != c {
        return Err(shape_err("conv2d", format!("input has {c} channels but weight expects {wc}")));
    }
    if kh == 0 || kw == 0 {
        return Err(shape_err("conv2d", "kernel has a zero-size axis"));
    }
    let (Some(out_h), Some(out_w)) = (p.output_size(h, kh), p.output_size(w, kw)) else {
        return Err(shape_err(
            "conv2d",
            format!("{kh}×{kw} kernel (dilation {}) does not fit {h}×{w} input with padding {}", p.dilation, p.padding),
        ));
    };
    if n == 0 || f == 0 || out_h == 0 || out_w == 0 {
        return Err(shape_err("conv2d", "zero-size output"));
    }
    Ok((n, f, Geometry { channels: c, height: h, width: w, kh, kw, out_h, out_w, p }))
}

pub(super) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: Conv2dParams,
) -> Result<Tensor<T>, TensorError> {
    let (n, f, g) = geometry(input.shape(), weight.shape(), p)?;
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(shape_err("conv2d", format!("bias must have shape [{f}], got {:?}", b.shape())));
        }
    }
    let in_len = g.channels * g.height * g.width;
    let out_len = f * g.out_pixels();
    let mut out = vec![T::zero(); n * out_len];
    let x = input.data();
    let wt = weight.data();
    for_each_chunk_mut(&mut out, out_len, |i, dst| {
        let sample = &x[i * in_len..(i + 1) * in_len];
        if g.is_pointwise() {
            gemm(Transpose::No, Transpose::No, f, g.out_pixels(), g.col_rows(), T::one(), wt, sample, T::zero(), dst);
        } else {
            let mut cols = vec![T::zero(); g.col_rows() * g.out_pixels()];
            g.im2col(sample, &mut cols);
            gemm(Transpose::No, Transpose::No, f, g.out_pixels(), g.col_rows(), T::one(), wt, &cols, T::zero(), dst);
        }
        if let Some(b) = bias {
            for (plane, &bv) in dst.chunks_mut(g.out_pixels()).zip(b.data()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Tensor::new([n, f, g.out_h, g.out_w], out)
}

pub(super) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(super) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
    p: Conv2dParams,
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> Result<ConvGrads<T>, TensorError> {
    let (n, f, g) = geometry(input.shape(), weight.shape(), p)?;
    let in_len = g.channels * g.height * g.width;
    let out_len = f * g.out_pixels();
    let w_len = weight.numel();
    let x = input.data();
    let wt = weight.data();
    let dy = upstream.data();

    let input_grad = want_input.then(|| {
        let mut dx = vec![T::zero(); n * in_len];
        for_each_chunk_mut(&mut dx, in_len, |i, dst| {
            let dyi = &dy[i * out_len..(i + 1) * out_len];
            if g.is_pointwise() {
                gemm(Transpose::Yes, Transpose::No, g.col_rows(), g.out_pixels(), f, T::one(), wt, dyi, T::zero(), dst);
            } else {
                let mut dcols = vec![T::zero(); g.col_rows() * g.out_pixels()];
                gemm(Transpose::Yes, Transpose::No, g.col_rows(), g.out_pixels(), f, T::one(), wt, dyi, T::zero(), &mut dcols);
                g.col2im(&dcols, dst);
            }
        });
        dx
    });

    // Per-sample partials, summed in sample order so every thread count
    // yields the same bits.
    let weight_grad = want_weight.then(|| {
        let mut partials = vec![T::zero(); n * w_len];
        for_each_chunk_mut(&mut partials, w_len, |i, dst| {
            let sample = &x[i * in_len..(i + 1) * in_len];
            let dyi = &dy[i * out_len..(i + 1) * out_len];
            if g.is_pointwise() {
                gemm(Transpose::No, Transpose::Yes, f, g.col_rows(), g.out_pixels(), T::one(), dyi, sample, T::zero(), dst);
            } else {
                let mut cols = vec![T::zero(); g.col_rows() * g.out_pixels()];
                g.im2col(sample, &mut cols);
                gemm(Transpose::No, Transpose::Yes, f, g.col_rows(), g.out_pixels(), T::one(), dyi, &cols, T::zero(), dst);
            }
        });
        let mut total = partials[..w_len].to_vec();
        for part in partials.chunks(w_len).skip(1) {
            for (acc, &v) in total.iter_mut().zip(part) {
                *acc += v;
            }
        }
        total
    });

    let bias_grad = want_bias.then(|| {
        let mut db = vec![T::zero(); f];
        for sample in dy.chunks(out_len) {
            for (acc, plane) in db.iter_mut().zip(sample.chunks(g.out_pixels())) {
                *acc += plane.iter().copied().sum::<T>();
            }
        }
        db
    });

    Ok(ConvGrads {
        input: input_grad.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        weight: weight_grad.map(|d| Tensor::new(weight.shape().to_vec(), d)).transpose()?,
        bias: bias_grad.map(|d| Tensor::new([f], d)).transpose()?,
    })
}

impl<T: Scalar> Tape<T> {
    /// 2D cross-correlation of an N×C×H×W input with an F×C×kH×kW kernel.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, params: Conv2dParams) -> Result<Var, TensorError> {
        let out = conv2d_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)), params)?;
        self.push("conv2d", out, Op::Conv2d { input, weight, bias, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, random_tensor};
    use crate::autodiff::oracles::naive_conv2d;
    use crate::parallel::set_worker_threads;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stem_shape() {
        let x = Tensor::<f32>::zeros([1, 3, 96, 96]);
        let w = Tensor::<f32>::zeros([64, 3, 7, 7]);
        let y = conv2d_forward(&x, &w, None, Conv2dParams::new(2, 3, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 64, 48, 48]);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let x = Tensor::<f32>::from_fn([2, 1, 5, 4], |i| i as f32 * 0.5 - 3.0);
        let w = Tensor::<f32>::full([1, 1, 1, 1], 1.0);
        let y = conv2d_forward(&x, &w, None, Conv2dParams::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn constant_input_all_ones_kernel_sums_nine() {
        let x = Tensor::<f32>::full([1, 1, 6, 6], 5.0);
        let w = Tensor::<f32>::full([1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, None, Conv2dParams::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 45.0));
    }

    #[test]
    fn dilated_conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_tensor::<f64>(&mut rng, &[1, 2, 8, 8]);
        let w = random_tensor::<f64>(&mut rng, &[3, 2, 3, 3]);
        let p = Conv2dParams::new(1, 2, 2);
        let y = conv2d_forward(&x, &w, None, p).unwrap();
        assert_eq!(y.shape(), &[1, 3, 8, 8]);
        let want = naive_conv2d(&x, &w, None, p);
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn channel_mismatch_is_described() {
        let x = Tensor::<f32>::zeros([1, 3, 8, 8]);
        let w = Tensor::<f32>::zeros([4, 2, 3, 3]);
        let err = conv2d_forward(&x, &w, None, Conv2dParams::default()).unwrap_err();
        assert!(err.to_string().contains("3 channels"), "{err}");
    }

    #[test]
    fn kernel_larger_than_padded_input_errors() {
        let x = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros([1, 1, 5, 5]);
        assert!(conv2d_forward(&x, &w, None, Conv2dParams::default()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (stride, padding, dilation, k) in [(1, 1, 1, 3), (2, 3, 1, 7), (1, 2, 2, 3), (2, 1, 1, 3), (1, 0, 1, 1), (2, 0, 1, 1)] {
            let x = random_tensor::<f64>(&mut rng, &[2, 3, 7, 6]);
            let w = random_tensor::<f64>(&mut rng, &[4, 3, k, k]);
            let b = random_tensor::<f64>(&mut rng, &[4]);
            let p = Conv2dParams::new(stride, padding, dilation);
            let report = check_gradients(&[x, w, b], |tape, v| tape.conv2d(v[0], v[1], Some(v[2]), p));
            assert!(report.max_rel_error < 1e-4, "{p:?}: {report:?}");
        }
    }

    #[test]
    fn parallel_path_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor::<f32>(&mut rng, &[5, 3, 9, 9]);
        let w = random_tensor::<f32>(&mut rng, &[4, 3, 3, 3]);
        let dy = random_tensor::<f32>(&mut rng, &[5, 4, 9, 9]);
        let p = Conv2dParams::new(1, 1, 1);
        set_worker_threads(1);
        let y1 = conv2d_forward(&x, &w, None, p).unwrap();
        let g1 = conv2d_backward(&x, &w, &dy, p, true, true, true).unwrap();
        set_worker_threads(3);
        let y3 = conv2d_forward(&x, &w, None, p).unwrap();
        let g3 = conv2d_backward(&x, &w, &dy, p, true, true, true).unwrap();
        set_worker_threads(0);
        assert_eq!(y1, y3);
        assert_eq!(g1.input, g3.input);
        assert_eq!(g1.weight, g3.weight);
    }
}
