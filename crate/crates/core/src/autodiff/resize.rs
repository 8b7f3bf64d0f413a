use super::{Op, Tape, Var};
use crate::tensor::{arg_err, Scalar, Tensor, TensorError};

/// Source taps for one output coordinate under half-pixel centers:
/// `src = (dst + 0.5)·in/out − 0.5`, clamped to the border.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

/// Bilinear resampling of a single H×W plane into `out_h`×`out_w`.
pub(crate) fn resize_plane<T: Scalar>(src: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in &ty {
        let (r0, r1) = (&src[y.lo * w..(y.lo + 1) * w], &src[y.hi * w..(y.hi + 1) * w]);
        for x in &tx {
            let top = r0[x.lo].to_f64_lossy() * (1.0 - x.frac) + r0[x.hi].to_f64_lossy() * x.frac;
            let bot = r1[x.lo].to_f64_lossy() * (1.0 - x.frac) + r1[x.hi].to_f64_lossy() * x.frac;
            out.push(T::from_f64_lossy(top * (1.0 - y.frac) + bot * y.frac));
        }
    }
    out
}

impl<T: Scalar> Tape<T> {
    /// Bilinear upsampling by an integer factor.
    pub fn bilinear_upsample(&mut self, input: Var, factor: usize) -> Result<Var, TensorError> {
        if factor == 0 {
            return Err(arg_err("bilinear_upsample", "factor must be at least 1"));
        }
        let (_, _, h, w) = self.value(input).dims4()?;
        self.resize_bilinear(input, h * factor, w * factor)
    }

    /// Bilinear resampling to an explicit spatial size.
    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var, TensorError> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
            return Err(arg_err("resize_bilinear", "spatial sizes must be positive"));
        }
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for plane in x.data().chunks(h * w) {
            out.extend(resize_plane(plane, h, w, out_h, out_w));
        }
        self.push("resize_bilinear", Tensor::new([n, c, out_h, out_w], out)?, Op::Resize { input })
    }
}

pub(super) fn resize_backward<T: Scalar>(input_shape: &[usize], upstream: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (out_h, out_w) = (upstream.shape()[2], upstream.shape()[3]);
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut dx = vec![0.0f64; input_shape.iter().product()];
    for (plane, g) in dx.chunks_mut(h * w).zip(upstream.data().chunks(out_h * out_w)) {
        for (oy, y) in ty.iter().enumerate() {
            for (ox, x) in tx.iter().enumerate() {
                let gv = g[oy * out_w + ox].to_f64_lossy();
                plane[y.lo * w + x.lo] += gv * (1.0 - y.frac) * (1.0 - x.frac);
                plane[y.lo * w + x.hi] += gv * (1.0 - y.frac) * x.frac;
                plane[y.hi * w + x.lo] += gv * y.frac * (1.0 - x.frac);
                plane[y.hi * w + x.hi] += gv * y.frac * x.frac;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx.into_iter().map(T::from_f64_lossy).collect()).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn upsample(x: Tensor<f64>, factor: usize) -> Tensor<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let y = tape.bilinear_upsample(v, factor).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn half_pixel_row() {
        let y = upsample(Tensor::new([1, 1, 1, 2], vec![0.0, 1.0]).unwrap(), 2);
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(&y.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn constant_preserved_and_factor_one_is_identity() {
        let y = upsample(Tensor::full([1, 2, 3, 3], 2.5), 3);
        assert!(y.data().iter().all(|&v| v == 2.5));
        let x = Tensor::from_fn([1, 1, 3, 4], |i| (i as f64).sin());
        assert_eq!(upsample(x.clone(), 1), x);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_tensor::<f64>(&mut rng, &[2, 2, 3, 4]);
        for factor in [1, 2, 4] {
            let r = check_gradients(std::slice::from_ref(&x), |tape, v| tape.bilinear_upsample(v[0], factor));
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
        let r = check_gradients(&[x], |tape, v| tape.resize_bilinear(v[0], 5, 7));
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
