use super::{Op, Tape, Var};
use crate::tensor::{arg_err, shape_err, Scalar, Tensor, TensorError};

impl<T: Scalar> Tape<T> {
    /// Mean per-pixel binary cross entropy averaged over the C class
    /// channels: `(1/C)·Σ_c [−y_c·ln p_c − (1−y_c)·ln(1−p_c)]`, with `y` the
    /// one-hot expansion of `targets` and `p` clamped to `[eps, 1−eps]`.
    ///
    /// `targets` holds one class index per pixel in N×H×W order.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[u8], eps: f64) -> Result<Var, TensorError> {
        let p = self.value(probs);
        let (n, c, h, w) = p.dims4()?;
        let hw = h * w;
        if targets.len() != n * hw {
            return Err(shape_err(
                "cross_entropy",
                format!("{} targets for {n}×{h}×{w} pixels", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= c) {
            return Err(arg_err("cross_entropy", format!("label {bad} outside {c} classes")));
        }
        if !(0.0..0.5).contains(&eps) {
            return Err(arg_err("cross_entropy", "eps must lie in [0, 0.5)"));
        }
        let pd = p.data();
        let mut total = 0.0f64;
        for ni in 0..n {
            for px in 0..hw {
                let label = targets[ni * hw + px] as usize;
                for ch in 0..c {
                    let pv = pd[(ni * c + ch) * hw + px].to_f64_lossy().clamp(eps, 1.0 - eps);
                    total -= if ch == label { pv.ln() } else { (1.0 - pv).ln() };
                }
            }
        }
        let loss = total / (c * n * hw) as f64;
        self.push(
            "cross_entropy",
            Tensor::new([1], vec![T::from_f64_lossy(loss)])?,
            Op::CrossEntropy { probs, targets: targets.to_vec(), eps: T::from_f64_lossy(eps) },
        )
    }
}

pub(super) fn cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, targets: &[u8], eps: T, upstream: T) -> Tensor<T> {
    let (n, c, h, w) = probs.dims4().expect("probabilities are rank 4");
    let hw = h * w;
    let eps = eps.to_f64_lossy();
    let scale = upstream.to_f64_lossy() / (c * n * hw) as f64;
    let pd = probs.data();
    let mut grad = vec![T::zero(); pd.len()];
    for ni in 0..n {
        for px in 0..hw {
            let label = targets[ni * hw + px] as usize;
            for ch in 0..c {
                let i = (ni * c + ch) * hw + px;
                let pv = pd[i].to_f64_lossy();
                if pv < eps || pv > 1.0 - eps {
                    continue;
                }
                let d = if ch == label { -1.0 / pv } else { 1.0 / (1.0 - pv) };
                grad[i] = T::from_f64_lossy(d * scale);
            }
        }
    }
    Tensor::new(probs.shape().to_vec(), grad).expect("shape preserved")
}
