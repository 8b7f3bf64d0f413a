//! Central finite-difference gradient checking on the f64 path.

use rand::Rng;

use super::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-3;

/// Gradient magnitudes below this floor are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    /// Max over all input elements of `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Uniform values in [−1, 1).
pub fn random_tensor<T: crate::tensor::Scalar>(rng: &mut impl Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
}

fn projected_loss<F>(tape: &mut Tape<f64>, inputs: &[Var], build: &F) -> Result<Var, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let out = build(tape, inputs)?;
    if tape.value(out).is_scalar() {
        return Ok(out);
    }
    // A fixed pseudo-random projection makes every output element matter
    // with a distinct weight.
    let shape = tape.shape(out).to_vec();
    let proj = Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * 0.754_877_666).sin() + 0.1);
    let proj = tape.constant(proj);
    let weighted = tape.mul(out, proj)?;
    tape.sum(weighted)
}

/// Compares analytic gradients of `build` w.r.t. each input against
/// central differences. Non-scalar outputs are reduced with a fixed
/// weighting before differentiation.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], build: F) -> GradReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = projected_loss(&mut tape, &vars, &build).expect("forward failed during gradient check");
        tape.value(loss).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = projected_loss(&mut tape, &vars, &build).expect("forward failed during gradient check");
    tape.backward(loss).expect("backward failed during gradient check");
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut work = inputs.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..work[t].numel() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + FD_STEP;
            let plus = eval(&work);
            work[t].data_mut()[i] = orig - FD_STEP;
            let minus = eval(&work);
            work[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad.data()[i];
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            max_rel_error = max_rel_error.max((a - numeric).abs() / denom);
            checked += 1;
        }
    }
    GradReport { max_rel_error, checked }
}
