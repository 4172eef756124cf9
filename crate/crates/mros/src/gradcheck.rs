//! Central finite-difference gradient checking harness.
//!
//! Test suites rebuild the forward pass through a user closure, perturb each
//! leaf element by ±step, and compare the numeric slope against the gradient
//! produced by [`Tape::backward`].

use crate::autodiff::{Tape, TensorId};
use crate::tensor::Tensor;

/// Outcome of a single gradient comparison.
#[derive(Debug)]
pub struct GradCheckFailure {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1.0, f64::max(a.abs(), n.abs()))
}

/// Runs `forward` once with gradients enabled to collect analytic gradients,
/// then estimates each partial derivative with a central difference of the
/// given step. Returns the first failure above `tol`, if any.
///
/// The closure must be a pure function of the leaf values: it receives a
/// fresh tape plus the leaves already registered on it, and returns the
/// scalar loss id.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    step: f64,
    tol: f64,
    forward: F,
) -> Result<(), GradCheckFailure>
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = forward(&mut tape, &ids);
        tape.value(loss).item().expect("loss must be scalar")
    };

    // analytic pass
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let loss = forward(&mut tape, &ids);
    tape.backward(loss).expect("backward failed in gradcheck");
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).expect("leaf missing grad").to_vec())
        .collect();

    let mut work: Vec<Tensor> = inputs.to_vec();
    for input in 0..inputs.len() {
        for element in 0..inputs[input].numel() {
            let original = work[input].data()[element];
            work[input].data_mut()[element] = original + step;
            let up = eval(&work);
            work[input].data_mut()[element] = original - step;
            let down = eval(&work);
            work[input].data_mut()[element] = original;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[input][element];
            let err = rel_error(a, numeric);
            if err >= tol {
                return Err(GradCheckFailure {
                    input,
                    element,
                    analytic: a,
                    numeric,
                    rel_error: err,
                });
            }
        }
    }
    Ok(())
}
