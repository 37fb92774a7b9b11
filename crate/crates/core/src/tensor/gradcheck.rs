//! Central finite-difference oracle used by the gradient tests.

use super::{Tape, Tensor, Var};
use crate::rng::Stream;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_tensor(shape: &[usize], rng: &mut Stream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect()).unwrap()
}

/// Checks analytic gradients of `f` at `inputs` against central differences.
///
/// `f` builds a scalar on a fresh tape from leaf vars in the same order as
/// `inputs`. Returns the largest relative error seen.
pub fn max_gradient_error<F>(inputs: &[Tensor], h: f64, floor: f64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let eval = |perturbed: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for j in 0..work[i].numel() {
            let orig = work[i].data[j];
            work[i].data[j] = orig + h;
            let plus = eval(&work);
            work[i].data[j] = orig - h;
            let minus = eval(&work);
            work[i].data[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(rel_err(grads[j], numeric, floor));
        }
    }
    worst
}
