//! Central finite-difference gradient checking, used by the test suites.
//! Runs in f64: 32-bit differences are too noisy for the 1e-4 tolerance.

use super::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error with a unit floor, so near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Builds the graph twice: once for tape gradients, then perturbs every input
/// element for central differences. Returns the worst relative error across
/// all inputs. `build` must map the leaf vars to a scalar loss var.
pub fn max_grad_check_err<F>(inputs: &[Tensor<f64>], step: f64, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> =
        inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let loss = build(&mut tape, &vars);
    assert_eq!(tape.value(loss).numel(), 1, "gradcheck loss must be scalar");
    tape.backward(loss).expect("backward failed in gradcheck");
    let analytic: Vec<Vec<f64>> =
        vars.iter().map(|&v| tape.grad(v).expect("input grad missing").to_vec()).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let l = build(&mut t, &vs);
        t.value(l).data()[0]
    };

    let mut worst = 0.0_f64;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let mut plus: Vec<Tensor<f64>> = inputs.to_vec();
            plus[i].data_mut()[j] += step;
            let mut minus: Vec<Tensor<f64>> = inputs.to_vec();
            minus[i].data_mut()[j] -= step;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}
