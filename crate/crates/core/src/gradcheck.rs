//! Central finite-difference gradient checking against the tape.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Builds the scalar `f(inputs)` on a fresh tape, backpropagates, and compares
/// each input's analytic gradient with central differences of step `h`.
///
/// Returns the worst relative error `‖g_a − g_n‖ / max(‖g_a‖, ‖g_n‖)` across
/// inputs (inputs whose gradients are both numerically zero count as 0).
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Shape("gradient check needs a scalar output".into()));
    }
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut values = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + h;
            let plus = eval(&values)?;
            values[i].data_mut()[j] = orig - h;
            let minus = eval(&values)?;
            values[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        }
    }
    Ok(worst)
}
