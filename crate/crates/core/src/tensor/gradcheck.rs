//! Central finite-difference checks of [`Graph::backward`].

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Finite-difference step used throughout the test suites.
pub const FD_STEP: f64 = 1e-5;

/// Entries whose analytic and numeric derivatives are both below this size,
/// times `max(1, |f|)`, are compared in absolute rather than relative terms.
/// Central differences lose about `eps * |f| / FD_STEP` to round-off, so the
/// floor grows with the magnitude of the function.
pub const REL_FLOOR: f64 = 1e-6;

/// Largest relative error between analytic and numeric gradients.
///
/// `f` builds a scalar from graph leaves holding `inputs`. Every `stride`-th
/// entry of every input is perturbed by `±FD_STEP`; the relative error of an
/// entry is `|a - n| / max(|a|, |n|, REL_FLOOR * max(1, |f|))`.
pub fn max_relative_error<F>(inputs: &[Tensor], stride: usize, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    let floor = REL_FLOOR * g.value(loss).item().abs().max(1.0);
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for i in (0..t.numel()).step_by(stride.max(1)) {
            let orig = t.data()[i];
            work[ti].data_mut()[i] = orig + FD_STEP;
            let up = eval(&work)?;
            work[ti].data_mut()[i] = orig - FD_STEP;
            let down = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[ti][i];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
