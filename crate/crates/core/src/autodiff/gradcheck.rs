use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::error::{LampError, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
///
/// `f` receives a fresh graph and the input leaf and returns the scalar
/// output. Returns `max_i |analytic_i - numeric_i| / (|analytic_i| + 1e-8)`
/// with `numeric_i = (f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(LampError::param("h", alloc::format!("step {} must be positive", h)));
    }
    let mut g = Graph::new();
    let x = g.leaf(point.clone(), true);
    let out = f(&mut g, x)?;
    g.backward(out)?;
    let analytic: Vec<f64> = match g.grad(x) {
        Some(gr) => gr.to_vec(),
        None => alloc::vec![0.0; point.len()],
    };

    let eval = |p: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(p, false);
        let out = f(&mut g, x)?;
        Ok(g.value(out).data()[0])
    };
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    Ok(max_relative_error(&analytic, &numeric))
}

/// `max_i |a_i - n_i| / (|a_i| + 1e-8)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max)
}
