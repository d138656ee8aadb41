use super::array::Array;
use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Compares the analytic gradient of a scalar function against central
/// differences with step `h`.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |numeric_i|)`.
pub fn grad_check<F>(f: F, point: &Array, h: f64) -> Result<f64>
where
    F: Fn(&Graph, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("diffcore", format!("grad_check step must be positive, got {h}")));
    }
    let g = Graph::new();
    let x = g.leaf(point.clone());
    let y = f(&g, x)?;
    g.backward(y)?;
    let analytic = g.grad(x).unwrap_or_else(|| Array::zeros(point.shape()));

    let eval = |p: Array| -> Result<f64> {
        let g = Graph::new();
        let x = g.constant(p);
        let y = f(&g, x)?;
        let v = g.value(y);
        if !v.is_scalar() {
            return Err(Error::shape("grad_check", format!("function output {:?} is not scalar", v.shape())));
        }
        Ok(v.item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(Error::NonFinite {
                module: "diffcore",
                what: "gradient check".into(),
                index: i,
            });
        }
        worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}
