//! Builds a small expression on the autodiff tape, backpropagates it and
//! checks the gradient against central differences.
//!
//! cargo run --release --example autodiff

use stylefield::diffcore::{grad_check, Array, Graph};

fn main() -> stylefield::Result<()> {
    // f(x) = Σ softplus(W·x)²
    let w = Array::from_rows(&[&[0.5, -1.0, 2.0], &[1.5, 0.25, -0.75]])?;
    let x0 = Array::new(&[3, 1], vec![0.3, -0.2, 0.9])?;
    let f = |g: &Graph, x| {
        let h = g.matmul(g.constant(w.clone()), x)?;
        let s = g.softplus(h);
        Ok(g.sum(g.mul(s, s)?))
    };

    let g = Graph::new();
    let x = g.leaf(x0.clone());
    let y = f(&g, x)?;
    g.backward(y)?;
    println!("f(x0)  = {:.6}", g.item(y));
    println!("df/dx  = {:?}", g.grad(x).expect("leaf gradient").data());

    let err = grad_check(f, &x0, 1e-5)?;
    println!("max relative error vs central differences: {err:.2e}");
    Ok(())
}
