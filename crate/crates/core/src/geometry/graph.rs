//! Closed-form curvature of graph surfaces.

use super::fd;
use crate::error::{Error, Result};

/// `K = (f_uu f_vv − f_uv²) / (1 + f_u² + f_v²)²`.
pub fn graph_curvature_from_derivatives(grad: [f64; 2], hess: [[f64; 2]; 2]) -> f64 {
    let w = 1.0 + grad[0] * grad[0] + grad[1] * grad[1];
    (hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0]) / (w * w)
}

/// Gaussian curvature of the graph `(u, v, f(u, v))` at `p`, with first
/// derivatives at step `h_grad` and second derivatives at step `h_hess`.
pub fn graph_curvature<F: Fn(f64, f64) -> f64>(f: F, p: [f64; 2], h_grad: f64, h_hess: f64) -> Result<f64> {
    let grad = fd::gradient2(&f, p[0], p[1], h_grad);
    let hess = fd::hessian2(&f, p[0], p[1], h_hess);
    let k = graph_curvature_from_derivatives(grad, hess);
    if !k.is_finite() {
        return Err(Error::NonFinite(format!("graph curvature at {p:?}")));
    }
    Ok(k)
}

/// Intrinsic curvature `Σ_α det Hess f^α(p)` of the codimension-(D−2) graph
/// `(u, v, f¹, …, f^{D−2})` at a critical point of all components.
///
/// The total first derivative is measured and must be below `crit_tol`;
/// away from critical points the formula does not hold.
pub fn codim_graph_curvature<F: Fn(f64, f64) -> f64>(
    components: &[F],
    p: [f64; 2],
    h_grad: f64,
    h_hess: f64,
    crit_tol: f64,
) -> Result<f64> {
    let mut grad_sq = 0.0;
    let mut total = 0.0;
    for f in components {
        let g = fd::gradient2(f, p[0], p[1], h_grad);
        grad_sq += g[0] * g[0] + g[1] * g[1];
        let h = fd::hessian2(f, p[0], p[1], h_hess);
        total += h[0][0] * h[1][1] - h[0][1] * h[1][0];
    }
    let grad_norm = grad_sq.sqrt();
    if !(grad_norm <= crit_tol) {
        return Err(Error::Precondition {
            what: "total first derivative norm",
            value: grad_norm,
            tolerance: crit_tol,
        });
    }
    Ok(total)
}
