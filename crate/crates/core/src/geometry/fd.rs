//! Central-difference derivative stencils.

use nalgebra::{DMatrix, DVector};

use super::EmbeddingMap;
use crate::error::{Error, Result};

fn shifted(p: &[f64], axis: usize, delta: f64) -> Vec<f64> {
    let mut q = p.to_vec();
    q[axis] += delta;
    q
}

fn checked_eval<E: EmbeddingMap + ?Sized>(map: &E, q: &[f64]) -> Result<DVector<f64>> {
    if !map.contains(q) {
        return Err(Error::domain(q, "finite-difference stencil leaves the domain"));
    }
    let y = map.evaluate(q);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(q, "embedding returned a non-finite value"));
    }
    Ok(y)
}

/// D × d Jacobian by central differences with step `h`.
pub fn jacobian<E: EmbeddingMap + ?Sized>(map: &E, p: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let d = map.domain_dim();
    let mut jac = DMatrix::zeros(map.ambient_dim(), d);
    for j in 0..d {
        let plus = checked_eval(map, &shifted(p, j, h))?;
        let minus = checked_eval(map, &shifted(p, j, -h))?;
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}

/// Second derivatives of every ambient coordinate, one d × d matrix per
/// coordinate, by central differences with step `h`.
pub fn hessian<E: EmbeddingMap + ?Sized>(map: &E, p: &[f64], h: f64) -> Result<Vec<DMatrix<f64>>> {
    let d = map.domain_dim();
    let big_d = map.ambient_dim();
    let mut out = vec![DMatrix::zeros(d, d); big_d];
    let center = checked_eval(map, p)?;
    for i in 0..d {
        let plus = checked_eval(map, &shifted(p, i, h))?;
        let minus = checked_eval(map, &shifted(p, i, -h))?;
        let second = (plus - 2.0 * &center + minus) / (h * h);
        for (m, hm) in out.iter_mut().enumerate() {
            hm[(i, i)] = second[m];
        }
        for j in (i + 1)..d {
            let mut q = p.to_vec();
            let mut corner = |si: f64, sj: f64| -> Result<DVector<f64>> {
                q.copy_from_slice(p);
                q[i] += si * h;
                q[j] += sj * h;
                checked_eval(map, &q)
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            let mixed = (pp - pm - mp + mm) / (4.0 * h * h);
            for (m, hm) in out.iter_mut().enumerate() {
                hm[(i, j)] = mixed[m];
                hm[(j, i)] = mixed[m];
            }
        }
    }
    Ok(out)
}

/// Gradient of a scalar function of two variables.
pub fn gradient2<F: Fn(f64, f64) -> f64>(f: &F, u: f64, v: f64, h: f64) -> [f64; 2] {
    [
        (f(u + h, v) - f(u - h, v)) / (2.0 * h),
        (f(u, v + h) - f(u, v - h)) / (2.0 * h),
    ]
}

/// Hessian `[[f_uu, f_uv], [f_uv, f_vv]]` of a scalar function of two variables.
pub fn hessian2<F: Fn(f64, f64) -> f64>(f: &F, u: f64, v: f64, h: f64) -> [[f64; 2]; 2] {
    let f0 = f(u, v);
    let fuu = (f(u + h, v) - 2.0 * f0 + f(u - h, v)) / (h * h);
    let fvv = (f(u, v + h) - 2.0 * f0 + f(u, v - h)) / (h * h);
    let fuv = (f(u + h, v + h) - f(u + h, v - h) - f(u - h, v + h) + f(u - h, v - h)) / (4.0 * h * h);
    [[fuu, fuv], [fuv, fvv]]
}
