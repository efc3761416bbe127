use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fd, AffineEmbedding, DerivativeMode, EmbeddingMap, FnEmbedding, MetricField, Steps};

/// Coordinates with `|Y_j(φ₀)|` at or below this count as zero.
const SUPPORT_TOLERANCE: f64 = 1e-12;

/// Gated mean `μ(φ) = Y(φ) ⊙ g(φ)` with affine values and an arbitrary gate.
#[derive(Debug, Clone)]
pub struct GatedMap {
    pub values: AffineEmbedding,
    pub gate: FnEmbedding,
}

impl GatedMap {
    pub fn new(values: AffineEmbedding, gate: FnEmbedding) -> Result<Self> {
        if gate.ambient_dim() != values.ambient_dim() || gate.domain_dim() != values.domain_dim() {
            return Err(Error::Dimension {
                expected: values.ambient_dim(),
                got: gate.ambient_dim(),
            });
        }
        Ok(Self { values, gate })
    }
}

impl EmbeddingMap for GatedMap {
    fn domain_dim(&self) -> usize {
        self.values.domain_dim()
    }
    fn ambient_dim(&self) -> usize {
        self.values.ambient_dim()
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        self.values.evaluate(p).component_mul(&self.gate.evaluate(p))
    }
    fn contains(&self, p: &[f64]) -> bool {
        self.gate.contains(p)
    }
    fn analytic_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let dg = self.gate.analytic_jacobian(p)?;
        let g = self.gate.evaluate(p);
        let y = self.values.evaluate(p);
        let b = &self.values.linear;
        Some(DMatrix::from_fn(y.len(), p.len(), |m, i| b[(m, i)] * g[m] + y[m] * dg[(m, i)]))
    }
}

/// C² cut-off of the radius: `1` on `[0, r/2]`, `0` beyond `r`, quintic
/// smoothstep in between.
pub fn bump(rho: f64, r: f64) -> f64 {
    let t = ((rho - 0.5 * r) / (0.5 * r)).clamp(0.0, 1.0);
    1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

/// Unit vector supported on `support` and orthogonal to every column of
/// `jac`. The tangent columns restricted to the support are orthonormalized
/// and the standard basis vector with the largest orthogonal residual is
/// projected and normalized.
pub fn tangent_normal(jac: &DMatrix<f64>, support: &[usize]) -> Result<DVector<f64>> {
    let k = support.len();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for c in 0..jac.ncols() {
        let mut t = DVector::from_fn(k, |i, _| jac[(support[i], c)]);
        // two Gram–Schmidt passes
        for _ in 0..2 {
            for q in &basis {
                t -= q * q.dot(&t);
            }
        }
        let norm = t.norm();
        if norm > 1e-10 {
            basis.push(t / norm);
        }
    }
    let mut best: Option<DVector<f64>> = None;
    for j in 0..k {
        let mut e = DVector::zeros(k);
        e[j] = 1.0;
        for _ in 0..2 {
            for q in &basis {
                e -= q * q.dot(&e);
            }
        }
        if best.as_ref().is_none_or(|b| e.norm() > b.norm()) {
            best = Some(e);
        }
    }
    let c = best.filter(|b| b.norm() > 1e-8).ok_or_else(|| {
        Error::Construction("no admissible normal direction: the support lies inside the tangent space".into())
    })?;
    let c = &c / c.norm();
    let mut n = DVector::zeros(jac.nrows());
    for (i, &j) in support.iter().enumerate() {
        n[j] = c[i];
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub point: [f64; 2],
    pub support: Vec<usize>,
    pub normal: Vec<f64>,
    /// `R_{1212}` of the unperturbed map.
    pub base_r: f64,
    /// `B_11 + B_22` along the normal.
    pub expected_linear: f64,
    pub epsilons: Vec<f64>,
    pub measured: Vec<f64>,
    /// `[c₀, c₁, c₂]` of the least-squares fit `c₀ + c₁ε + c₂ε²`.
    pub coefficients: [f64; 3],
    pub max_residual: f64,
}

/// Perturbs the gate by `h_ε = χ q_ε n ⊘ Y` on the support of `Y(φ₀)`, so
/// that `μ̃_ε = μ + χ q_ε n` with `q_ε = (ε/2)‖φ − φ₀‖²`, measures
/// `R̃_{1212}(ε)` with the curvature pipeline and fits a quadratic in `ε`.
pub fn perturbation_polynomial_check(base: &GatedMap, phi0: [f64; 2], radius: f64, epsilons: &[f64]) -> Result<PerturbationReport> {
    if base.domain_dim() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: base.domain_dim(),
        });
    }
    if epsilons.len() < 3 {
        return Err(Error::Config("the quadratic fit needs at least three epsilon values".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Config(format!("cut-off radius must be positive, got {radius}")));
    }
    let y0 = base.values.evaluate(&phi0);
    let support: Vec<usize> = (0..y0.len()).filter(|&j| y0[j].abs() > SUPPORT_TOLERANCE).collect();
    if support.len() < 3 {
        return Err(Error::Construction(format!(
            "Y(φ₀) has {} nonzero coordinates, at least 3 are needed",
            support.len()
        )));
    }
    // the cut-off support must stay inside the domain with Y nonzero on the support
    for k in 0..64 {
        let t = std::f64::consts::TAU * k as f64 / 64.0;
        for s in [0.5, 1.0] {
            let p = [phi0[0] + s * radius * t.cos(), phi0[1] + s * radius * t.sin()];
            let y = base.values.evaluate(&p);
            if !base.contains(&p) || support.iter().any(|&j| y[j] == 0.0 || y[j].signum() != y0[j].signum()) {
                return Err(Error::Construction(format!(
                    "cut-off radius {radius} leaves the admissible neighborhood at {p:?}"
                )));
            }
        }
    }

    let steps = Steps::default();
    let field = MetricField::euclidean(base.clone()).with_mode(DerivativeMode::CentralDifference);
    let jac = field.jacobian_at(&phi0)?;
    let normal = tangent_normal(&jac, &support)?;
    let base_r = field.riemann_at(&phi0)?.get(0, 1, 0, 1);
    let hess = fd::hessian(base, &phi0, steps.hessian)?;
    let b = |i: usize| (0..normal.len()).map(|m| normal[m] * hess[m][(i, i)]).sum::<f64>();
    let expected_linear = b(0) + b(1);

    let mut measured = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let perturbed = perturbed_gate(base, phi0, radius, eps, &normal, &support);
        let map = GatedMap::new(base.values.clone(), perturbed)?;
        let field = MetricField::euclidean(map).with_mode(DerivativeMode::CentralDifference);
        measured.push(field.riemann_at(&phi0)?.get(0, 1, 0, 1));
    }

    let design = DMatrix::from_fn(epsilons.len(), 3, |i, j| epsilons[i].powi(j as i32));
    let rhs = DVector::from_column_slice(&measured);
    let fit = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Construction(format!("quadratic fit failed: {e}")))?;
    let max_residual = (&design * &fit - &rhs).amax();
    Ok(PerturbationReport {
        point: phi0,
        support,
        normal: normal.iter().copied().collect(),
        base_r,
        expected_linear,
        epsilons: epsilons.to_vec(),
        measured,
        coefficients: [fit[0], fit[1], fit[2]],
        max_residual,
    })
}

fn perturbed_gate(base: &GatedMap, phi0: [f64; 2], radius: f64, eps: f64, normal: &DVector<f64>, support: &[usize]) -> FnEmbedding {
    let gate = base.gate.clone();
    let values = base.values.clone();
    let normal = normal.clone();
    let support = support.to_vec();
    let dom = base.gate.clone();
    let dim = base.ambient_dim();
    FnEmbedding::new(2, dim, move |p| {
        let mut g = gate.evaluate(p);
        let dx = p[0] - phi0[0];
        let dy = p[1] - phi0[1];
        let r2 = dx * dx + dy * dy;
        let weight = bump(r2.sqrt(), radius) * 0.5 * eps * r2;
        if weight != 0.0 {
            let y = values.evaluate(p);
            for &j in &support {
                g[j] += weight * normal[j] / y[j];
            }
        }
        g
    })
    .with_domain(move |p| dom.contains(p))
}
