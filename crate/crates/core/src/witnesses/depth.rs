use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Box2;
use crate::attention::{attention_output, gated_output, logit_clamped, AttentionParams};
use crate::error::{Error, Result};
use crate::geometry::{fd, graph_curvature, FnEmbedding, Steps, CRITICAL_POINT_TOLERANCE};

/// Grid resolution used to verify the range constraint `0 < a_ℓ ψ < 1`.
const RANGE_GRID: usize = 21;

/// Scalar profile `ψ(u, v)` added by every layer of a depth stack.
#[derive(Clone)]
pub struct Psi {
    pub name: String,
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Psi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Psi({})", self.name)
    }
}

impl Psi {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// `offset + (u² + v²)/2`, with `det D²ψ(0) = 1`.
    pub fn bowl(offset: f64) -> Self {
        Self::new(format!("{offset}+(u^2+v^2)/2"), move |u, v| offset + 0.5 * (u * u + v * v))
    }

    /// `offset + uv`, with `det D²ψ(0) = −1`.
    pub fn saddle(offset: f64) -> Self {
        Self::new(format!("{offset}+uv"), move |u, v| offset + u * v)
    }

    pub fn constant(value: f64) -> Self {
        Self::new(format!("{value}"), move |_, _| value)
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        (self.f)(u, v)
    }

    pub fn gradient_at(&self, p: [f64; 2], h: f64) -> [f64; 2] {
        fd::gradient2(&|u, v| self.eval(u, v), p[0], p[1], h)
    }

    pub fn hessian_det_at(&self, p: [f64; 2], h: f64) -> f64 {
        let m = fd::hessian2(&|u, v| self.eval(u, v), p[0], p[1], h);
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

/// `L` literal gated-attention blocks on a single token, each adding
/// `a_ℓ ψ(u, v) c` to the graph coordinates through the residual stream.
///
/// State layout: `(u, v, f_1 … f_k, 1, 0 …)` where `k = c.len()` and the
/// coordinate after the graph block is a constant auxiliary feature. The
/// final projection keeps `(u, v, f_1 … f_k)` and zeroes the rest.
#[derive(Debug, Clone)]
pub struct DepthStack {
    pub coeffs: Vec<f64>,
    pub psi: Psi,
    pub direction: Vec<f64>,
    pub ambient: usize,
    pub domain: Box2,
}

impl DepthStack {
    /// Scalar stack (`c = (1)`), ambient dimension `D ≥ 4`.
    pub fn new(coeffs: Vec<f64>, psi: Psi, ambient: usize, domain: Box2) -> Result<Self> {
        Self::with_direction(coeffs, psi, vec![1.0], ambient, domain)
    }

    /// Vector-valued stack adding `a_ℓ ψ c` with `c ∈ R^k`, `D ≥ k + 3`.
    pub fn with_direction(coeffs: Vec<f64>, psi: Psi, direction: Vec<f64>, ambient: usize, domain: Box2) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Construction("a depth stack needs at least one layer".into()));
        }
        if direction.is_empty() || direction.iter().any(|c| !c.is_finite()) {
            return Err(Error::Construction("direction must be a non-empty finite vector".into()));
        }
        if ambient < direction.len() + 3 {
            return Err(Error::Construction(format!(
                "ambient dimension {ambient} is too small for {} graph coordinates plus an auxiliary one",
                direction.len()
            )));
        }
        if let Some((l, a)) = coeffs.iter().enumerate().find(|(_, a)| !(**a > 0.0)) {
            return Err(Error::Construction(format!("layer {l}: coefficient {a} must be positive")));
        }
        for p in domain.grid(RANGE_GRID) {
            let value = psi.eval(p[0], p[1]);
            for (l, a) in coeffs.iter().enumerate() {
                let g = a * value;
                if !(g > 0.0 && g < 1.0) {
                    return Err(Error::Construction(format!(
                        "layer {l}: a·ψ = {g} at {p:?} violates 0 < a·ψ < 1"
                    )));
                }
            }
        }
        Ok(Self {
            coeffs,
            psi,
            direction,
            ambient,
            domain,
        })
    }

    pub fn layers(&self) -> usize {
        self.coeffs.len()
    }

    /// `A_L = Σ a_ℓ`.
    pub fn total_coefficient(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    fn aux(&self) -> usize {
        2 + self.direction.len()
    }

    /// Single-token block whose value/output map copies the auxiliary
    /// coordinate onto `c` in the graph coordinates.
    pub fn block_attention(&self) -> AttentionParams {
        let mut params = AttentionParams::zeros(self.ambient);
        for (k, c) in self.direction.iter().enumerate() {
            params.w_v[(self.aux(), 2 + k)] = *c;
        }
        params.w_o = DMatrix::identity(self.ambient, self.ambient);
        params
    }

    pub fn initial_state(&self, u: f64, v: f64) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(1, self.ambient);
        h[(0, 0)] = u;
        h[(0, 1)] = v;
        h[(0, self.aux())] = 1.0;
        h
    }

    /// Gating input `X_g^(ℓ)`: `σ⁻¹(a_ℓ ψ)` on the graph coordinates, zero
    /// elsewhere.
    pub fn gate_input(&self, layer: usize, u: f64, v: f64) -> Result<DMatrix<f64>> {
        let g = self.coeffs[layer] * self.psi.eval(u, v);
        let (z, clamped) = logit_clamped(g);
        if clamped || !z.is_finite() {
            return Err(Error::Construction(format!(
                "layer {layer}: gate value a·ψ = {g} at ({u}, {v}) is outside (0, 1)"
            )));
        }
        let mut x = DMatrix::zeros(1, self.ambient);
        for k in 0..self.direction.len() {
            x[(0, 2 + k)] = z;
        }
        Ok(x)
    }

    /// `σ(X_g^(ℓ) W_θ^(ℓ))` with `W_θ^(ℓ) = I`.
    pub fn gate_vector(&self, layer: usize, u: f64, v: f64) -> Result<DVector<f64>> {
        Ok(self.gate_input(layer, u, v)?.map(crate::attention::sigmoid).row(0).transpose())
    }

    /// Residual state after all layers, before the projection.
    pub fn hidden(&self, u: f64, v: f64) -> Result<DMatrix<f64>> {
        let attention = self.block_attention();
        let w_theta = DMatrix::identity(self.ambient, self.ambient);
        let mut h = self.initial_state(u, v);
        for layer in 0..self.layers() {
            let y = attention_output(&h, &attention)?;
            let gated = gated_output(&y, &self.gate_input(layer, u, v)?, &w_theta)?;
            h += gated;
        }
        Ok(h)
    }

    /// `F_L(u, v) = P h^(L)`.
    pub fn forward(&self, u: f64, v: f64) -> Result<DVector<f64>> {
        let h = self.hidden(u, v)?;
        let keep = self.aux();
        Ok(DVector::from_fn(self.ambient, |i, _| if i < keep { h[(0, i)] } else { 0.0 }))
    }

    /// `(u, v, A_L ψ c, 0, …)` evaluated directly.
    pub fn normal_form(&self, u: f64, v: f64) -> DVector<f64> {
        let f = self.total_coefficient() * self.psi.eval(u, v);
        let mut out = DVector::zeros(self.ambient);
        out[0] = u;
        out[1] = v;
        for (k, c) in self.direction.iter().enumerate() {
            out[2 + k] = f * c;
        }
        out
    }

    pub fn embedding(&self) -> FnEmbedding {
        let stack = self.clone();
        let dom = self.domain;
        let ambient = self.ambient;
        FnEmbedding::new(2, ambient, move |p| {
            stack
                .forward(p[0], p[1])
                .unwrap_or_else(|_| DVector::from_element(ambient, f64::NAN))
        })
        .with_domain(move |p| dom.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthScanRow {
    pub layers: usize,
    pub total_coefficient: f64,
    pub k_measured: f64,
    pub k_predicted: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthScan {
    pub rows: Vec<DepthScanRow>,
    /// Least-squares slope of `ln |K|` against `ln L`; present when at least
    /// two distinct depths were scanned and all curvatures share a sign.
    pub log_log_slope: Option<f64>,
}

/// Builds stacks with `a_ℓ = a₀` for each `L` and measures the graph
/// curvature of the realized third coordinate at the origin.
pub fn depth_curvature_scan(psi: &Psi, a0: f64, l_values: &[usize], domain: Box2, ambient: usize) -> Result<DepthScan> {
    let steps = Steps::default();
    let origin = [0.0, 0.0];
    let grad = psi.gradient_at(origin, steps.jacobian);
    let grad_norm = grad[0].hypot(grad[1]);
    if !(grad_norm <= CRITICAL_POINT_TOLERANCE) {
        return Err(Error::Precondition {
            what: "gradient norm of psi at the origin",
            value: grad_norm,
            tolerance: CRITICAL_POINT_TOLERANCE,
        });
    }
    let det = psi.hessian_det_at(origin, steps.hessian);
    let mut rows = Vec::with_capacity(l_values.len());
    for &layers in l_values {
        let stack = DepthStack::new(vec![a0; layers], psi.clone(), ambient, domain)?;
        let f = |u: f64, v: f64| stack.forward(u, v).map_or(f64::NAN, |x| x[2]);
        let k_measured = graph_curvature(f, origin, steps.jacobian, steps.hessian)?;
        let a = stack.total_coefficient();
        let k_predicted = a * a * det;
        rows.push(DepthScanRow {
            layers,
            total_coefficient: a,
            k_measured,
            k_predicted,
            relative_gap: (k_measured - k_predicted).abs() / k_predicted.abs(),
        });
    }
    Ok(DepthScan {
        log_log_slope: log_log_slope(&rows),
        rows,
    })
}

fn log_log_slope(rows: &[DepthScanRow]) -> Option<f64> {
    let same_sign = rows.iter().all(|r| r.k_measured > 0.0) || rows.iter().all(|r| r.k_measured < 0.0);
    if rows.len() < 2 || !same_sign {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.layers as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.k_measured.abs().ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}
