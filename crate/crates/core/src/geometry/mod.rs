//! Induced Fisher–Rao geometry of Gaussian location families.
//!
//! A mean map `μ: U ⊂ R^d → R^D` together with a fixed diagonal precision
//! `P = Σ⁻¹` induces the pullback metric `g = Jᵀ P J` on the parameter domain.
//! [`MetricField`] computes that metric, its Levi-Civita connection and the
//! lowered Riemann tensor numerically. Derivatives of the metric and of the
//! connection always use central differences; the Jacobian of `μ` itself is
//! taken analytically when the map provides it.
//!
//! Sign convention: `R^k_{lij} = ∂_i Γ^k_{lj} − ∂_j Γ^k_{li} + Γ^k_{im}Γ^m_{lj} − Γ^k_{jm}Γ^m_{li}`,
//! lowered on the first index, so that the unit sphere has `R_{1212} = det g`
//! and Gaussian curvature `+1`.

pub mod fd;
mod graph;
mod maps;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use graph::{codim_graph_curvature, graph_curvature, graph_curvature_from_derivatives};
pub use maps::{
    gated_second_derivative, whiten, AffineEmbedding, FnEmbedding, Reparameterized, Whitened,
    WithConstantCoords,
};

/// Default regularity threshold on `det g`.
pub const REGULARITY_THRESHOLD: f64 = 1e-8;
/// Default tolerance on the total first derivative at a critical point.
pub const CRITICAL_POINT_TOLERANCE: f64 = 1e-6;

/// A point of the parameter chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint(Vec<f64>);

impl ParamPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Dimension { expected: 1, got: 0 });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("parameter point {coords:?}")));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for ParamPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A smooth map from a parameter chart into ambient space.
///
/// `evaluate` must be deterministic. Implementors that know their derivatives
/// in closed form override `analytic_jacobian` / `analytic_hessian`; those
/// are expected to agree with central differences up to `O(h²)`.
pub trait EmbeddingMap: Send + Sync {
    fn domain_dim(&self) -> usize;
    fn ambient_dim(&self) -> usize;
    fn evaluate(&self, p: &[f64]) -> DVector<f64>;

    /// Whether `p` lies in the open domain of the map.
    fn contains(&self, _p: &[f64]) -> bool {
        true
    }

    fn analytic_jacobian(&self, _p: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// One `d × d` matrix per ambient coordinate.
    fn analytic_hessian(&self, _p: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        None
    }
}

impl<E: EmbeddingMap + ?Sized> EmbeddingMap for &E {
    fn domain_dim(&self) -> usize {
        (**self).domain_dim()
    }
    fn ambient_dim(&self) -> usize {
        (**self).ambient_dim()
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        (**self).evaluate(p)
    }
    fn contains(&self, p: &[f64]) -> bool {
        (**self).contains(p)
    }
    fn analytic_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        (**self).analytic_jacobian(p)
    }
    fn analytic_hessian(&self, p: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        (**self).analytic_hessian(p)
    }
}

impl<E: EmbeddingMap + ?Sized> EmbeddingMap for Box<E> {
    fn domain_dim(&self) -> usize {
        (**self).domain_dim()
    }
    fn ambient_dim(&self) -> usize {
        (**self).ambient_dim()
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        (**self).evaluate(p)
    }
    fn contains(&self, p: &[f64]) -> bool {
        (**self).contains(p)
    }
    fn analytic_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        (**self).analytic_jacobian(p)
    }
    fn analytic_hessian(&self, p: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        (**self).analytic_hessian(p)
    }
}

impl<E: EmbeddingMap + ?Sized> EmbeddingMap for Arc<E> {
    fn domain_dim(&self) -> usize {
        (**self).domain_dim()
    }
    fn ambient_dim(&self) -> usize {
        (**self).ambient_dim()
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        (**self).evaluate(p)
    }
    fn contains(&self, p: &[f64]) -> bool {
        (**self).contains(p)
    }
    fn analytic_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        (**self).analytic_jacobian(p)
    }
    fn analytic_hessian(&self, p: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        (**self).analytic_hessian(p)
    }
}

/// Finite-difference step sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steps {
    pub jacobian: f64,
    pub hessian: f64,
    pub metric: f64,
    pub christoffel: f64,
}

impl Default for Steps {
    fn default() -> Self {
        Self {
            jacobian: 1e-5,
            hessian: 1e-4,
            metric: 1e-4,
            christoffel: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativeMode {
    /// Use the map's closed-form derivative when it has one.
    #[default]
    PreferAnalytic,
    CentralDifference,
}

/// Diagonal precision (inverse covariance) of the Gaussian location family.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionSpec {
    diag: DVector<f64>,
}

impl PrecisionSpec {
    pub fn identity(dim: usize) -> Self {
        Self {
            diag: DVector::from_element(dim, 1.0),
        }
    }

    pub fn diagonal(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("precision needs at least one entry".into()));
        }
        if let Some(bad) = entries.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::Config(format!("precision entries must be positive, got {bad}")));
        }
        Ok(Self {
            diag: DVector::from_vec(entries),
        })
    }

    /// Entries spaced log-uniformly from 1 to `condition_number`.
    pub fn log_uniform(dim: usize, condition_number: f64) -> Result<Self> {
        if !(condition_number >= 1.0) {
            return Err(Error::Config(format!(
                "condition number must be >= 1, got {condition_number}"
            )));
        }
        if dim == 1 {
            return Self::diagonal(vec![1.0]);
        }
        let last = (dim - 1) as f64;
        let mut entries: Vec<f64> = (0..dim)
            .map(|i| condition_number.powf(i as f64 / last))
            .collect();
        // pin the endpoints so max/min is the condition number exactly
        entries[0] = 1.0;
        entries[dim - 1] = condition_number;
        Self::diagonal(entries)
    }

    pub fn is_identity(&self) -> bool {
        self.diag.iter().all(|&e| e == 1.0)
    }

    pub fn entries(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn condition_number(&self) -> f64 {
        self.diag.max() / self.diag.min()
    }

    /// Elementwise `√P`, the whitening transform.
    pub fn sqrt_entries(&self) -> DVector<f64> {
        self.diag.map(f64::sqrt)
    }
}

/// Connection coefficients `Γ^k_{ij}`, stored densely as `[k][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.dim + i) * self.dim + j]
    }

    fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let d = self.dim;
        self.data[(k * d + i) * d + j] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Fully stored lowered Riemann tensor `R_{ijkl}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannTensor {
    dim: usize,
    data: Vec<f64>,
}

impl RiemannTensor {
    fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim.pow(4)],
        }
    }

    fn index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.dim + j) * self.dim + k) * self.dim + l
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.index(i, j, k, l)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest violation of `R_{ijkl} = −R_{jikl} = −R_{ijlk} = R_{klij}`.
    pub fn symmetry_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let r = self.get(i, j, k, l);
                        worst = worst
                            .max((r + self.get(j, i, k, l)).abs())
                            .max((r + self.get(i, j, l, k)).abs())
                            .max((r - self.get(k, l, i, j)).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Everything known about the curvature at one point. On irregular points
/// (`det g ≤ δ_reg`) the curvature fields are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub point: Vec<f64>,
    pub metric: DMatrix<f64>,
    pub det: f64,
    pub regular: bool,
    pub riemann_norm: Option<f64>,
    pub gaussian_curvature: Option<f64>,
}

/// Induced metric of an embedding under a fixed diagonal precision.
#[derive(Debug, Clone)]
pub struct MetricField<E> {
    pub embedding: E,
    pub precision: PrecisionSpec,
    pub steps: Steps,
    pub mode: DerivativeMode,
    pub regularity_threshold: f64,
}

impl<E: EmbeddingMap> MetricField<E> {
    /// Identity precision, default steps.
    pub fn euclidean(embedding: E) -> Self {
        let dim = embedding.ambient_dim();
        Self::new(embedding, PrecisionSpec::identity(dim))
    }

    pub fn new(embedding: E, precision: PrecisionSpec) -> Self {
        Self {
            embedding,
            precision,
            steps: Steps::default(),
            mode: DerivativeMode::default(),
            regularity_threshold: REGULARITY_THRESHOLD,
        }
    }

    pub fn with_steps(mut self, steps: Steps) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn dim(&self) -> usize {
        self.embedding.domain_dim()
    }

    fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: p.len(),
            });
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("parameter point {p:?}")));
        }
        if !self.embedding.contains(p) {
            return Err(Error::domain(p, "outside the embedding domain"));
        }
        Ok(())
    }

    pub fn jacobian_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(p)?;
        if self.precision.dim() != self.embedding.ambient_dim() {
            return Err(Error::Dimension {
                expected: self.embedding.ambient_dim(),
                got: self.precision.dim(),
            });
        }
        let analytic = match self.mode {
            DerivativeMode::PreferAnalytic => self.embedding.analytic_jacobian(p),
            DerivativeMode::CentralDifference => None,
        };
        let jac = match analytic {
            Some(j) => j,
            None => fd::jacobian(&self.embedding, p, self.steps.jacobian)?,
        };
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(p, "non-finite Jacobian"));
        }
        Ok(jac)
    }

    /// `g(p) = J(p)ᵀ P J(p)`, exactly symmetric.
    pub fn metric_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let jac = self.jacobian_at(p)?;
        let d = jac.ncols();
        let prec = self.precision.entries();
        let mut g = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v: f64 = (0..jac.nrows())
                    .map(|m| jac[(m, i)] * prec[m] * jac[(m, j)])
                    .sum();
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }

    fn regular_inverse(&self, p: &[f64], g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let det = g.determinant();
        if !(det > self.regularity_threshold) {
            return Err(Error::Regularity {
                point: p.to_vec(),
                det,
            });
        }
        g.clone()
            .try_inverse()
            .ok_or_else(|| Error::Regularity { point: p.to_vec(), det })
    }

    /// `Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`.
    pub fn christoffel_at(&self, p: &[f64]) -> Result<Christoffel> {
        let d = self.dim();
        let g = self.metric_at(p)?;
        let g_inv = self.regular_inverse(p, &g)?;
        let h = self.steps.metric;
        let mut dg = Vec::with_capacity(d);
        for l in 0..d {
            let mut q = p.to_vec();
            q[l] = p[l] + h;
            let plus = self.metric_at(&q)?;
            q[l] = p[l] - h;
            let minus = self.metric_at(&q)?;
            dg.push((plus - minus) / (2.0 * h));
        }
        let mut gamma = Christoffel::zeros(d);
        for k in 0..d {
            for i in 0..d {
                for j in i..d {
                    let mut acc = 0.0;
                    for l in 0..d {
                        acc += g_inv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    gamma.set(k, i, j, 0.5 * acc);
                    gamma.set(k, j, i, 0.5 * acc);
                }
            }
        }
        Ok(gamma)
    }

    /// Lowered Riemann tensor from central differences of the connection.
    pub fn riemann_at(&self, p: &[f64]) -> Result<RiemannTensor> {
        let d = self.dim();
        let g = self.metric_at(p)?;
        let gamma = self.christoffel_at(p)?;
        let h = self.steps.christoffel;
        let mut dgamma = Vec::with_capacity(d);
        for i in 0..d {
            let mut q = p.to_vec();
            q[i] = p[i] + h;
            let plus = self.christoffel_at(&q)?;
            q[i] = p[i] - h;
            let minus = self.christoffel_at(&q)?;
            let data = plus
                .data
                .iter()
                .zip(&minus.data)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            dgamma.push(Christoffel { dim: d, data });
        }

        // raised tensor R^k_{lij}
        let mut raised = RiemannTensor::zeros(d);
        for k in 0..d {
            for l in 0..d {
                for i in 0..d {
                    for j in 0..d {
                        let mut v = dgamma[i].get(k, l, j) - dgamma[j].get(k, l, i);
                        for m in 0..d {
                            v += gamma.get(k, i, m) * gamma.get(m, l, j)
                                - gamma.get(k, j, m) * gamma.get(m, l, i);
                        }
                        let idx = raised.index(k, l, i, j);
                        raised.data[idx] = v;
                    }
                }
            }
        }
        let mut lowered = RiemannTensor::zeros(d);
        for a in 0..d {
            for l in 0..d {
                for i in 0..d {
                    for j in 0..d {
                        let v: f64 = (0..d).map(|k| g[(a, k)] * raised.get(k, l, i, j)).sum();
                        let idx = lowered.index(a, l, i, j);
                        lowered.data[idx] = v;
                    }
                }
            }
        }
        Ok(lowered)
    }

    /// `K = R_{1212} / det g` for two-dimensional charts.
    pub fn gaussian_curvature_at(&self, p: &[f64]) -> Result<f64> {
        if self.dim() != 2 {
            return Err(Error::Dimension {
                expected: 2,
                got: self.dim(),
            });
        }
        let riemann = self.riemann_at(p)?;
        let det = self.metric_at(p)?.determinant();
        Ok(riemann.get(0, 1, 0, 1) / det)
    }

    /// Curvature summary that marks irregular points instead of failing.
    pub fn curvature_report(&self, p: &[f64]) -> Result<CurvatureReport> {
        let metric = self.metric_at(p)?;
        let det = metric.determinant();
        let mut report = CurvatureReport {
            point: p.to_vec(),
            metric,
            det,
            regular: det > self.regularity_threshold,
            riemann_norm: None,
            gaussian_curvature: None,
        };
        if !report.regular {
            return Ok(report);
        }
        match self.riemann_at(p) {
            Ok(riemann) => {
                report.riemann_norm = Some(riemann.frobenius_norm());
                if self.dim() == 2 {
                    report.gaussian_curvature = Some(riemann.get(0, 1, 0, 1) / det);
                }
            }
            // the stencil touched an irregular point
            Err(Error::Regularity { .. }) => report.regular = false,
            Err(e) => return Err(e),
        }
        Ok(report)
    }
}
