use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{fd, EmbeddingMap, PrecisionSpec, Steps};
use crate::error::{Error, Result};

type EvalFn = dyn Fn(&[f64]) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type DomainFn = dyn Fn(&[f64]) -> bool + Send + Sync;

/// `φ ↦ a + Bφ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineEmbedding {
    pub offset: DVector<f64>,
    pub linear: DMatrix<f64>,
}

impl AffineEmbedding {
    pub fn new(offset: DVector<f64>, linear: DMatrix<f64>) -> Result<Self> {
        if offset.len() != linear.nrows() {
            return Err(Error::Dimension {
                expected: linear.nrows(),
                got: offset.len(),
            });
        }
        Ok(Self { offset, linear })
    }

    /// Smallest singular value of `B`; the map is an immersion iff it is positive.
    pub fn min_singular_value(&self) -> f64 {
        let sv = self.linear.clone().svd(false, false).singular_values;
        if self.linear.ncols() > self.linear.nrows() {
            return 0.0;
        }
        sv.min()
    }
}

impl EmbeddingMap for AffineEmbedding {
    fn domain_dim(&self) -> usize {
        self.linear.ncols()
    }
    fn ambient_dim(&self) -> usize {
        self.linear.nrows()
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        &self.offset + &self.linear * DVector::from_column_slice(p)
    }
    fn analytic_jacobian(&self, _p: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.linear.clone())
    }
    fn analytic_hessian(&self, _p: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let d = self.domain_dim();
        Some(vec![DMatrix::zeros(d, d); self.ambient_dim()])
    }
}

/// Embedding backed by closures.
#[derive(Clone)]
pub struct FnEmbedding {
    domain_dim: usize,
    ambient_dim: usize,
    eval: Arc<EvalFn>,
    jacobian: Option<Arc<JacFn>>,
    domain: Option<Arc<DomainFn>>,
}

impl std::fmt::Debug for FnEmbedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnEmbedding")
            .field("domain_dim", &self.domain_dim)
            .field("ambient_dim", &self.ambient_dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl FnEmbedding {
    pub fn new<F>(domain_dim: usize, ambient_dim: usize, eval: F) -> Self
    where
        F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            domain_dim,
            ambient_dim,
            eval: Arc::new(eval),
            jacobian: None,
            domain: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_domain<P>(mut self, inside: P) -> Self
    where
        P: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.domain = Some(Arc::new(inside));
        self
    }

    /// Graph `(u, v) ↦ (u, v, f(u, v))` of a scalar function.
    pub fn graph<F>(f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(2, 3, move |p| DVector::from_vec(vec![p[0], p[1], f(p[0], p[1])]))
    }
}

impl EmbeddingMap for FnEmbedding {
    fn domain_dim(&self) -> usize {
        self.domain_dim
    }
    fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        (self.eval)(p)
    }
    fn contains(&self, p: &[f64]) -> bool {
        self.domain.as_ref().is_none_or(|inside| inside(p))
    }
    fn analytic_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(p))
    }
}

/// `φ ↦ diag(√P) μ(φ)`.
#[derive(Debug, Clone)]
pub struct Whitened<E> {
    inner: E,
    scale: DVector<f64>,
}

impl<E: EmbeddingMap> EmbeddingMap for Whitened<E> {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }
    fn ambient_dim(&self) -> usize {
        self.inner.ambient_dim()
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        self.inner.evaluate(p).component_mul(&self.scale)
    }
    fn contains(&self, p: &[f64]) -> bool {
        self.inner.contains(p)
    }
    fn analytic_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let mut jac = self.inner.analytic_jacobian(p)?;
        for (m, mut row) in jac.row_iter_mut().enumerate() {
            row *= self.scale[m];
        }
        Some(jac)
    }
}

/// Whitening: the curvature of `(whiten(μ, P), I)` equals that of `(μ, P)`.
pub fn whiten<E: EmbeddingMap>(embedding: E, precision: &PrecisionSpec) -> Whitened<E> {
    Whitened {
        scale: precision.sqrt_entries(),
        inner: embedding,
    }
}

/// `φ ↦ μ(ψ(φ))` for a reparameterization `ψ` of the chart.
#[derive(Debug, Clone)]
pub struct Reparameterized<E> {
    pub inner: E,
    pub chart: FnEmbedding,
}

impl<E: EmbeddingMap> EmbeddingMap for Reparameterized<E> {
    fn domain_dim(&self) -> usize {
        self.chart.domain_dim()
    }
    fn ambient_dim(&self) -> usize {
        self.inner.ambient_dim()
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        let q = self.chart.evaluate(p);
        self.inner.evaluate(q.as_slice())
    }
    fn contains(&self, p: &[f64]) -> bool {
        self.chart.contains(p) && self.inner.contains(self.chart.evaluate(p).as_slice())
    }
    fn analytic_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let q = self.chart.evaluate(p);
        let outer = self.inner.analytic_jacobian(q.as_slice())?;
        let inner = self.chart.analytic_jacobian(p)?;
        Some(outer * inner)
    }
}

/// Appends constant ambient coordinates to an embedding.
#[derive(Debug, Clone)]
pub struct WithConstantCoords<E> {
    pub inner: E,
    pub constants: Vec<f64>,
}

impl<E: EmbeddingMap> EmbeddingMap for WithConstantCoords<E> {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }
    fn ambient_dim(&self) -> usize {
        self.inner.ambient_dim() + self.constants.len()
    }
    fn evaluate(&self, p: &[f64]) -> DVector<f64> {
        let base = self.inner.evaluate(p);
        DVector::from_iterator(
            self.ambient_dim(),
            base.iter().copied().chain(self.constants.iter().copied()),
        )
    }
    fn contains(&self, p: &[f64]) -> bool {
        self.inner.contains(p)
    }
    fn analytic_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let base = self.inner.analytic_jacobian(p)?;
        let mut jac = DMatrix::zeros(self.ambient_dim(), base.ncols());
        jac.rows_mut(0, base.nrows()).copy_from(&base);
        Some(jac)
    }
}

/// Second derivatives of the gated mean `μ = Y ⊙ g` with `Y = a + Bφ`, via
/// `∂_{ij}μ = B_i ⊙ ∂_j g + B_j ⊙ ∂_i g + Y ⊙ ∂_{ij} g`.
///
/// Derivatives of `g` are analytic when the gate map provides them and
/// central differences otherwise. Returns one `d × d` matrix per coordinate.
pub fn gated_second_derivative<G: EmbeddingMap + ?Sized>(
    values: &AffineEmbedding,
    gate: &G,
    p: &[f64],
    steps: &Steps,
) -> Result<Vec<DMatrix<f64>>> {
    let d = values.domain_dim();
    let big_d = values.ambient_dim();
    if gate.domain_dim() != d || gate.ambient_dim() != big_d {
        return Err(Error::Dimension {
            expected: big_d,
            got: gate.ambient_dim(),
        });
    }
    let y = values.evaluate(p);
    let dg = match gate.analytic_jacobian(p) {
        Some(j) => j,
        None => fd::jacobian(gate, p, steps.jacobian)?,
    };
    let ddg = match gate.analytic_hessian(p) {
        Some(h) => h,
        None => fd::hessian(gate, p, steps.hessian)?,
    };
    let b = &values.linear;
    let out = (0..big_d)
        .map(|m| {
            DMatrix::from_fn(d, d, |i, j| {
                b[(m, i)] * dg[(m, j)] + b[(m, j)] * dg[(m, i)] + y[m] * ddg[m][(i, j)]
            })
        })
        .collect();
    Ok(out)
}
