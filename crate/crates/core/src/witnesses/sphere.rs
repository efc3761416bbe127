use nalgebra::{DMatrix, DVector};

use super::{row, AffineWitness, Box2};
use crate::attention::{gated_output, logit_clamped, sigmoid};
use crate::error::{Error, Result};
use crate::geometry::{AffineEmbedding, EmbeddingMap, FnEmbedding};

/// Affine values `Y(φ) = (2 + φ₁, 2 + φ₂, 2)` gated by `σ(X(φ) W_θ)` with
/// `X(φ) = σ⁻¹(1/‖Y(φ)‖)` and `W_θ = (1, 1, 1)`, which normalizes `Y` onto
/// the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereWitness {
    pub affine: AffineWitness,
    /// `1 × 3`.
    pub gate_weights: DMatrix<f64>,
}

impl Default for SphereWitness {
    fn default() -> Self {
        Self::new()
    }
}

impl SphereWitness {
    pub fn new() -> Self {
        let a = DVector::from_vec(vec![2.0, 2.0, 2.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        Self {
            affine: AffineWitness::new(a, b, Box2::square(-0.5, 0.5)).expect("constant full-rank witness"),
            gate_weights: DMatrix::from_element(1, 3, 1.0),
        }
    }

    pub fn domain(&self) -> Box2 {
        self.affine.domain
    }

    /// Scalar gating input `σ⁻¹(1/‖Y(φ)‖)`; fails where the ratio leaves
    /// `(0, 1)` or the point leaves the domain.
    pub fn gate_input(&self, p: &[f64]) -> Result<f64> {
        if !self.domain().contains(p) {
            return Err(Error::domain(p, "outside the sphere witness domain"));
        }
        let norm = self.affine.map.evaluate(p).norm();
        let ratio = 1.0 / norm;
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::domain(p, format!("1/|Y| = {ratio} is not in (0, 1)")));
        }
        let (z, clamped) = logit_clamped(ratio);
        if clamped {
            return Err(Error::domain(p, "gate input was clamped"));
        }
        Ok(z)
    }

    pub fn gated_at(&self, p: &[f64]) -> Result<DVector<f64>> {
        let y = row(&self.affine.map.evaluate(p));
        let x = DMatrix::from_element(1, 1, self.gate_input(p)?);
        let out = gated_output(&y, &x, &self.gate_weights)?;
        Ok(out.row(0).transpose())
    }

    /// Tangent map of the gated output, pushed through the gate input
    /// `X = σ⁻¹(r)`, `r = 1/‖Y‖`:
    /// `∂_i μ = B_i ⊙ σ(X W_θ) + Y ⊙ σ'(X W_θ) ⊙ (∂_i X) W_θ`.
    pub fn gated_jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let x = self.gate_input(p)?;
        let y = self.affine.map.evaluate(p);
        let b = &self.affine.map.linear;
        let norm = y.norm();
        let r = 1.0 / norm;
        Ok(DMatrix::from_fn(3, 2, |m, i| {
            let dr = -y.dot(&b.column(i)) / (norm * norm * norm);
            let dx = dr / (r * (1.0 - r));
            let z = x * self.gate_weights[(0, m)];
            let s = sigmoid(z);
            b[(m, i)] * s + y[m] * s * (1.0 - s) * dx * self.gate_weights[(0, m)]
        }))
    }

    pub fn ungated(&self) -> AffineEmbedding {
        self.affine.map.clone()
    }

    /// The gated map; points outside the valid domain report `contains = false`.
    pub fn gated(&self) -> FnEmbedding {
        let eval = self.clone();
        let dom = self.clone();
        let jac = self.clone();
        FnEmbedding::new(2, 3, move |p| {
            eval.gated_at(p).unwrap_or_else(|_| DVector::from_element(3, f64::NAN))
        })
        .with_jacobian(move |p| jac.gated_jacobian(p).unwrap_or_else(|_| DMatrix::from_element(3, 2, f64::NAN)))
        .with_domain(move |p| dom.gate_input(p).is_ok())
    }
}

/// `(ungated, gated)` maps of the sphere witness.
pub fn build_sphere_witness() -> (AffineEmbedding, FnEmbedding) {
    let w = SphereWitness::new();
    (w.ungated(), w.gated())
}
