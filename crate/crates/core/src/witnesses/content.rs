use std::f64::consts::FRAC_PI_4;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{row, sphere_patch, Box2, RANK_TOLERANCE};
use crate::attention::{attention_output, attention_weights, gated_output, logit_clamped, AttentionParams};
use crate::error::{Error, Result};
use crate::geometry::FnEmbedding;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContentAwareConfig {
    /// Sequence length.
    pub n: usize,
    /// Gate input dimension.
    pub m: usize,
    /// Seed for the random value/output projections and gating matrix.
    pub seed: u64,
}

impl Default for ContentAwareConfig {
    fn default() -> Self {
        Self { n: 4, m: 8, seed: 0 }
    }
}

/// A sphere patch realized inside a standard attention block with content
/// projections `W_Q = W_K = 0`.
///
/// Token 1 is chosen so its value vector is `n(a + Bφ)` and the others are
/// zero, so the uniform attention average is exactly `a + Bφ`. The gate input
/// `X_g(φ) = σ⁻¹(s(φ) ⊘ (a + Bφ)) W_θ†` then rescales it onto the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentAwareWitness {
    pub n: usize,
    pub m: usize,
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
    pub attention: AttentionParams,
    /// `(W_V W_O)⁻¹`.
    pub value_inverse: DMatrix<f64>,
    /// `m × 3`, rank 3.
    pub w_theta: DMatrix<f64>,
    /// Left inverse `3 × m` with `W_θ† W_θ = I₃`.
    pub w_theta_pinv: DMatrix<f64>,
    pub domain: Box2,
}

/// Maximum deviation of `W† W` from the identity accepted at construction.
pub const LEFT_INVERSE_TOLERANCE: f64 = 1e-10;

fn random_matrix<R: Rng>(r: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
}

fn min_singular(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.min()
}

/// `R⁻¹ Qᵀ` from the thin QR factorization of a tall full-column-rank matrix.
fn qr_left_inverse(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = w.clone().qr();
    let r = qr.r();
    if (0..r.nrows()).any(|i| r[(i, i)].abs() <= RANK_TOLERANCE) {
        return Err(Error::Construction("gating matrix is rank deficient".into()));
    }
    r.solve_upper_triangular(&qr.q().transpose())
        .ok_or_else(|| Error::Construction("triangular solve failed".into()))
}

impl ContentAwareWitness {
    pub fn build(config: ContentAwareConfig) -> Result<Self> {
        if config.m < 3 {
            return Err(Error::Construction(format!("gate input dimension m = {} must be >= 3", config.m)));
        }
        if config.n == 0 {
            return Err(Error::Construction("sequence length must be positive".into()));
        }
        let mut r = rng::stream(config.seed, "witness/content-aware");
        let (w_v, w_o) = loop {
            let w_v = random_matrix(&mut r, 3, 3);
            let w_o = random_matrix(&mut r, 3, 3);
            if min_singular(&(&w_v * &w_o)) > 1e-2 {
                break (w_v, w_o);
            }
        };
        let value_inverse = (&w_v * &w_o)
            .try_inverse()
            .ok_or_else(|| Error::Construction("value/output map is singular".into()))?;
        let w_theta = loop {
            let w = random_matrix(&mut r, config.m, 3);
            if min_singular(&w) > 1e-2 {
                break w;
            }
        };
        let w_theta_pinv = qr_left_inverse(&w_theta)?;
        let defect = (&w_theta_pinv * &w_theta - DMatrix::<f64>::identity(3, 3)).amax();
        if !(defect <= LEFT_INVERSE_TOLERANCE) {
            return Err(Error::Construction(format!("left inverse defect {defect:e}")));
        }
        let mut attention = AttentionParams::zeros(3);
        attention.w_v = w_v;
        attention.w_o = w_o;
        Ok(Self {
            n: config.n,
            m: config.m,
            a: DVector::from_vec(vec![2.0, 2.0, 2.0]),
            b: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            attention,
            value_inverse,
            w_theta,
            w_theta_pinv,
            domain: Box2::square(0.0, FRAC_PI_4),
        })
    }

    pub fn left_inverse_defect(&self) -> f64 {
        (&self.w_theta_pinv * &self.w_theta - DMatrix::<f64>::identity(3, 3)).amax()
    }

    pub fn affine_at(&self, p: &[f64]) -> DVector<f64> {
        &self.a + &self.b * DVector::from_column_slice(p)
    }

    pub fn target(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(&sphere_patch(p))
    }

    /// `n × 3` input sequence `X(φ)`.
    pub fn tokens(&self, p: &[f64]) -> DMatrix<f64> {
        let first = row(&(self.affine_at(p) * self.n as f64)) * &self.value_inverse;
        let mut x = DMatrix::zeros(self.n, 3);
        x.row_mut(0).copy_from(&first.row(0));
        x
    }

    pub fn attention_weights(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        attention_weights(&self.tokens(p), &self.attention)
    }

    pub fn ungated_output(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        attention_output(&self.tokens(p), &self.attention)
    }

    /// `n × m` gating input; every row is `σ⁻¹(s ⊘ (a + Bφ)) W_θ†`.
    pub fn gate_input(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        if !self.domain.contains(p) {
            return Err(Error::domain(p, "outside the content-aware witness domain"));
        }
        let s = self.target(p);
        let y = self.affine_at(p);
        let mut logits = DMatrix::zeros(1, 3);
        for k in 0..3 {
            let ratio = s[k] / y[k];
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::Construction(format!(
                    "coordinate {k}: ratio s/(a + Bφ) = {ratio} is not in (0, 1) at {p:?}"
                )));
            }
            let (z, clamped) = logit_clamped(ratio);
            if clamped {
                return Err(Error::Construction(format!("coordinate {k}: gate input clamped at {p:?}")));
            }
            logits[(0, k)] = z;
        }
        let g = logits * &self.w_theta_pinv;
        Ok(DMatrix::from_fn(self.n, self.m, |_, j| g[(0, j)]))
    }

    pub fn gated_output(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        gated_output(&self.ungated_output(p)?, &self.gate_input(p)?, &self.w_theta)
    }

    /// First output position of the ungated block, with its Jacobian obtained
    /// by pushing `∂X/∂φ` through the (constant) attention weights and the
    /// value/output projections.
    pub fn ungated_embedding(&self) -> FnEmbedding {
        let eval = self.clone();
        let jac = self.clone();
        let dom = self.domain;
        FnEmbedding::new(2, 3, move |p| match eval.ungated_output(p) {
            Ok(y) => y.row(0).transpose(),
            Err(_) => DVector::from_element(3, f64::NAN),
        })
        .with_jacobian(move |p| {
            let weights = jac.attention_weights(p).expect("shapes fixed at construction");
            let lw = &jac.attention.w_v * &jac.attention.w_o;
            let mut out = DMatrix::zeros(3, 2);
            for k in 0..2 {
                let mut dx = DMatrix::zeros(jac.n, 3);
                let d_first = row(&(jac.b.column(k) * jac.n as f64)) * &jac.value_inverse;
                dx.row_mut(0).copy_from(&d_first.row(0));
                let dy = &weights * (dx * &lw);
                out.set_column(k, &dy.row(0).transpose());
            }
            out
        })
        .with_domain(move |p| dom.contains(p))
    }

    /// First output position of the gated block.
    pub fn gated_embedding(&self) -> FnEmbedding {
        let eval = self.clone();
        let dom = self.clone();
        FnEmbedding::new(2, 3, move |p| match eval.gated_output(p) {
            Ok(y) => y.row(0).transpose(),
            Err(_) => DVector::from_element(3, f64::NAN),
        })
        .with_domain(move |p| dom.gate_input(p).is_ok())
    }
}
