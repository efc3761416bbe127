//! Explicit gated and ungated constructions with known curvature.
//!
//! Each witness is built from the same attention primitives the model uses
//! (`attention_output`, `gated_output`) and exposed as an [`EmbeddingMap`]
//! so the geometry engine can measure it.
//!
//! [`EmbeddingMap`]: crate::geometry::EmbeddingMap

mod content;
mod depth;
mod perturbation;
mod robustness;
mod sphere;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AffineEmbedding;

pub use content::{ContentAwareConfig, ContentAwareWitness};
pub use depth::{depth_curvature_scan, DepthScan, DepthScanRow, DepthStack, Psi};
pub use perturbation::{bump, perturbation_polynomial_check, tangent_normal, GatedMap, PerturbationReport};
pub use robustness::{robustness_sweep, RadiusReport, RobustnessConfig, RobustnessFamily, RobustnessReport};
pub use sphere::{build_sphere_witness, SphereWitness};

/// Smallest singular value accepted for a full-rank linear part.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Open axis-aligned box in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2 {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Box2 {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(Error::Config(format!("empty box {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Self {
            lo: [lo, lo],
            hi: [hi, hi],
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == 2 && (0..2).all(|i| self.lo[i] < p[i] && p[i] < self.hi[i])
    }

    /// Closed sub-box shrunk by `fraction` of each side length on every side.
    pub fn inset(&self, fraction: f64) -> Self {
        let mut out = *self;
        for i in 0..2 {
            let w = self.hi[i] - self.lo[i];
            out.lo[i] += fraction * w;
            out.hi[i] -= fraction * w;
        }
        out
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1])]
    }

    /// `n × n` points including the corners, `x` varying fastest.
    pub fn grid(&self, n: usize) -> Vec<[f64; 2]> {
        let coord = |i: usize, k: usize| {
            if n == 1 {
                0.5 * (self.lo[i] + self.hi[i])
            } else {
                self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / (n - 1) as f64
            }
        };
        (0..n)
            .flat_map(|iy| (0..n).map(move |ix| [coord(0, ix), coord(1, iy)]))
            .collect()
    }
}

/// Ungated baseline `φ ↦ a + Bφ` with a full-rank `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineWitness {
    pub map: AffineEmbedding,
    pub domain: Box2,
}

impl AffineWitness {
    pub fn new(a: DVector<f64>, b: DMatrix<f64>, domain: Box2) -> Result<Self> {
        let map = AffineEmbedding::new(a, b)?;
        let sv = map.min_singular_value();
        if !(sv > RANK_TOLERANCE) {
            return Err(Error::Construction(format!(
                "linear part is rank deficient (smallest singular value {sv:e})"
            )));
        }
        Ok(Self { map, domain })
    }
}

/// Row vector view of a column vector.
pub(crate) fn row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

/// Unit-sphere patch `(cos φ₁ cos φ₂, cos φ₁ sin φ₂, sin φ₁)`.
pub fn sphere_patch(p: &[f64]) -> [f64; 3] {
    let (s1, c1) = p[0].sin_cos();
    let (s2, c2) = p[1].sin_cos();
    [c1 * c2, c1 * s2, s1]
}

/// Jacobian of [`sphere_patch`], rows are output coordinates.
pub fn sphere_patch_jacobian(p: &[f64]) -> [[f64; 2]; 3] {
    let (s1, c1) = p[0].sin_cos();
    let (s2, c2) = p[1].sin_cos();
    [[-s1 * c2, -c1 * s2], [-s1 * s2, c1 * c2], [c1, 0.0]]
}
