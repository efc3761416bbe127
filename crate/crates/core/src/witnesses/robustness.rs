use std::f64::consts::FRAC_PI_4;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{row, sphere_patch, sphere_patch_jacobian, Box2};
use crate::attention::{gated_output, logit_clamped, sigmoid};
use crate::error::{Error, Result};
use crate::geometry::{AffineEmbedding, EmbeddingMap, FnEmbedding, MetricField};
use crate::rng;

/// Gated family `μ_W(φ) = Y(φ) ⊙ σ(X*(φ) W)` around a base weight `W*` that
/// realizes a sphere patch lifted by constant coordinates.
///
/// The target is `s̃(φ) = (s(φ), c₄, …, c_D)`; `Y = a + Bφ` dominates it
/// coordinatewise, `X*(φ) = (σ⁻¹(s̃ ⊘ Y), 0, …, 0)` and `W* = [I_D; 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessFamily {
    pub constants: Vec<f64>,
    /// Zero columns appended to the gating input.
    pub extra_inputs: usize,
    pub values: AffineEmbedding,
    pub domain: Box2,
}

impl RobustnessFamily {
    pub fn new(constants: Vec<f64>, extra_inputs: usize) -> Result<Self> {
        if let Some(c) = constants.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::Construction(format!("lift constant {c} must be positive")));
        }
        let dim = 3 + constants.len();
        let mut a = DVector::from_element(dim, 2.0);
        for (k, c) in constants.iter().enumerate() {
            a[3 + k] = c + 1.0;
        }
        let mut b = DMatrix::zeros(dim, 2);
        b[(0, 0)] = 1.0;
        b[(1, 1)] = 1.0;
        let family = Self {
            constants,
            extra_inputs,
            values: AffineEmbedding::new(a, b)?,
            domain: Box2::square(0.0, FRAC_PI_4),
        };
        for p in family.domain.inset(0.01).grid(21) {
            family.gate_logits(&p)?;
        }
        Ok(family)
    }

    pub fn ambient_dim(&self) -> usize {
        3 + self.constants.len()
    }

    pub fn gate_input_dim(&self) -> usize {
        self.ambient_dim() + self.extra_inputs
    }

    pub fn target(&self, p: &[f64]) -> DVector<f64> {
        let s = sphere_patch(p);
        DVector::from_iterator(self.ambient_dim(), s.into_iter().chain(self.constants.iter().copied()))
    }

    /// `ℓ(φ) = σ⁻¹(s̃ ⊘ Y)`; errors if a ratio leaves `(0, 1)`.
    pub fn gate_logits(&self, p: &[f64]) -> Result<DVector<f64>> {
        let s = self.target(p);
        let y = self.values.evaluate(p);
        let mut out = DVector::zeros(s.len());
        for j in 0..s.len() {
            let ratio = s[j] / y[j];
            let (z, clamped) = logit_clamped(ratio);
            if !(ratio > 0.0 && ratio < 1.0) || clamped {
                return Err(Error::Construction(format!("coordinate {j}: ratio {ratio} at {p:?} is not in (0, 1)")));
            }
            out[j] = z;
        }
        Ok(out)
    }

    /// `∂ℓ/∂φ`, `D × 2`.
    fn gate_logits_jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let s = self.target(p);
        let y = self.values.evaluate(p);
        let ds = sphere_patch_jacobian(p);
        let b = &self.values.linear;
        DMatrix::from_fn(s.len(), 2, |j, i| {
            let dsj = if j < 3 { ds[j][i] } else { 0.0 };
            let z = s[j] / y[j];
            let dz = (dsj * y[j] - s[j] * b[(j, i)]) / (y[j] * y[j]);
            dz / (z * (1.0 - z))
        })
    }

    /// `1 × (D + extra)` gating input `X*(φ)`.
    pub fn gate_input(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let l = self.gate_logits(p)?;
        Ok(DMatrix::from_fn(1, self.gate_input_dim(), |_, j| if j < l.len() { l[j] } else { 0.0 }))
    }

    /// `W* = [I_D; 0]`.
    pub fn base_weights(&self) -> DMatrix<f64> {
        let d = self.ambient_dim();
        DMatrix::from_fn(self.gate_input_dim(), d, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn mean(&self, p: &[f64], w: &DMatrix<f64>) -> Result<DVector<f64>> {
        let y = row(&self.values.evaluate(p));
        Ok(gated_output(&y, &self.gate_input(p)?, w)?.row(0).transpose())
    }

    fn jacobian(&self, p: &[f64], w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let x = self.gate_input(p)?;
        let pre = (&x * w).row(0).transpose();
        let dl = self.gate_logits_jacobian(p);
        let d = self.ambient_dim();
        let w_top = w.rows(0, d);
        // ∂(X* W)/∂φ_i = (∂ℓ/∂φ_i)ᵀ W_top
        let dpre = w_top.transpose() * dl;
        let y = self.values.evaluate(p);
        let b = &self.values.linear;
        Ok(DMatrix::from_fn(d, 2, |m, i| {
            let s = sigmoid(pre[m]);
            b[(m, i)] * s + y[m] * s * (1.0 - s) * dpre[(m, i)]
        }))
    }

    /// `μ_W` as an embedding with its closed-form Jacobian.
    pub fn embedding(&self, w: DMatrix<f64>) -> Result<FnEmbedding> {
        if w.shape() != (self.gate_input_dim(), self.ambient_dim()) {
            return Err(Error::Dimension {
                expected: self.gate_input_dim(),
                got: w.nrows(),
            });
        }
        let d = self.ambient_dim();
        let (eval, jac, dom) = (self.clone(), self.clone(), self.clone());
        let (w_eval, w_jac) = (w.clone(), w);
        Ok(FnEmbedding::new(2, d, move |p| {
            eval.mean(p, &w_eval).unwrap_or_else(|_| DVector::from_element(d, f64::NAN))
        })
        .with_jacobian(move |p| {
            jac.jacobian(p, &w_jac).unwrap_or_else(|_| DMatrix::from_element(d, 2, f64::NAN))
        })
        .with_domain(move |p| dom.domain.contains(p) && dom.gate_logits(p).is_ok()))
    }

    /// The gate-≡-1 configuration: `μ = Y`.
    pub fn constant_gate_embedding(&self) -> AffineEmbedding {
        self.values.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub grid: usize,
    pub inset: f64,
    pub trials: usize,
    pub seed: u64,
    pub k_threshold: f64,
    /// First radius probed; doubled while every trial passes and halved
    /// while some trial fails, until the outcome flips.
    pub initial_radius: f64,
    pub max_bracket_steps: usize,
    pub bisection_steps: usize,
    pub workers: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            grid: 15,
            inset: 0.1,
            trials: 200,
            seed: 0,
            k_threshold: 0.5,
            initial_radius: 0.25,
            max_bracket_steps: 12,
            bisection_steps: 8,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusReport {
    pub radius: f64,
    pub trials_run: usize,
    pub passing: usize,
    pub irregular_trials: usize,
    /// Minimum curvature over all regular grid points of all trials run.
    pub min_k: Option<f64>,
}

impl RadiusReport {
    pub fn fraction(&self) -> f64 {
        if self.trials_run == 0 {
            0.0
        } else {
            self.passing as f64 / self.trials_run as f64
        }
    }

    pub fn all_pass(&self) -> bool {
        self.trials_run > 0 && self.passing == self.trials_run
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub base: RadiusReport,
    /// `(radius, every trial passed)` in probing order.
    pub probes: Vec<(f64, bool)>,
    /// Largest probed radius at which every trial passed.
    pub radius: f64,
    pub at_radius: RadiusReport,
    /// `max |K|` over the grid for the gate-≡-1 configuration.
    pub constant_gate_max_abs_k: f64,
}

struct TrialOutcome {
    min_k: Option<f64>,
    regular: bool,
}

fn directions(family: &RobustnessFamily, config: &RobustnessConfig) -> Vec<DMatrix<f64>> {
    let (r, c) = (family.gate_input_dim(), family.ambient_dim());
    let n = (r * c) as f64;
    (0..config.trials as u64)
        .map(|t| {
            let mut s = rng::indexed_stream(config.seed, "robustness/perturbation", t);
            let mut m = DMatrix::from_fn(r, c, |_, _| s.sample::<f64, _>(StandardNormal));
            let norm = m.norm();
            let u: f64 = s.gen_range(0.0..1.0);
            m *= u.powf(1.0 / n) / norm;
            m
        })
        .collect()
}

fn run_trial(family: &RobustnessFamily, w: DMatrix<f64>, grid: &[[f64; 2]]) -> Result<TrialOutcome> {
    let field = MetricField::euclidean(family.embedding(w)?);
    let mut min_k: Option<f64> = None;
    for p in grid {
        let report = field.curvature_report(p)?;
        match report.gaussian_curvature {
            Some(k) if report.regular && k.is_finite() => min_k = Some(min_k.map_or(k, |m| m.min(k))),
            _ => {
                return Ok(TrialOutcome {
                    min_k,
                    regular: false,
                })
            }
        }
    }
    Ok(TrialOutcome { min_k, regular: true })
}

/// Runs trials in order, `workers` at a time; with `stop_early` the scan
/// ends after the first batch containing a failing trial.
fn evaluate_radius(
    family: &RobustnessFamily,
    dirs: &[DMatrix<f64>],
    radius: f64,
    config: &RobustnessConfig,
    stop_early: bool,
) -> Result<RadiusReport> {
    let grid = family.domain.inset(config.inset).grid(config.grid);
    let base = family.base_weights();
    let workers = config.workers.max(1);
    let mut report = RadiusReport {
        radius,
        trials_run: 0,
        passing: 0,
        irregular_trials: 0,
        min_k: None,
    };
    for chunk in dirs.chunks(workers) {
        let outcomes: Vec<Result<TrialOutcome>> = if workers == 1 {
            chunk.iter().map(|d| run_trial(family, &base + d * radius, &grid)).collect()
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|d| {
                        let (grid, base) = (&grid, &base);
                        scope.spawn(move || run_trial(family, base + d * radius, grid))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("robustness worker panicked"))
                    .collect()
            })
        };
        let mut failed = false;
        for outcome in outcomes {
            let outcome = outcome?;
            report.trials_run += 1;
            if let Some(k) = outcome.min_k {
                report.min_k = Some(report.min_k.map_or(k, |m: f64| m.min(k)));
            }
            if !outcome.regular {
                report.irregular_trials += 1;
            }
            let ok = outcome.regular && outcome.min_k.is_some_and(|k| k >= config.k_threshold);
            if ok {
                report.passing += 1;
            } else {
                failed = true;
            }
        }
        if failed && stop_early {
            break;
        }
    }
    Ok(report)
}

/// Measures the base configuration, bisects for the largest perturbation
/// radius at which every sampled `‖ΔW‖ ≤ ρ` keeps `min K ≥ threshold` on
/// the regular grid, and reports the full trial set at that radius.
pub fn robustness_sweep(family: &RobustnessFamily, config: &RobustnessConfig) -> Result<RobustnessReport> {
    if config.trials == 0 || config.grid == 0 {
        return Err(Error::Config("robustness sweep needs trials > 0 and grid > 0".into()));
    }
    if !(config.initial_radius > 0.0) {
        return Err(Error::Config("initial radius must be positive".into()));
    }
    let dirs = directions(family, config);
    let base = evaluate_radius(family, &dirs[..1], 0.0, config, false)?;

    let mut probes = Vec::new();
    let mut lo = 0.0;
    if base.all_pass() {
        // bracket: double while passing, halve while failing
        let mut r = config.initial_radius;
        let first = evaluate_radius(family, &dirs, r, config, true)?.all_pass();
        probes.push((r, first));
        let mut hi = None;
        for _ in 0..config.max_bracket_steps {
            if first {
                lo = r;
                r *= 2.0;
            } else {
                hi = Some(r);
                r *= 0.5;
            }
            let ok = evaluate_radius(family, &dirs, r, config, true)?.all_pass();
            probes.push((r, ok));
            if ok != first {
                if ok {
                    lo = r;
                } else {
                    hi = Some(r);
                }
                break;
            }
        }
        if first && hi.is_none() {
            lo = r;
        }
        if let (Some(mut hi), true) = (hi, lo > 0.0) {
            for _ in 0..config.bisection_steps {
                let mid = 0.5 * (lo + hi);
                let ok = evaluate_radius(family, &dirs, mid, config, true)?.all_pass();
                probes.push((mid, ok));
                if ok {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    let at_radius = evaluate_radius(family, &dirs, lo, config, false)?;

    let grid = family.domain.inset(config.inset).grid(config.grid);
    let flat = MetricField::euclidean(family.constant_gate_embedding());
    let mut constant_gate_max_abs_k: f64 = 0.0;
    for p in &grid {
        constant_gate_max_abs_k = constant_gate_max_abs_k.max(flat.gaussian_curvature_at(p)?.abs());
    }
    Ok(RobustnessReport {
        base,
        probes,
        radius: lo,
        at_radius,
        constant_gate_max_abs_k,
    })
}
