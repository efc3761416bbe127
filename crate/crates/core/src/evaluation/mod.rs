//! Finite-difference curvature proxies, correlation statistics, and the
//! experiment sweep with its data products.

mod report;
mod stats;
mod sweep;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{probabilities, Model};
use crate::data::constant_sequence;
use crate::error::{Error, Result};
use crate::geometry::PrecisionSpec;
use crate::rng;
use crate::training::Prepared;

pub use report::{
    build_report, linear_control_rows, score_curved, score_isotropy, score_linear, write_report, AggregateRow,
    LinearControlRow, Report, ScoreLine,
};
pub use stats::{mean_std, pearson, spearman};
pub use sweep::{
    load_cells, plan_cells, run_sweep, run_sweep_with_progress, train_cell, write_exports, BoundaryConfig, CellConfig, CellResult, CellStatus, DataSettings,
    Manifest, ManifestEntry, SweepConfig, SweepOutcome, SweepRecord, TaskSelection,
};

/// How the probe sequence is built from an evaluation center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// All tokens equal the (perturbed) center.
    #[default]
    ConstantSequence,
    /// A fixed noisy sequence around the center, shifted as a whole.
    NoisyTokens,
}

/// How second differences along several directions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Mean over directions of the second-difference norm.
    #[default]
    MeanOfNorms,
    /// Norm of the mean second difference.
    NormOfMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxyConfig {
    pub epsilon: f64,
    pub n_directions: usize,
    pub eval_points: usize,
    pub input_mode: InputMode,
    pub reduction: Reduction,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            n_directions: 64,
            eval_points: 256,
            input_mode: InputMode::ConstantSequence,
            reduction: Reduction::MeanOfNorms,
        }
    }
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("proxy epsilon must be positive, got {}", self.epsilon)));
        }
        if self.n_directions == 0 || self.eval_points == 0 {
            return Err(Error::Config("proxy needs at least one direction and one evaluation point".into()));
        }
        Ok(())
    }
}

/// `n` unit vectors in `R^dim`, normalized Gaussians.
pub fn random_directions(r: &mut impl Rng, n: usize, dim: usize) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| loop {
            let v = DVector::from_fn(dim, |_, _| r.sample::<f64, _>(StandardNormal));
            let norm = v.norm();
            if norm > 1e-12 {
                break v / norm;
            }
        })
        .collect()
}

/// `(f(x + εv) − 2f(x) + f(x − εv)) / ε²` for every direction `v`.
pub fn second_differences<F>(f: F, x: &[f64], directions: &[DVector<f64>], epsilon: f64) -> Result<Vec<DVector<f64>>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let finite = |v: DVector<f64>, at: &[f64]| {
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("representation at {at:?}")))
        }
    };
    let center = finite(f(x)?, x)?;
    let inv = 1.0 / (epsilon * epsilon);
    directions
        .iter()
        .map(|v| {
            if v.len() != x.len() {
                return Err(Error::Dimension {
                    expected: x.len(),
                    got: v.len(),
                });
            }
            let plus: Vec<f64> = x.iter().zip(v.iter()).map(|(a, b)| a + epsilon * b).collect();
            let minus: Vec<f64> = x.iter().zip(v.iter()).map(|(a, b)| a - epsilon * b).collect();
            let fp = finite(f(&plus)?, &plus)?;
            let fm = finite(f(&minus)?, &minus)?;
            Ok((fp - &center * 2.0 + fm) * inv)
        })
        .collect()
}

/// Combines second differences under the norm `‖u‖_P = ‖√P u‖`; `None`
/// means the Euclidean norm.
pub fn reduce(diffs: &[DVector<f64>], sqrt_precision: Option<&DVector<f64>>, reduction: Reduction) -> f64 {
    if diffs.is_empty() {
        return f64::NAN;
    }
    let norm = |u: &DVector<f64>| match sqrt_precision {
        Some(s) => u.component_mul(s).norm(),
        None => u.norm(),
    };
    let n = diffs.len() as f64;
    match reduction {
        Reduction::MeanOfNorms => diffs.iter().map(norm).sum::<f64>() / n,
        Reduction::NormOfMean => {
            let mut mean = DVector::zeros(diffs[0].len());
            for d in diffs {
                mean += d;
            }
            norm(&(mean / n))
        }
    }
}

pub fn curvature_proxy<F>(f: F, x: &[f64], directions: &[DVector<f64>], epsilon: f64, reduction: Reduction) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    Ok(reduce(&second_differences(f, x, directions, epsilon)?, None, reduction))
}

/// The proxy measured in the norm of a diagonal precision `P`.
pub fn anisotropic_proxy<F>(
    f: F,
    x: &[f64],
    directions: &[DVector<f64>],
    epsilon: f64,
    reduction: Reduction,
    precision: &PrecisionSpec,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let diffs = second_differences(f, x, directions, epsilon)?;
    if let Some(d) = diffs.first() {
        if d.len() != precision.dim() {
            return Err(Error::Dimension {
                expected: d.len(),
                got: precision.dim(),
            });
        }
    }
    Ok(reduce(&diffs, Some(&precision.sqrt_entries()), reduction))
}

/// `2√p` of the class probabilities; lies on the sphere of radius 2.
pub fn sqrt_embedding(logits: &DVector<f64>) -> DVector<f64> {
    probabilities(logits).map(|p| 2.0 * p.sqrt())
}

/// Evaluation center with the base sequence used by the probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePoint {
    pub center: [f64; 2],
    pub tokens: Vec<[f64; 2]>,
}

/// Evaluation centers and latent directions, drawn from `eval_seed` only so
/// every model in a sweep is probed at the same places.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub points: Vec<ProbePoint>,
    pub directions: Vec<DVector<f64>>,
}

impl ProbeSet {
    pub fn new(config: &ProxyConfig, eval_seed: u64, center_box: [f64; 2], seq_len: usize, noise_sigma: f64) -> Result<Self> {
        config.validate()?;
        let mut centers = rng::stream(eval_seed, "eval/centers");
        let mut noise = rng::stream(eval_seed, "eval/noise");
        let points = (0..config.eval_points)
            .map(|_| {
                let center = [
                    centers.gen_range(center_box[0]..center_box[1]),
                    centers.gen_range(center_box[0]..center_box[1]),
                ];
                let tokens = match config.input_mode {
                    InputMode::ConstantSequence => constant_sequence(center, seq_len),
                    InputMode::NoisyTokens => (0..seq_len)
                        .map(|_| {
                            let e0: f64 = noise.sample(StandardNormal);
                            let e1: f64 = noise.sample(StandardNormal);
                            [center[0] + noise_sigma * e0, center[1] + noise_sigma * e1]
                        })
                        .collect(),
                };
                ProbePoint { center, tokens }
            })
            .collect();
        let directions = random_directions(&mut rng::stream(eval_seed, "eval/directions"), config.n_directions, 2);
        Ok(Self { points, directions })
    }
}

/// Mean proxies of one model over a probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCurvature {
    /// Proxy of the pooled representation, Euclidean norm.
    pub iso: f64,
    /// `(condition number, proxy)` of the pooled representation.
    pub aniso: Vec<(f64, f64)>,
    /// Proxy of the square-root embedding of the output distribution.
    pub sqrt_embed: f64,
}

fn shifted(tokens: &[[f64; 2]], delta: &[f64]) -> Vec<[f64; 2]> {
    tokens.iter().map(|t| [t[0] + delta[0], t[1] + delta[1]]).collect()
}

/// Per-point proxies; points are processed in parallel and merged in index
/// order so results do not depend on the thread count.
pub fn model_curvature(model: &Model, probes: &ProbeSet, config: &ProxyConfig, condition_numbers: &[f64]) -> Result<ModelCurvature> {
    config.validate()?;
    let dim = model.config.d_model;
    let precisions: Vec<PrecisionSpec> = condition_numbers
        .iter()
        .map(|&c| PrecisionSpec::log_uniform(dim, c))
        .collect::<Result<_>>()?;
    let sqrt_p: Vec<DVector<f64>> = precisions.iter().map(|p| p.sqrt_entries()).collect();
    let prepared = Prepared::new(model);
    let eps = config.epsilon;

    let per_point: Vec<Result<(f64, Vec<f64>, f64)>> = probes
        .points
        .par_iter()
        .map(|point| {
            let both = |delta: &[f64]| prepared.forward(&shifted(&point.tokens, delta));
            let pooled_diffs = second_differences(|d| Ok(both(d)?.pooled), &[0.0, 0.0], &probes.directions, eps)?;
            let embed = |d: &[f64]| {
                let e = sqrt_embedding(&both(d)?.logits);
                if (e.norm() - 2.0).abs() > 1e-12 {
                    return Err(Error::NonFinite(format!("square-root embedding norm {} at {:?}", e.norm(), point.center)));
                }
                Ok(e)
            };
            let embed_diffs = second_differences(embed, &[0.0, 0.0], &probes.directions, eps)?;
            let iso = reduce(&pooled_diffs, None, config.reduction);
            let aniso = sqrt_p
                .iter()
                .zip(&precisions)
                .map(|(s, p)| {
                    if p.is_identity() {
                        iso
                    } else {
                        reduce(&pooled_diffs, Some(s), config.reduction)
                    }
                })
                .collect();
            Ok((iso, aniso, reduce(&embed_diffs, None, config.reduction)))
        })
        .collect();

    let n = per_point.len() as f64;
    let mut iso = 0.0;
    let mut aniso = vec![0.0; condition_numbers.len()];
    let mut sqrt_embed = 0.0;
    for r in per_point {
        let (i, a, s) = r?;
        iso += i;
        for (acc, v) in aniso.iter_mut().zip(a) {
            *acc += v;
        }
        sqrt_embed += s;
    }
    Ok(ModelCurvature {
        iso: iso / n,
        aniso: condition_numbers.iter().copied().zip(aniso.into_iter().map(|v| v / n)).collect(),
        sqrt_embed: sqrt_embed / n,
    })
}
