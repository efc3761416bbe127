//! Synthetic sequence classification tasks.
//!
//! A sample is a latent center `c ∈ [−2, 2]²` observed as a sequence of noisy
//! copies `x_i = c + ε_i`. The label depends on `c` only: either a curved
//! radial–angular rule or a half-plane rule for the linear control task.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::rng;

/// `s(c) = sin(2.5 θ) + 0.6 (r − 1.2)` in polar coordinates of `c`.
pub fn curved_score(c: [f64; 2]) -> f64 {
    let r = c[0].hypot(c[1]);
    // atan2(0, 0) = 0
    let theta = c[1].atan2(c[0]);
    (2.5 * theta).sin() + 0.6 * (r - 1.2)
}

pub fn curved_label(c: [f64; 2]) -> u8 {
    u8::from(curved_score(c) > 0.0)
}

pub fn linear_label(c: [f64; 2], w: [f64; 2]) -> Result<u8> {
    if w == [0.0, 0.0] {
        return Err(Error::Config("linear task direction must be nonzero".into()));
    }
    Ok(u8::from(w[0] * c[0] + w[1] * c[1] > 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Curved,
    Linear { w: [f64; 2] },
}

impl Task {
    pub fn linear_default() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Task::Linear { w: [s, s] }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Curved => "curved",
            Task::Linear { .. } => "linear",
        }
    }

    pub fn label(&self, c: [f64; 2]) -> Result<u8> {
        match *self {
            Task::Curved => Ok(curved_label(c)),
            Task::Linear { w } => linear_label(c, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub seq_len: usize,
    pub noise_sigma: f64,
    pub center_box: [f64; 2],
    pub task: Task,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_test: 1000,
            seq_len: 8,
            noise_sigma: 0.20,
            center_box: [-2.0, 2.0],
            task: Task::Curved,
        }
    }
}

impl DatasetSpec {
    pub fn with_task(task: Task) -> Self {
        Self {
            task,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(self.center_box[0] < self.center_box[1]) {
            return Err(Error::Config("center_box must be [lo, hi] with lo < hi".into()));
        }
        self.task.label([1.0, 1.0]).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    pub tokens: Vec<[f64; 2]>,
    pub center: [f64; 2],
    pub label: u8,
}

impl TaskSample {
    /// `n × 2` token matrix.
    pub fn token_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.tokens.len(), 2, |i, j| self.tokens[i][j])
    }
}

/// The noiseless sequence in which every token equals `c`.
pub fn constant_sequence(c: [f64; 2], seq_len: usize) -> Vec<[f64; 2]> {
    vec![c; seq_len]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<TaskSample>,
    pub test: Vec<TaskSample>,
}

/// Uniform center in the box from the stream for `(seed, split, index)`.
pub fn sample_center(seed: u64, tag: &str, index: u64, center_box: [f64; 2]) -> [f64; 2] {
    let mut r = rng::indexed_stream(seed, tag, index);
    let [lo, hi] = center_box;
    [r.gen_range(lo..hi), r.gen_range(lo..hi)]
}

fn split(spec: &DatasetSpec, seed: u64, noise_seed: u64, name: &str, count: usize) -> Result<Vec<TaskSample>> {
    let center_tag = format!("data/{name}/center");
    let noise_tag = format!("data/{name}/noise");
    (0..count as u64)
        .map(|i| {
            let center = sample_center(seed, &center_tag, i, spec.center_box);
            let mut noise = rng::indexed_stream(noise_seed, &noise_tag, i);
            let tokens = (0..spec.seq_len)
                .map(|_| {
                    let e0: f64 = noise.sample(StandardNormal);
                    let e1: f64 = noise.sample(StandardNormal);
                    [center[0] + spec.noise_sigma * e0, center[1] + spec.noise_sigma * e1]
                })
                .collect();
            Ok(TaskSample {
                tokens,
                center,
                label: spec.task.label(center)?,
            })
        })
        .collect()
}

/// Train/test split, deterministic in `seed`. Each sample draws from its own
/// indexed stream, so the result does not depend on generation order.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    generate_with_noise_seed(spec, seed, seed)
}

/// Like [`generate`] but with observation noise drawn from an independent seed.
pub fn generate_with_noise_seed(spec: &DatasetSpec, seed: u64, noise_seed: u64) -> Result<Dataset> {
    spec.validate()?;
    Ok(Dataset {
        train: split(spec, seed, noise_seed, "train", spec.n_train)?,
        test: split(spec, seed, noise_seed, "test", spec.n_test)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub center: [f64; 2],
    pub true_label: u8,
    pub prediction: Option<(u8, [f64; 2])>,
}

/// `resolution × resolution` centers over `box × box`, row-major in `y`
/// then `x`, each with its true label and optionally a model prediction.
pub fn latent_grid(
    resolution: usize,
    center_box: [f64; 2],
    task: &Task,
    predict: Option<&dyn Fn([f64; 2]) -> Result<[f64; 2]>>,
) -> Result<Vec<GridRow>> {
    if resolution == 0 {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    let [lo, hi] = center_box;
    let coord = |i: usize| {
        if resolution == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
        }
    };
    let mut rows = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        for ix in 0..resolution {
            let center = [coord(ix), coord(iy)];
            let prediction = match predict {
                Some(f) => {
                    let logits = f(center)?;
                    Some((u8::from(logits[1] > logits[0]), logits))
                }
                None => None,
            };
            rows.push(GridRow {
                center,
                true_label: task.label(center)?,
                prediction,
            });
        }
    }
    Ok(rows)
}

pub fn dataset_csv(samples: &[TaskSample]) -> String {
    let seq_len = samples.first().map_or(0, |s| s.tokens.len());
    let mut out = String::from("center_x,center_y,label");
    for i in 0..seq_len {
        let _ = write!(out, ",token_{i}_x,token_{i}_y");
    }
    out.push('\n');
    for s in samples {
        let _ = write!(out, "{},{},{}", fmt_f64(s.center[0]), fmt_f64(s.center[1]), s.label);
        for t in &s.tokens {
            let _ = write!(out, ",{},{}", fmt_f64(t[0]), fmt_f64(t[1]));
        }
        out.push('\n');
    }
    out
}

pub const GRID_HEADER: &str = "center_x,center_y,true_label,pred_label,logit_0,logit_1";

pub fn grid_csv_row(row: &GridRow) -> String {
    let (pred, l0, l1) = match row.prediction {
        Some((p, [a, b])) => (p.to_string(), fmt_f64(a), fmt_f64(b)),
        None => (String::new(), String::new(), String::new()),
    };
    format!(
        "{},{},{},{pred},{l0},{l1}",
        fmt_f64(row.center[0]),
        fmt_f64(row.center[1]),
        row.true_label
    )
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = format!("{GRID_HEADER}\n");
    for r in rows {
        out.push_str(&grid_csv_row(r));
        out.push('\n');
    }
    out
}
