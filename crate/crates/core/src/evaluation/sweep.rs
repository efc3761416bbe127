use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{aggregate, aggregate_csv, linear_control_rows};
use super::{model_curvature, ModelCurvature, ProbeSet, ProxyConfig};
use crate::attention::{GateSpec, GateVariant};
use crate::checkpoint;
use crate::data::{self, constant_sequence, latent_grid, DatasetSpec, Task};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::training::{train, EpochMetrics, Prepared, RunStatus, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskSelection {
    /// Curved task with the ablation set, plus the linear control.
    #[default]
    All,
    Curved,
    Linear,
}

impl std::str::FromStr for TaskSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "curved" => Ok(Self::Curved),
            "linear" => Ok(Self::Linear),
            _ => Err(Error::Config(format!("unknown task `{s}`; expected all, curved or linear"))),
        }
    }
}

/// Dataset settings shared by every task of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSettings {
    pub n_train: usize,
    pub n_test: usize,
    pub seq_len: usize,
    pub noise_sigma: f64,
    pub center_box: [f64; 2],
}

impl Default for DataSettings {
    fn default() -> Self {
        let d = DatasetSpec::default();
        Self {
            n_train: d.n_train,
            n_test: d.n_test,
            seq_len: d.seq_len,
            noise_sigma: d.noise_sigma,
            center_box: d.center_box,
        }
    }
}

impl DataSettings {
    pub fn spec(&self, task: Task) -> DatasetSpec {
        DatasetSpec {
            n_train: self.n_train,
            n_test: self.n_test,
            seq_len: self.seq_len,
            noise_sigma: self.noise_sigma,
            center_box: self.center_box,
            task,
        }
    }
}

/// Which trained curved-task strength models get a decision-boundary export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryConfig {
    pub resolution: usize,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            resolution: 200,
            alphas: vec![0.0, 1.0],
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub task: TaskSelection,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub condition_numbers: Vec<f64>,
    /// Variants trained at strength 1 on the curved task.
    pub ablation: Vec<GateVariant>,
    pub linear_w: [f64; 2],
    pub data: DataSettings,
    pub train: TrainConfig,
    pub proxy: ProxyConfig,
    /// Seed of the evaluation centers and directions.
    pub eval_seed: u64,
    pub boundary: BoundaryConfig,
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let Task::Linear { w } = Task::linear_default() else {
            unreachable!()
        };
        Self {
            task: TaskSelection::All,
            alphas: vec![0.0, 0.25, 0.5, 1.0, 1.5],
            seeds: (0..5).collect(),
            condition_numbers: vec![2.0, 4.0, 8.0, 12.0, 20.0],
            ablation: vec![
                GateVariant::Ungated,
                GateVariant::Silu,
                GateVariant::GatedSigmoid,
                GateVariant::GatedNonsparse,
            ],
            linear_w: w,
            data: DataSettings::default(),
            train: TrainConfig::default(),
            proxy: ProxyConfig::default(),
            eval_seed: 0,
            boundary: BoundaryConfig::default(),
            workers: 1,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        if self.condition_numbers.iter().any(|c| !(*c >= 1.0)) {
            return Err(Error::Config("condition numbers must be >= 1".into()));
        }
        for &a in &self.alphas {
            GateSpec::strength(a)?;
        }
        if self.ablation.contains(&GateVariant::Strength) {
            return Err(Error::Config("the ablation set lists fixed variants; strengths go in `alphas`".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        self.proxy.validate()?;
        self.data.spec(Task::Linear { w: self.linear_w }).validate()?;
        self.data.spec(Task::Curved).validate()?;
        Ok(())
    }

    fn includes_curved(&self) -> bool {
        matches!(self.task, TaskSelection::All | TaskSelection::Curved)
    }

    fn includes_linear(&self) -> bool {
        matches!(self.task, TaskSelection::All | TaskSelection::Linear)
    }
}

/// Everything that determines one training run and its measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub task: Task,
    pub gate: GateSpec,
    pub seed: u64,
    pub data: DatasetSpec,
    pub train: TrainConfig,
    pub proxy: ProxyConfig,
    pub eval_seed: u64,
    pub condition_numbers: Vec<f64>,
}

impl CellConfig {
    /// Hex SHA-256 of the JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("cell config serializes");
        Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn variant(&self) -> GateVariant {
        self.gate.variant
    }

    pub fn is_strength(&self) -> bool {
        self.gate.variant == GateVariant::Strength
    }
}

/// Cells in a fixed order: curved strengths (alpha-major), curved ablation,
/// linear strengths.
pub fn plan_cells(config: &SweepConfig) -> Result<Vec<CellConfig>> {
    config.validate()?;
    let cell = |task: Task, gate: GateSpec, seed: u64| CellConfig {
        task,
        gate,
        seed,
        data: config.data.spec(task),
        train: config.train.clone(),
        proxy: config.proxy,
        eval_seed: config.eval_seed,
        condition_numbers: config.condition_numbers.clone(),
    };
    let mut out = Vec::new();
    let strengths = |task: Task, out: &mut Vec<CellConfig>| -> Result<()> {
        for &alpha in &config.alphas {
            for &seed in &config.seeds {
                out.push(cell(task, GateSpec::strength(alpha)?, seed));
            }
        }
        Ok(())
    };
    if config.includes_curved() {
        strengths(Task::Curved, &mut out)?;
        for &variant in &config.ablation {
            for &seed in &config.seeds {
                out.push(cell(Task::Curved, GateSpec::new(variant), seed));
            }
        }
    }
    if config.includes_linear() {
        strengths(Task::Linear { w: config.linear_w }, &mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Pending,
    Completed,
    Aborted { epoch: usize, step: u64, reason: String },
    Failed { error: String },
}

impl CellStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CellStatus::Pending => "pending",
            CellStatus::Completed => "completed",
            CellStatus::Aborted { .. } => "aborted",
            CellStatus::Failed { .. } => "failed",
        }
    }

    /// Completed or aborted: a recorded outcome that reruns keep.
    pub fn is_final(&self) -> bool {
        matches!(self, CellStatus::Completed | CellStatus::Aborted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub hash: String,
    pub config: CellConfig,
    pub status: CellStatus,
    pub test_accuracy: Option<f64>,
    pub curvature: Option<ModelCurvature>,
    pub epochs: Vec<EpochMetrics>,
}

impl CellResult {
    pub fn is_completed(&self) -> bool {
        self.status == CellStatus::Completed
    }

    pub fn aniso(&self, condition_number: f64) -> Option<f64> {
        self.curvature
            .as_ref()?
            .aniso
            .iter()
            .find(|(c, _)| *c == condition_number)
            .map(|(_, v)| *v)
    }
}

/// One row per `(cell, condition number)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub task: String,
    pub variant: String,
    pub alpha: f64,
    pub condition_number: f64,
    pub seed: u64,
    pub status: String,
    pub test_accuracy: Option<f64>,
    pub curvature_iso: Option<f64>,
    pub curvature_aniso: Option<f64>,
    pub curvature_sqrt_embed: Option<f64>,
}

pub const RECORD_HEADER: &str =
    "task,variant,alpha,condition_number,seed,status,test_accuracy,curvature_iso,curvature_aniso,curvature_sqrt_embed";

impl SweepRecord {
    pub fn from_cell(cell: &CellResult) -> Vec<SweepRecord> {
        cell.config
            .condition_numbers
            .iter()
            .map(|&c| SweepRecord {
                task: cell.config.task.name().into(),
                variant: cell.config.variant().as_str().into(),
                alpha: cell.config.gate.alpha,
                condition_number: c,
                seed: cell.config.seed,
                status: cell.status.label().into(),
                test_accuracy: cell.test_accuracy,
                curvature_iso: cell.curvature.as_ref().map(|k| k.iso),
                curvature_aniso: cell.aniso(c),
                curvature_sqrt_embed: cell.curvature.as_ref().map(|k| k.sqrt_embed),
            })
            .collect()
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.task,
            self.variant,
            fmt_f64(self.alpha),
            fmt_f64(self.condition_number),
            self.seed,
            self.status,
            opt(self.test_accuracy),
            opt(self.curvature_iso),
            opt(self.curvature_aniso),
            opt(self.curvature_sqrt_embed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub hash: String,
    pub task: String,
    pub variant: String,
    pub alpha: f64,
    pub seed: u64,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cells: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn failed(&self) -> Vec<&ManifestEntry> {
        self.cells
            .iter()
            .filter(|c| matches!(c.status, CellStatus::Failed { .. }))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub results: Vec<CellResult>,
    pub manifest: Manifest,
    pub executed: usize,
    pub reused: usize,
}

impl SweepOutcome {
    pub fn has_failures(&self) -> bool {
        !self.manifest.failed().is_empty()
    }
}

fn cell_path(out: &Path, hash: &str) -> PathBuf {
    out.join("cells").join(format!("{hash}.json"))
}

fn checkpoint_path(out: &Path, hash: &str) -> PathBuf {
    out.join("checkpoints").join(format!("{hash}.json"))
}

fn load_existing(out: &Path, cell: &CellConfig, hash: &str) -> Option<CellResult> {
    let bytes = std::fs::read(cell_path(out, hash)).ok()?;
    let result: CellResult = serde_json::from_slice(&bytes).ok()?;
    let usable = result.config == *cell
        && result.status.is_final()
        && (!result.is_completed() || checkpoint_path(out, hash).exists());
    usable.then_some(result)
}

/// Trains one cell, measures its proxies and, when the run completes, saves
/// the model to `checkpoint`.
pub fn train_cell(cell: &CellConfig, probes: &ProbeSet, checkpoint: &Path) -> Result<CellResult> {
    let data = data::generate(&cell.data, cell.seed)?;
    let outcome = train(&cell.train, &data, cell.gate, cell.seed)?;
    let (status, test_accuracy, curvature) = match outcome.status {
        RunStatus::Completed => {
            let k = model_curvature(&outcome.model, probes, &cell.proxy, &cell.condition_numbers)?;
            checkpoint::save(&outcome.model, checkpoint)?;
            (CellStatus::Completed, outcome.final_test_accuracy(), Some(k))
        }
        RunStatus::Aborted { epoch, step, reason } => (CellStatus::Aborted { epoch, step, reason }, None, None),
    };
    Ok(CellResult {
        hash: cell.hash(),
        config: cell.clone(),
        status,
        test_accuracy,
        curvature,
        epochs: outcome.epochs,
    })
}

fn manifest_of(plan: &[CellConfig], hashes: &[String], slots: &[Option<std::result::Result<CellResult, String>>]) -> Manifest {
    Manifest {
        cells: plan
            .iter()
            .zip(hashes)
            .zip(slots)
            .map(|((cell, hash), slot)| ManifestEntry {
                hash: hash.clone(),
                task: cell.task.name().into(),
                variant: cell.variant().as_str().into(),
                alpha: cell.gate.alpha,
                seed: cell.seed,
                status: match slot {
                    None => CellStatus::Pending,
                    Some(Ok(r)) => r.status.clone(),
                    Some(Err(e)) => CellStatus::Failed { error: e.clone() },
                },
            })
            .collect(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Runs every planned cell not already recorded under `out`, then writes
/// the manifest and all exports. Cells that error are listed as failed in
/// the manifest and retried on the next run.
pub fn run_sweep(config: &SweepConfig, out: &Path) -> Result<SweepOutcome> {
    run_sweep_with_progress(config, out, &|_, _| {})
}

/// [`run_sweep`] calling `progress(done, entry)` after each executed cell.
pub fn run_sweep_with_progress(
    config: &SweepConfig,
    out: &Path,
    progress: &(dyn Fn(usize, &ManifestEntry) + Sync),
) -> Result<SweepOutcome> {
    let plan = plan_cells(config)?;
    write_json(&out.join("resolved_config.json"), config)?;
    let hashes: Vec<String> = plan.iter().map(CellConfig::hash).collect();
    let probes = ProbeSet::new(
        &config.proxy,
        config.eval_seed,
        config.data.center_box,
        config.data.seq_len,
        config.data.noise_sigma,
    )?;

    let mut slots: Vec<Option<std::result::Result<CellResult, String>>> = vec![None; plan.len()];
    let mut pending = Vec::new();
    for (i, (cell, hash)) in plan.iter().zip(&hashes).enumerate() {
        match load_existing(out, cell, hash) {
            Some(r) => slots[i] = Some(Ok(r)),
            None => pending.push(i),
        }
    }
    let reused = plan.len() - pending.len();
    write_json(&out.join("manifest.json"), &manifest_of(&plan, &hashes, &slots))?;

    let next = AtomicUsize::new(0);
    let slots = Mutex::new(slots);
    let io_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..config.workers.min(pending.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(k) else { break };
                let result = train_cell(&plan[i], &probes, &checkpoint_path(out, &hashes[i]));
                let slot = match result {
                    Ok(r) => match write_json(&cell_path(out, &hashes[i]), &r) {
                        Ok(()) => Ok(r),
                        Err(e) => Err(e.to_string()),
                    },
                    Err(e) => Err(e.to_string()),
                };
                let mut guard = slots.lock().unwrap();
                guard[i] = Some(slot);
                let manifest = manifest_of(&plan, &hashes, &guard);
                if let Err(e) = write_json(&out.join("manifest.json"), &manifest) {
                    io_error.lock().unwrap().get_or_insert(e);
                }
                let done = guard.iter().filter(|s| s.is_some()).count();
                progress(done, &manifest.cells[i]);
            });
        }
    });
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e);
    }
    let slots = slots.into_inner().unwrap();
    let manifest = manifest_of(&plan, &hashes, &slots);
    write_json(&out.join("manifest.json"), &manifest)?;
    let results: Vec<CellResult> = slots.into_iter().flatten().filter_map(|s| s.ok()).collect();
    write_exports(out, config, &results)?;
    Ok(SweepOutcome {
        results,
        manifest,
        executed: pending.len(),
        reused,
    })
}

/// Recorded cells of the planned sweep, in plan order.
pub fn load_cells(out: &Path, config: &SweepConfig) -> Result<(Vec<CellResult>, Vec<String>)> {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for cell in plan_cells(config)? {
        let hash = cell.hash();
        match load_existing(out, &cell, &hash) {
            Some(r) => found.push(r),
            None => missing.push(hash),
        }
    }
    Ok((found, missing))
}

fn boundary_csv(out: &Path, config: &SweepConfig, results: &[CellResult]) -> Result<Option<String>> {
    let boundary_cells: Vec<&CellResult> = results
        .iter()
        .filter(|r| {
            r.is_completed()
                && r.config.task == Task::Curved
                && r.config.is_strength()
                && config.boundary.alphas.contains(&r.config.gate.alpha)
                && config.boundary.seeds.contains(&r.config.seed)
        })
        .collect();
    if boundary_cells.is_empty() {
        return Ok(None);
    }
    let mut s = format!("variant,alpha,seed,{}\n", data::GRID_HEADER);
    for cell in boundary_cells {
        let model = checkpoint::load(&checkpoint_path(out, &cell.hash))?;
        let prepared = Prepared::new(&model);
        let seq_len = cell.config.data.seq_len;
        let predict = |c: [f64; 2]| -> Result<[f64; 2]> {
            let l = prepared.logits(&constant_sequence(c, seq_len))?;
            Ok([l[0], l[1]])
        };
        let rows = latent_grid(config.boundary.resolution, cell.config.data.center_box, &Task::Curved, Some(&predict))?;
        let prefix = format!("{},{},{}", cell.config.variant(), fmt_f64(cell.config.gate.alpha), cell.config.seed);
        for row in &rows {
            let _ = writeln!(s, "{prefix},{}", data::grid_csv_row(row));
        }
    }
    Ok(Some(s))
}

/// Writes records, per-epoch metrics and every figure/table CSV derived from
/// `results`. Output depends only on the results, never on execution order.
pub fn write_exports(out: &Path, config: &SweepConfig, results: &[CellResult]) -> Result<()> {
    let records: Vec<SweepRecord> = results.iter().flat_map(SweepRecord::from_cell).collect();
    let mut csv = format!("{RECORD_HEADER}\n");
    let mut jsonl = String::new();
    for r in &records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    write_atomic(&out.join("records.csv"), csv.as_bytes())?;
    write_atomic(&out.join("records.jsonl"), jsonl.as_bytes())?;

    let mut metrics = String::new();
    for r in results {
        for e in &r.epochs {
            let line = serde_json::json!({
                "cell": r.hash,
                "task": r.config.task.name(),
                "variant": r.config.variant().as_str(),
                "alpha": r.config.gate.alpha,
                "seed": r.config.seed,
                "epoch": e.epoch,
                "train_loss": e.train_loss,
                "test_acc": e.test_acc,
            });
            metrics.push_str(&line.to_string());
            metrics.push('\n');
        }
    }
    write_atomic(&out.join("metrics.jsonl"), metrics.as_bytes())?;

    let curved_strength: Vec<&CellResult> = results
        .iter()
        .filter(|r| r.config.task == Task::Curved && r.config.is_strength())
        .collect();
    if !curved_strength.is_empty() {
        write_atomic(
            &out.join("fig2_gate_vs_curvature.csv"),
            aggregate_csv(&aggregate(&curved_strength)).as_bytes(),
        )?;

        let mut fig4 = String::from("alpha,seed,status,curvature_iso,test_accuracy,curvature_sqrt_embed\n");
        for r in &curved_strength {
            let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(
                fig4,
                "{},{},{},{},{},{}",
                fmt_f64(r.config.gate.alpha),
                r.config.seed,
                r.status.label(),
                opt(r.curvature.as_ref().map(|k| k.iso)),
                opt(r.test_accuracy),
                opt(r.curvature.as_ref().map(|k| k.sqrt_embed))
            );
        }
        write_atomic(&out.join("fig4_curvature_vs_accuracy.csv"), fig4.as_bytes())?;

        let mut fig6 = String::from("alpha,condition_number,n,curvature_iso_mean,curvature_aniso_mean\n");
        for row in aggregate(&curved_strength) {
            let _ = writeln!(
                fig6,
                "{},{},{},{},{}",
                fmt_f64(row.alpha),
                fmt_f64(row.condition_number),
                row.n,
                fmt_f64(row.curvature_iso.0),
                fmt_f64(row.curvature_aniso.0)
            );
        }
        write_atomic(&out.join("fig6_iso_vs_aniso.csv"), fig6.as_bytes())?;
    }

    let ablation: Vec<&CellResult> = results
        .iter()
        .filter(|r| r.config.task == Task::Curved && !r.config.is_strength())
        .collect();
    if !ablation.is_empty() {
        write_atomic(&out.join("fig5_ablation.csv"), aggregate_csv(&aggregate(&ablation)).as_bytes())?;
    }

    if let Some(s) = boundary_csv(out, config, results)? {
        write_atomic(&out.join("fig3_boundaries.csv"), s.as_bytes())?;
    }

    let linear: Vec<&CellResult> = results
        .iter()
        .filter(|r| matches!(r.config.task, Task::Linear { .. }) && r.config.is_strength())
        .collect();
    if !linear.is_empty() {
        let (cond, rows) = linear_control_rows(&linear, &config.condition_numbers);
        let cond_label = cond.map(fmt_f64).unwrap_or_else(|| "none".into());
        let mut s = format!(
            "alpha,n,accuracy_mean,accuracy_std,curvature_iso_mean,curvature_aniso_cond_{cond_label}_mean\n"
        );
        for r in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt_f64(r.alpha),
                r.n,
                fmt_f64(r.accuracy.0),
                fmt_f64(r.accuracy.1),
                fmt_f64(r.curvature_iso_mean),
                fmt_f64(r.curvature_aniso_mean)
            );
        }
        write_atomic(&out.join("tableA4_linear_control.csv"), s.as_bytes())?;
    }
    Ok(())
}
