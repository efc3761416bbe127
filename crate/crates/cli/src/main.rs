//! `gategeom` command line: construction checks, training, sweeps, reports
//! and decision-boundary exports.
//!
//! Exit codes: 0 success, 1 failed check or incomplete/failed aggregation,
//! 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gategeom::attention::{GateSpec, GateVariant};
use gategeom::checkpoint;
use gategeom::data::{self, constant_sequence, latent_grid, Task};
use gategeom::evaluation::{
    self, build_report, run_sweep_with_progress, train_cell, write_report, CellConfig, CellStatus, DataSettings,
    ProbeSet, ProxyConfig, SweepConfig, TaskSelection,
};
use gategeom::io::write_atomic;
use gategeom::training::{Prepared, TrainConfig};
use gategeom::verify::{self, VerifyOptions, VerifyRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

const OUT_ENV: &str = "GATEGEOM_OUT";

#[derive(Parser)]
#[command(name = "gategeom", version, about = "Curvature of gated attention representations")]
struct Cli {
    /// Root directory for outputs.
    #[arg(long, global = true, env = OUT_ENV, default_value = "results")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run construction checks and print a JSON report.
    Verify(VerifyArgs),
    /// Train one model and measure its curvature proxies.
    Train(TrainArgs),
    /// Run the gate-strength / ablation / linear-control sweep.
    Sweep(SweepArgs),
    /// Aggregate a sweep directory into a report and scorecard.
    Report(ReportArgs),
    /// Write a latent-grid decision boundary for a checkpoint.
    ExportBoundary(BoundaryArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// Check ids, or `all`.
    selectors: Vec<String>,
    /// Comma-separated check ids.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Depths for the depth-scaling scan.
    #[arg(long = "L", value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Perturbation trials for the robustness check.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// List check ids and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory; defaults to `<out-root>/train`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `all`, `curved` or `linear`.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory; defaults to `<out-root>/sweep`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep directory; defaults to `<out-root>/sweep`.
    dir: Option<PathBuf>,
}

#[derive(Args)]
struct BoundaryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Task providing the true labels: `curved` or `linear`.
    #[arg(long, default_value = "curved")]
    task: String,
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    #[arg(long, default_value_t = 8)]
    seq_len: usize,
    /// Output CSV; defaults to `<out-root>/boundary.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<gategeom::Error> for Failure {
    fn from(e: gategeom::Error) -> Self {
        let code = match e {
            gategeom::Error::Config(_) | gategeom::Error::Json(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(args) => cmd_verify(args, &cli.out_root),
        Command::Train(args) => cmd_train(args, &cli.out_root),
        Command::Sweep(args) => cmd_sweep(args, &cli.out_root),
        Command::Report(args) => cmd_report(args, &cli.out_root),
        Command::ExportBoundary(args) => cmd_export_boundary(args, &cli.out_root),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::usage(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = to_json(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    pass: bool,
    checks: Vec<&'a str>,
    records: &'a [VerifyRecord],
}

fn cmd_verify(args: VerifyArgs, out_root: &Path) -> CmdResult {
    if args.list {
        for (id, what) in verify::CHECKS {
            println!("{id:<20} {what}");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let mut options: VerifyOptions = load_config(args.config.as_deref())?;
    if let Some(l) = args.layers {
        options.depth_layers = l;
    }
    if let Some(s) = args.seed {
        options.seed = s;
    }
    if let Some(t) = args.trials {
        options.robustness.trials = t;
    }
    if let Some(w) = args.workers {
        options.robustness.workers = w;
    }
    if args.print_config {
        println!("{}", to_json(&options)?);
        return Ok(ExitCode::SUCCESS);
    }
    let mut selectors = args.selectors;
    selectors.extend(args.only);
    let checks = verify::resolve_selectors(&selectors).map_err(|e| Failure::usage(e.to_string()))?;
    let mut records = Vec::new();
    for id in &checks {
        let recs = verify::run_check(id, &options)?;
        for r in &recs {
            eprintln!(
                "[{}] {:<20} {} : measured {:e}, expected {:e} ± {:e}",
                if r.pass { "PASS" } else { "FAIL" },
                r.theorem_id,
                r.quantity,
                r.measured,
                r.expected,
                r.tolerance
            );
        }
        records.extend(recs);
    }
    let pass = records.iter().all(|r| r.pass);
    let report = VerifyReport {
        pass,
        checks: checks.clone(),
        records: &records,
    };
    std::fs::create_dir_all(out_root).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    write_json(&out_root.join("verify.json"), &report)?;
    println!("{}", to_json(&report)?);
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// Configuration of a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainCommandConfig {
    task: TaskSelection,
    variant: GateVariant,
    alpha: f64,
    seed: u64,
    linear_w: [f64; 2],
    data: DataSettings,
    train: TrainConfig,
    proxy: ProxyConfig,
    eval_seed: u64,
    condition_numbers: Vec<f64>,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        let sweep = SweepConfig::default();
        Self {
            task: TaskSelection::Curved,
            variant: GateVariant::Strength,
            alpha: 1.0,
            seed: 0,
            linear_w: sweep.linear_w,
            data: sweep.data,
            train: sweep.train,
            proxy: sweep.proxy,
            eval_seed: sweep.eval_seed,
            condition_numbers: sweep.condition_numbers,
        }
    }
}

impl TrainCommandConfig {
    fn cell(&self) -> Result<CellConfig, Failure> {
        let task = match self.task {
            TaskSelection::Curved => Task::Curved,
            TaskSelection::Linear => Task::Linear { w: self.linear_w },
            TaskSelection::All => return Err(Failure::usage("train needs a single task: curved or linear")),
        };
        let gate = if self.variant == GateVariant::Strength {
            GateSpec::strength(self.alpha)?
        } else {
            GateSpec::new(self.variant)
        };
        Ok(CellConfig {
            task,
            gate,
            seed: self.seed,
            data: self.data.spec(task),
            train: self.train.clone(),
            proxy: self.proxy,
            eval_seed: self.eval_seed,
            condition_numbers: self.condition_numbers.clone(),
        })
    }
}

fn parse_task(s: &str) -> Result<TaskSelection, Failure> {
    s.parse().map_err(|e: gategeom::Error| Failure::usage(e.to_string()))
}

fn cmd_train(args: TrainArgs, out_root: &Path) -> CmdResult {
    let mut config: TrainCommandConfig = load_config(args.config.as_deref())?;
    if let Some(t) = &args.task {
        config.task = parse_task(t)?;
    }
    if let Some(v) = &args.variant {
        config.variant = v.parse().map_err(|e: gategeom::Error| Failure::usage(e.to_string()))?;
    }
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if args.print_config {
        println!("{}", to_json(&config)?);
        return Ok(ExitCode::SUCCESS);
    }
    let cell = config.cell()?;
    let out = args.out.unwrap_or_else(|| out_root.join("train"));
    write_json(&out.join("resolved_config.json"), &config)?;
    let probes = ProbeSet::new(
        &cell.proxy,
        cell.eval_seed,
        cell.data.center_box,
        cell.data.seq_len,
        cell.data.noise_sigma,
    )?;
    let result = train_cell(&cell, &probes, &out.join("checkpoint.json"))?;
    let mut metrics = String::new();
    for e in &result.epochs {
        metrics.push_str(&serde_json::to_string(e).map_err(|e| Failure::usage(e.to_string()))?);
        metrics.push('\n');
    }
    write_atomic(&out.join("metrics.jsonl"), metrics.as_bytes())?;
    write_json(&out.join("result.json"), &result)?;
    println!("{}", to_json(&result)?);
    Ok(match result.status {
        CellStatus::Completed => ExitCode::SUCCESS,
        _ => ExitCode::from(1),
    })
}

fn cmd_sweep(args: SweepArgs, out_root: &Path) -> CmdResult {
    let mut config: SweepConfig = load_config(args.config.as_deref())?;
    if let Some(t) = &args.task {
        config.task = parse_task(t)?;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    if let Some(s) = args.seeds {
        config.seeds = s;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if args.print_config {
        println!("{}", to_json(&config)?);
        return Ok(ExitCode::SUCCESS);
    }
    let total = evaluation::plan_cells(&config)?.len();
    let out = args.out.unwrap_or_else(|| out_root.join("sweep"));
    let progress = |done: usize, entry: &evaluation::ManifestEntry| {
        eprintln!(
            "[{done}/{total}] {} {} alpha={} seed={}: {}",
            entry.task,
            entry.variant,
            entry.alpha,
            entry.seed,
            entry.status.label()
        );
    };
    let outcome = run_sweep_with_progress(&config, &out, &progress)?;
    eprintln!(
        "{} cells executed, {} reused, results in {}",
        outcome.executed,
        outcome.reused,
        out.display()
    );
    let failed = outcome.manifest.failed();
    for f in &failed {
        if let CellStatus::Failed { error } = &f.status {
            eprintln!("failed: {} ({} {} alpha={} seed={}): {error}", f.hash, f.task, f.variant, f.alpha, f.seed);
        }
    }
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_report(args: ReportArgs, out_root: &Path) -> CmdResult {
    let dir = args.dir.unwrap_or_else(|| out_root.join("sweep"));
    let report = build_report(&dir)?;
    if dir.is_dir() {
        write_report(&dir, &report)?;
    }
    if !report.complete {
        println!(
            "INCOMPLETE: {} of {} cells recorded in {}",
            report.recorded_cells,
            report.expected_cells,
            dir.display()
        );
        for note in &report.notes {
            println!("  {note}");
        }
    }
    for line in &report.scorecard {
        println!("{}", line.line());
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_export_boundary(args: BoundaryArgs, out_root: &Path) -> CmdResult {
    let task = match parse_task(&args.task)? {
        TaskSelection::Curved => Task::Curved,
        TaskSelection::Linear => Task::linear_default(),
        TaskSelection::All => return Err(Failure::usage("export-boundary needs `curved` or `linear`")),
    };
    let model = checkpoint::load(&args.checkpoint)?;
    let prepared = Prepared::new(&model);
    let seq_len = args.seq_len;
    let predict = |c: [f64; 2]| -> gategeom::Result<[f64; 2]> {
        let l = prepared.logits(&constant_sequence(c, seq_len))?;
        Ok([l[0], l[1]])
    };
    let rows = latent_grid(args.resolution, [-2.0, 2.0], &task, Some(&predict))?;
    let out = args.out.unwrap_or_else(|| out_root.join("boundary.csv"));
    write_atomic(&out, data::grid_csv(&rows).as_bytes())?;
    let agree = rows.iter().filter(|r| r.prediction.map(|p| p.0) == Some(r.true_label)).count();
    println!(
        "{} grid rows written to {}; prediction matches the true label on {:.4}",
        rows.len(),
        out.display(),
        agree as f64 / rows.len() as f64
    );
    Ok(ExitCode::SUCCESS)
}
