use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{mean_std, pearson, spearman};
use super::sweep::{load_cells, CellResult, Manifest, SweepConfig, SweepRecord};
use crate::data::Task;
use crate::error::Result;
use crate::io::{fmt_f64, write_atomic};

/// Mean ± sample std over seeds of one `(task, variant, alpha, condition)`
/// group; only completed cells contribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task: String,
    pub variant: String,
    pub alpha: f64,
    pub condition_number: f64,
    pub n: usize,
    pub accuracy: (f64, f64),
    pub curvature_iso: (f64, f64),
    pub curvature_aniso: (f64, f64),
    pub curvature_sqrt_embed: (f64, f64),
}

fn values(records: &[&SweepRecord], f: impl Fn(&SweepRecord) -> Option<f64>) -> (f64, f64) {
    mean_std(&records.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
}

/// Groups in first-appearance order.
pub(crate) fn aggregate(cells: &[&CellResult]) -> Vec<AggregateRow> {
    let records: Vec<SweepRecord> = cells
        .iter()
        .filter(|c| c.is_completed())
        .flat_map(|c| SweepRecord::from_cell(c))
        .collect();
    let mut keys: Vec<(String, String, f64, f64)> = Vec::new();
    for r in &records {
        let key = (r.task.clone(), r.variant.clone(), r.alpha, r.condition_number);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(task, variant, alpha, condition_number)| {
            let group: Vec<&SweepRecord> = records
                .iter()
                .filter(|r| r.task == task && r.variant == variant && r.alpha == alpha && r.condition_number == condition_number)
                .collect();
            AggregateRow {
                n: group.len(),
                accuracy: values(&group, |r| r.test_accuracy),
                curvature_iso: values(&group, |r| r.curvature_iso),
                curvature_aniso: values(&group, |r| r.curvature_aniso),
                curvature_sqrt_embed: values(&group, |r| r.curvature_sqrt_embed),
                task,
                variant,
                alpha,
                condition_number,
            }
        })
        .collect()
}

pub(crate) fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from(
        "task,variant,alpha,condition_number,n,accuracy_mean,accuracy_std,curvature_iso_mean,curvature_iso_std,curvature_aniso_mean,curvature_aniso_std,curvature_sqrt_embed_mean,curvature_sqrt_embed_std\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.task,
            r.variant,
            fmt_f64(r.alpha),
            fmt_f64(r.condition_number),
            r.n,
            fmt_f64(r.accuracy.0),
            fmt_f64(r.accuracy.1),
            fmt_f64(r.curvature_iso.0),
            fmt_f64(r.curvature_iso.1),
            fmt_f64(r.curvature_aniso.0),
            fmt_f64(r.curvature_aniso.1),
            fmt_f64(r.curvature_sqrt_embed.0),
            fmt_f64(r.curvature_sqrt_embed.1)
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearControlRow {
    pub alpha: f64,
    pub n: usize,
    pub accuracy: (f64, f64),
    pub curvature_iso_mean: f64,
    pub curvature_aniso_mean: f64,
}

/// Per-alpha rows of the linear-control table. The anisotropic column uses
/// condition number 12 when swept, otherwise the largest one.
pub fn linear_control_rows(cells: &[&CellResult], condition_numbers: &[f64]) -> (Option<f64>, Vec<LinearControlRow>) {
    let cond = if condition_numbers.contains(&12.0) {
        Some(12.0)
    } else {
        condition_numbers.iter().copied().reduce(f64::max)
    };
    let mut alphas: Vec<f64> = Vec::new();
    for c in cells {
        if !alphas.contains(&c.config.gate.alpha) {
            alphas.push(c.config.gate.alpha);
        }
    }
    let rows = alphas
        .into_iter()
        .map(|alpha| {
            let group: Vec<&&CellResult> = cells.iter().filter(|c| c.config.gate.alpha == alpha && c.is_completed()).collect();
            let acc: Vec<f64> = group.iter().filter_map(|c| c.test_accuracy).collect();
            let iso: Vec<f64> = group.iter().filter_map(|c| c.curvature.as_ref().map(|k| k.iso)).collect();
            let aniso: Vec<f64> = group.iter().filter_map(|c| cond.and_then(|k| c.aniso(k))).collect();
            LinearControlRow {
                alpha,
                n: group.len(),
                accuracy: mean_std(&acc),
                curvature_iso_mean: mean_std(&iso).0,
                curvature_aniso_mean: mean_std(&aniso).0,
            }
        })
        .collect();
    (cond, rows)
}

/// One line of the experiment scorecard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub criterion: u8,
    pub name: String,
    pub measured: f64,
    pub threshold: String,
    pub pass: bool,
}

impl ScoreLine {
    fn new(criterion: u8, name: impl Into<String>, measured: f64, threshold: impl Into<String>, pass: bool) -> Self {
        Self {
            criterion,
            name: name.into(),
            measured,
            threshold: threshold.into(),
            pass,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2}: {} = {} ({})",
            if self.pass { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            fmt_f64(self.measured),
            self.threshold
        )
    }
}

fn at_alpha<'a>(cells: &'a [&CellResult], alpha: f64) -> impl Iterator<Item = &'a CellResult> + 'a {
    cells
        .iter()
        .copied()
        .filter(move |c| c.config.gate.alpha == alpha && c.is_completed())
}

fn mean_at(cells: &[&CellResult], alpha: f64, f: impl Fn(&CellResult) -> Option<f64>) -> f64 {
    mean_std(&at_alpha(cells, alpha).filter_map(f).collect::<Vec<_>>()).0
}

fn distinct_alphas(cells: &[&CellResult]) -> Vec<f64> {
    let mut alphas: Vec<f64> = Vec::new();
    for c in cells {
        if !alphas.contains(&c.config.gate.alpha) {
            alphas.push(c.config.gate.alpha);
        }
    }
    alphas
}

fn iso(c: &CellResult) -> Option<f64> {
    c.curvature.as_ref().map(|k| k.iso)
}

/// Curved task, strength cells: gating helps accuracy, raises curvature, and
/// curvature correlates with accuracy.
pub fn score_curved(cells: &[&CellResult]) -> Vec<ScoreLine> {
    let acc = |c: &CellResult| c.test_accuracy;
    let gated = mean_at(cells, 1.0, acc);
    let ungated = mean_at(cells, 0.0, acc);
    let k_hi = mean_at(cells, 1.5, iso);
    let k_lo = mean_at(cells, 0.0, iso);
    let (xs, ys): (Vec<f64>, Vec<f64>) = cells
        .iter()
        .filter(|c| c.is_completed())
        .filter_map(|c| Some((iso(c)?, c.test_accuracy?)))
        .unzip();
    let r = pearson(&xs, &ys).unwrap_or(f64::NAN);
    vec![
        ScoreLine::new(
            11,
            "mean accuracy alpha=1 minus alpha=0",
            gated - ungated,
            format!("> 0 ({} vs {})", fmt_f64(gated), fmt_f64(ungated)),
            gated > ungated,
        ),
        ScoreLine::new(
            11,
            "mean iso curvature alpha=1.5 minus alpha=0",
            k_hi - k_lo,
            format!("> 0 ({} vs {})", fmt_f64(k_hi), fmt_f64(k_lo)),
            k_hi > k_lo,
        ),
        ScoreLine::new(
            11,
            format!("pearson(curvature_iso, accuracy) over {} runs", xs.len()),
            r,
            "> 0.4",
            r > 0.4,
        ),
    ]
}

/// Curved task, strength cells: isotropic curvature does not depend on the
/// condition number, and the alpha ordering agrees between iso and aniso.
pub fn score_isotropy(cells: &[&CellResult], condition_numbers: &[f64]) -> Vec<ScoreLine> {
    let mut spread: f64 = 0.0;
    for c in cells.iter().filter(|c| c.is_completed()) {
        let recs = SweepRecord::from_cell(c);
        for r in &recs {
            let d = (r.curvature_iso.unwrap_or(f64::NAN) - recs[0].curvature_iso.unwrap_or(f64::NAN)).abs();
            spread = if d.is_nan() { f64::NAN } else { spread.max(d) };
        }
    }
    let mut out = vec![ScoreLine::new(
        12,
        "max iso curvature difference across condition numbers",
        spread,
        "== 0",
        spread == 0.0,
    )];
    let alphas = distinct_alphas(cells);
    let iso_means: Vec<f64> = alphas.iter().map(|&a| mean_at(cells, a, iso)).collect();
    for &cond in condition_numbers {
        let aniso_means: Vec<f64> = alphas.iter().map(|&a| mean_at(cells, a, |c| c.aniso(cond))).collect();
        let rho = spearman(&iso_means, &aniso_means).unwrap_or(f64::NAN);
        out.push(ScoreLine::new(
            12,
            format!("spearman over alphas, iso vs aniso cond={}", fmt_f64(cond)),
            rho,
            ">= 0.9",
            rho >= 0.9,
        ));
    }
    out
}

/// Linear task, strength cells: accuracy band at alpha 0 and no systematic
/// effect of gate strength on accuracy.
pub fn score_linear(cells: &[&CellResult]) -> Vec<ScoreLine> {
    let alphas = distinct_alphas(cells);
    let stats: Vec<(f64, f64)> = alphas
        .iter()
        .map(|&a| mean_std(&at_alpha(cells, a).filter_map(|c| c.test_accuracy).collect::<Vec<_>>()))
        .collect();
    let base = alphas
        .iter()
        .position(|&a| a == 0.0)
        .map_or(f64::NAN, |i| stats[i].0);
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let spread = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) - means.iter().copied().fold(f64::INFINITY, f64::min);
    let pooled = (stats.iter().map(|s| s.1 * s.1).sum::<f64>() / stats.len() as f64).sqrt();
    vec![
        ScoreLine::new(13, "mean accuracy at alpha=0", base, "in [0.94, 0.99]", (0.94..=0.99).contains(&base)),
        ScoreLine::new(
            13,
            "max spread of mean accuracy across alphas",
            spread,
            format!("< 2 x pooled std = {}", fmt_f64(2.0 * pooled)),
            spread < 2.0 * pooled,
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub complete: bool,
    pub expected_cells: usize,
    pub recorded_cells: usize,
    pub missing: Vec<String>,
    pub failed: Vec<String>,
    pub aggregates: Vec<AggregateRow>,
    pub linear_control: Vec<LinearControlRow>,
    pub scorecard: Vec<ScoreLine>,
    pub notes: Vec<String>,
}

impl Report {
    fn incomplete(note: String) -> Self {
        Self {
            complete: false,
            expected_cells: 0,
            recorded_cells: 0,
            missing: Vec::new(),
            failed: Vec::new(),
            aggregates: Vec::new(),
            linear_control: Vec::new(),
            scorecard: Vec::new(),
            notes: vec![note],
        }
    }

    /// Complete and every scorecard line passes.
    pub fn passed(&self) -> bool {
        self.complete && self.scorecard.iter().all(|s| s.pass)
    }
}

/// Aggregates a sweep directory. A missing configuration or missing cells
/// give an incomplete report rather than an error.
pub fn build_report(dir: &Path) -> Result<Report> {
    let config_path = dir.join("resolved_config.json");
    let Ok(bytes) = std::fs::read(&config_path) else {
        return Ok(Report::incomplete(format!("{} not found", config_path.display())));
    };
    let config: SweepConfig = serde_json::from_slice(&bytes)?;
    let (cells, missing) = load_cells(dir, &config)?;
    let failed = std::fs::read(dir.join("manifest.json"))
        .ok()
        .and_then(|b| serde_json::from_slice::<Manifest>(&b).ok())
        .map(|m| m.failed().into_iter().map(|e| e.hash.clone()).collect())
        .unwrap_or_default();

    let all: Vec<&CellResult> = cells.iter().collect();
    let curved: Vec<&CellResult> = cells
        .iter()
        .filter(|c| c.config.task == Task::Curved && c.config.is_strength())
        .collect();
    let linear: Vec<&CellResult> = cells
        .iter()
        .filter(|c| matches!(c.config.task, Task::Linear { .. }))
        .collect();
    let mut scorecard = Vec::new();
    if !curved.is_empty() {
        scorecard.extend(score_curved(&curved));
        scorecard.extend(score_isotropy(&curved, &config.condition_numbers));
    }
    if !linear.is_empty() {
        scorecard.extend(score_linear(&linear));
    }
    let mut notes = Vec::new();
    let aborted = cells.iter().filter(|c| !c.is_completed()).count();
    if aborted > 0 {
        notes.push(format!("{aborted} aborted runs excluded from aggregates"));
    }
    Ok(Report {
        complete: missing.is_empty(),
        expected_cells: cells.len() + missing.len(),
        recorded_cells: cells.len(),
        missing,
        failed,
        aggregates: aggregate(&all),
        linear_control: linear_control_rows(&linear, &config.condition_numbers).1,
        scorecard,
        notes,
    })
}

/// Writes `report.json`, `report_aggregates.csv` and `scorecard.txt`.
pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    write_atomic(&dir.join("report.json"), &json)?;
    write_atomic(&dir.join("report_aggregates.csv"), aggregate_csv(&report.aggregates).as_bytes())?;
    let mut card = String::new();
    if !report.complete {
        let _ = writeln!(card, "INCOMPLETE: {} of {} cells recorded", report.recorded_cells, report.expected_cells);
    }
    for line in &report.scorecard {
        card.push_str(&line.line());
        card.push('\n');
    }
    write_atomic(&dir.join("scorecard.txt"), card.as_bytes())
}
