//! Replication studies comparing calibrated and primary-only estimators.
//!
//! Replication `k` uses `ChaCha8Rng::seed_from_u64(seed)` on stream `k + 1`;
//! stream 0 draws the shared sample on which learned rules are evaluated.
//! Replications run in parallel and are aggregated in replication order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calib_stats, calibrated_value, improved_efficiency, uncalibrated_value, CalibrationReport};
use crate::config::{Config, Mode};
use crate::error::{CodaError, Result};
use crate::nuisance::fit_predictions_for;
use crate::rewards::build_rewards;
use crate::search::coda::coda_search;
use crate::simulation::scenario::{generate_with, Design, NoiseSpec, ScenarioSpec};
use crate::simulation::truth::{EvalSample, McValue};

/// Size of the shared evaluation sample for learned rules.
pub const EVAL_SAMPLE: usize = 1_000_000;

/// Estimator and rule of one summary column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    /// Calibrated estimator at the optimal rule.
    CodaOptimal,
    /// Calibrated estimator at the rule learned by the calibrated search.
    CodaLearned,
    /// Primary-only estimator at the optimal rule.
    OdrOptimal,
    /// Primary-only estimator at the rule learned from the primary sample.
    OdrLearned,
}

impl Cell {
    pub const ALL: [Cell; 4] = [Cell::CodaOptimal, Cell::CodaLearned, Cell::OdrOptimal, Cell::OdrLearned];

    pub fn label(self) -> &'static str {
        match self {
            Cell::CodaOptimal => "CODA(d_opt)",
            Cell::CodaLearned => "CODA(d_hat)",
            Cell::OdrOptimal => "ODR(d_opt)",
            Cell::OdrLearned => "ODR(d_hat_E)",
        }
    }

    fn baseline(self) -> Option<Cell> {
        match self {
            Cell::CodaOptimal => Some(Cell::OdrOptimal),
            Cell::CodaLearned => Some(Cell::OdrLearned),
            _ => None,
        }
    }
}

/// One replication's numbers for one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub estimate: f64,
    pub sigma_hat: f64,
    pub covers: bool,
    pub true_value: f64,
    pub rho: Vec<f64>,
    pub sigma_m: Vec<f64>,
    /// Calibrated variance exceeded `sigma_y2`.
    pub variance_violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub cells: Vec<CellRecord>,
}

/// Column of a study summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub label: String,
    /// Mean true value of the evaluated rule.
    pub true_value: f64,
    pub mean_estimate: f64,
    /// Standard deviation of the estimates; absent with one replication.
    pub sd_estimate: Option<f64>,
    pub mean_sigma_hat: f64,
    pub coverage: f64,
    /// Reduction in SD relative to the matching primary-only column.
    pub improved_efficiency: Option<f64>,
    pub mean_rho: Vec<f64>,
    /// Row-major mean of the intermediate covariance.
    pub mean_sigma_m: Vec<f64>,
    pub variance_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub scenario: u8,
    pub design: Design,
    pub mode: Mode,
    pub n_e: usize,
    pub n_u: usize,
    pub reps: usize,
    pub completed: usize,
    pub failed: usize,
    pub seed: u64,
    pub noise: NoiseSpec,
    /// `V(d_opt)` on the shared evaluation sample.
    pub optimal_value: McValue,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<String>,
}

impl StudySummary {
    pub fn cell(&self, cell: Cell) -> &CellSummary {
        self.cells
            .iter()
            .find(|c| c.cell == cell)
            .expect("every cell is summarized")
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Default)]
struct Sum {
    total: f64,
    carry: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.total + v;
        if self.total.abs() >= v.abs() {
            self.carry += (self.total - t) + v;
        } else {
            self.carry += (v - t) + self.total;
        }
        self.total = t;
    }

    fn value(&self) -> f64 {
        self.total + self.carry
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut s = Sum::default();
    let mut n = 0;
    values.for_each(|v| {
        s.add(v);
        n += 1;
    });
    (s.value() / n.max(1) as f64, n)
}

fn record(rep: &CalibrationReport, truth: f64, optimal: f64) -> CellRecord {
    CellRecord {
        estimate: rep.value,
        sigma_hat: rep.sd(),
        covers: rep.covers(optimal),
        true_value: truth,
        rho: rep.rho.clone(),
        sigma_m: rep.sigma_m.transpose().iter().copied().collect(),
        variance_violation: rep.variance > rep.sigma_y2,
    }
}

/// Runs one replication on its own random stream.
#[allow(clippy::too_many_arguments)]
pub fn run_replication(
    spec: &ScenarioSpec,
    n_e: usize,
    n_u: usize,
    cfg: &Config,
    seed: u64,
    index: usize,
    eval: &EvalSample,
    optimal: &McValue,
) -> Result<Replication> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let (e, u) = generate_with(spec, n_e, n_u, &mut rng)?;
    let mode = spec.design.mode();
    let (preds, _) = fit_predictions_for(&e, &u, cfg, mode)?;
    let tbl = build_rewards(&e, &u, &preds)?;

    let opt_rule = spec.optimal_rule();
    let stats = calib_stats(&tbl, &tbl.actions(&opt_rule)?, mode)?;
    let coda_opt = calibrated_value(&stats, cfg.alpha, cfg.ridge)?;
    let odr_opt = uncalibrated_value(&stats, cfg.alpha)?;

    let search = coda_search(&tbl, mode, cfg)?;
    let learned = eval.value(&search.result.rule)?.value;
    let initial = if search.initial.rule == search.result.rule {
        learned
    } else {
        eval.value(&search.initial.rule)?.value
    };

    let v = optimal.value;
    Ok(Replication {
        index,
        cells: vec![
            record(&coda_opt, v, v),
            record(&search.report, learned, v),
            record(&odr_opt, v, v),
            record(&search.initial_report, initial, v),
        ],
    })
}

fn summarize_cell(cell: Cell, idx: usize, reps: &[Replication]) -> CellSummary {
    let get = |f: &dyn Fn(&CellRecord) -> f64| mean_of(reps.iter().map(|r| f(&r.cells[idx]))).0;
    let (mean_estimate, n) = mean_of(reps.iter().map(|r| r.cells[idx].estimate));
    let sd_estimate = (n > 1).then(|| {
        let (ss, _) = mean_of(reps.iter().map(|r| (r.cells[idx].estimate - mean_estimate).powi(2)));
        (ss * n as f64 / (n - 1) as f64).sqrt()
    });
    let width = reps.first().map_or(0, |r| r.cells[idx].rho.len());
    let mean_rho = (0..width).map(|k| get(&|c| c.rho[k])).collect();
    let width2 = reps.first().map_or(0, |r| r.cells[idx].sigma_m.len());
    let mean_sigma_m = (0..width2).map(|k| get(&|c| c.sigma_m[k])).collect();
    CellSummary {
        cell,
        label: cell.label().to_string(),
        true_value: get(&|c| c.true_value),
        mean_estimate,
        sd_estimate,
        mean_sigma_hat: get(&|c| c.sigma_hat),
        coverage: get(&|c| f64::from(u8::from(c.covers))),
        improved_efficiency: None,
        mean_rho,
        mean_sigma_m,
        variance_violations: reps.iter().filter(|r| r.cells[idx].variance_violation).count(),
    }
}

/// Aggregates replications in index order.
pub fn summarize(
    spec: &ScenarioSpec,
    n_e: usize,
    n_u: usize,
    seed: u64,
    optimal: McValue,
    outcomes: Vec<Result<Replication>>,
) -> StudySummary {
    let reps_total = outcomes.len();
    let mut reps = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => reps.push(r),
            Err(e) => failures.push(format!("replication {i}: {e}")),
        }
    }
    let mut cells: Vec<CellSummary> = Cell::ALL
        .iter()
        .enumerate()
        .map(|(idx, &cell)| summarize_cell(cell, idx, &reps))
        .collect();
    for idx in 0..cells.len() {
        if let Some(base) = cells[idx].cell.baseline() {
            let b = cells.iter().find(|c| c.cell == base).and_then(|c| c.sd_estimate);
            cells[idx].improved_efficiency = match (cells[idx].sd_estimate, b) {
                (Some(c), Some(b)) => improved_efficiency(c, b).ok(),
                _ => None,
            };
        }
    }
    StudySummary {
        scenario: spec.id,
        design: spec.design,
        mode: spec.design.mode(),
        n_e,
        n_u,
        reps: reps_total,
        completed: reps.len(),
        failed: failures.len(),
        seed,
        noise: spec.noise,
        optimal_value: optimal,
        cells,
        failures,
    }
}

/// Runs `reps` replications and summarizes them.
pub fn run_study(
    spec: &ScenarioSpec,
    n_e: usize,
    n_u: usize,
    reps: usize,
    cfg: &Config,
    seed: u64,
) -> Result<StudySummary> {
    if reps == 0 {
        return Err(CodaError::invalid("reps must be at least 1"));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let eval = EvalSample::draw_with(spec, EVAL_SAMPLE, &mut rng);
    let optimal = eval.value(&spec.optimal_rule())?;
    let outcomes: Vec<Result<Replication>> = (0..reps)
        .into_par_iter()
        .map(|i| run_replication(spec, n_e, n_u, cfg, seed, i, &eval, &optimal))
        .collect();
    let summary = summarize(spec, n_e, n_u, seed, optimal, outcomes);
    if summary.completed == 0 {
        return Err(CodaError::numeric(format!(
            "every replication failed; first error: {}",
            summary.failures.first().map_or("", String::as_str)
        )));
    }
    Ok(summary)
}

/// Calibrated and primary-only estimates at the optimal rule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixedRuleRecord {
    pub calibrated: CalibrationReport,
    pub primary_only: CalibrationReport,
}

/// Replications that only estimate `V(d_opt)`, skipping the rule search.
///
/// Uses the same random streams as [`run_study`], so the estimates agree
/// with its optimal-rule columns.
pub fn run_fixed_rule_study(
    spec: &ScenarioSpec,
    n_e: usize,
    n_u: usize,
    reps: usize,
    cfg: &Config,
    seed: u64,
) -> Result<Vec<FixedRuleRecord>> {
    cfg.validate()?;
    let rule = spec.optimal_rule();
    let mode = spec.design.mode();
    (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let (e, u) = generate_with(spec, n_e, n_u, &mut rng)?;
            let (preds, _) = fit_predictions_for(&e, &u, cfg, mode)?;
            let tbl = build_rewards(&e, &u, &preds)?;
            let stats = calib_stats(&tbl, &tbl.actions(&rule)?, mode)?;
            Ok(FixedRuleRecord {
                calibrated: calibrated_value(&stats, cfg.alpha, cfg.ridge)?,
                primary_only: uncalibrated_value(&stats, cfg.alpha)?,
            })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.digits$}"))
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(";")
}

/// Table rows: statistic name followed by one value per cell.
pub fn table_rows(summary: &StudySummary) -> Vec<Vec<String>> {
    let mut header = vec!["statistic".to_string()];
    header.extend(summary.cells.iter().map(|c| c.label.clone()));
    let row = |name: &str, f: &dyn Fn(&CellSummary) -> String| {
        let mut r = vec![name.to_string()];
        r.extend(summary.cells.iter().map(f));
        r
    };
    vec![
        header,
        row("true_value", &|c| format!("{:.3}", c.true_value)),
        row("estimated_value", &|c| format!("{:.3}", c.mean_estimate)),
        row("sd_estimate", &|c| fmt_opt(c.sd_estimate, 3)),
        row("mean_sigma_hat", &|c| format!("{:.3}", c.mean_sigma_hat)),
        row("coverage", &|c| format!("{:.3}", c.coverage)),
        row("improved_efficiency_pct", &|c| fmt_opt(c.improved_efficiency, 1)),
        row("rho", &|c| fmt_vec(&c.mean_rho)),
        row("sigma_m", &|c| fmt_vec(&c.mean_sigma_m)),
    ]
}

/// Writes the summary as a CSV table.
pub fn write_summary_csv<W: std::io::Write>(summary: &StudySummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in table_rows(summary) {
        w.write_record(&r)
            .map_err(|e| CodaError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
