//! Iterative calibrated tree search.
//!
//! The calibration statistics depend on the rule, so they are frozen at the
//! previous rule, per-arm calibrated rewards are formed, and a plain tree
//! search is run on them. The loop stops when the tree repeats or after
//! `max_iter` rounds.

use serde::{Deserialize, Serialize};

use crate::calibration::{calib_stats, calibrated_value, project, uncalibrated_value, CalibStats, CalibrationReport};
use crate::config::{Config, Mode};
use crate::data::{validate_pair, AuxiliarySample, PrimarySample};
use crate::error::{CodaError, Result};
use crate::nuisance::fit_predictions_for;
use crate::rewards::{build_rewards, delta_hat, value_wu, RewardTable, RuleActions};
use crate::rule::DecisionRule;
use crate::search::tree::{exact_tree_search, SearchResult};

/// Result of the calibrated search together with the primary-only start.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CodaSearch {
    pub result: SearchResult,
    pub report: CalibrationReport,
    /// Tree learned from the primary sample alone.
    pub initial: SearchResult,
    /// Primary-only estimate at the initial tree.
    pub initial_report: CalibrationReport,
}

/// Calibrated per-arm rewards on primary rows with statistics frozen at
/// `stats`.
pub fn calibrated_rewards(tbl: &RewardTable, stats: &CalibStats, ridge: f64) -> Result<Vec<[f64; 2]>> {
    let coef = project(&stats.sigma, &stats.rho, ridge)?.coef;
    let dot = |w: &mut dyn Iterator<Item = f64>| -> f64 { coef.iter().zip(w).map(|(c, v)| c * v).sum() };
    let mut out = Vec::with_capacity(tbl.n_e);
    match stats.mode {
        Mode::Ho => {
            let w_u = [
                value_wu(tbl, &RuleActions::constant(tbl.n_e, tbl.n_u, 0))?,
                value_wu(tbl, &RuleActions::constant(tbl.n_e, tbl.n_u, 1))?,
            ];
            for i in 0..tbl.n_e {
                let mut row = [0.0; 2];
                for a in 0..2u8 {
                    let au = usize::from(a);
                    let adj = dot(&mut tbl.w_e_at(i, a).iter().zip(&w_u[au]).map(|(w, m)| w - m));
                    row[au] = tbl.v[i][au] - adj;
                }
                out.push(row);
            }
        }
        Mode::He => {
            let share = tbl.n_e as f64 / tbl.n() as f64;
            let delta = [delta_hat(tbl, 0), delta_hat(tbl, 1)];
            for i in 0..tbl.n_e {
                let mut row = [0.0; 2];
                for a in 0..2u8 {
                    let au = usize::from(a);
                    let adj = dot(&mut tbl
                        .w1_at(i, a)
                        .iter()
                        .zip(tbl.w0_at(i, a))
                        .zip(&delta[au])
                        .map(|((p, q), d)| share * (p - q) + d));
                    row[au] = tbl.v[i][au] - stats.scale * adj;
                }
                out.push(row);
            }
        }
    }
    Ok(out)
}

/// Runs the calibrated search on a prepared reward table.
pub fn coda_search(tbl: &RewardTable, mode: Mode, cfg: &Config) -> Result<CodaSearch> {
    cfg.validate()?;
    let x_e = tbl.x_primary();
    let initial = exact_tree_search(&tbl.v, &x_e, cfg.depth)?;
    let initial_stats = calib_stats(tbl, &tbl.actions(&initial.rule)?, mode)?;
    let initial_report = uncalibrated_value(&initial_stats, cfg.alpha)?.with_rule(initial.rule.clone());
    if cfg.max_iter == 0 {
        return Ok(CodaSearch {
            result: initial.clone(),
            report: initial_report.clone(),
            initial,
            initial_report,
        });
    }

    let mut current = initial.rule.clone();
    let mut stats = initial_stats;
    let mut trace = vec![initial.objective];
    let mut objective = initial.objective;
    let mut converged = false;
    let mut used = 0;
    for k in 1..=cfg.max_iter {
        used = k;
        let rewards = calibrated_rewards(tbl, &stats, cfg.ridge)?;
        let step = exact_tree_search(&rewards, &x_e, cfg.depth)?;
        trace.push(step.objective);
        objective = step.objective;
        if step.rule == current {
            converged = true;
            break;
        }
        current = step.rule;
        stats = calib_stats(tbl, &tbl.actions(&current)?, mode)?;
    }
    let report = calibrated_value(&stats, cfg.alpha, cfg.ridge)?.with_rule(current.clone());
    Ok(CodaSearch {
        result: SearchResult {
            rule: current,
            objective,
            iterations_used: used,
            converged,
            trace,
        },
        report,
        initial,
        initial_report,
    })
}

/// Output of the end-to-end analysis of a sample pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Analysis {
    pub mode: Mode,
    pub search: CodaSearch,
}

/// Validates the pair, fits nuisances, builds rewards and runs the
/// calibrated search.
pub fn analyze(e: &PrimarySample, u: &AuxiliarySample, cfg: &Config) -> Result<Analysis> {
    cfg.validate()?;
    let check = validate_pair(e, u);
    if !check.ok {
        return Err(CodaError::Invalid(check.failures.join("; ")));
    }
    let mode = cfg.mode.resolve(check.suggested_mode);
    let (preds, warnings) = fit_predictions_for(e, u, cfg, mode)?;
    let (clip_p, clip_s) = preds.clipped_counts(cfg.clip, cfg.sampling_clip);
    // HO never fits or reads the sampling probability.
    let clip_s = if mode == Mode::He { clip_s } else { 0 };
    let tbl = build_rewards(e, u, &preds)?;
    let mut search = coda_search(&tbl, mode, cfg)?;
    for rep in [&mut search.report, &mut search.initial_report] {
        rep.diagnostics.clipped_propensity = clip_p;
        rep.diagnostics.clipped_sampling = clip_s;
        rep.diagnostics.warnings.extend(warnings.iter().cloned());
    }
    Ok(Analysis { mode, search })
}

/// Calibrated report for a fixed rule.
pub fn evaluate_rule(tbl: &RewardTable, rule: &DecisionRule, mode: Mode, cfg: &Config) -> Result<CalibrationReport> {
    let stats = calib_stats(tbl, &tbl.actions(rule)?, mode)?;
    Ok(calibrated_value(&stats, cfg.alpha, cfg.ridge)?.with_rule(rule.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::NuisancePredictions;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_table(seed: u64, flat_w: bool) -> RewardTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_e, n_u) = (120, 150);
        let xe = DMatrix::from_fn(n_e, 2, |_, _| rng.random_range(-2.0..2.0));
        let xu = DMatrix::from_fn(n_u, 2, |_, _| rng.random_range(-2.0..2.0));
        let ae: Vec<u8> = (0..n_e).map(|_| rng.random_range(0..2)).collect();
        let au: Vec<u8> = (0..n_u).map(|_| rng.random_range(0..2)).collect();
        let me = DMatrix::from_fn(n_e, 1, |i, _| {
            if flat_w {
                0.0
            } else {
                xe[(i, 0)] + rng.random_range(-1.0..1.0)
            }
        });
        let mu = DMatrix::from_fn(n_u, 1, |i, _| {
            if flat_w {
                0.0
            } else {
                xu[(i, 0)] + rng.random_range(-1.0..1.0)
            }
        });
        let y = DVector::from_fn(n_e, |i, _| {
            xe[(i, 0)] * xe[(i, 1)] * f64::from(ae[i]) + me[(i, 0)] + rng.random_range(-1.0..1.0)
        });
        let e = PrimarySample::new(xe, ae, me, y).unwrap();
        let u = AuxiliarySample::new(xu, au, mu).unwrap();
        let n = n_e + n_u;
        let preds = NuisancePredictions {
            n_e,
            n_u,
            s: 1,
            pi_e: vec![0.5; n_e],
            pi_u: vec![0.5; n_u],
            pi_joint: vec![0.5; n],
            mu_e: vec![[0.0; 2]; n_e],
            theta: vec![0.0; n * 2],
            r_hat: vec![[n_e as f64 / n as f64; 2]; n],
        };
        build_rewards(&e, &u, &preds).unwrap()
    }

    #[test]
    fn zero_iterations_returns_primary_tree() {
        let tbl = toy_table(1, false);
        let cfg = Config {
            max_iter: 0,
            ..Config::default()
        };
        let out = coda_search(&tbl, Mode::Ho, &cfg).unwrap();
        assert_eq!(out.result.rule, out.initial.rule);
        assert!(!out.report.calibrated);
        assert_eq!(out.report.value, out.report.value_e);
    }

    #[test]
    fn no_correlation_means_no_change() {
        let tbl = toy_table(2, true);
        let out = coda_search(&tbl, Mode::Ho, &Config::default()).unwrap();
        assert_eq!(out.report.rho, vec![0.0]);
        assert_eq!(out.result.rule, out.initial.rule);
        assert!(out.result.converged);
    }

    #[test]
    fn calibrated_rewards_average_to_calibrated_value_at_constant_rules() {
        let tbl = toy_table(3, false);
        for a in 0..2u8 {
            let d = RuleActions::constant(tbl.n_e, tbl.n_u, a);
            for mode in [Mode::Ho, Mode::He] {
                let stats = calib_stats(&tbl, &d, mode).unwrap();
                let rewards = calibrated_rewards(&tbl, &stats, 1e-8).unwrap();
                let mean: f64 = rewards.iter().map(|r| r[usize::from(a)]).sum::<f64>() / tbl.n_e as f64;
                let rep = calibrated_value(&stats, 0.05, 1e-8).unwrap();
                assert!((mean - rep.value).abs() < 1e-10, "{mode:?}: {mean} vs {}", rep.value);
            }
        }
    }

    #[test]
    fn step_objective_does_not_drop_below_incoming_tree() {
        let tbl = toy_table(4, false);
        let cfg = Config::default();
        let out = coda_search(&tbl, Mode::Ho, &cfg).unwrap();
        let d = tbl.actions(&out.initial.rule).unwrap();
        let stats = calib_stats(&tbl, &d, Mode::Ho).unwrap();
        let rewards = calibrated_rewards(&tbl, &stats, cfg.ridge).unwrap();
        let incoming: f64 = d
            .primary()
            .iter()
            .enumerate()
            .map(|(i, &a)| rewards[i][usize::from(a)])
            .sum();
        assert!(out.result.trace[1] >= incoming - 1e-9);
    }
}
