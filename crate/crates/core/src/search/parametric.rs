//! Search over linear rules `I{phi(x)' beta > 0}`.
//!
//! The objective is piecewise constant in `beta`, so it is maximized by
//! Nelder-Mead from many random points on the unit sphere. Coefficients are
//! normalized to unit length because the rule is invariant to positive
//! scaling.

use argmin::core::{CostFunction, Error as ArgminError, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::BasisSpec;
use crate::calibration::{calib_stats, calibrated_value, project, uncalibrated_value, CalibrationReport};
use crate::config::{Config, Mode};
use crate::error::{CodaError, Result};
use crate::rewards::{value_ve, value_w0, value_w1, value_we, value_wu, RewardTable, RuleActions};
use crate::rule::DecisionRule;
use crate::search::tree::SearchResult;

const NM_MAX_ITERS: u64 = 300;

fn normalize(beta: &[f64]) -> Vec<f64> {
    let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm > 0.0 {
        beta.iter().map(|b| b / norm).collect()
    } else {
        beta.to_vec()
    }
}

/// Actions of `I{phi' beta > 0}` on every joint row.
pub fn linear_actions(phi: &DMatrix<f64>, beta: &[f64], n_e: usize) -> RuleActions {
    let joint = (0..phi.nrows())
        .map(|i| {
            let score: f64 = phi.row(i).iter().zip(beta).map(|(p, b)| p * b).sum();
            u8::from(score > 0.0)
        })
        .collect();
    RuleActions { n_e, joint }
}

/// Estimated value of a linear rule, with the calibration projection frozen.
struct Objective<'a> {
    tbl: &'a RewardTable,
    phi: &'a DMatrix<f64>,
    mode: Mode,
    /// `scale * Sigma^-1 rho`; `None` scores the primary-only value.
    coef: Option<Vec<f64>>,
}

impl Objective<'_> {
    fn value(&self, beta: &[f64]) -> Result<f64> {
        let d = linear_actions(self.phi, &normalize(beta), self.tbl.n_e);
        let ve = value_ve(self.tbl, &d)?;
        let Some(coef) = &self.coef else {
            return Ok(ve);
        };
        let (p, q) = match self.mode {
            Mode::Ho => (value_we(self.tbl, &d)?, value_wu(self.tbl, &d)?),
            Mode::He => (value_w1(self.tbl, &d)?, value_w0(self.tbl, &d)?),
        };
        Ok(ve
            - coef
                .iter()
                .zip(p.iter().zip(&q))
                .map(|(c, (a, b))| c * (a - b))
                .sum::<f64>())
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, beta: &Self::Param) -> std::result::Result<f64, ArgminError> {
        self.value(beta)
            .map(|v| -v)
            .map_err(|e| ArgminError::msg(e.to_string()))
    }
}

fn random_unit(q: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..q).map(|_| StandardNormal.sample(rng)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return normalize(&v);
        }
    }
}

/// Maximizes `obj` from every start; the first start wins ties.
fn maximize(obj: &Objective<'_>, starts: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let mut simplex = vec![start.clone()];
        for k in 0..start.len() {
            let mut v = start.clone();
            v[k] += 0.5;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-10)
            .map_err(|e| CodaError::numeric(e.to_string()))?;
        let problem = Objective {
            tbl: obj.tbl,
            phi: obj.phi,
            mode: obj.mode,
            coef: obj.coef.clone(),
        };
        let res = Executor::new(problem, solver)
            .configure(|s| s.max_iters(NM_MAX_ITERS))
            .run()
            .map_err(|e| CodaError::numeric(e.to_string()))?;
        let found = res.state.best_param.clone().unwrap_or_else(|| start.clone());
        let mut candidate = normalize(&found);
        let mut val = obj.value(&candidate)?;
        let at_start = obj.value(start)?;
        if at_start >= val {
            candidate = normalize(start);
            val = at_start;
        }
        if best.as_ref().is_none_or(|(_, b)| val > *b) {
            best = Some((candidate, val));
        }
    }
    best.ok_or_else(|| CodaError::invalid("no starting points"))
}

/// Learns a linear rule by the calibrated iterative procedure.
pub fn parametric_search(
    tbl: &RewardTable,
    basis: &BasisSpec,
    mode: Mode,
    cfg: &Config,
) -> Result<(SearchResult, CalibrationReport)> {
    cfg.validate()?;
    let q = basis.dim(tbl.r());
    if q > tbl.n_e {
        return Err(CodaError::invalid(format!(
            "linear rule has {q} coefficients but only {} primary rows",
            tbl.n_e
        )));
    }
    if cfg.n_starts == 0 {
        return Err(CodaError::invalid("n_starts must be positive"));
    }
    let mut data = Vec::with_capacity(tbl.n() * q);
    let mut row = vec![0.0; tbl.r()];
    for i in 0..tbl.n() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = tbl.x[(i, j)];
        }
        basis.expand_into(&row, &mut data);
    }
    let phi = DMatrix::from_row_slice(tbl.n(), q, &data);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts: Vec<Vec<f64>> = (0..cfg.n_starts).map(|_| random_unit(q, &mut rng)).collect();

    let primary = Objective {
        tbl,
        phi: &phi,
        mode,
        coef: None,
    };
    let (mut beta, value) = maximize(&primary, &starts)?;
    let n_e = tbl.n_e as f64;
    let mut trace = vec![value * n_e];
    let mut objective = value * n_e;
    let mut converged = cfg.max_iter == 0;
    let mut used = 0;
    for k in 1..=cfg.max_iter {
        used = k;
        let stats = calib_stats(tbl, &linear_actions(&phi, &beta, tbl.n_e), mode)?;
        let proj = project(&stats.sigma, &stats.rho, cfg.ridge)?;
        let coef = proj.coef.iter().map(|c| c * stats.scale).collect();
        let calibrated = Objective {
            tbl,
            phi: &phi,
            mode,
            coef: Some(coef),
        };
        starts[0] = beta.clone();
        let (next, val) = maximize(&calibrated, &starts)?;
        trace.push(val * n_e);
        objective = val * n_e;
        let step: f64 = next.iter().zip(&beta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        beta = next;
        if step < cfg.tol {
            converged = true;
            break;
        }
    }
    let d = linear_actions(&phi, &beta, tbl.n_e);
    let stats = calib_stats(tbl, &d, mode)?;
    let rule = DecisionRule::linear(beta, basis.clone());
    let report = if cfg.max_iter == 0 {
        uncalibrated_value(&stats, cfg.alpha)?
    } else {
        calibrated_value(&stats, cfg.alpha, cfg.ridge)?
    }
    .with_rule(rule.clone());
    Ok((
        SearchResult {
            rule,
            objective,
            iterations_used: used,
            converged,
            trace,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AuxiliarySample, PrimarySample};
    use crate::nuisance::NuisancePredictions;
    use crate::rewards::build_rewards;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::Rng;

    fn table(shift: f64) -> RewardTable {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n_e, n_u) = (200, 200);
        let xe = DMatrix::from_fn(n_e, 2, |_, _| rng.random_range(-2.0..2.0));
        let xu = DMatrix::from_fn(n_u, 2, |_, _| rng.random_range(-2.0..2.0));
        let ae: Vec<u8> = (0..n_e).map(|i| (i % 2) as u8).collect();
        let au: Vec<u8> = (0..n_u).map(|i| (i % 2) as u8).collect();
        let me = DMatrix::from_fn(n_e, 1, |_, _| rng.random_range(-1.0..1.0));
        let mu = DMatrix::from_fn(n_u, 1, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n_e, |i, _| f64::from(ae[i]) * shift + rng.random_range(-0.1..0.1));
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
            r_hat: vec![[0.5; 2]; n],
        };
        build_rewards(&e, &u, &preds).unwrap()
    }

    #[test]
    fn constant_basis_picks_the_better_arm() {
        let cfg = Config {
            n_starts: 8,
            ..Config::default()
        };
        for (shift, arm) in [(1.0, 1u8), (-1.0, 0u8)] {
            let tbl = table(shift);
            let (res, rep) = parametric_search(&tbl, &BasisSpec::constant(), Mode::Ho, &cfg).unwrap();
            let DecisionRule::Linear(l) = &res.rule else { panic!() };
            assert_eq!(u8::from(l.beta[0] > 0.0), arm);
            assert!(rep.rule.is_some());
        }
    }

    #[test]
    fn too_many_coefficients_is_an_error() {
        let tbl = table(1.0);
        let basis = BasisSpec::quadratic();
        let mut small = tbl.clone();
        small.n_e = 3;
        assert!(parametric_search(&small, &basis, Mode::Ho, &Config::default()).is_err());
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_actions(beta in prop::collection::vec(-3.0f64..3.0, 4), c in 0.01f64..100.0) {
            let tbl = table(1.0);
            let basis = BasisSpec::interactions();
            let phi = DMatrix::from_fn(tbl.n(), 4, |i, j| basis.expand(&[tbl.x[(i, 0)], tbl.x[(i, 1)]])[j]);
            let scaled: Vec<f64> = beta.iter().map(|b| b * c).collect();
            prop_assert_eq!(linear_actions(&phi, &beta, tbl.n_e), linear_actions(&phi, &scaled, tbl.n_e));
        }
    }
}
