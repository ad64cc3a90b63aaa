//! Calibration statistics, calibrated values, plug-in variances and
//! confidence intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::Mode;
use crate::error::{CodaError, Result};
use crate::rewards::{value_ve, value_w0, value_w1, value_we, value_wu, RewardTable, RuleActions};
use crate::rule::DecisionRule;

/// Condition number above which the covariance is regularized.
pub const MAX_CONDITION: f64 = 1e12;

/// Moments of the reward components at one rule.
///
/// In HO mode `rho`/`sigma` are the outcome/intermediate covariance and the
/// pooled intermediate covariance, `contrast` is `W_E - W_U` and `scale` is 1.
/// In HE mode they are the rebalanced analogues, `contrast` is `W_1 - W_0`
/// and `scale` is `sqrt(n / N_E)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibStats {
    pub mode: Mode,
    pub n_e: usize,
    pub n_u: usize,
    pub value_e: f64,
    pub sigma_y2: f64,
    pub rho: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub contrast: Vec<f64>,
    pub scale: f64,
}

fn centered_sigma_y2(tbl: &RewardTable, d: &RuleActions, value_e: f64) -> f64 {
    d.primary()
        .iter()
        .enumerate()
        .map(|(i, &a)| (tbl.v[i][usize::from(a)] - value_e).powi(2))
        .sum::<f64>()
        / tbl.n_e as f64
}

fn require_intermediates(tbl: &RewardTable) -> Result<()> {
    if tbl.s == 0 {
        return Err(CodaError::invalid(
            "calibration needs at least one intermediate outcome",
        ));
    }
    if tbl.n_e == 0 {
        return Err(CodaError::invalid("empty primary sample"));
    }
    Ok(())
}

/// Statistics for homogeneous covariates. `t` is `N_E / N_U`.
pub fn calib_stats_ho(tbl: &RewardTable, d: &RuleActions, t: f64) -> Result<CalibStats> {
    require_intermediates(tbl)?;
    if tbl.n_u == 0 {
        return Err(CodaError::invalid("empty auxiliary sample"));
    }
    let s = tbl.s;
    let value_e = value_ve(tbl, d)?;
    let w_e = value_we(tbl, d)?;
    let w_u = value_wu(tbl, d)?;
    let sigma_y2 = centered_sigma_y2(tbl, d, value_e);

    let mut rho = vec![0.0; s];
    let mut cov_e = DMatrix::<f64>::zeros(s, s);
    for (i, &a) in d.primary().iter().enumerate() {
        let dv = tbl.v[i][usize::from(a)] - value_e;
        let dw: Vec<f64> = tbl.w_e_at(i, a).iter().zip(&w_e).map(|(w, m)| w - m).collect();
        for k in 0..s {
            rho[k] += dv * dw[k];
            for l in 0..s {
                cov_e[(k, l)] += dw[k] * dw[l];
            }
        }
    }
    let mut cov_u = DMatrix::<f64>::zeros(s, s);
    for (j, &a) in d.auxiliary().iter().enumerate() {
        let dw: Vec<f64> = tbl.w_u_at(j, a).iter().zip(&w_u).map(|(w, m)| w - m).collect();
        for k in 0..s {
            for l in 0..s {
                cov_u[(k, l)] += dw[k] * dw[l];
            }
        }
    }
    rho.iter_mut().for_each(|r| *r /= tbl.n_e as f64);
    let sigma = cov_e / tbl.n_e as f64 + cov_u * (t / tbl.n_u as f64);
    Ok(CalibStats {
        mode: Mode::Ho,
        n_e: tbl.n_e,
        n_u: tbl.n_u,
        value_e,
        sigma_y2,
        rho,
        sigma,
        contrast: w_e.iter().zip(&w_u).map(|(a, b)| a - b).collect(),
        scale: 1.0,
    })
}

/// Statistics for heterogeneous covariates on the joint sample.
pub fn calib_stats_he(tbl: &RewardTable, d: &RuleActions) -> Result<CalibStats> {
    require_intermediates(tbl)?;
    let s = tbl.s;
    let n = tbl.n() as f64;
    let n_e = tbl.n_e as f64;
    let value_e = value_ve(tbl, d)?;
    let sigma_y2 = centered_sigma_y2(tbl, d, value_e);
    let root = (n_e / n).sqrt();

    let mut rho = vec![0.0; s];
    for (i, &a) in d.primary().iter().enumerate() {
        let dv = tbl.v[i][usize::from(a)] - value_e;
        for (r, p) in rho.iter_mut().zip(tbl.psi_at(i, a)) {
            *r += dv * root * p;
        }
    }
    rho.iter_mut().for_each(|r| *r /= n_e);

    let mut sigma = DMatrix::<f64>::zeros(s, s);
    for (i, &a) in d.joint.iter().enumerate() {
        let diff: Vec<f64> = tbl
            .w1_at(i, a)
            .iter()
            .zip(tbl.w0_at(i, a))
            .map(|(p, q)| p - q)
            .collect();
        for k in 0..s {
            for l in 0..s {
                sigma[(k, l)] += diff[k] * diff[l];
            }
        }
    }
    sigma /= n;
    let w1 = value_w1(tbl, d)?;
    let w0 = value_w0(tbl, d)?;
    Ok(CalibStats {
        mode: Mode::He,
        n_e: tbl.n_e,
        n_u: tbl.n_u,
        value_e,
        sigma_y2,
        rho,
        sigma,
        contrast: w1.iter().zip(&w0).map(|(a, b)| a - b).collect(),
        scale: (n / n_e).sqrt(),
    })
}

/// Statistics in the given mode.
pub fn calib_stats(tbl: &RewardTable, d: &RuleActions, mode: Mode) -> Result<CalibStats> {
    match mode {
        Mode::Ho => calib_stats_ho(tbl, d, tbl.n_e as f64 / tbl.n_u as f64),
        Mode::He => calib_stats_he(tbl, d),
    }
}

/// `Sigma^-1 rho` with ridge protection.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub coef: Vec<f64>,
    pub ridge_applied: bool,
    /// `Sigma` had zero trace; the projection is zero.
    pub degenerate: bool,
}

/// Solves `sigma z = rho`. A ridge of `eps * trace / s` is added when the
/// condition number exceeds [`MAX_CONDITION`] or `sigma` is not positive
/// definite.
pub fn project(sigma: &DMatrix<f64>, rho: &[f64], eps: f64) -> Result<Projection> {
    let s = rho.len();
    if sigma.shape() != (s, s) {
        return Err(CodaError::invalid("covariance and correlation dimensions differ"));
    }
    if sigma.iter().chain(rho).any(|v| !v.is_finite()) {
        return Err(CodaError::numeric("non-finite calibration statistics"));
    }
    let trace = sigma.trace();
    if !(trace > 0.0) {
        return Ok(Projection {
            coef: vec![0.0; s],
            ridge_applied: false,
            degenerate: true,
        });
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let ill = !(min > 0.0) || max / min > MAX_CONDITION;
    let bump = if ill {
        eps.max(f64::EPSILON) * trace / s as f64
    } else {
        0.0
    };
    // Spectral solve keeps the quadratic form rho' z non-negative.
    let q = &eig.eigenvectors;
    let proj = q.transpose() * DVector::from_column_slice(rho);
    let floor = f64::EPSILON * max;
    let scaled = DVector::from_iterator(
        s,
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(p, l)| p / (l + bump).max(floor)),
    );
    let coef = q * scaled;
    Ok(Projection {
        coef: coef.iter().copied().collect(),
        ridge_applied: ill,
        degenerate: false,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub ridge_applied: bool,
    /// The intermediate covariance vanished; calibration was skipped.
    pub degenerate_sigma: bool,
    /// Rounding pushed the variance below zero and it was reset to zero.
    pub variance_clamped: bool,
    pub clipped_propensity: usize,
    pub clipped_sampling: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub value: f64,
    pub variance: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub sigma_y2: f64,
    pub rho: Vec<f64>,
    pub sigma_m: DMatrix<f64>,
    pub mode: Mode,
    /// False for the primary-only estimator.
    pub calibrated: bool,
    /// Primary-only DR value at the same rule.
    pub value_e: f64,
    pub n_e: usize,
    pub n_u: usize,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rule: Option<DecisionRule>,
    pub diagnostics: Diagnostics,
}

impl CalibrationReport {
    pub fn sd(&self) -> f64 {
        (self.variance / self.n_e as f64).sqrt()
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lo <= truth && truth <= self.ci_hi
    }

    pub fn with_rule(mut self, rule: DecisionRule) -> Self {
        self.rule = Some(rule);
        self
    }
}

/// `z_{alpha/2}` of the standard normal.
pub fn z_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CodaError::invalid("alpha must lie in (0, 1)"));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

fn interval(value: f64, variance: f64, n_e: usize, alpha: f64) -> Result<(f64, f64)> {
    let half = z_quantile(alpha)? * (variance / n_e as f64).sqrt();
    Ok((value - half, value + half))
}

/// Calibrated value, plug-in variance and confidence interval.
pub fn calibrated_value(stats: &CalibStats, alpha: f64, ridge: f64) -> Result<CalibrationReport> {
    if !stats.value_e.is_finite() || !stats.sigma_y2.is_finite() {
        return Err(CodaError::numeric("non-finite calibration statistics"));
    }
    let p = project(&stats.sigma, &stats.rho, ridge)?;
    let shift: f64 = p.coef.iter().zip(&stats.contrast).map(|(c, w)| c * w).sum();
    let explained: f64 = p.coef.iter().zip(&stats.rho).map(|(c, r)| c * r).sum();
    let value = stats.value_e - stats.scale * shift;
    let mut variance = stats.sigma_y2 - explained;
    let mut diagnostics = Diagnostics {
        ridge_applied: p.ridge_applied,
        degenerate_sigma: p.degenerate,
        ..Diagnostics::default()
    };
    if variance < 0.0 {
        diagnostics.variance_clamped = true;
        diagnostics
            .warnings
            .push(format!("calibrated variance {variance:e} reset to zero"));
        variance = 0.0;
    }
    if !value.is_finite() || !variance.is_finite() {
        return Err(CodaError::numeric("calibrated value is not finite"));
    }
    let (ci_lo, ci_hi) = interval(value, variance, stats.n_e, alpha)?;
    Ok(CalibrationReport {
        value,
        variance,
        ci_lo,
        ci_hi,
        sigma_y2: stats.sigma_y2,
        rho: stats.rho.clone(),
        sigma_m: stats.sigma.clone(),
        mode: stats.mode,
        calibrated: true,
        value_e: stats.value_e,
        n_e: stats.n_e,
        n_u: stats.n_u,
        alpha,
        rule: None,
        diagnostics,
    })
}

/// Primary-only DR value with its plug-in variance and interval.
pub fn uncalibrated_value(stats: &CalibStats, alpha: f64) -> Result<CalibrationReport> {
    let (ci_lo, ci_hi) = interval(stats.value_e, stats.sigma_y2, stats.n_e, alpha)?;
    Ok(CalibrationReport {
        value: stats.value_e,
        variance: stats.sigma_y2,
        ci_lo,
        ci_hi,
        sigma_y2: stats.sigma_y2,
        rho: stats.rho.clone(),
        sigma_m: stats.sigma.clone(),
        mode: stats.mode,
        calibrated: false,
        value_e: stats.value_e,
        n_e: stats.n_e,
        n_u: stats.n_u,
        alpha,
        rule: None,
        diagnostics: Diagnostics::default(),
    })
}

/// Relative reduction in standard deviation, in percent.
pub fn improved_efficiency(coda_sd: f64, baseline_sd: f64) -> Result<f64> {
    if !(coda_sd > 0.0 && baseline_sd > 0.0) {
        return Err(CodaError::invalid("standard deviations must be positive"));
    }
    Ok(100.0 * (baseline_sd - coda_sd) / baseline_sd)
}
