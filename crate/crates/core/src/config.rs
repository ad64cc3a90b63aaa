use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{CodaError, Result};

/// Calibration mode: homogeneous (HO) or heterogeneous (HE) baseline covariates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Ho,
    He,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    Ho,
    He,
    /// Decide from per-column covariate shift tests.
    #[default]
    Auto,
}

impl ModeChoice {
    pub fn resolve(self, suggested: Mode) -> Mode {
        match self {
            ModeChoice::Ho => Mode::Ho,
            ModeChoice::He => Mode::He,
            ModeChoice::Auto => suggested,
        }
    }
}

/// Features of the posterior sampling-probability model `P(R=1 | x, a, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingFeatures {
    /// Covariate basis, treatment, and raw intermediate outcomes.
    Linear,
    /// Covariate basis, treatment, and squared intermediate residuals
    /// `(m - theta(x, a))^2`.
    #[default]
    ResidualSquared,
}

/// Tuning shared by fitting, calibration and search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Maximum tree depth `L`.
    pub depth: usize,
    /// Maximum number of calibrate-and-search iterations `K`.
    pub max_iter: usize,
    /// Stopping tolerance on `||beta_k - beta_{k-1}||` for linear rules.
    pub tol: f64,
    /// Clip bounds applied to propensity predictions.
    pub clip: [f64; 2],
    /// Clip bounds applied to posterior sampling probabilities.
    pub sampling_clip: [f64; 2],
    /// Ridge factor for ill-conditioned covariance inversion.
    pub ridge: f64,
    pub alpha: f64,
    pub mode: ModeChoice,
    pub seed: u64,
    /// Basis for the outcome and intermediate-outcome regressions.
    pub outcome_basis: BasisSpec,
    /// Basis for the propensity models.
    pub propensity_basis: BasisSpec,
    /// Covariate basis used inside the sampling-probability model.
    pub sampling_basis: BasisSpec,
    pub sampling_features: SamplingFeatures,
    /// Number of cross-fitting folds; `None` fits on the full samples.
    pub cross_fit: Option<usize>,
    /// Random restarts for the linear-rule optimizer.
    pub n_starts: usize,
    /// Upper bound accepted for `depth`.
    pub max_depth: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            depth: 2,
            max_iter: 1,
            tol: 1e-4,
            clip: [0.01, 0.99],
            sampling_clip: [0.2, 0.8],
            ridge: 1e-8,
            alpha: 0.05,
            mode: ModeChoice::Auto,
            seed: 0,
            outcome_basis: BasisSpec::interactions(),
            propensity_basis: BasisSpec::linear(),
            sampling_basis: BasisSpec::quadratic(),
            sampling_features: SamplingFeatures::ResidualSquared,
            cross_fit: None,
            n_starts: 50,
            max_depth: 4,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let bounds_ok = |b: [f64; 2]| 0.0 < b[0] && b[0] < b[1] && b[1] < 1.0;
        if !bounds_ok(self.clip) {
            return Err(CodaError::invalid(format!(
                "clip bounds must satisfy 0 < lo < hi < 1, got {:?}",
                self.clip
            )));
        }
        if !bounds_ok(self.sampling_clip) {
            return Err(CodaError::invalid(format!(
                "sampling clip bounds must satisfy 0 < lo < hi < 1, got {:?}",
                self.sampling_clip
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(CodaError::invalid("ridge must be non-negative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CodaError::invalid("alpha must lie in (0, 1)"));
        }
        if self.depth > self.max_depth {
            return Err(CodaError::invalid(format!(
                "depth {} exceeds the configured cap {}",
                self.depth, self.max_depth
            )));
        }
        if !(self.tol > 0.0) {
            return Err(CodaError::invalid("tol must be positive"));
        }
        if matches!(self.cross_fit, Some(k) if k < 2) {
            return Err(CodaError::invalid("cross-fitting needs at least 2 folds"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
