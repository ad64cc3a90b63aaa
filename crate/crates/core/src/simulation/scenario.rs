//! Data-generating processes for the five simulation scenarios.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::config::{Config, Mode};
use crate::data::{AuxiliarySample, PrimarySample};
use crate::error::{CodaError, Result};
use crate::rule::{DecisionRule, TreeNode};

/// Covariate laws of the two samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Both samples draw covariates from `U[-2, 2]^r`.
    Homogeneous,
    /// The auxiliary sample draws covariates from `U[-1, 1.5]^r`.
    Heterogeneous,
}

impl Design {
    pub fn mode(self) -> Mode {
        match self {
            Design::Homogeneous => Mode::Ho,
            Design::Heterogeneous => Mode::He,
        }
    }
}

/// Noise of the primary intermediate outcomes and outcome.
///
/// `(eps_E, eps_Y)` is bivariate normal with standard deviations `sd_e`,
/// `sd_y` and correlation `corr`. With two intermediates the second one gets
/// independent normal noise with standard deviation `sd_e`. Auxiliary
/// intermediate noise is `U[-aux_half_width, aux_half_width]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sd_e: f64,
    pub sd_y: f64,
    pub corr: f64,
    pub aux_half_width: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sd_e: 2.0,
            sd_y: 1.5,
            corr: 0.7,
            aux_half_width: 1.0,
        }
    }
}

impl NoiseSpec {
    /// Reads `(2, 1.5)` as variances instead of standard deviations.
    pub fn variance_reading() -> Self {
        NoiseSpec {
            sd_e: 2f64.sqrt(),
            sd_y: 1.5f64.sqrt(),
            ..Self::default()
        }
    }

    /// `Cov(eps_E, eps_Y)` for the first intermediate.
    pub fn cov_ey(&self) -> f64 {
        self.corr * self.sd_e * self.sd_y
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    pub r: usize,
    pub s: usize,
    pub design: Design,
    pub noise: NoiseSpec,
}

/// Logit of the propensity score, shared by both samples.
pub const PROPENSITY_COEF: [f64; 3] = [0.4, 0.2, -0.2];

impl ScenarioSpec {
    pub fn new(id: u8, design: Design) -> Result<Self> {
        let (r, s) = match id {
            1 | 2 => (2, 1),
            3..=5 => (10, 2),
            _ => return Err(CodaError::invalid(format!("unknown scenario {id}; expected 1 to 5"))),
        };
        Ok(ScenarioSpec {
            id,
            r,
            s,
            design,
            noise: NoiseSpec::default(),
        })
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    /// Baseline of the intermediate outcomes.
    pub fn u_m(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        out[0] = if self.id == 4 {
            0.5 * x1 * x1 + 2.0 * x2
        } else {
            x1 + 2.0 * x2
        };
        if self.s > 1 {
            out[1] = if self.id == 5 { 0.5 * x1 * x1 + 2.0 * x2 } else { 0.0 };
        }
    }

    /// Treatment contrast of the intermediate outcomes.
    pub fn c_m(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        out[0] = if self.id == 2 { x1 - x2 } else { x1 * x2 };
        if self.s > 1 {
            out[1] = if self.id == 5 { x1 * x2 } else { 0.0 };
        }
    }

    pub fn u_y(&self, x: &[f64]) -> f64 {
        if self.id == 5 {
            2.0 * x[0].cos() + x[1]
        } else {
            2.0 * x[0] + x[1]
        }
    }

    pub fn c_y(&self, x: &[f64]) -> f64 {
        if self.id == 2 {
            2.0 * (x[1] - x[0])
        } else {
            2.0 * x[0] * x[1]
        }
    }

    /// True propensity `P(A = 1 | x)`.
    pub fn propensity(&self, x: &[f64]) -> f64 {
        let eta = PROPENSITY_COEF[0] + PROPENSITY_COEF[1] * x[0] + PROPENSITY_COEF[2] * x[1];
        1.0 / (1.0 + (-eta).exp())
    }

    /// True `E(Y | x, a)`.
    pub fn mu(&self, x: &[f64], a: u8) -> f64 {
        self.u_y(x) + f64::from(a) * self.c_y(x)
    }

    /// True `E(M | x, a)`, equal in both samples.
    pub fn theta(&self, x: &[f64], a: u8) -> Vec<f64> {
        let mut u = vec![0.0; self.s];
        let mut c = vec![0.0; self.s];
        self.u_m(x, &mut u);
        self.c_m(x, &mut c);
        u.iter().zip(&c).map(|(u, c)| u + f64::from(a) * c).collect()
    }

    /// The optimal rule: `I{x1 x2 > 0}`, or `I{x2 - x1 > 0}` in Scenario 2.
    pub fn optimal_rule(&self) -> DecisionRule {
        if self.id == 2 {
            DecisionRule::linear(vec![0.0, -1.0, 1.0], BasisSpec::linear())
        } else {
            DecisionRule::tree(TreeNode::split(
                0,
                0.0,
                TreeNode::split(1, 0.0, TreeNode::leaf(1), TreeNode::leaf(0)),
                TreeNode::split(1, 0.0, TreeNode::leaf(0), TreeNode::leaf(1)),
            ))
        }
    }

    /// Configuration whose outcome basis spans the true regressions.
    pub fn recommended_config(&self) -> Config {
        let mut cfg = Config::default();
        if matches!(self.id, 4 | 5) {
            cfg.outcome_basis = BasisSpec::quadratic();
        }
        cfg
    }

    /// Covariate bounds of the primary sample.
    pub fn primary_range(&self) -> (f64, f64) {
        (-2.0, 2.0)
    }

    pub fn auxiliary_range(&self) -> (f64, f64) {
        match self.design {
            Design::Homogeneous => (-2.0, 2.0),
            Design::Heterogeneous => (-1.0, 1.5),
        }
    }

    pub fn draw_x<R: Rng>(&self, rng: &mut R, range: (f64, f64), out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = rng.random_range(range.0..range.1));
    }
}

/// Draws both samples from `rng`.
pub fn generate_with<R: Rng>(
    spec: &ScenarioSpec,
    n_e: usize,
    n_u: usize,
    rng: &mut R,
) -> Result<(PrimarySample, AuxiliarySample)> {
    let (r, s) = (spec.r, spec.s);
    let noise = spec.noise;
    let resid_sd = noise.sd_y * (1.0 - noise.corr * noise.corr).sqrt();
    let mut x = vec![0.0; r];
    let mut um = vec![0.0; s];
    let mut cm = vec![0.0; s];

    let mut xe = DMatrix::zeros(n_e, r);
    let mut ae = Vec::with_capacity(n_e);
    let mut me = DMatrix::zeros(n_e, s);
    let mut ye = DVector::zeros(n_e);
    for i in 0..n_e {
        spec.draw_x(rng, spec.primary_range(), &mut x);
        let a = u8::from(rng.random::<f64>() < spec.propensity(&x));
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        spec.u_m(&x, &mut um);
        spec.c_m(&x, &mut cm);
        for k in 0..s {
            let eps = if k == 0 {
                noise.sd_e * z1
            } else {
                noise.sd_e * Distribution::<f64>::sample(&StandardNormal, rng)
            };
            me[(i, k)] = um[k] + f64::from(a) * cm[k] + eps;
        }
        ye[i] = spec.mu(&x, a) + noise.sd_y * noise.corr * z1 + resid_sd * z2;
        for (j, v) in x.iter().enumerate() {
            xe[(i, j)] = *v;
        }
        ae.push(a);
    }

    let mut xu = DMatrix::zeros(n_u, r);
    let mut au = Vec::with_capacity(n_u);
    let mut mu = DMatrix::zeros(n_u, s);
    let w = noise.aux_half_width;
    for i in 0..n_u {
        spec.draw_x(rng, spec.auxiliary_range(), &mut x);
        let a = u8::from(rng.random::<f64>() < spec.propensity(&x));
        spec.u_m(&x, &mut um);
        spec.c_m(&x, &mut cm);
        for k in 0..s {
            mu[(i, k)] = um[k] + f64::from(a) * cm[k] + rng.random_range(-w..w);
        }
        for (j, v) in x.iter().enumerate() {
            xu[(i, j)] = *v;
        }
        au.push(a);
    }
    Ok((PrimarySample::new(xe, ae, me, ye)?, AuxiliarySample::new(xu, au, mu)?))
}

/// Draws both samples from a generator seeded with `seed`.
pub fn generate(spec: &ScenarioSpec, n_e: usize, n_u: usize, seed: u64) -> Result<(PrimarySample, AuxiliarySample)> {
    generate_with(spec, n_e, n_u, &mut ChaCha8Rng::seed_from_u64(seed))
}
