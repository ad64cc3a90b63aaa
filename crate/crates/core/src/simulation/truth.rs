//! Monte Carlo ground truth for rule values.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rule::{apply_rows, DecisionRule};
use crate::search::tree::exact_tree_search;
use crate::simulation::scenario::ScenarioSpec;

/// Default number of draws for true values.
pub const DEFAULT_MC: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub value: f64,
    /// Monte Carlo standard error.
    pub se: f64,
    pub n_mc: usize,
}

/// Draws from the primary covariate law with their baseline and contrast.
///
/// The outcome noise has mean zero, so the value of a rule is the mean of
/// `u_y + d(x) c_y`.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub x: DMatrix<f64>,
    pub u_y: Vec<f64>,
    pub c_y: Vec<f64>,
}

impl EvalSample {
    pub fn draw(spec: &ScenarioSpec, n: usize, seed: u64) -> Self {
        Self::draw_with(spec, n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn draw_with(spec: &ScenarioSpec, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut x = DMatrix::zeros(n, spec.r);
        let mut row = vec![0.0; spec.r];
        let mut u_y = Vec::with_capacity(n);
        let mut c_y = Vec::with_capacity(n);
        for i in 0..n {
            spec.draw_x(rng, spec.primary_range(), &mut row);
            for (j, v) in row.iter().enumerate() {
                x[(i, j)] = *v;
            }
            u_y.push(spec.u_y(&row));
            c_y.push(spec.c_y(&row));
        }
        EvalSample { x, u_y, c_y }
    }

    pub fn len(&self) -> usize {
        self.u_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_y.is_empty()
    }

    pub fn value(&self, rule: &DecisionRule) -> Result<McValue> {
        let actions = apply_rows(rule, &self.x)?;
        let n = self.len();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for (i, d) in actions.iter().enumerate() {
            let val = self.u_y[i] + f64::from(*d) * self.c_y[i];
            sum += val;
            sum2 += val * val;
        }
        let mean = sum / n as f64;
        let var = (sum2 / n as f64 - mean * mean).max(0.0);
        Ok(McValue {
            value: mean,
            se: (var / n as f64).sqrt(),
            n_mc: n,
        })
    }

    /// Noiseless per-arm rewards `[u_y, u_y + c_y]`.
    pub fn rewards(&self) -> Vec<[f64; 2]> {
        self.u_y.iter().zip(&self.c_y).map(|(u, c)| [*u, u + c]).collect()
    }
}

/// `V(rule)` by Monte Carlo over fresh primary-law covariates.
pub fn mc_true_value(spec: &ScenarioSpec, rule: &DecisionRule, n_mc: usize, seed: u64) -> Result<McValue> {
    EvalSample::draw(spec, n_mc, seed).value(rule)
}

/// Rows used to learn the best tree in [`best_tree_value`].
pub const BEST_TREE_TRAIN: usize = 20_000;

/// Best value attainable by a tree of the given depth: the tree is learned
/// from noiseless rewards and evaluated on fresh draws.
pub fn best_tree_value(spec: &ScenarioSpec, depth: usize, n_mc: usize, seed: u64) -> Result<(DecisionRule, McValue)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = EvalSample::draw_with(spec, BEST_TREE_TRAIN, &mut rng);
    let res = exact_tree_search(&train.rewards(), &train.x, depth)?;
    let value = EvalSample::draw_with(spec, n_mc, &mut rng).value(&res.rule)?;
    Ok((res.rule, value))
}
