//! Per-individual doubly robust reward components and the value estimators
//! built from them.
//!
//! Every component is precomputed for both arms, so the value of any rule is a
//! column selection followed by an average.

use nalgebra::DMatrix;

use crate::data::{AuxiliarySample, JointSample, PrimarySample};
use crate::error::{CodaError, Result};
use crate::nuisance::NuisancePredictions;
use crate::rule::{apply_rows, DecisionRule};

/// Reward components for both arms.
///
/// Vector-valued components are stored flat with index `(i * 2 + a) * s + k`.
/// Joint-indexed components put the primary rows first.
#[derive(Clone, Debug)]
pub struct RewardTable {
    pub n_e: usize,
    pub n_u: usize,
    pub s: usize,
    /// Joint covariates, primary rows first.
    pub x: DMatrix<f64>,
    /// Outcome rewards on primary rows.
    pub v: Vec<[f64; 2]>,
    /// Intermediate rewards on primary rows with the primary propensity.
    pub w_e: Vec<f64>,
    /// Intermediate rewards on auxiliary rows with the auxiliary propensity.
    pub w_u: Vec<f64>,
    /// Rebalanced intermediate rewards on all joint rows.
    pub w1: Vec<f64>,
    pub w0: Vec<f64>,
    /// Correlated part of the rebalanced rewards, primary rows only.
    pub psi: Vec<f64>,
    /// `A pi + (1 - A)(1 - pi)` with the primary propensity.
    pub den_e: Vec<f64>,
    /// The same with the auxiliary propensity.
    pub den_u: Vec<f64>,
    /// The same with the joint propensity, on all rows.
    pub den_joint: Vec<f64>,
}

/// Actions of a rule on every joint row, primary rows first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleActions {
    pub n_e: usize,
    pub joint: Vec<u8>,
}

impl RuleActions {
    pub fn constant(n_e: usize, n_u: usize, action: u8) -> Self {
        RuleActions {
            n_e,
            joint: vec![action; n_e + n_u],
        }
    }

    pub fn primary(&self) -> &[u8] {
        &self.joint[..self.n_e]
    }

    pub fn auxiliary(&self) -> &[u8] {
        &self.joint[self.n_e..]
    }
}

fn slot(i: usize, a: u8, s: usize) -> usize {
    (i * 2 + usize::from(a)) * s
}

fn propensity_den(a: u8, pi: f64) -> f64 {
    if a == 1 {
        pi
    } else {
        1.0 - pi
    }
}

impl RewardTable {
    pub fn n(&self) -> usize {
        self.n_e + self.n_u
    }

    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    pub fn x_primary(&self) -> DMatrix<f64> {
        self.x.rows(0, self.n_e).into_owned()
    }

    pub fn w_e_at(&self, i: usize, a: u8) -> &[f64] {
        &self.w_e[slot(i, a, self.s)..slot(i, a, self.s) + self.s]
    }

    pub fn w_u_at(&self, j: usize, a: u8) -> &[f64] {
        &self.w_u[slot(j, a, self.s)..slot(j, a, self.s) + self.s]
    }

    pub fn w1_at(&self, i: usize, a: u8) -> &[f64] {
        &self.w1[slot(i, a, self.s)..slot(i, a, self.s) + self.s]
    }

    pub fn w0_at(&self, i: usize, a: u8) -> &[f64] {
        &self.w0[slot(i, a, self.s)..slot(i, a, self.s) + self.s]
    }

    pub fn psi_at(&self, i: usize, a: u8) -> &[f64] {
        &self.psi[slot(i, a, self.s)..slot(i, a, self.s) + self.s]
    }

    /// Evaluates `rule` on every joint row.
    pub fn actions(&self, rule: &DecisionRule) -> Result<RuleActions> {
        Ok(RuleActions {
            n_e: self.n_e,
            joint: apply_rows(rule, &self.x)?,
        })
    }

    fn check_actions(&self, d: &RuleActions) -> Result<()> {
        if d.n_e != self.n_e || d.joint.len() != self.n() {
            return Err(CodaError::invalid("rule actions do not match the reward table"));
        }
        Ok(())
    }

    fn mean_vec<'a>(&self, rows: impl Iterator<Item = &'a [f64]>, count: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.s];
        for w in rows {
            for (o, v) in out.iter_mut().zip(w) {
                *o += v;
            }
        }
        if count > 0 {
            out.iter_mut().for_each(|o| *o /= count as f64);
        }
        out
    }
}

/// Computes all reward components from the samples and per-row nuisance
/// predictions.
pub fn build_rewards(e: &PrimarySample, u: &AuxiliarySample, preds: &NuisancePredictions) -> Result<RewardTable> {
    preds.check()?;
    let joint = JointSample::stack(e, u)?;
    let (n_e, n_u, s) = (e.len(), u.len(), e.s());
    if preds.n_e != n_e || preds.n_u != n_u || preds.s != s {
        return Err(CodaError::invalid("nuisance predictions do not match the samples"));
    }
    if e.y
        .iter()
        .chain(joint.m.iter())
        .chain(joint.x.iter())
        .any(|v| !v.is_finite())
    {
        return Err(CodaError::invalid("NaN or infinite value in the samples"));
    }
    let n = n_e + n_u;

    let den_e: Vec<f64> = (0..n_e).map(|i| propensity_den(e.a[i], preds.pi_e[i])).collect();
    let den_u: Vec<f64> = (0..n_u).map(|j| propensity_den(u.a[j], preds.pi_u[j])).collect();
    let den_joint: Vec<f64> = (0..n).map(|i| propensity_den(joint.a[i], preds.pi_joint[i])).collect();
    if den_e.iter().chain(&den_u).chain(&den_joint).any(|d| !(*d > 0.0)) {
        return Err(CodaError::numeric("non-positive propensity denominator"));
    }

    let mut v = Vec::with_capacity(n_e);
    #[allow(clippy::needless_range_loop)]
    for i in 0..n_e {
        let mut row = [0.0; 2];
        for a in 0..2u8 {
            let mu = preds.mu_e[i][usize::from(a)];
            row[usize::from(a)] = if e.a[i] == a { (e.y[i] - mu) / den_e[i] + mu } else { mu };
        }
        v.push(row);
    }

    let mut w_e = vec![0.0; n_e * 2 * s];
    let mut w_u = vec![0.0; n_u * 2 * s];
    let mut w1 = vec![0.0; n * 2 * s];
    let mut w0 = vec![0.0; n * 2 * s];
    let mut psi = vec![0.0; n_e * 2 * s];
    for i in 0..n {
        let primary = i < n_e;
        for a in 0..2u8 {
            let theta = preds.theta_at(i, a);
            let at = slot(i, a, s);
            let observed = joint.a[i] == a;
            let r_hat = preds.r_hat[i][usize::from(a)];
            for k in 0..s {
                let th = theta[k];
                let resid = if observed { joint.m[(i, k)] - th } else { 0.0 };
                let ipw_joint = resid / den_joint[i];
                if primary {
                    w_e[at + k] = resid / den_e[i] + th;
                    w1[at + k] = ipw_joint / r_hat + th;
                    w0[at + k] = th;
                    psi[at + k] = ipw_joint / r_hat;
                } else {
                    let j = i - n_e;
                    w_u[slot(j, a, s) + k] = resid / den_u[j] + th;
                    w1[at + k] = th;
                    w0[at + k] = ipw_joint / (1.0 - r_hat) + th;
                }
            }
        }
    }

    Ok(RewardTable {
        n_e,
        n_u,
        s,
        x: joint.x,
        v,
        w_e,
        w_u,
        w1,
        w0,
        psi,
        den_e,
        den_u,
        den_joint,
    })
}

/// Primary-sample DR value of the outcome.
pub fn value_ve(tbl: &RewardTable, d: &RuleActions) -> Result<f64> {
    tbl.check_actions(d)?;
    if tbl.n_e == 0 {
        return Err(CodaError::invalid("empty primary sample"));
    }
    let sum: f64 = d
        .primary()
        .iter()
        .enumerate()
        .map(|(i, &a)| tbl.v[i][usize::from(a)])
        .sum();
    Ok(sum / tbl.n_e as f64)
}

/// Primary-sample DR value of the intermediate outcomes.
pub fn value_we(tbl: &RewardTable, d: &RuleActions) -> Result<Vec<f64>> {
    tbl.check_actions(d)?;
    let rows = d.primary().iter().enumerate().map(|(i, &a)| tbl.w_e_at(i, a));
    Ok(tbl.mean_vec(rows, tbl.n_e))
}

/// Auxiliary-sample DR value of the intermediate outcomes.
pub fn value_wu(tbl: &RewardTable, d: &RuleActions) -> Result<Vec<f64>> {
    tbl.check_actions(d)?;
    let rows = d.auxiliary().iter().enumerate().map(|(j, &a)| tbl.w_u_at(j, a));
    Ok(tbl.mean_vec(rows, tbl.n_u))
}

/// Rebalanced primary-side value, averaged over all joint rows.
pub fn value_w1(tbl: &RewardTable, d: &RuleActions) -> Result<Vec<f64>> {
    tbl.check_actions(d)?;
    let rows = d.joint.iter().enumerate().map(|(i, &a)| tbl.w1_at(i, a));
    Ok(tbl.mean_vec(rows, tbl.n()))
}

/// Rebalanced auxiliary-side value, averaged over all joint rows.
pub fn value_w0(tbl: &RewardTable, d: &RuleActions) -> Result<Vec<f64>> {
    tbl.check_actions(d)?;
    let rows = d.joint.iter().enumerate().map(|(i, &a)| tbl.w0_at(i, a));
    Ok(tbl.mean_vec(rows, tbl.n()))
}

/// `n^-1` times the sum of `w1 - w0` at arm `a` over auxiliary rows.
pub fn delta_hat(tbl: &RewardTable, a: u8) -> Vec<f64> {
    let mut out = vec![0.0; tbl.s];
    if tbl.n_u == 0 {
        return out;
    }
    for i in tbl.n_e..tbl.n() {
        for ((o, p), q) in out.iter_mut().zip(tbl.w1_at(i, a)).zip(tbl.w0_at(i, a)) {
            *o += p - q;
        }
    }
    out.iter_mut().for_each(|o| *o /= tbl.n() as f64);
    out
}
