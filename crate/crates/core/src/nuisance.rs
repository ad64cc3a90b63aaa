//! Nuisance models: propensities, outcome and intermediate-outcome means, and
//! the posterior sampling probability `r(x, a, m) = P(R = 1 | x, a, m)`.
//!
//! The built-in estimators are parametric (logistic regression fitted by IRLS
//! and per-arm least squares on a configurable basis). Any other estimator can
//! be plugged in by filling a [`NuisancePredictions`] directly.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::config::{Config, Mode, SamplingFeatures};
use crate::data::{validate_pair, AuxiliarySample, JointSample, PrimarySample};
use crate::error::{CodaError, Result};

const IRLS_MAX_ITER: usize = 100;
const IRLS_TOL: f64 = 1e-8;

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Solves the symmetric positive (semi)definite system `h z = g`, falling back
/// to a ridge of `eps * trace / p` when `h` is singular. Returns whether the
/// ridge was needed.
fn spd_solve(h: &DMatrix<f64>, g: &DMatrix<f64>, eps: f64) -> Result<(DMatrix<f64>, bool)> {
    let p = h.nrows();
    let eig = h.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    let well_posed = max > 0.0 && min > 1e-12 * max;
    if well_posed {
        if let Some(ch) = h.clone().cholesky() {
            return Ok((ch.solve(g), false));
        }
    }
    let scale = (h.trace() / p as f64).max(f64::MIN_POSITIVE);
    let bump = eps.max(1e-12) * scale;
    let mut hr = h.clone();
    for i in 0..p {
        hr[(i, i)] += bump;
    }
    hr.cholesky()
        .map(|ch| (ch.solve(g), true))
        .ok_or_else(|| CodaError::numeric("normal equations are not positive definite"))
}

/// Logistic-link model on a fixed feature vector with clipped predictions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BinaryModel {
    pub coef: Vec<f64>,
    pub clip: [f64; 2],
    pub iterations: usize,
    pub converged: bool,
    /// Set when the classes are (quasi-)separable and the MLE diverges.
    pub separated: bool,
}

impl BinaryModel {
    /// Unclipped probability.
    pub fn predict_raw(&self, features: &[f64]) -> f64 {
        let eta: f64 = features.iter().zip(&self.coef).map(|(f, b)| f * b).sum();
        sigmoid(eta)
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        self.predict_raw(features).clamp(self.clip[0], self.clip[1])
    }
}

/// Maximum-likelihood logistic regression by iteratively reweighted least
/// squares. Converged when the largest coefficient update is below 1e-8.
pub fn fit_binary(features: &DMatrix<f64>, labels: &[u8], clip: [f64; 2]) -> Result<BinaryModel> {
    let (n, p) = features.shape();
    if labels.len() != n {
        return Err(CodaError::invalid(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if n <= p {
        return Err(CodaError::invalid(format!(
            "logistic fit needs more rows than features ({n} <= {p})"
        )));
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == n {
        return Err(CodaError::invalid("single-class labels"));
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let mut beta = DVector::<f64>::zeros(p);
    let mut converged = false;
    let mut iterations = 0;
    let mut weighted = features.clone();
    let mut resid = DMatrix::<f64>::zeros(n, 1);
    for it in 0..IRLS_MAX_ITER {
        iterations = it + 1;
        let eta = features * &beta;
        let mut w = vec![0.0; n];
        for i in 0..n {
            let pr = sigmoid(eta[i]);
            w[i] = (pr * (1.0 - pr)).max(1e-12);
            resid[(i, 0)] = y[i] - pr;
        }
        weighted.copy_from(features);
        for mut col in weighted.column_iter_mut() {
            for (v, wi) in col.iter_mut().zip(&w) {
                *v *= wi;
            }
        }
        let h = features.tr_mul(&weighted);
        let g = features.tr_mul(&resid);
        let (step, _) = spd_solve(&h, &g, 1e-10)?;
        let max_step = step.amax();
        if !max_step.is_finite() {
            break;
        }
        beta += step.column(0);
        if max_step < IRLS_TOL {
            converged = true;
            break;
        }
        if beta.amax() > 1e4 {
            break;
        }
    }
    let fitted_perfectly = (0..n).all(|i| {
        let pr = sigmoid(features.row(i).dot(&beta.transpose()));
        if labels[i] == 1 {
            pr > 1.0 - 1e-6
        } else {
            pr < 1e-6
        }
    });
    let separated = !converged || fitted_perfectly;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(CodaError::numeric("logistic fit produced non-finite coefficients"));
    }
    Ok(BinaryModel {
        coef: beta.iter().copied().collect(),
        clip,
        iterations,
        converged,
        separated,
    })
}

/// Per-arm least squares `E(response | x, a)` on a basis expansion of `x`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeanModel {
    pub basis: BasisSpec,
    /// Coefficients per arm, `dim(basis) x k`.
    pub coef: [DMatrix<f64>; 2],
    pub ridge_applied: bool,
}

impl MeanModel {
    pub fn output_dim(&self) -> usize {
        self.coef[0].ncols()
    }

    pub fn predict_into(&self, x: &[f64], arm: u8, phi: &mut Vec<f64>, out: &mut [f64]) {
        phi.clear();
        self.basis.expand_into(x, phi);
        let c = &self.coef[usize::from(arm)];
        for (k, o) in out.iter_mut().enumerate() {
            *o = phi.iter().enumerate().map(|(j, f)| f * c[(j, k)]).sum();
        }
    }

    pub fn predict(&self, x: &[f64], arm: u8) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        let mut phi = Vec::new();
        self.predict_into(x, arm, &mut phi, &mut out);
        out
    }
}

fn row_vec(mat: &DMatrix<f64>, i: usize) -> Vec<f64> {
    mat.row(i).iter().copied().collect()
}

/// Fits one least-squares regression per treatment arm.
pub fn fit_mean(
    x: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    arms: &[u8],
    basis: &BasisSpec,
    ridge: f64,
) -> Result<MeanModel> {
    let n = x.nrows();
    if responses.nrows() != n || arms.len() != n {
        return Err(CodaError::invalid("row counts of x, responses and arms differ"));
    }
    let p = basis.dim(x.ncols());
    let k = responses.ncols();
    let mut ridge_applied = false;
    let mut coef: [DMatrix<f64>; 2] = [DMatrix::zeros(p, k), DMatrix::zeros(p, k)];
    let mut phi = Vec::with_capacity(p);
    for arm in 0..2u8 {
        let rows: Vec<usize> = (0..n).filter(|&i| arms[i] == arm).collect();
        if rows.len() <= p {
            return Err(CodaError::invalid(format!(
                "arm {arm} has {} rows but the basis has {p} features",
                rows.len()
            )));
        }
        let mut design = DMatrix::<f64>::zeros(rows.len(), p);
        let mut resp = DMatrix::<f64>::zeros(rows.len(), k);
        for (r, &i) in rows.iter().enumerate() {
            phi.clear();
            basis.expand_into(&row_vec(x, i), &mut phi);
            for (a, v) in phi.iter().enumerate() {
                design[(r, a)] = *v;
            }
            for c in 0..k {
                resp[(r, c)] = responses[(i, c)];
            }
        }
        let xtx = design.tr_mul(&design);
        let xty = design.tr_mul(&resp);
        let (sol, bumped) = spd_solve(&xtx, &xty, ridge)?;
        ridge_applied |= bumped;
        coef[usize::from(arm)] = sol;
    }
    Ok(MeanModel {
        basis: basis.clone(),
        coef,
        ridge_applied,
    })
}

/// How the sampling probability is obtained.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingModel {
    Fitted {
        model: BinaryModel,
        features: SamplingFeatures,
        basis: BasisSpec,
    },
    /// A fixed probability for every row, e.g. `N_E / n`.
    Constant(f64),
}

impl SamplingModel {
    fn features_into(
        features: SamplingFeatures,
        basis: &BasisSpec,
        theta: &MeanModel,
        x: &[f64],
        a: u8,
        m: &[f64],
        out: &mut Vec<f64>,
    ) {
        out.clear();
        basis.expand_into(x, out);
        out.push(f64::from(a));
        match features {
            SamplingFeatures::Linear => out.extend_from_slice(m),
            SamplingFeatures::ResidualSquared => {
                let fit = theta.predict(x, a);
                out.extend(m.iter().zip(&fit).map(|(mk, tk)| (mk - tk).powi(2)));
            }
        }
    }

    /// `r(x, a, m)` after clipping.
    pub fn predict(&self, theta: &MeanModel, x: &[f64], a: u8, m: &[f64]) -> f64 {
        match self {
            SamplingModel::Constant(p) => *p,
            SamplingModel::Fitted { model, features, basis } => {
                let mut f = Vec::new();
                Self::features_into(*features, basis, theta, x, a, m, &mut f);
                model.predict(&f)
            }
        }
    }
}

/// Bookkeeping attached to a fitted [`NuisanceSet`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub estimator: String,
    pub n_e: usize,
    pub n_u: usize,
    pub theta_rows: usize,
    pub sampling_rows: usize,
    pub outcome_basis: BasisSpec,
    pub propensity_basis: BasisSpec,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NuisanceSet {
    pub pi_e: BinaryModel,
    pub pi_u: BinaryModel,
    pub pi_joint: BinaryModel,
    pub sampling_r: SamplingModel,
    pub mu_e: MeanModel,
    pub theta: MeanModel,
    pub provenance: Provenance,
}

fn basis_matrix(x: &DMatrix<f64>, basis: &BasisSpec) -> DMatrix<f64> {
    let p = basis.dim(x.ncols());
    let mut data = Vec::with_capacity(x.nrows() * p);
    for i in 0..x.nrows() {
        basis.expand_into(&row_vec(x, i), &mut data);
    }
    DMatrix::from_row_slice(x.nrows(), p, &data)
}

fn fit_propensity(x: &DMatrix<f64>, a: &[u8], cfg: &Config, what: &str) -> Result<BinaryModel> {
    fit_binary(&basis_matrix(x, &cfg.propensity_basis), a, cfg.clip).map_err(|e| match e {
        CodaError::Invalid(msg) => CodaError::Invalid(format!("{what} propensity: {msg}")),
        other => other,
    })
}

/// Fits every nuisance model on the full samples.
pub fn fit_all(e: &PrimarySample, u: &AuxiliarySample, cfg: &Config) -> Result<NuisanceSet> {
    fit_all_with(e, u, cfg, true)
}

/// As [`fit_all`]; without `sampling` the sampling probability is the
/// constant `N_E / n`, which the homogeneous estimators never read.
fn fit_all_with(e: &PrimarySample, u: &AuxiliarySample, cfg: &Config, sampling: bool) -> Result<NuisanceSet> {
    cfg.validate()?;
    let report = validate_pair(e, u);
    if !report.ok {
        return Err(CodaError::Invalid(report.failures.join("; ")));
    }
    let joint = JointSample::stack(e, u)?;
    let mut warnings = Vec::new();

    let pi_e = fit_propensity(&e.x, &e.a, cfg, "primary")?;
    let pi_u = fit_propensity(&u.x, &u.a, cfg, "auxiliary")?;
    let pi_joint = fit_propensity(&joint.x, &joint.a, cfg, "joint")?;
    for (name, m) in [("primary", &pi_e), ("auxiliary", &pi_u), ("joint", &pi_joint)] {
        if m.separated {
            warnings.push(format!("{name} propensity: classes are separable"));
        }
    }

    let y = DMatrix::from_column_slice(e.len(), 1, e.y.as_slice());
    let mu_e = fit_mean(&e.x, &y, &e.a, &cfg.outcome_basis, cfg.ridge)?;
    let theta = fit_mean(&joint.x, &joint.m, &joint.a, &cfg.outcome_basis, cfg.ridge)?;
    for (name, m) in [("outcome mean", &mu_e), ("intermediate mean", &theta)] {
        if m.ridge_applied {
            warnings.push(format!("{name}: rank-deficient design, ridge applied"));
        }
    }

    let sampling_r = if sampling {
        let mut rows = Vec::new();
        let mut buf = Vec::new();
        for i in 0..joint.len() {
            SamplingModel::features_into(
                cfg.sampling_features,
                &cfg.sampling_basis,
                &theta,
                &row_vec(&joint.x, i),
                joint.a[i],
                &row_vec(&joint.m, i),
                &mut buf,
            );
            rows.extend_from_slice(&buf);
        }
        let width = buf.len();
        let sf = DMatrix::from_row_slice(joint.len(), width, &rows);
        let r_model = fit_binary(&sf, &joint.r, cfg.sampling_clip)?;
        if r_model.separated {
            warnings.push("sampling probability: samples are separable".into());
        }
        SamplingModel::Fitted {
            model: r_model,
            features: cfg.sampling_features,
            basis: cfg.sampling_basis.clone(),
        }
    } else {
        SamplingModel::Constant(e.len() as f64 / joint.len() as f64)
    };

    Ok(NuisanceSet {
        pi_e,
        pi_u,
        pi_joint,
        sampling_r,
        mu_e,
        theta,
        provenance: Provenance {
            estimator: "parametric: logistic IRLS propensities, per-arm least squares means".into(),
            n_e: e.len(),
            n_u: u.len(),
            theta_rows: joint.len(),
            sampling_rows: if sampling { joint.len() } else { 0 },
            outcome_basis: cfg.outcome_basis.clone(),
            propensity_basis: cfg.propensity_basis.clone(),
            warnings,
        },
    })
}

/// Per-row nuisance values consumed by the reward construction.
///
/// Joint-indexed vectors follow the primary-first stacking of
/// [`JointSample`]. `theta` is laid out as `[(i * 2 + a) * s + k]`.
#[derive(Clone, Debug)]
pub struct NuisancePredictions {
    pub n_e: usize,
    pub n_u: usize,
    pub s: usize,
    /// `pi_E(x)` on primary rows.
    pub pi_e: Vec<f64>,
    /// `pi_U(x)` on auxiliary rows.
    pub pi_u: Vec<f64>,
    /// Joint-sample propensity on all rows.
    pub pi_joint: Vec<f64>,
    /// `mu_E(x, a)` on primary rows.
    pub mu_e: Vec<[f64; 2]>,
    /// `theta(x, a)` on all rows.
    pub theta: Vec<f64>,
    /// `r(x, a, m)` on all rows, evaluated at each arm.
    pub r_hat: Vec<[f64; 2]>,
}

impl NuisancePredictions {
    pub fn theta_at(&self, i: usize, a: u8) -> &[f64] {
        let start = (i * 2 + usize::from(a)) * self.s;
        &self.theta[start..start + self.s]
    }

    pub fn n(&self) -> usize {
        self.n_e + self.n_u
    }

    /// Replaces the sampling probability by `p` everywhere.
    pub fn with_constant_sampling(mut self, p: f64) -> Self {
        self.r_hat.iter_mut().for_each(|r| *r = [p, p]);
        self
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n();
        let ok = self.pi_e.len() == self.n_e
            && self.pi_u.len() == self.n_u
            && self.pi_joint.len() == n
            && self.mu_e.len() == self.n_e
            && self.theta.len() == n * 2 * self.s
            && self.r_hat.len() == n;
        if !ok {
            return Err(CodaError::invalid("nuisance predictions do not match the sample sizes"));
        }
        let finite = self
            .pi_e
            .iter()
            .chain(&self.pi_u)
            .chain(&self.pi_joint)
            .chain(self.mu_e.iter().flatten())
            .chain(&self.theta)
            .chain(self.r_hat.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(CodaError::invalid("NaN or infinite nuisance prediction"));
        }
        Ok(())
    }

    /// Number of propensity and sampling predictions sitting on a clip bound.
    pub fn clipped_counts(&self, clip: [f64; 2], sampling_clip: [f64; 2]) -> (usize, usize) {
        let on = |v: f64, b: [f64; 2]| v <= b[0] || v >= b[1];
        let prop = self
            .pi_e
            .iter()
            .chain(&self.pi_u)
            .chain(&self.pi_joint)
            .filter(|&&v| on(v, clip))
            .count();
        let samp = self.r_hat.iter().flatten().filter(|&&v| on(v, sampling_clip)).count();
        (prop, samp)
    }
}

impl NuisanceSet {
    /// Evaluates every fitted model on the rows of `e` and `u`.
    pub fn predict(&self, e: &PrimarySample, u: &AuxiliarySample) -> Result<NuisancePredictions> {
        let joint = JointSample::stack(e, u)?;
        let s = e.s();
        let n = joint.len();
        let basis = &self.pi_e_basis();
        let mut phi = Vec::new();
        let mut prop = |model: &BinaryModel, x: &DMatrix<f64>, i: usize| {
            phi.clear();
            basis.expand_into(&row_vec(x, i), &mut phi);
            model.predict(&phi)
        };
        let pi_e: Vec<f64> = (0..e.len()).map(|i| prop(&self.pi_e, &e.x, i)).collect();
        let pi_u: Vec<f64> = (0..u.len()).map(|i| prop(&self.pi_u, &u.x, i)).collect();
        let pi_joint: Vec<f64> = (0..n).map(|i| prop(&self.pi_joint, &joint.x, i)).collect();
        let mu_e = (0..e.len())
            .map(|i| {
                let x = row_vec(&e.x, i);
                [self.mu_e.predict(&x, 0)[0], self.mu_e.predict(&x, 1)[0]]
            })
            .collect();
        let mut theta = Vec::with_capacity(n * 2 * s);
        let mut r_hat = Vec::with_capacity(n);
        for i in 0..n {
            let x = row_vec(&joint.x, i);
            let m = row_vec(&joint.m, i);
            theta.extend(self.theta.predict(&x, 0));
            theta.extend(self.theta.predict(&x, 1));
            r_hat.push([
                self.sampling_r.predict(&self.theta, &x, 0, &m),
                self.sampling_r.predict(&self.theta, &x, 1, &m),
            ]);
        }
        Ok(NuisancePredictions {
            n_e: e.len(),
            n_u: u.len(),
            s,
            pi_e,
            pi_u,
            pi_joint,
            mu_e,
            theta,
            r_hat,
        })
    }

    fn pi_e_basis(&self) -> BasisSpec {
        self.provenance.propensity_basis.clone()
    }
}

fn subset_primary(e: &PrimarySample, rows: &[usize]) -> PrimarySample {
    PrimarySample {
        x: e.x.select_rows(rows),
        a: rows.iter().map(|&i| e.a[i]).collect(),
        m: e.m.select_rows(rows),
        y: e.y.select_rows(rows),
    }
}

fn subset_auxiliary(u: &AuxiliarySample, rows: &[usize]) -> AuxiliarySample {
    AuxiliarySample {
        x: u.x.select_rows(rows),
        a: rows.iter().map(|&i| u.a[i]).collect(),
        m: u.m.select_rows(rows),
    }
}

fn fold_ids(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Nuisance predictions on the full samples, cross-fitted when
/// `cfg.cross_fit` is set: each row is predicted by models fitted without
/// its fold.
pub fn fit_predictions(
    e: &PrimarySample,
    u: &AuxiliarySample,
    cfg: &Config,
) -> Result<(NuisancePredictions, Vec<String>)> {
    fit_predictions_with(e, u, cfg, true)
}

/// As [`fit_predictions`], skipping the sampling-probability model in HO
/// mode, where it is never used.
pub fn fit_predictions_for(
    e: &PrimarySample,
    u: &AuxiliarySample,
    cfg: &Config,
    mode: Mode,
) -> Result<(NuisancePredictions, Vec<String>)> {
    fit_predictions_with(e, u, cfg, mode == Mode::He)
}

fn fit_predictions_with(
    e: &PrimarySample,
    u: &AuxiliarySample,
    cfg: &Config,
    sampling: bool,
) -> Result<(NuisancePredictions, Vec<String>)> {
    let Some(k) = cfg.cross_fit else {
        let set = fit_all_with(e, u, cfg, sampling)?;
        let preds = set.predict(e, u)?;
        return Ok((preds, set.provenance.warnings));
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fe = fold_ids(e.len(), k, &mut rng);
    let fu = fold_ids(u.len(), k, &mut rng);
    let (n_e, n_u, s) = (e.len(), u.len(), e.s());
    let n = n_e + n_u;
    let mut out = NuisancePredictions {
        n_e,
        n_u,
        s,
        pi_e: vec![0.0; n_e],
        pi_u: vec![0.0; n_u],
        pi_joint: vec![0.0; n],
        mu_e: vec![[0.0; 2]; n_e],
        theta: vec![0.0; n * 2 * s],
        r_hat: vec![[0.0; 2]; n],
    };
    let mut warnings = Vec::new();
    for fold in 0..k {
        let train_e: Vec<usize> = (0..n_e).filter(|&i| fe[i] != fold).collect();
        let train_u: Vec<usize> = (0..n_u).filter(|&i| fu[i] != fold).collect();
        let test_e: Vec<usize> = (0..n_e).filter(|&i| fe[i] == fold).collect();
        let test_u: Vec<usize> = (0..n_u).filter(|&i| fu[i] == fold).collect();
        let set = fit_all_with(
            &subset_primary(e, &train_e),
            &subset_auxiliary(u, &train_u),
            cfg,
            sampling,
        )?;
        warnings.extend(set.provenance.warnings.iter().map(|w| format!("fold {fold}: {w}")));
        let p = set.predict(&subset_primary(e, &test_e), &subset_auxiliary(u, &test_u))?;
        let te = test_e.len();
        for (local, &i) in test_e.iter().enumerate() {
            out.pi_e[i] = p.pi_e[local];
            out.mu_e[i] = p.mu_e[local];
            out.pi_joint[i] = p.pi_joint[local];
            out.r_hat[i] = p.r_hat[local];
            out.theta[i * 2 * s..(i + 1) * 2 * s].copy_from_slice(&p.theta[local * 2 * s..(local + 1) * 2 * s]);
        }
        for (local, &i) in test_u.iter().enumerate() {
            let jl = te + local;
            let ji = n_e + i;
            out.pi_u[i] = p.pi_u[local];
            out.pi_joint[ji] = p.pi_joint[jl];
            out.r_hat[ji] = p.r_hat[jl];
            out.theta[ji * 2 * s..(ji + 1) * 2 * s].copy_from_slice(&p.theta[jl * 2 * s..(jl + 1) * 2 * s]);
        }
    }
    Ok((out, warnings))
}

/// Check of the conditional-mean equality of intermediate outcomes across
/// samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CioReport {
    /// Per intermediate outcome: mean squared difference between the two
    /// per-sample fits, relative to the variance of the pooled fit.
    pub relative_mse: Vec<f64>,
}

/// Fits the intermediate-outcome mean on each sample separately and compares
/// the fits over all observed `(x, a)` pairs.
pub fn cio_diagnostic(e: &PrimarySample, u: &AuxiliarySample, cfg: &Config) -> Result<CioReport> {
    let report = validate_pair(e, u);
    if !report.ok {
        return Err(CodaError::Invalid(report.failures.join("; ")));
    }
    let joint = JointSample::stack(e, u)?;
    let fit_e = fit_mean(&e.x, &e.m, &e.a, &cfg.outcome_basis, cfg.ridge)?;
    let fit_u = fit_mean(&u.x, &u.m, &u.a, &cfg.outcome_basis, cfg.ridge)?;
    let pooled = fit_mean(&joint.x, &joint.m, &joint.a, &cfg.outcome_basis, cfg.ridge)?;
    let s = e.s();
    let n = joint.len() as f64;
    let mut sq = vec![0.0; s];
    let mut sum = vec![0.0; s];
    let mut sum2 = vec![0.0; s];
    for i in 0..joint.len() {
        let x = row_vec(&joint.x, i);
        let a = joint.a[i];
        let pe = fit_e.predict(&x, a);
        let pu = fit_u.predict(&x, a);
        let pp = pooled.predict(&x, a);
        for k in 0..s {
            sq[k] += (pe[k] - pu[k]).powi(2);
            sum[k] += pp[k];
            sum2[k] += pp[k] * pp[k];
        }
    }
    let relative_mse = (0..s)
        .map(|k| {
            let var = sum2[k] / n - (sum[k] / n).powi(2);
            if var > 0.0 {
                sq[k] / n / var
            } else if sq[k] == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(CioReport { relative_mse })
}
