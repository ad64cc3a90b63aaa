//! Worked examples on the simulation scenarios: nuisance fits, reward
//! construction, diagnostics, ground truth and the linear-rule search.

use coda_core::calibration::calib_stats;
use coda_core::nuisance::{cio_diagnostic, fit_all, fit_binary, fit_mean, fit_predictions, NuisancePredictions};
use coda_core::rewards::{build_rewards, value_ve, value_w0, value_w1};
use coda_core::search::parametric_search;
use coda_core::simulation::truth::DEFAULT_MC;
use coda_core::simulation::{best_tree_value, generate, mc_true_value, Design, ScenarioSpec};
use coda_core::{AuxiliarySample, BasisSpec, Config, DecisionRule, Mode, PrimarySample, SamplingFeatures};
use nalgebra::{DMatrix, DVector};

fn spec(id: u8, design: Design) -> ScenarioSpec {
    ScenarioSpec::new(id, design).unwrap()
}

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

#[test]
fn propensity_coefficients_are_recovered() {
    let s = spec(1, Design::Homogeneous);
    let (e, _) = generate(&s, 100_000, 10, 1).unwrap();
    let features = DMatrix::from_fn(e.len(), 3, |i, j| if j == 0 { 1.0 } else { e.x[(i, j - 1)] });
    let m = fit_binary(&features, &e.a, [0.01, 0.99]).unwrap();
    for (got, want) in m.coef.iter().zip([0.4, 0.2, -0.2]) {
        assert!((got - want).abs() < 0.05, "{:?}", m.coef);
    }
}

#[test]
fn mean_fit_error_shrinks_with_sample_size() {
    let s = spec(4, Design::Homogeneous);
    let mse = |n: usize| {
        let (e, _) = generate(&s, n, 10, 2).unwrap();
        let fit = fit_mean(&e.x, &e.m, &e.a, &BasisSpec::quadratic(), 1e-8).unwrap();
        let (probe, _) = generate(&s, 20_000, 10, 3).unwrap();
        let mut total = 0.0;
        for i in 0..probe.len() {
            let x = row(&probe.x, i);
            for a in 0..2u8 {
                let got = fit.predict(&x, a);
                let want = s.theta(&x, a);
                total += got.iter().zip(&want).map(|(g, w)| (g - w).powi(2)).sum::<f64>();
            }
        }
        total / (2 * probe.len()) as f64
    };
    let (small, large) = (mse(10_000), mse(100_000));
    assert!(large < small, "mse at 1e5 = {large}, at 1e4 = {small}");
    assert!(large < 10.0 * small);
}

#[test]
fn sampling_probability_is_flat_on_homogeneous_data() {
    let s = spec(1, Design::Homogeneous);
    let (e, u) = generate(&s, 5000, 5000, 4).unwrap();
    let cfg = Config {
        sampling_features: SamplingFeatures::Linear,
        sampling_basis: BasisSpec::linear(),
        ..Config::default()
    };
    let (preds, _) = fit_predictions(&e, &u, &cfg).unwrap();
    let target = 0.5;
    let mad: f64 = preds.r_hat.iter().flatten().map(|r| (r - target).abs()).sum::<f64>() / (2 * preds.n()) as f64;
    assert!(mad < 0.05, "mean absolute deviation {mad}");
}

#[test]
fn default_sampling_model_is_centered_on_homogeneous_data() {
    let s = spec(1, Design::Homogeneous);
    let (e, u) = generate(&s, 1000, 2000, 5).unwrap();
    let (preds, _) = fit_predictions(&e, &u, &Config::default()).unwrap();
    let observed: f64 = (0..preds.n())
        .map(|i| {
            let a = if i < e.len() { e.a[i] } else { u.a[i - e.len()] };
            preds.r_hat[i][usize::from(a)]
        })
        .sum::<f64>()
        / preds.n() as f64;
    assert!((observed - 1.0 / 3.0).abs() < 0.02, "mean r_hat {observed}");
}

#[test]
fn single_class_auxiliary_treatment_is_rejected() {
    let s = spec(1, Design::Homogeneous);
    let (e, u) = generate(&s, 300, 300, 6).unwrap();
    let u = AuxiliarySample::new(u.x.clone(), vec![1; u.len()], u.m.clone()).unwrap();
    let err = fit_all(&e, &u, &Config::default()).unwrap_err();
    assert!(err.to_string().contains("single-class labels"), "{err}");
}

#[test]
fn intermediate_mean_uses_the_joint_sample() {
    let s = spec(1, Design::Homogeneous);
    let (e, u) = generate(&s, 1000, 2000, 7).unwrap();
    let set = fit_all(&e, &u, &Config::default()).unwrap();
    assert_eq!(set.provenance.theta_rows, 3000);
    assert_eq!((set.provenance.n_e, set.provenance.n_u), (1000, 2000));
}

#[test]
fn cio_diagnostic_examples() {
    let s = spec(1, Design::Homogeneous);
    let cfg = Config::default();
    let (e, u) = generate(&s, 5000, 5000, 8).unwrap();
    let holds = cio_diagnostic(&e, &u, &cfg).unwrap();
    assert!(holds.relative_mse[0] < 0.05, "{:?}", holds.relative_mse);

    let shifted = AuxiliarySample::new(u.x.clone(), u.a.clone(), u.m.map(|v| v + 10.0)).unwrap();
    let broken = cio_diagnostic(&e, &shifted, &cfg).unwrap();
    assert!(broken.relative_mse[0] > 0.5, "{:?}", broken.relative_mse);

    let same = AuxiliarySample::new(e.x.clone(), e.a.clone(), e.m.clone()).unwrap();
    let identical = cio_diagnostic(&e, &same, &cfg).unwrap();
    assert!(identical.relative_mse[0] < 1e-20, "{:?}", identical.relative_mse);
}

/// Predictions built from the true nuisance functions, optionally degraded.
fn oracle_predictions(
    s: &ScenarioSpec,
    e: &PrimarySample,
    u: &AuxiliarySample,
    pi_true: bool,
    mu_true: bool,
) -> NuisancePredictions {
    let (n_e, n_u) = (e.len(), u.len());
    let n = n_e + n_u;
    let pi = |x: &[f64]| if pi_true { s.propensity(x) } else { 0.5 };
    let mut theta = vec![0.0; n * 2 * s.s];
    let mut pi_joint = Vec::with_capacity(n);
    for i in 0..n {
        let x = if i < n_e { row(&e.x, i) } else { row(&u.x, i - n_e) };
        pi_joint.push(pi(&x));
        for a in 0..2u8 {
            let t = s.theta(&x, a);
            let start = (i * 2 + usize::from(a)) * s.s;
            theta[start..start + s.s].copy_from_slice(&t);
        }
    }
    NuisancePredictions {
        n_e,
        n_u,
        s: s.s,
        pi_e: (0..n_e).map(|i| pi(&row(&e.x, i))).collect(),
        pi_u: (0..n_u).map(|i| pi(&row(&u.x, i))).collect(),
        pi_joint,
        mu_e: (0..n_e)
            .map(|i| {
                let x = row(&e.x, i);
                if mu_true {
                    [s.mu(&x, 0), s.mu(&x, 1)]
                } else {
                    [0.0, 0.0]
                }
            })
            .collect(),
        theta,
        r_hat: vec![[n_e as f64 / n as f64; 2]; n],
    }
}

#[test]
fn doubly_robust_degeneracies_are_unbiased() {
    let s = spec(1, Design::Homogeneous);
    let rule = s.optimal_rule();
    let truth = 1.0;
    for (pi_true, mu_true) in [(true, false), (false, true)] {
        let reps = 2000;
        let vals: Vec<f64> = (0..reps)
            .map(|k| {
                let (e, u) = generate(&s, 500, 5, 10_000 + k).unwrap();
                let preds = oracle_predictions(&s, &e, &u, pi_true, mu_true);
                let tbl = build_rewards(&e, &u, &preds).unwrap();
                value_ve(&tbl, &tbl.actions(&rule).unwrap()).unwrap()
            })
            .collect();
        let k = reps as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        assert!(
            (mean - truth).abs() < 3.0 * sd / k.sqrt(),
            "pi_true={pi_true} mu_true={mu_true}: mean {mean}, sd {sd}"
        );
    }
}

// Each draw should land within 3 SEs; over 20 draws we allow one miss, since
// the plug-in SE ignores the error in the fitted sampling probability.
#[test]
fn rebalanced_contrast_vanishes_on_homogeneous_data() {
    let s = spec(1, Design::Homogeneous);
    let mut zs = Vec::new();
    for seed in 0..20 {
        let (e, u) = generate(&s, 5000, 5000, 1100 + seed).unwrap();
        let (preds, _) = fit_predictions(&e, &u, &Config::default()).unwrap();
        let tbl = build_rewards(&e, &u, &preds).unwrap();
        let d = tbl.actions(&s.optimal_rule()).unwrap();
        let diff = value_w1(&tbl, &d).unwrap()[0] - value_w0(&tbl, &d).unwrap()[0];
        let stats = calib_stats(&tbl, &d, Mode::He).unwrap();
        zs.push(diff / (stats.sigma[(0, 0)] / tbl.n() as f64).sqrt());
    }
    let misses = zs.iter().filter(|z| z.abs() >= 3.0).count();
    assert!(misses <= 1, "z-scores {zs:?}");
    let mean = zs.iter().sum::<f64>() / zs.len() as f64;
    assert!(mean.abs() < 3.0 * 1.25 / (zs.len() as f64).sqrt(), "mean z {mean}");
}

#[test]
fn intermediate_and_outcome_noise_correlation() {
    let s = spec(1, Design::Homogeneous);
    let (e, _) = generate(&s, 1_000_000, 10, 12).unwrap();
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..e.len() {
        let x = row(&e.x, i);
        let a = e.a[i];
        let em = e.m[(i, 0)] - s.theta(&x, a)[0];
        let ey = e.y[i] - s.mu(&x, a);
        sx += em;
        sy += ey;
        sxx += em * em;
        syy += ey * ey;
        sxy += em * ey;
    }
    let n = e.len() as f64;
    let cov = sxy / n - sx / n * sy / n;
    let corr = cov / ((sxx / n - (sx / n).powi(2)) * (syy / n - (sy / n).powi(2))).sqrt();
    assert!((corr - 0.7).abs() < 0.01, "corr {corr}");
}

#[test]
fn optimal_rule_values() {
    for (id, want) in [(1u8, 0.999), (2, 1.333), (5, 1.909)] {
        let s = spec(id, Design::Homogeneous);
        let v = mc_true_value(&s, &s.optimal_rule(), DEFAULT_MC, 0).unwrap();
        assert!((v.value - want).abs() < 0.003, "scenario {id}: {v:?}");
    }
}

#[test]
fn best_tree_values() {
    let s2 = spec(2, Design::Homogeneous);
    let (_, v2) = best_tree_value(&s2, 2, DEFAULT_MC, 0).unwrap();
    assert!((v2.value - 1.251).abs() < 0.01, "{v2:?}");
    let s1 = spec(1, Design::Homogeneous);
    let (_, v1) = best_tree_value(&s1, 2, DEFAULT_MC, 0).unwrap();
    assert!((v1.value - 0.999).abs() < 0.01, "{v1:?}");
}

#[test]
fn linear_search_finds_the_scenario_two_direction() {
    let s = spec(2, Design::Homogeneous);
    let (e, u) = generate(&s, 1000, 2000, 13).unwrap();
    let cfg = Config::default();
    let (preds, _) = fit_predictions(&e, &u, &cfg).unwrap();
    let tbl = build_rewards(&e, &u, &preds).unwrap();
    let (res, report) = parametric_search(&tbl, &BasisSpec::linear(), Mode::Ho, &cfg).unwrap();
    let DecisionRule::Linear(rule) = &res.rule else {
        panic!("expected a linear rule");
    };
    let norm = rule.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    let cosine = (rule.beta[2] - rule.beta[1]) / (norm * 2f64.sqrt());
    assert!(cosine > 0.95, "beta {:?}", rule.beta);
    assert!(report.variance <= report.sigma_y2);
}

#[test]
fn constant_sampling_reproduces_the_primary_reward_scaled() {
    // With r constant at N_E / n, the indicator term of w1 on primary rows is
    // the joint-propensity IPW term scaled by n / N_E.
    let s = spec(1, Design::Homogeneous);
    let (e, u) = generate(&s, 400, 600, 14).unwrap();
    let (preds, _) = fit_predictions(&e, &u, &Config::default()).unwrap();
    let preds = preds.with_constant_sampling(0.4);
    let tbl = build_rewards(&e, &u, &preds).unwrap();
    for i in 0..e.len() {
        for a in 0..2u8 {
            let theta = preds.theta_at(i, a)[0];
            let ind = f64::from(u8::from(e.a[i] == a));
            let den = tbl.den_joint[i];
            let want = ind * (e.m[(i, 0)] - theta) / den / 0.4 + theta;
            let got = tbl.w1_at(i, a)[0];
            assert!(
                (got - want).abs() < 1e-10 * (1.0 + want.abs()),
                "row {i} arm {a}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn noiseless_outcomes_give_exact_rewards() {
    let s = spec(1, Design::Homogeneous);
    let (e, u) = generate(&s, 200, 200, 15).unwrap();
    let y = DVector::from_fn(e.len(), |i, _| s.mu(&row(&e.x, i), e.a[i]));
    let e = PrimarySample::new(e.x.clone(), e.a.clone(), e.m.clone(), y).unwrap();
    let preds = oracle_predictions(&s, &e, &u, true, true);
    let tbl = build_rewards(&e, &u, &preds).unwrap();
    for i in 0..e.len() {
        let x = row(&e.x, i);
        for a in 0..2u8 {
            assert!((tbl.v[i][usize::from(a)] - s.mu(&x, a)).abs() < 1e-12);
        }
    }
}
