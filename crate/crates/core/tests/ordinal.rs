mod common;

use gsm_core::cmp::CmpModel;
use gsm_core::ordinal::{fit_gsm, objective_gsm, rho_gsm_multivariate, rho_gsm_univariate, LogPmfModel, Support};
use gsm_core::samplers::{simulate_cmp, RngStream};
use gsm_core::study::{cmp_design, cmp_truth};
use gsm_core::{Dataset, Matrix, ParamVec};
use proptest::prelude::*;

fn geometric() -> LogPmfModel<impl Fn(usize, &[i64], &[f64]) -> f64 + Sync> {
    LogPmfModel::new(vec![Support::COUNTS], 1, |_, y: &[i64], th: &[f64]| y[0] as f64 * th[0].ln())
}

#[test]
fn geometric_interior_hand_value() {
    let v = rho_gsm_univariate(&geometric(), 0, 3, &[0.5]).unwrap();
    assert!((v + 4.0 / 9.0).abs() < 1e-15);
}

#[test]
fn geometric_lower_boundary_hand_value() {
    let v = rho_gsm_univariate(&geometric(), 0, 0, &[0.5]).unwrap();
    assert!((v + 8.0 / 9.0).abs() < 1e-15);
}

#[test]
fn bernoulli_upper_boundary_hand_value() {
    let m = LogPmfModel::new(vec![Support::finite(0, 1)], 0, |_, _: &[i64], _: &[f64]| 0.0);
    assert!((rho_gsm_univariate(&m, 0, 1, &[]).unwrap() + 0.75).abs() < 1e-15);
}

#[test]
fn product_model_factorizes() {
    let prod = LogPmfModel::new(vec![Support::COUNTS, Support::COUNTS], 2, |_, y: &[i64], th: &[f64]| {
        y[0] as f64 * th[0].ln() + y[1] as f64 * th[1].ln()
    });
    for y in [[0, 0], [2, 5], [7, 0], [1, 1]] {
        let joint = rho_gsm_multivariate(&prod, 0, &y, &[0.3, 0.7]).unwrap();
        let a = rho_gsm_univariate(&geometric(), 0, y[0], &[0.3]).unwrap();
        let b = rho_gsm_univariate(&geometric(), 0, y[1], &[0.7]).unwrap();
        assert!((joint - a - b).abs() < 1e-14);
    }
}

#[test]
fn univariate_matches_multivariate() {
    for y in 0..10 {
        let u = rho_gsm_univariate(&geometric(), 0, y, &[0.4]).unwrap();
        let m = rho_gsm_multivariate(&geometric(), 0, &[y], &[0.4]).unwrap();
        assert_eq!(u, m);
    }
}

/// Quadratic-exponential family `log p ∝ θ₁ y + θ₂ y² + x θ₁` on `{0,…,k−1}`.
fn quad_logw(k: usize, x: f64, th: &[f64]) -> Vec<f64> {
    (0..k).map(|y| th[0] * (1.0 + x) * y as f64 + th[1] * (y * y) as f64 / k as f64).collect()
}

fn quad_model(k: usize, xs: Vec<f64>) -> LogPmfModel<impl Fn(usize, &[i64], &[f64]) -> f64 + Sync> {
    LogPmfModel::new(vec![Support::finite(0, k as i64 - 1)], 2, move |row, y: &[i64], th: &[f64]| {
        let y = y[0] as f64;
        th[0] * (1.0 + xs[row]) * y + th[1] * y * y / k as f64
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn decomposition_matches_exhaustive_divergence(
        k in 2usize..=20,
        q_logw in prop::collection::vec(-2.0f64..2.0, 20),
        xs in prop::collection::vec(-1.0f64..1.0, 3),
        th in prop::collection::vec(-1.5f64..1.5, 2),
    ) {
        let model = quad_model(k, xs.clone());
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for (row, &x) in xs.iter().enumerate() {
            let q = common::normalize(&q_logw[..k]);
            let p = common::normalize(&quad_logw(k, x, &th));
            lhs += common::d_gsm_exhaustive(&q, &p);
            let mut e_rho = 0.0;
            for (y, qy) in q.iter().enumerate() {
                e_rho += qy * rho_gsm_univariate(&model, row, y as i64, &th).unwrap();
            }
            rhs += common::g_constant(&q) + e_rho;
        }
        prop_assert!((lhs - rhs).abs() < 1e-12, "lhs {lhs} rhs {rhs}");
    }
}

#[test]
fn population_divergence_vanishes_only_at_truth() {
    let k = 12;
    let grid: Vec<f64> = (0..50).map(|i| -1.0 + 2.0 * i as f64 / 49.0).collect();
    let th0 = [grid[17], grid[31]];
    let q = common::normalize(&quad_logw(k, 0.0, &th0));
    for &a in &grid {
        for &b in &grid {
            let dv = common::d_gsm_exhaustive(&q, &common::normalize(&quad_logw(k, 0.0, &[a, b])));
            if a == th0[0] && b == th0[1] {
                assert!(dv < 1e-20, "divergence {dv} at the truth");
            } else {
                assert!(dv > 0.0);
                if (a - th0[0]).abs().max((b - th0[1]).abs()) > 0.1 {
                    assert!(dv > 1e-8, "divergence {dv} at ({a}, {b})");
                }
            }
        }
    }
}

#[test]
fn geometric_fit_recovers_rate() {
    let mut rng = RngStream::new(11, 0);
    let y: Vec<i64> = (0..2000)
        .map(|_| {
            let mut k = 0;
            while rng.uniform() < 0.5 {
                k += 1;
            }
            k
        })
        .collect();
    let data = Dataset::counts(y, Matrix::from_vec(2000, 1, vec![1.0; 2000]).unwrap()).unwrap();
    let fit = fit_gsm(&geometric(), &data, &ParamVec::new(vec![0.3], vec!["lambda".into()]).unwrap()).unwrap();
    assert!(fit.converged);
    assert!((fit.params.values()[0] - 0.5).abs() < 0.05);
}

#[test]
fn fit_started_at_truth_stays_there() {
    let y: Vec<i64> = (0..4000).map(|i| [0, 0, 0, 0, 1, 1, 2, 3][i % 8]).collect();
    let data = Dataset::counts(y, Matrix::from_vec(4000, 1, vec![1.0; 4000]).unwrap()).unwrap();
    let first = fit_gsm(&geometric(), &data, &ParamVec::new(vec![0.2], vec!["lambda".into()]).unwrap()).unwrap();
    let again = fit_gsm(&geometric(), &data, &first.params).unwrap();
    assert!((again.params.values()[0] - first.params.values()[0]).abs() < 1e-6);
}

#[test]
fn cmp_objective_lower_at_truth_on_average() {
    let n = 5000;
    let x = cmp_design(n, 3).unwrap();
    let truth = cmp_truth(None).unwrap();
    let model = CmpModel { covariates: &x };
    let th0 = truth.to_vec();
    let mut wins = 0;
    for r in 0..5 {
        let data = simulate_cmp(&x, &truth, &mut RngStream::new(5, r)).unwrap();
        let f0 = objective_gsm(&model, &data, &th0).unwrap();
        let mut worse = true;
        for j in 0..th0.len() {
            for s in [-0.1, 0.1] {
                let mut th = th0.clone();
                th[j] += s;
                worse &= objective_gsm(&model, &data, &th).unwrap() > f0;
            }
        }
        wins += usize::from(worse);
    }
    assert!(wins >= 4, "truth beat all perturbations in only {wins} of 5 samples");
}
