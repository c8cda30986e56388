mod common;

use gsm_core::cmp::{cmp_default_init, fit_cmp, CmpObjective};
use gsm_core::inference::{
    bootstrap_ci, change_in_sm_test, change_in_sm_weights, chisq_sf, compute_a_matrix, estimate_sandwich, fit_restricted,
    null_tests, schur_information, wald_test, weighted_chisq_sf, weighted_chisq_tail, SandwichEstimate, TailMethod,
};
use gsm_core::numkit::{inverse, Matrix};
use gsm_core::objective::{mean_objective, DerivativeSource};
use gsm_core::samplers::{simulate_cmp, RngStream};
use gsm_core::study::{cmp_design, cmp_truth, CmpParametric, CMP_TESTED};
use gsm_core::{Error, FitOptions, ParamVec, Result, RowObjective};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

/// `ρ_i(θ) = ½ (θ − y_i)ᵀ Q (θ − y_i)` with exact derivatives.
struct Quadratic {
    q: Matrix,
    ys: Vec<Vec<f64>>,
}

impl RowObjective for Quadratic {
    fn n_rows(&self) -> usize {
        self.ys.len()
    }
    fn n_params(&self) -> usize {
        self.q.rows()
    }
    fn param_names(&self) -> Vec<String> {
        (0..self.q.rows()).map(|j| format!("t{j}")).collect()
    }
    fn rho(&self, i: usize, theta: &[f64]) -> Result<f64> {
        let r: Vec<f64> = theta.iter().zip(&self.ys[i]).map(|(a, b)| a - b).collect();
        Ok(0.5 * self.q.quad_form(&r)?)
    }
    fn score(&self, i: usize, theta: &[f64]) -> Result<Vec<f64>> {
        let r: Vec<f64> = theta.iter().zip(&self.ys[i]).map(|(a, b)| a - b).collect();
        self.q.matvec(&r)
    }
    fn hessian(&self, _: usize, _: &[f64]) -> Result<Matrix> {
        Ok(self.q.clone())
    }
    fn score_source(&self) -> DerivativeSource {
        DerivativeSource::Analytic
    }
    fn hessian_source(&self) -> DerivativeSource {
        DerivativeSource::Analytic
    }
}

fn random_spd(rng: &mut RngStream, p: usize) -> Matrix {
    let a = Matrix::from_vec(p, p, (0..p * p).map(|_| rng.normal()).collect()).unwrap();
    a.transpose().matmul(&a).unwrap().add(&Matrix::identity(p)).unwrap()
}

fn toy(seed: u64, n: usize) -> Quadratic {
    let mut rng = RngStream::new(seed, 0);
    let q = random_spd(&mut rng, 3);
    let ys = (0..n).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
    Quadratic { q, ys }
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("t{j}")).collect()
}

fn synthetic(i_hat: Matrix, j_hat: Matrix) -> SandwichEstimate {
    let ii = inverse(&i_hat).unwrap();
    let k_hat = ii.matmul(&j_hat).unwrap().matmul(&ii).unwrap().symmetrize();
    SandwichEstimate { i_hat, j_hat, k_hat, n: 100, hessian_source: DerivativeSource::Analytic }
}

#[test]
fn sandwich_on_quadratic_recovers_curvature() {
    let obj = toy(1, 40);
    let s = estimate_sandwich(&obj, &[0.1, 0.2, 0.3]).unwrap();
    assert!(s.i_hat.sub(&obj.q).unwrap().max_abs() < 1e-14 * obj.q.max_abs());
    assert!(s.k_hat.max_asymmetry() < 1e-14);
}

#[test]
fn duplicated_rows_leave_sandwich_unchanged() {
    let obj = toy(2, 25);
    let twice = Quadratic { q: obj.q.clone(), ys: obj.ys.iter().chain(&obj.ys).cloned().collect() };
    let th = [0.3, -0.1, 0.5];
    let a = estimate_sandwich(&obj, &th).unwrap();
    let b = estimate_sandwich(&twice, &th).unwrap();
    assert!(a.j_hat.sub(&b.j_hat).unwrap().max_abs() < 1e-13);
    assert!(a.k_hat.sub(&b.k_hat).unwrap().max_abs() < 1e-12);
}

#[test]
fn singular_information_is_an_error() {
    let obj = Quadratic { q: Matrix::diag(&[1.0, 0.0]), ys: vec![vec![0.0, 0.0]] };
    assert!(matches!(estimate_sandwich(&obj, &[0.0, 0.0]), Err(Error::Singular(_))));
}

#[test]
fn wald_hand_values() {
    let th = ParamVec::new(vec![0.5, 2.0], names(2)).unwrap().with_partition(&["t0"]).unwrap();
    let t = wald_test(&th, &[0.5], &Matrix::identity(2), 10).unwrap();
    assert_eq!((t.statistic, t.p_value), (0.0, 1.0));
    let x: f64 = 3.8415;
    let th = ParamVec::new(vec![(x / 100.0).sqrt(), 7.0], names(2)).unwrap().with_partition(&["t0"]).unwrap();
    let t = wald_test(&th, &[0.0], &Matrix::identity(2), 100).unwrap();
    assert!((t.statistic - x).abs() < 1e-12);
    let oracle = erfc((x / 2.0).sqrt());
    assert!((t.p_value - oracle).abs() < 1e-9);
    assert!((t.p_value - 0.05).abs() < 1e-5);
}

#[test]
fn wald_singular_block_is_an_error() {
    let th = ParamVec::new(vec![0.5, 2.0], names(2)).unwrap().with_partition(&["t0"]).unwrap();
    assert!(wald_test(&th, &[0.0], &Matrix::diag(&[0.0, 1.0]), 10).is_err());
}

#[test]
fn restricted_fit_consistency() {
    let obj = toy(3, 60);
    let full = gsm_core::objective::fit_objective(&obj, &ParamVec::new(vec![0.0; 3], names(3)).unwrap(), &FitOptions::default())
        .unwrap();
    let free = fit_restricted(&obj, &full.params, &[], &FitOptions::default()).unwrap();
    assert!(common::rel_err(free.params.values(), full.params.values(), 1.0) < 1e-8);
    let pinned_at = full.params.values()[0];
    let init = ParamVec::new(vec![pinned_at, 1.0, -1.0], names(3)).unwrap().with_partition(&["t0"]).unwrap();
    let r = fit_restricted(&obj, &init, &[pinned_at], &FitOptions::default()).unwrap();
    assert_eq!(r.params.values()[0], pinned_at);
    assert!(common::rel_err(&r.params.values()[1..], &full.params.values()[1..], 1.0) < 1e-8);
    assert_eq!(r.params.tested(), &[0]);
}

#[test]
fn a_matrix_block_diagonal_information() {
    let mut rng = RngStream::new(4, 0);
    let j = random_spd(&mut rng, 4);
    let i = Matrix::diag(&[2.0, 3.0, 4.0, 5.0]);
    let a = compute_a_matrix(&i, &j, &[0, 2]).unwrap();
    assert!(a.sub(&j.select(&[0, 2], &[0, 2])).unwrap().max_abs() < 1e-14);
}

#[test]
fn a_matrix_matches_explicit_blocks() {
    let mut rng = RngStream::new(5, 0);
    let i = random_spd(&mut rng, 5);
    let j = random_spd(&mut rng, 5);
    let (t, u) = (vec![1, 3], vec![0, 2, 4]);
    let i12 = i.select(&t, &u);
    let i22inv = inverse(&i.select(&u, &u)).unwrap();
    let j22 = j.select(&u, &u);
    let proj = i12.matmul(&i22inv).unwrap();
    let want = j
        .select(&t, &t)
        .add(&proj.matmul(&j22).unwrap().matmul(&proj.transpose()).unwrap())
        .unwrap()
        .sub(&proj.matmul(&j.select(&u, &t)).unwrap())
        .unwrap()
        .sub(&j.select(&t, &u).matmul(&proj.transpose()).unwrap())
        .unwrap();
    let a = compute_a_matrix(&i, &j, &t).unwrap();
    assert!(a.sub(&want).unwrap().max_abs() < 1e-10 * want.max_abs());
    assert!(a.max_asymmetry() < 1e-12 * a.max_abs());
}

#[test]
fn likelihood_identity_gives_unit_weights() {
    let mut rng = RngStream::new(6, 0);
    for p in 2..=6 {
        let i = random_spd(&mut rng, p);
        let tested: Vec<usize> = (0..p / 2).collect();
        let a = compute_a_matrix(&i, &i, &tested).unwrap();
        let s = schur_information(&i, &tested).unwrap();
        assert!(a.sub(&s).unwrap().max_abs() < 1e-10 * s.max_abs());
        let (w, clamped) = change_in_sm_weights(&synthetic(i.clone(), i), &tested).unwrap();
        assert_eq!(clamped, 0);
        assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-10), "{w:?}");
    }
}

#[test]
fn weighted_tail_examples() {
    assert!((weighted_chisq_sf(3.8415, &[1.0]).unwrap() - 0.05).abs() < 1e-5);
    assert!((weighted_chisq_sf(3.8415, &[1.0]).unwrap() - erfc((3.8415f64 / 2.0).sqrt())).abs() < 1e-6);
    assert_eq!(weighted_chisq_sf(0.0, &[1.0, 1.0, 1.0]).unwrap(), 1.0);
    for x in [0.5, 2.0, 6.0, 12.0] {
        let t = weighted_chisq_tail(x, &[2.0, 1.0]).unwrap();
        assert!(!matches!(t.method, TailMethod::MonteCarlo { .. }));
        let (mc, se) = common::mc_weighted_tail(x, &[2.0, 1.0], 1_000_000, 99);
        assert!((t.p - mc).abs() < 3.0 * se, "x {x}: {} vs {mc} (se {se})", t.p);
    }
}

#[test]
fn unit_weights_match_chi_square() {
    for l in 1..=5 {
        let w = vec![1.0; l];
        for k in 1..=20 {
            let x = 0.5 * k as f64;
            let p = weighted_chisq_sf(x, &w).unwrap();
            assert!((p - chisq_sf(x, l)).abs() < 1e-6, "l {l} x {x}: {p} vs {}", chisq_sf(x, l));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weighted_tail_is_monotone(w in prop::collection::vec(0.05f64..5.0, 1..5), x in 0.0f64..20.0, dx in 0.01f64..5.0) {
        let a = weighted_chisq_sf(x, &w).unwrap();
        let b = weighted_chisq_sf(x + dx, &w).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b <= a + 1e-9);
    }

    #[test]
    fn a_matrix_is_symmetric(seed in any::<u64>(), p in 2usize..7) {
        let mut rng = RngStream::new(seed, 0);
        let i = random_spd(&mut rng, p);
        let j = random_spd(&mut rng, p);
        let a = compute_a_matrix(&i, &j, &[0]).unwrap();
        prop_assert!(a.max_asymmetry() <= 1e-12 * a.max_abs().max(1.0));
    }
}

fn cmp_null_data(n: usize, seed: u64, rep: u64) -> gsm_core::Dataset {
    let x = cmp_design(n, seed).unwrap();
    simulate_cmp(&x, &cmp_truth(Some(0.0)).unwrap(), &mut RngStream::new(seed, rep)).unwrap()
}

#[test]
fn equal_fits_give_zero_change_statistic() {
    let data = cmp_null_data(300, 7, 0);
    let obj = CmpObjective::new(&data).unwrap();
    let fit = fit_cmp(&data, &cmp_default_init(&data).unwrap()).unwrap();
    let th = fit.params.clone().with_partition(&CMP_TESTED).unwrap();
    let s = estimate_sandwich(&obj, th.values()).unwrap();
    let t = change_in_sm_test(&obj, &th, &th, &s).unwrap();
    assert_eq!((t.statistic, t.p_value), (0.0, 1.0));
}

#[test]
fn restricted_objective_is_never_below_unrestricted() {
    for rep in 0..20 {
        let data = cmp_null_data(300, 8, rep);
        let obj = CmpObjective::new(&data).unwrap();
        let fit = fit_cmp(&data, &cmp_default_init(&data).unwrap()).unwrap();
        let tests = null_tests(&obj, &fit.params, &CMP_TESTED).unwrap();
        let gap = mean_objective(&obj, tests.restricted.params.values()).unwrap() - fit.objective;
        assert!(tests.change_in_sm.statistic > -1e-6);
        assert!(gap >= -1e-9 && gap < 0.1, "gap {gap}");
    }
}

#[test]
fn mean_score_vanishes_at_truth() {
    let n = 10_000;
    let x = cmp_design(n, 9).unwrap();
    let truth = cmp_truth(None).unwrap();
    let data = simulate_cmp(&x, &truth, &mut RngStream::new(9, 0)).unwrap();
    let obj = CmpObjective::new(&data).unwrap();
    let th = truth.to_vec();
    let scores: Vec<Vec<f64>> = (0..n).map(|i| obj.score(i, &th).unwrap()).collect();
    let p = th.len();
    let mut mean = vec![0.0; p];
    for s in &scores {
        for j in 0..p {
            mean[j] += s[j] / n as f64;
        }
    }
    let se_max = (0..p)
        .map(|j| (scores.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (n * (n - 1)) as f64).sqrt())
        .fold(0.0, f64::max);
    assert!(gsm_core::numkit::norm(&mean) < 4.0 * se_max, "{mean:?} vs se {se_max}");
}

#[test]
fn null_p_values_are_uniform() {
    let reps = 500;
    let x = cmp_design(1000, 10).unwrap();
    let null = cmp_truth(Some(0.0)).unwrap();
    let p: Vec<f64> = (0..reps)
        .map(|r| {
            let data = simulate_cmp(&x, &null, &mut RngStream::new(10, r)).unwrap();
            let obj = CmpObjective::new(&data).unwrap();
            let fit = fit_cmp(&data, &cmp_default_init(&data).unwrap()).unwrap();
            null_tests(&obj, &fit.params, &CMP_TESTED).unwrap().wald.p_value
        })
        .collect();
    let d = common::ks_uniform(p);
    let pv = common::ks_pvalue(d, reps as usize);
    assert!(pv > 0.01, "KS distance {d}, p {pv}");
}

fn bootstrap_width(n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let x = cmp_design(n, 11).unwrap();
    let data = simulate_cmp(&x, &cmp_truth(None).unwrap(), &mut RngStream::new(11, 0)).unwrap();
    let fit = fit_cmp(&data, &cmp_default_init(&data).unwrap()).unwrap();
    let se = estimate_sandwich(&CmpObjective::new(&data).unwrap(), fit.params.values()).unwrap().standard_errors();
    let b = bootstrap_ci(&CmpParametric { covariates: &x }, &fit.params, 200, 0.95, 12).unwrap();
    assert!(b.warnings.is_empty());
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975);
    let lo: Vec<f64> = fit.params.values().iter().zip(&se).map(|(e, s)| e - z * s).collect();
    let hi: Vec<f64> = fit.params.values().iter().zip(&se).map(|(e, s)| e + z * s).collect();
    (b.lower, b.upper, lo, hi)
}

#[test]
fn bootstrap_width_scales_and_overlaps_se_intervals() {
    let (l2, u2, se_l2, se_u2) = bootstrap_width(200);
    let (l8, u8, _, _) = bootstrap_width(800);
    let mut ratios = Vec::new();
    for j in 0..l2.len() {
        ratios.push((u2[j] - l2[j]) / (u8[j] - l8[j]));
        assert!(l2[j] < se_u2[j] && se_l2[j] < u2[j], "parameter {j} intervals disjoint");
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((1.5..2.7).contains(&mean_ratio), "width ratio {mean_ratio} ({ratios:?})");
}

#[test]
fn bootstrap_replays_and_checks_inputs() {
    let x = cmp_design(150, 13).unwrap();
    let data = simulate_cmp(&x, &cmp_truth(None).unwrap(), &mut RngStream::new(13, 0)).unwrap();
    let fit = fit_cmp(&data, &cmp_default_init(&data).unwrap()).unwrap();
    let model = CmpParametric { covariates: &x };
    let a = bootstrap_ci(&model, &fit.params, 100, 0.9, 5).unwrap();
    let b = bootstrap_ci(&model, &fit.params, 100, 0.9, 5).unwrap();
    assert_eq!(a, b);
    assert!(bootstrap_ci(&model, &fit.params, 99, 0.9, 5).is_err());
    assert!(bootstrap_ci(&model, &fit.params, 100, 1.0, 5).is_err());
}
