mod common;

use gsm_core::cmp::{cmp_lambda, CmpSeries};
use gsm_core::numkit::{dot, norm, Matrix};
use gsm_core::samplers::{
    gibbs_vmf_auto, sample_cmp, sample_trunc_gauss, sample_vmf, simulate_vmf_iid, CmpSampler, RngStream, TruncGaussSampler,
};
use gsm_core::study::{cmp_design, tg_truth, CMP_BETA, CMP_NU};
use gsm_core::vmf::{AutoModelParams, NeighborGraph};
use gsm_core::Error;

fn histogram(draws: impl Iterator<Item = i64>) -> (Vec<u64>, u64) {
    let mut counts = Vec::new();
    let mut total = 0;
    for y in draws {
        let y = y as usize;
        if counts.len() <= y {
            counts.resize(y + 1, 0);
        }
        counts[y] += 1;
        total += 1;
    }
    (counts, total)
}

#[test]
fn poisson_mean() {
    let mut rng = RngStream::new(1, 0);
    let n = 100_000;
    let mean = (0..n).map(|_| sample_cmp(3.0, 1.0, &mut rng).unwrap() as f64).sum::<f64>() / n as f64;
    assert!((mean - 3.0).abs() < 3.0 * (3.0 / n as f64).sqrt());
}

#[test]
fn geometric_goodness_of_fit() {
    let s = CmpSampler::new(0.5, 0.0).unwrap();
    let mut rng = RngStream::new(2, 0);
    let (counts, total) = histogram((0..100_000).map(|_| s.draw(&mut rng)));
    let probs: Vec<f64> = (0..60).map(|k| 0.5 * 0.5f64.powi(k)).collect();
    let (_, p) = common::chisq_gof(&counts, &probs, total);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn cmp_goodness_of_fit_on_design_rate() {
    let x = cmp_design(1, 4).unwrap();
    let lambda = cmp_lambda(x.row(0), &CMP_BETA).unwrap();
    let s = CmpSampler::new(lambda, CMP_NU).unwrap();
    let mut rng = RngStream::new(3, 0);
    let (counts, total) = histogram((0..100_000).map(|_| s.draw(&mut rng)));
    let probs = CmpSeries::new(lambda, CMP_NU, 1e-14).unwrap().probabilities();
    let (_, p) = common::chisq_gof(&counts, &probs, total);
    assert!(p > 0.01, "p = {p} at lambda {lambda}");
}

#[test]
fn cmp_rejects_divergent_parameters() {
    assert!(matches!(CmpSampler::new(1.2, 0.0), Err(Error::DivergentSeries { .. })));
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn trunc_gauss_means_match_quadrature() {
    let params = tg_truth(None).unwrap();
    let mut rng = RngStream::new(4, 0);
    for x2 in [-1.0, 0.0, 1.5] {
        let mean = params.mean(&[1.0, x2]).unwrap();
        let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_trunc_gauss(&mean, &params.lambda, &mut rng).unwrap()).collect();
        assert!(draws.iter().flatten().all(|v| *v > 0.0));
        let truth = common::trunc_gauss_moments(&mean, &params.lambda, 801);
        for j in 0..2 {
            let col: Vec<f64> = draws.iter().map(|y| y[j]).collect();
            let (m, se) = mean_se(&col);
            assert!((m - truth[j]).abs() < 3.0 * se, "x2 {x2} coord {j}: {m} vs {} (se {se})", truth[j]);
        }
    }
}

fn trunc_normal_mean_1d(m: f64, sd: f64) -> f64 {
    let hi = m.max(0.0) + 12.0 * sd;
    let n = 20_001;
    let h = hi / (n - 1) as f64;
    let (mut z, mut e) = (0.0, 0.0);
    for i in 0..n {
        let y = i as f64 * h;
        let w = if i == 0 || i == n - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let f = w * (-0.5 * ((y - m) / sd).powi(2)).exp();
        z += f;
        e += f * y;
    }
    e / z
}

#[test]
fn diagonal_precision_gives_independent_coordinates() {
    let lambda = Matrix::diag(&[4.0, 25.0]);
    let mean = [0.1, -0.05];
    let mut rng = RngStream::new(5, 0);
    let prod: Vec<f64> = (0..100_000)
        .map(|_| {
            let y = sample_trunc_gauss(&mean, &lambda, &mut rng).unwrap();
            y[0] * y[1]
        })
        .collect();
    let (m, se) = mean_se(&prod);
    let want = trunc_normal_mean_1d(mean[0], 0.5) * trunc_normal_mean_1d(mean[1], 0.2);
    assert!((m - want).abs() < 3.0 * se, "{m} vs {want} (se {se})");
}

#[test]
fn proposals_match_untruncated_moments() {
    let params = tg_truth(None).unwrap();
    let s = TruncGaussSampler::new(&params.lambda).unwrap();
    let mean = [0.3, -0.2];
    let mut rng = RngStream::new(6, 0);
    let n = 100_000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| s.propose(&mean, &mut rng)).collect();
    let cov = gsm_core::numkit::inverse(&params.lambda).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = draws.iter().map(|y| y[j]).collect();
        let (m, se) = mean_se(&col);
        assert!((m - mean[j]).abs() < 3.0 * se);
    }
    let c01: Vec<f64> = draws.iter().map(|y| (y[0] - mean[0]) * (y[1] - mean[1])).collect();
    let (m, se) = mean_se(&c01);
    assert!((m - cov[(0, 1)]).abs() < 3.0 * se, "{m} vs {}", cov[(0, 1)]);
}

#[test]
fn hopeless_truncation_reports_low_acceptance() {
    let mean = [-3.0, -3.0];
    let lambda = Matrix::diag(&[100.0, 100.0]);
    let r = sample_trunc_gauss(&mean, &lambda, &mut RngStream::new(7, 0));
    assert!(matches!(r, Err(Error::LowAcceptance { .. })));
}

#[test]
fn uniform_sphere_has_small_resultant() {
    let mut rng = RngStream::new(8, 0);
    let mut s = [0.0; 3];
    let n = 100_000;
    for _ in 0..n {
        let y = sample_vmf(&[0.0, 0.0, 1.0], 0.0, &mut rng).unwrap();
        assert!((norm(&y) - 1.0).abs() < 1e-12);
        for (a, b) in s.iter_mut().zip(&y) {
            *a += b;
        }
    }
    assert!(norm(&s) / (n as f64) < 0.01);
}

#[test]
fn concentrated_vmf_points_at_mean_direction() {
    let mu = [0.48, 0.6, 0.64];
    let mut rng = RngStream::new(9, 0);
    let mut s = [0.0; 3];
    for _ in 0..10_000 {
        let y = sample_vmf(&mu, 50.0, &mut rng).unwrap();
        assert!((norm(&y) - 1.0).abs() < 1e-12);
        for (a, b) in s.iter_mut().zip(&y) {
            *a += b;
        }
    }
    let angle = (dot(&s, &mu) / norm(&s)).clamp(-1.0, 1.0).acos().to_degrees();
    assert!(angle < 2.0, "angle {angle}");
}

#[test]
fn gibbs_without_dependence_is_iid_vmf() {
    let beta = vec![2.0, 0.0, 2.0];
    let n = 5000;
    let theta = AutoModelParams { xi: 0.0, beta: beta.clone() };
    let mut rng = RngStream::new(10, 0);
    let init = simulate_vmf_iid(n, &[0.0, 1.0, 0.0], &mut rng).unwrap();
    let y = gibbs_vmf_auto(&theta, &NeighborGraph::empty(n), &init, 1, 0, &mut rng).unwrap();
    let mut s = [0.0; 3];
    for i in 0..n {
        for (a, b) in s.iter_mut().zip(y.point(i)) {
            *a += b;
        }
    }
    let dir: Vec<f64> = beta.iter().map(|b| b / norm(&beta)).collect();
    let angle = (dot(&s, &dir) / norm(&s)).acos().to_degrees();
    assert!(angle < 2.0, "angle {angle}");
}

fn pair_product_mean(xi: f64, reps: u64) -> f64 {
    let g = NeighborGraph::from_adjacency(vec![vec![1], vec![0]]).unwrap();
    let theta = AutoModelParams { xi, beta: vec![0.0, 0.0, 0.0] };
    let mut total = 0.0;
    for r in 0..reps {
        let mut rng = RngStream::new(11, r);
        let init = simulate_vmf_iid(2, &[0.0, 0.0, 0.0], &mut rng).unwrap();
        let y = gibbs_vmf_auto(&theta, &g, &init, 30, 20, &mut rng).unwrap();
        total += dot(y.point(0), y.point(1));
    }
    total / reps as f64
}

#[test]
fn gibbs_dependence_is_positive_association() {
    let base = pair_product_mean(0.0, 2000);
    let dep = pair_product_mean(1.0, 2000);
    assert!(base.abs() < 0.05);
    assert!(dep > base + 0.2, "{dep} vs {base}");
}

#[test]
fn samplers_replay_deterministically() {
    let g = NeighborGraph::from_adjacency(vec![vec![1], vec![0, 2], vec![1]]).unwrap();
    let theta = AutoModelParams { xi: 0.5, beta: vec![1.0, 0.5] };
    let run = || {
        let mut rng = RngStream::new(12, 3);
        let init = simulate_vmf_iid(3, &theta.beta, &mut rng).unwrap();
        gibbs_vmf_auto(&theta, &g, &init, 10, 5, &mut rng).unwrap()
    };
    assert_eq!(run().points().as_slice(), run().points().as_slice());
    let a: Vec<i64> = (0..50).map(|_| 0).scan(RngStream::new(13, 0), |r, _| Some(sample_cmp(2.0, 0.7, r).unwrap())).collect();
    let b: Vec<i64> = (0..50).map(|_| 0).scan(RngStream::new(13, 0), |r, _| Some(sample_cmp(2.0, 0.7, r).unwrap())).collect();
    assert_eq!(a, b);
}
