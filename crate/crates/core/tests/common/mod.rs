//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use gsm_core::numkit::Matrix;
use gsm_core::samplers::RngStream;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

/// Plain `1/(1+u)`, with `u = ∞` giving 0.
pub fn t(u: f64) -> f64 {
    if u.is_infinite() {
        0.0
    } else {
        1.0 / (1.0 + u)
    }
}

/// Normalized pmf on `{0, …, k−1}` from unnormalized log weights.
pub fn normalize(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Forward and backward ratios `p(y+)/p(y)` and `p(y)/p(y−)` under the
/// zero-outside-support convention.
fn ratios(p: &[f64], y: usize) -> (f64, f64) {
    let up = if y + 1 < p.len() { p[y + 1] / p[y] } else { 0.0 };
    let down = if y > 0 { p[y] / p[y - 1] } else { f64::INFINITY };
    (up, down)
}

/// Population divergence for one row, summed exhaustively over the support.
pub fn d_gsm_exhaustive(q: &[f64], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for y in 0..q.len() {
        let (pu, pd) = ratios(p, y);
        let (qu, qd) = ratios(q, y);
        total += q[y] * ((t(pu) - t(qu)).powi(2) + (t(pd) - t(qd)).powi(2));
    }
    total
}

/// The θ-free part `Σ q (t(q⁺/q)² + t(q/q⁻)²)`.
pub fn g_constant(q: &[f64]) -> f64 {
    (0..q.len())
        .map(|y| {
            let (qu, qd) = ratios(q, y);
            q[y] * (t(qu).powi(2) + t(qd).powi(2))
        })
        .sum()
}

/// `max|a − b| / max(max|b|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(floor, f64::max);
    num / den
}

/// CMP pmf by direct summation of `λ^s/(s!)^ν` in log space until the terms
/// fall below `1e-20` of the running total on the decreasing side.
pub fn cmp_pmf_direct(lambda: f64, nu: f64, max_y: usize) -> Vec<f64> {
    let lt = |s: usize| s as f64 * lambda.ln() - nu * ln_gamma(s as f64 + 1.0);
    let mut logs = Vec::new();
    let mut s = 0usize;
    let mut best = f64::NEG_INFINITY;
    loop {
        let v = lt(s);
        best = best.max(v);
        logs.push(v);
        if s > max_y && v < best - 46.0 && v < lt(s.saturating_sub(1)) {
            break;
        }
        s += 1;
        assert!(s < 1_000_000, "series did not decay");
    }
    normalize(&logs)
}

/// Pearson statistic and p-value with cells of expected count below 5 pooled
/// into neighbours from the tails inward.
pub fn chisq_gof(counts: &[u64], probs: &[f64], draws: u64) -> (f64, f64) {
    let k = probs.len().max(counts.len());
    let cnt = |i: usize| counts.get(i).copied().unwrap_or(0) as f64;
    let pr = |i: usize| probs.get(i).copied().unwrap_or(0.0);
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for i in 0..k {
        o += cnt(i);
        e += pr(i) * draws as f64;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if let Some(last) = cells.last_mut() {
        last.0 += o;
        last.1 += e;
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = cells.len().saturating_sub(1).max(1);
    (stat, ChiSquared::new(df as f64).unwrap().sf(stat))
}

/// Moments `(E y₁, E y₂, E y₁², E y₂², E y₁y₂)` of `N(m, Λ⁻¹)` truncated to
/// the positive quadrant by composite Simpson quadrature.
pub fn trunc_gauss_moments(m: &[f64], lambda: &Matrix, points: usize) -> [f64; 5] {
    let cov_det = lambda[(0, 0)] * lambda[(1, 1)] - lambda[(0, 1)].powi(2);
    let sd = [(lambda[(1, 1)] / cov_det).sqrt(), (lambda[(0, 0)] / cov_det).sqrt()];
    let hi = [m[0].max(0.0) + 12.0 * sd[0], m[1].max(0.0) + 12.0 * sd[1]];
    let n = points | 1;
    let h = [hi[0] / (n - 1) as f64, hi[1] / (n - 1) as f64];
    let w = |i: usize| {
        if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let mut acc = [0.0; 6];
    for i in 0..n {
        let y1 = i as f64 * h[0];
        for j in 0..n {
            let y2 = j as f64 * h[1];
            let r = [y1 - m[0], y2 - m[1]];
            let q = lambda[(0, 0)] * r[0] * r[0] + 2.0 * lambda[(0, 1)] * r[0] * r[1] + lambda[(1, 1)] * r[1] * r[1];
            let f = w(i) * w(j) * (-0.5 * q).exp();
            acc[0] += f;
            acc[1] += f * y1;
            acc[2] += f * y2;
            acc[3] += f * y1 * y1;
            acc[4] += f * y2 * y2;
            acc[5] += f * y1 * y2;
        }
    }
    [acc[1] / acc[0], acc[2] / acc[0], acc[3] / acc[0], acc[4] / acc[0], acc[5] / acc[0]]
}

/// Monte Carlo tail of `Σ λ_m Z_m²` and its standard error.
pub fn mc_weighted_tail(x: f64, lam: &[f64], draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = RngStream::new(seed, 7);
    let mut hits = 0usize;
    for _ in 0..draws {
        let s: f64 = lam.iter().map(|l| {
            let z = rng.normal();
            l * z * z
        }).sum();
        if s > x {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

/// Kolmogorov–Smirnov distance of a sample from U(0,1).
pub fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(|a, b| a.total_cmp(b));
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

/// Asymptotic KS p-value `2 Σ (−1)^{k−1} exp(−2k²λ²)` with the usual
/// small-sample correction of `λ`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        s += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp();
    }
    s.clamp(0.0, 1.0)
}
