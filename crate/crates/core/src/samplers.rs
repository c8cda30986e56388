//! Seedable exact samplers for every simulated model.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::cmp::{CmpParams, CmpSeries};
use crate::continuous::TruncGaussParams;
use crate::data::{Dataset, Responses};
use crate::error::{invalid, Error, Result};
use crate::numkit::{back_sub_transpose, cholesky, dot, norm, Matrix};
use crate::vmf::{conditional_vmf_params, AutoModelParams, NeighborGraph, SphereSample};

/// ChaCha20 stream addressed by `(seed, stream id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub const CMP_SAMPLER_EPS: f64 = 1e-12;

/// Inversion sampler against a certified truncation of the CMP pmf.
#[derive(Debug, Clone)]
pub struct CmpSampler {
    cumulative: Vec<f64>,
}

impl CmpSampler {
    pub fn new(lambda: f64, nu: f64) -> Result<Self> {
        let series = CmpSeries::new(lambda, nu, CMP_SAMPLER_EPS)?;
        let mut acc = 0.0;
        let cumulative = series
            .probabilities()
            .into_iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { cumulative })
    }

    pub fn draw(&self, rng: &mut RngStream) -> i64 {
        let u = rng.uniform() * self.cumulative.last().copied().unwrap_or(1.0);
        self.cumulative.partition_point(|&c| c < u) as i64
    }
}

pub fn sample_cmp(lambda: f64, nu: f64, rng: &mut RngStream) -> Result<i64> {
    Ok(CmpSampler::new(lambda, nu)?.draw(rng))
}

/// Counts for a fixed design at the given parameters.
pub fn simulate_cmp(covariates: &Matrix, params: &CmpParams, rng: &mut RngStream) -> Result<Dataset> {
    if covariates.cols() != params.beta.len() {
        return invalid("design and coefficient lengths differ");
    }
    let mut y = Vec::with_capacity(covariates.rows());
    for i in 0..covariates.rows() {
        let lambda = dot(covariates.row(i), &params.beta).exp();
        y.push(sample_cmp(lambda, params.nu, rng)?);
    }
    Dataset::counts(y, covariates.clone())
}

pub const MAX_PROPOSALS: u64 = 10_000_000;
const MIN_ACCEPTANCE: f64 = 1e-6;

/// Rejection sampler for `N(mean, Λ⁻¹)` restricted to the positive orthant.
#[derive(Debug, Clone)]
pub struct TruncGaussSampler {
    chol: Matrix,
}

impl TruncGaussSampler {
    pub fn new(lambda: &Matrix) -> Result<Self> {
        Ok(Self { chol: cholesky(lambda)? })
    }

    /// One unconstrained draw from `N(mean, Λ⁻¹)`.
    pub fn propose(&self, mean: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let z: Vec<f64> = (0..mean.len()).map(|_| rng.normal()).collect();
        back_sub_transpose(&self.chol, &z).iter().zip(mean).map(|(a, m)| a + m).collect()
    }

    pub fn draw(&self, mean: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        if mean.len() != self.chol.rows() {
            return invalid("mean length does not match the precision matrix");
        }
        for _ in 0..MAX_PROPOSALS {
            let y = self.propose(mean, rng);
            if y.iter().all(|v| *v > 0.0) {
                return Ok(y);
            }
        }
        let rate = 1.0 / MAX_PROPOSALS as f64;
        debug_assert!(rate < MIN_ACCEPTANCE);
        Err(Error::LowAcceptance { rate, proposals: MAX_PROPOSALS })
    }
}

pub fn sample_trunc_gauss(mean: &[f64], lambda: &Matrix, rng: &mut RngStream) -> Result<Vec<f64>> {
    TruncGaussSampler::new(lambda)?.draw(mean, rng)
}

/// Positive responses for a fixed design at the given parameters.
pub fn simulate_tg(covariates: &Matrix, params: &TruncGaussParams, rng: &mut RngStream) -> Result<Dataset> {
    let sampler = TruncGaussSampler::new(&params.lambda)?;
    let (n, d) = (covariates.rows(), params.d());
    let mut y = Vec::with_capacity(n * d);
    for i in 0..n {
        y.extend(sampler.draw(&params.mean(covariates.row(i))?, rng)?);
    }
    Dataset::new(Responses::Real(Matrix::from_vec(n, d, y)?), covariates.clone())
}

fn uniform_sphere(d: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let r = norm(&v);
        if r > 1e-12 {
            return v.into_iter().map(|x| x / r).collect();
        }
    }
}

/// von Mises–Fisher draw by Wood's rejection scheme; `κ = 0` is uniform.
pub fn sample_vmf(mu: &[f64], kappa: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    let d = mu.len();
    if d < 2 {
        return invalid("vMF sampling needs dimension >= 2");
    }
    if ((norm(mu)) - 1.0).abs() > 1e-10 {
        return invalid("mean direction must have unit norm");
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return invalid(format!("concentration {kappa} must be finite and non-negative"));
    }
    if kappa == 0.0 {
        return Ok(uniform_sphere(d, rng));
    }
    let m = (d - 1) as f64;
    let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
    let beta = Beta::new(m / 2.0, m / 2.0).expect("positive shape");
    let w = loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u = rng.uniform();
        if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };
    let v = loop {
        let g: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let along = dot(&g, mu);
        let t: Vec<f64> = g.iter().zip(mu).map(|(a, b)| a - along * b).collect();
        let r = norm(&t);
        if r > 1e-12 {
            break t.into_iter().map(|x| x / r).collect::<Vec<_>>();
        }
    };
    let s = (1.0 - w * w).max(0.0).sqrt();
    let y: Vec<f64> = mu.iter().zip(&v).map(|(a, b)| w * a + s * b).collect();
    let r = norm(&y);
    Ok(y.into_iter().map(|x| x / r).collect())
}

/// Independent vMF draws with natural parameter `β`.
pub fn simulate_vmf_iid(n: usize, beta: &[f64], rng: &mut RngStream) -> Result<SphereSample> {
    let kappa = norm(beta);
    let d = beta.len();
    let mu: Vec<f64> = if kappa > 0.0 {
        beta.iter().map(|b| b / kappa).collect()
    } else {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    };
    let mut rows = Vec::with_capacity(n * d);
    for _ in 0..n {
        rows.extend(sample_vmf(&mu, kappa, rng)?);
    }
    SphereSample::new(Matrix::from_vec(n, d, rows)?)
}

pub const DEFAULT_BURN_IN: usize = 200;

/// Systematic-scan Gibbs sampler for the auto model; returns the state
/// after the last of `sweeps` sweeps (the first `burn_in` included).
pub fn gibbs_vmf_auto(
    theta: &AutoModelParams,
    graph: &NeighborGraph,
    init: &SphereSample,
    sweeps: usize,
    burn_in: usize,
    rng: &mut RngStream,
) -> Result<SphereSample> {
    if burn_in >= sweeps {
        return invalid(format!("burn-in {burn_in} must be less than sweeps {sweeps}"));
    }
    if theta.beta.len() != init.d() {
        return invalid("beta length does not match the sphere dimension");
    }
    let mut state = init.clone();
    for _ in 0..sweeps {
        for i in 0..state.n() {
            let c = conditional_vmf_params(i, &state, graph, theta)?;
            let y = sample_vmf(&c.mu, if c.uniform { 0.0 } else { c.kappa }, rng)?;
            state.set_point(i, &y);
        }
    }
    Ok(state)
}
