//! Conway–Maxwell–Poisson regression fitted by generalized score matching.
//!
//! `p(y | x) ∝ λ^y / (y!)^ν` with `λ = exp(xᵀβ)`. Parameters are ordered
//! `(β₁, …, β_p, ν)`.

use crate::data::{require_nonempty, Dataset};
use crate::error::{invalid, Error, Result};
use crate::numkit::{dot, Matrix};
use crate::objective::{fit_objective, DerivativeSource, FitOptions, FitResult, RowObjective};
use crate::ordinal::{t_of_log_ratio, OrdinalModel, Support};
use crate::params::ParamVec;

#[derive(Debug, Clone, PartialEq)]
pub struct CmpParams {
    pub beta: Vec<f64>,
    pub nu: f64,
}

impl CmpParams {
    pub fn new(beta: Vec<f64>, nu: f64) -> Result<Self> {
        if !(nu >= 0.0) || !nu.is_finite() || beta.iter().any(|b| !b.is_finite()) {
            return invalid(format!("CMP parameters need finite beta and nu >= 0 (nu = {nu})"));
        }
        Ok(Self { beta, nu })
    }

    /// Splits `(β, ν)`.
    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        match theta.split_last() {
            Some((&nu, beta)) => Self::new(beta.to_vec(), nu),
            None => invalid("empty CMP parameter vector"),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.nu);
        v
    }

    pub fn names(p: usize) -> Vec<String> {
        let mut v: Vec<String> = (1..=p).map(|k| format!("beta{k}")).collect();
        v.push("nu".into());
        v
    }

    pub fn to_param_vec(&self) -> ParamVec {
        ParamVec::new(self.to_vec(), Self::names(self.beta.len())).expect("names are unique")
    }
}

/// `exp(xᵀβ)`.
pub fn cmp_lambda(x: &[f64], beta: &[f64]) -> Result<f64> {
    if x.len() != beta.len() {
        return invalid(format!("covariate length {} but {} coefficients", x.len(), beta.len()));
    }
    Ok(dot(x, beta).exp())
}

struct Parts {
    tf: f64,
    tb: f64,
    ln_f: f64,
    ln_b: f64,
    has_back: bool,
}

fn parts(y: i64, xb: f64, nu: f64) -> Result<Parts> {
    if y < 0 {
        return Err(Error::Domain(format!("CMP response {y} is negative")));
    }
    let ln_f = ((y + 1) as f64).ln();
    let tf = t_of_log_ratio(xb - nu * ln_f);
    if y == 0 {
        return Ok(Parts { tf, tb: 0.0, ln_f, ln_b: 0.0, has_back: false });
    }
    let ln_b = (y as f64).ln();
    Ok(Parts { tf, tb: t_of_log_ratio(xb - nu * ln_b), ln_f, ln_b, has_back: true })
}

fn xb_of(x: &[f64], theta: &CmpParams) -> Result<f64> {
    if x.len() != theta.beta.len() {
        return invalid(format!("covariate length {} but {} coefficients", x.len(), theta.beta.len()));
    }
    Ok(dot(x, &theta.beta))
}

/// `t(λ/(y+1)^ν)² + t(λ/y^ν)² − 2 t(λ/(y+1)^ν)`, with the backward term zero at `y = 0`.
pub fn rho_gsm_cmp(y: i64, x: &[f64], theta: &CmpParams) -> Result<f64> {
    let p = parts(y, xb_of(x, theta)?, theta.nu)?;
    Ok(p.tf * p.tf + p.tb * p.tb - 2.0 * p.tf)
}

// With w = xᵀβ − ν ln k and dt/dw = −t(1−t):
//   forward  ρ_f = t² − 2t:  ρ_f' = 2t(1−t)²,   ρ_f'' = −2t(1−t)²(1−3t)
//   backward ρ_b = t²:       ρ_b' = −2t²(1−t),  ρ_b'' = 2t²(1−t)(2−3t)
fn derivative_weights(p: &Parts) -> (f64, f64, f64, f64) {
    let (f, b) = (p.tf, p.tb);
    let d1f = 2.0 * f * (1.0 - f).powi(2);
    let d2f = -2.0 * f * (1.0 - f).powi(2) * (1.0 - 3.0 * f);
    let (d1b, d2b) = if p.has_back {
        (-2.0 * b * b * (1.0 - b), 2.0 * b * b * (1.0 - b) * (2.0 - 3.0 * b))
    } else {
        (0.0, 0.0)
    };
    (d1f, d2f, d1b, d2b)
}

/// Gradient of [`rho_gsm_cmp`] over `(β, ν)`.
pub fn cmp_score(y: i64, x: &[f64], theta: &CmpParams) -> Result<Vec<f64>> {
    let p = parts(y, xb_of(x, theta)?, theta.nu)?;
    Ok(score_from_parts(&p, x))
}

/// Second derivatives of [`rho_gsm_cmp`] over `(β, ν)`.
pub fn cmp_hessian(y: i64, x: &[f64], theta: &CmpParams) -> Result<Matrix> {
    let p = parts(y, xb_of(x, theta)?, theta.nu)?;
    Ok(hessian_from_parts(&p, x))
}

fn score_from_parts(p: &Parts, x: &[f64]) -> Vec<f64> {
    let (d1f, _, d1b, _) = derivative_weights(p);
    let mut s: Vec<f64> = x.iter().map(|xj| (d1f + d1b) * xj).collect();
    s.push(-d1f * p.ln_f - d1b * p.ln_b);
    s
}

fn hessian_from_parts(p: &Parts, x: &[f64]) -> Matrix {
    let (_, d2f, _, d2b) = derivative_weights(p);
    let k = x.len();
    let mut af = x.to_vec();
    af.push(-p.ln_f);
    let mut h = Matrix::zeros(k + 1, k + 1);
    h.add_outer(&af, &af, d2f);
    if p.has_back {
        let mut ab = x.to_vec();
        ab.push(-p.ln_b);
        h.add_outer(&ab, &ab, d2b);
    }
    h
}

/// CMP regression as an [`OrdinalModel`] over a fixed design.
pub struct CmpModel<'a> {
    pub covariates: &'a Matrix,
}

impl OrdinalModel for CmpModel<'_> {
    fn dim(&self) -> usize {
        1
    }
    fn support(&self, _j: usize) -> Support {
        Support::COUNTS
    }
    fn n_params(&self) -> usize {
        self.covariates.cols() + 1
    }
    fn param_names(&self) -> Vec<String> {
        CmpParams::names(self.covariates.cols())
    }
    fn log_ratio_up(&self, row: usize, y: &[i64], _j: usize, theta: &[f64]) -> f64 {
        let (nu, beta) = theta.split_last().expect("non-empty theta");
        dot(self.covariates.row(row), beta) - nu * ((y[0] + 1) as f64).ln()
    }
    fn log_ratio_down(&self, row: usize, y: &[i64], _j: usize, theta: &[f64]) -> f64 {
        let (nu, beta) = theta.split_last().expect("non-empty theta");
        dot(self.covariates.row(row), beta) - nu * (y[0] as f64).ln()
    }
}

/// Empirical CMP objective with analytic derivatives.
pub struct CmpObjective<'a> {
    data: &'a Dataset,
}

impl<'a> CmpObjective<'a> {
    pub fn new(data: &'a Dataset) -> Result<Self> {
        require_nonempty(data)?;
        if data.responses.d() != 1 {
            return invalid("CMP responses must have one column");
        }
        for i in 0..data.n() {
            let y = data.int_row(i)?[0];
            if y < 0 {
                return Err(Error::Domain(format!("row {i}: negative count {y}")));
            }
        }
        Ok(Self { data })
    }

    fn row_parts(&self, i: usize, theta: &[f64]) -> Result<(Parts, &[f64])> {
        let (nu, beta) = theta.split_last().ok_or_else(|| Error::InvalidInput("empty theta".into()))?;
        let x = self.data.x(i);
        Ok((parts(self.data.int_row(i)?[0], dot(x, beta), *nu)?, x))
    }
}

impl RowObjective for CmpObjective<'_> {
    fn n_rows(&self) -> usize {
        self.data.n()
    }
    fn n_params(&self) -> usize {
        self.data.p() + 1
    }
    fn param_names(&self) -> Vec<String> {
        CmpParams::names(self.data.p())
    }
    fn rho(&self, i: usize, theta: &[f64]) -> Result<f64> {
        let (p, _) = self.row_parts(i, theta)?;
        Ok(p.tf * p.tf + p.tb * p.tb - 2.0 * p.tf)
    }
    fn score(&self, i: usize, theta: &[f64]) -> Result<Vec<f64>> {
        let (p, x) = self.row_parts(i, theta)?;
        Ok(score_from_parts(&p, x))
    }
    fn hessian(&self, i: usize, theta: &[f64]) -> Result<Matrix> {
        let (p, x) = self.row_parts(i, theta)?;
        Ok(hessian_from_parts(&p, x))
    }
    fn row_derivatives(&self, i: usize, theta: &[f64]) -> Result<(f64, Vec<f64>, Matrix)> {
        let (p, x) = self.row_parts(i, theta)?;
        Ok((p.tf * p.tf + p.tb * p.tb - 2.0 * p.tf, score_from_parts(&p, x), hessian_from_parts(&p, x)))
    }
    fn score_source(&self) -> DerivativeSource {
        DerivativeSource::Analytic
    }
    fn hessian_source(&self) -> DerivativeSource {
        DerivativeSource::Analytic
    }
    fn in_domain(&self, theta: &[f64]) -> bool {
        theta.last().is_some_and(|nu| *nu >= 0.0) && theta.iter().all(|v| v.is_finite())
    }
    fn to_search(&self, theta: &[f64]) -> Vec<f64> {
        let mut z = theta.to_vec();
        if let Some(nu) = z.last_mut() {
            *nu = nu.max(1e-12).ln();
        }
        z
    }
    fn from_search(&self, z: &[f64]) -> Vec<f64> {
        let mut t = z.to_vec();
        if let Some(eta) = t.last_mut() {
            *eta = eta.exp();
        }
        t
    }
}

/// Poisson start: intercept at the log mean count, other slopes zero, ν = 1.
/// Assumes the first covariate column is the intercept.
pub fn cmp_default_init(data: &Dataset) -> Result<CmpParams> {
    require_nonempty(data)?;
    let mut total = 0.0;
    for i in 0..data.n() {
        total += data.int_row(i)?[0] as f64;
    }
    let mut beta = vec![0.0; data.p()];
    if let Some(b0) = beta.first_mut() {
        *b0 = (total / data.n() as f64).max(0.1).ln();
    }
    CmpParams::new(beta, 1.0)
}

/// Minimizes the empirical CMP objective; ν stays non-negative.
pub fn fit_cmp(data: &Dataset, init: &CmpParams) -> Result<FitResult> {
    fit_cmp_with(data, init, &FitOptions::default())
}

pub fn fit_cmp_with(data: &Dataset, init: &CmpParams, opts: &FitOptions) -> Result<FitResult> {
    let obj = CmpObjective::new(data)?;
    if init.beta.len() != data.p() {
        return invalid(format!("{} coefficients for {} covariates", init.beta.len(), data.p()));
    }
    fit_objective(&obj, &init.to_param_vec(), opts)
}

const MAX_TERMS: usize = 50_000_000;

/// Certified truncation of the CMP normalizing series.
///
/// Holds the terms `λ^s/(s!)^ν` scaled by a common factor, for
/// `s = 0..=S`, where the neglected tail is below `ε` times the partial sum.
#[derive(Debug, Clone)]
pub struct CmpSeries {
    pub lambda: f64,
    pub nu: f64,
    log_terms: Vec<f64>,
    log_z: f64,
}

impl CmpSeries {
    pub fn new(lambda: f64, nu: f64, eps: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() || !(nu >= 0.0) || !nu.is_finite() {
            return invalid(format!("CMP series needs lambda > 0 and nu >= 0 (lambda = {lambda}, nu = {nu})"));
        }
        if !(eps > 0.0) {
            return invalid("eps must be positive");
        }
        if nu == 0.0 && lambda >= 1.0 {
            return Err(Error::DivergentSeries { lambda, nu });
        }
        let ln_lambda = lambda.ln();
        let mut log_terms = vec![0.0];
        let mut log_a = 0.0;
        let mut running_max = 0.0_f64;
        let mut sum_scaled = 1.0;
        loop {
            let s = log_terms.len() - 1;
            let log_ratio = ln_lambda - nu * ((s + 1) as f64).ln();
            if log_ratio < 0.0 {
                let r = log_ratio.exp();
                let tail_over_current = r / (1.0 - r);
                if log_a + tail_over_current.ln() - running_max < (eps * sum_scaled).ln() {
                    break;
                }
            }
            if log_terms.len() >= MAX_TERMS {
                return invalid(format!("CMP series for lambda = {lambda}, nu = {nu} needs more than {MAX_TERMS} terms"));
            }
            log_a += log_ratio;
            log_terms.push(log_a);
            if log_a > running_max {
                sum_scaled *= (running_max - log_a).exp();
                running_max = log_a;
            }
            sum_scaled += (log_a - running_max).exp();
        }
        let log_z = running_max + sum_scaled.ln();
        Ok(Self { lambda, nu, log_terms, log_z })
    }

    /// Largest retained index `S`.
    pub fn last_index(&self) -> usize {
        self.log_terms.len() - 1
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_z
    }

    /// Probability of `y` under the truncated normalizer.
    pub fn pmf(&self, y: i64) -> f64 {
        if y < 0 {
            return 0.0;
        }
        let yu = y as usize;
        let log_a = if yu < self.log_terms.len() {
            self.log_terms[yu]
        } else {
            y as f64 * self.lambda.ln() - self.nu * ln_factorial(yu)
        };
        (log_a - self.log_z).exp()
    }

    /// Normalized probabilities for `0..=S`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.log_terms.iter().map(|l| (l - self.log_z).exp()).collect()
    }
}

fn ln_factorial(k: usize) -> f64 {
    statrs::function::factorial::ln_factorial(k as u64)
}

/// `λ^y/(y!)^ν / Z(λ, ν)` with `Z` truncated at relative error below `ε`.
pub fn cmp_pmf_bruteforce(y: i64, lambda: f64, nu: f64, eps: f64) -> Result<f64> {
    if y < 0 {
        return Err(Error::Domain(format!("CMP response {y} is negative")));
    }
    Ok(CmpSeries::new(lambda, nu, eps)?.pmf(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_examples() {
        assert_eq!(cmp_lambda(&[0.0, 0.0], &[0.3, 0.1]).unwrap(), 1.0);
        assert!((cmp_lambda(&[1.0, 0.0], &[2f64.ln(), 5.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(cmp_lambda(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rho_hand_values() {
        let th = CmpParams::new(vec![0.0], 1.0).unwrap();
        assert!((rho_gsm_cmp(0, &[1.0], &th).unwrap() + 0.75).abs() < 1e-15);
        let expect = 0.75f64.powi(2) + (2.0f64 / 3.0).powi(2) - 1.5;
        assert!((rho_gsm_cmp(2, &[1.0], &th).unwrap() - expect).abs() < 1e-15);
        assert!(matches!(rho_gsm_cmp(-1, &[1.0], &th), Err(Error::Domain(_))));
    }

    #[test]
    fn score_at_zero_has_no_backward_term() {
        let th = CmpParams::new(vec![0.2], 0.7).unwrap();
        let s = cmp_score(0, &[1.0], &th).unwrap();
        let tf = t_of_log_ratio(0.2);
        assert!((s[0] - 2.0 * tf * (1.0 - tf).powi(2)).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn pmf_special_cases() {
        let eps = 1e-13;
        for y in 0..15 {
            let pois = (-3.0f64).exp() * 3f64.powi(y) / statrs::function::factorial::factorial(y as u64);
            assert!((cmp_pmf_bruteforce(y as i64, 3.0, 1.0, eps).unwrap() - pois).abs() < 1e-12);
            let geo = 0.5 * 0.5f64.powi(y);
            assert!((cmp_pmf_bruteforce(y as i64, 0.5, 0.0, eps).unwrap() - geo).abs() < 1e-12);
        }
        assert!(matches!(cmp_pmf_bruteforce(0, 1.0, 0.0, eps), Err(Error::DivergentSeries { .. })));
    }

    #[test]
    fn series_normalizes() {
        let s = CmpSeries::new(2.0, 0.5, 1e-12).unwrap();
        let total: f64 = s.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 2e-12);
    }
}
