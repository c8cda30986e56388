//! Replication harness for the simulation studies.

use std::time::Instant;

use rand_distr::{Bernoulli, Distribution, Gamma, Poisson};
use rayon::prelude::*;

use crate::cmp::{cmp_default_init, fit_cmp, CmpObjective, CmpParams};
use crate::continuous::{fit_tg, log_transform, tg_default_init, TgObjective, TruncGaussParams};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::inference::{estimate_sandwich, null_tests, ParametricModel};
use crate::numkit::Matrix;
use crate::objective::{FitResult, RowObjective};
use crate::params::ParamVec;
use crate::samplers::{simulate_cmp, simulate_tg, simulate_vmf_iid, RngStream};
use crate::vmf::{auto_model_covariance, build_grid_neighbors, near_square_coords, spatial_wald};

/// Stream reserved for drawing fixed covariate designs.
pub const DESIGN_STREAM: u64 = 1 << 63;

pub const CMP_BETA: [f64; 6] = [-0.3141, -0.0893, 0.0445, -0.0705, 0.0693, 0.0830];
pub const CMP_NU: f64 = 0.2564;
pub const CMP_TESTED: [&str; 4] = ["beta2", "beta3", "beta4", "beta5"];
pub const TG_B: [f64; 4] = [1.0, 0.4, -0.5, 0.2];
pub const TG_LAMBDA_VECH: [f64; 3] = [20.0, 10.0, 30.0];
pub const TG_TESTED: [&str; 2] = ["B12", "B22"];
pub const VMF_BETA: [f64; 6] = [2.8792, 2.3916, 1.9828, 1.5974, 6.5620, 1.6320];

pub const SYNTHETIC_DESIGN_NOTE: &str = "covariates are a synthetic stand-in for the unavailable \
publication data: gender ~ Bernoulli(0.46), married ~ Bernoulli(0.66), kid5 on {0,1,2,3} with \
probabilities (0.66, 0.20, 0.13, 0.01), phd ~ N(0,1), mentor ~ negative binomial (mean 8.77, sd 9.48); \
kid5 and mentor standardized by their population moments";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyId {
    TableS1,
    TableS2,
    Table1Coverage,
    TableS3,
    SizePowerCmp,
    SizePowerTg,
    SizeS8,
}

impl StudyId {
    pub const ALL: [StudyId; 7] = [
        StudyId::TableS1,
        StudyId::TableS2,
        StudyId::Table1Coverage,
        StudyId::TableS3,
        StudyId::SizePowerCmp,
        StudyId::SizePowerTg,
        StudyId::SizeS8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyId::TableS1 => "table-s1",
            StudyId::TableS2 => "table-s2",
            StudyId::Table1Coverage => "table-1-coverage",
            StudyId::TableS3 => "table-s3",
            StudyId::SizePowerCmp => "size-power-cmp",
            StudyId::SizePowerTg => "size-power-tg",
            StudyId::SizeS8 => "size-s8",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown study '{s}'")))
    }

    fn default_sizes(self) -> Vec<usize> {
        vec![200, 500, 1000]
    }

    fn default_signals(self) -> Vec<f64> {
        match self {
            StudyId::SizePowerCmp => vec![1.0, 2.0, 3.0, 4.0, 5.0],
            StudyId::SizePowerTg => vec![0.2, 0.4, 0.6, 0.8, 1.0],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub reps: usize,
    pub seed: u64,
    /// Sample sizes; each study has its own default.
    pub sizes: Option<Vec<usize>>,
    /// Signal strengths for power; `Some(vec![])` skips power.
    pub signals: Option<Vec<f64>>,
    /// Replicates per power setting; defaults to `reps`.
    pub power_reps: Option<usize>,
    pub levels: Vec<f64>,
    pub power_level: f64,
}

pub const DEFAULT_REPS: usize = 1000;
pub const DESK_REPS: usize = 200;

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            reps: DEFAULT_REPS,
            seed: 20240101,
            sizes: None,
            signals: None,
            power_reps: None,
            levels: (1..=30).map(|k| k as f64 / 100.0).collect(),
            power_level: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub n: usize,
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub asd: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub test: String,
    pub n: usize,
    /// Signal strength; 0 under the null.
    pub signal: f64,
    pub level: f64,
    pub rate: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub study: String,
    pub seed: u64,
    pub reps: usize,
    pub params: Vec<ParamSummary>,
    pub size: Vec<RateRow>,
    pub power: Vec<RateRow>,
    pub failures: usize,
    pub notes: Vec<String>,
    pub runtime_secs: f64,
}

impl StudyReport {
    pub fn param(&self, n: usize, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.n == n && p.name == name)
    }

    pub fn size_at(&self, test: &str, n: usize, level: f64) -> Option<f64> {
        self.size
            .iter()
            .find(|r| r.test == test && r.n == n && (r.level - level).abs() < 1e-12)
            .map(|r| r.rate)
    }

    pub fn power_at(&self, test: &str, n: usize, signal: f64) -> Option<f64> {
        self.power
            .iter()
            .find(|r| r.test == test && r.n == n && (r.signal - signal).abs() < 1e-12)
            .map(|r| r.rate)
    }
}

/// BIAS, SD (divisor `R`), RMSE, mean SE and Wald-interval coverage.
pub fn summarize(n: usize, names: &[String], truth: &[f64], est: &[Vec<f64>], se: &[Vec<f64>]) -> Vec<ParamSummary> {
    let r = est.len() as f64;
    (0..truth.len())
        .map(|j| {
            let mean = est.iter().map(|e| e[j]).sum::<f64>() / r;
            let bias = mean - truth[j];
            let sd = (est.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / r).sqrt();
            let asd = se.iter().map(|s| s[j]).sum::<f64>() / r;
            let covered = est
                .iter()
                .zip(se)
                .filter(|(e, s)| (e[j] - truth[j]).abs() <= 1.959963984540054 * s[j])
                .count();
            ParamSummary {
                n,
                name: names[j].clone(),
                truth: truth[j],
                bias,
                sd,
                rmse: (sd * sd + bias * bias).sqrt(),
                asd,
                coverage: covered as f64 / r,
            }
        })
        .collect()
}

fn rejection_rows(test: &str, n: usize, signal: f64, levels: &[f64], p: &[f64]) -> Vec<RateRow> {
    levels
        .iter()
        .map(|&level| RateRow {
            test: test.to_string(),
            n,
            signal,
            level,
            rate: p.iter().filter(|&&v| v < level).count() as f64 / p.len().max(1) as f64,
            reps: p.len(),
        })
        .collect()
}

/// Intercept plus one standard-normal covariate.
pub fn tg_design(n: usize, seed: u64) -> Result<Matrix> {
    let mut rng = RngStream::new(seed, DESIGN_STREAM);
    let mut v = Vec::with_capacity(2 * n);
    for _ in 0..n {
        v.push(1.0);
        v.push(rng.normal());
    }
    Matrix::from_vec(n, 2, v)
}

/// Synthetic six-column design described by [`SYNTHETIC_DESIGN_NOTE`].
pub fn cmp_design(n: usize, seed: u64) -> Result<Matrix> {
    let mut rng = RngStream::new(seed, DESIGN_STREAM);
    let gender = Bernoulli::new(0.46).expect("valid probability");
    let married = Bernoulli::new(0.66).expect("valid probability");
    let kid_probs = [0.66, 0.20, 0.13, 0.01];
    let kid_mean: f64 = kid_probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let kid_sd = (kid_probs.iter().enumerate().map(|(k, p)| (k * k) as f64 * p).sum::<f64>() - kid_mean * kid_mean).sqrt();
    let (m_mean, m_sd) = (8.77f64, 9.48f64);
    let size = m_mean * m_mean / (m_sd * m_sd - m_mean);
    let mix = Gamma::new(size, m_mean / size).expect("positive shape and scale");
    let mut v = Vec::with_capacity(6 * n);
    for _ in 0..n {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut kid = 3usize;
        for (k, p) in kid_probs.iter().enumerate() {
            acc += p;
            if u < acc {
                kid = k;
                break;
            }
        }
        let rate: f64 = mix.sample(&mut rng);
        let mentor: f64 = if rate > 0.0 { Poisson::new(rate).expect("positive rate").sample(&mut rng) } else { 0.0 };
        v.extend_from_slice(&[
            1.0,
            f64::from(u8::from(gender.sample(&mut rng))),
            f64::from(u8::from(married.sample(&mut rng))),
            (kid as f64 - kid_mean) / kid_sd,
            rng.normal(),
            (mentor - m_mean) / m_sd,
        ]);
    }
    Matrix::from_vec(n, 6, v)
}

pub fn tg_truth(signal: Option<f64>) -> Result<TruncGaussParams> {
    let mut b = TG_B;
    if let Some(s) = signal {
        b[2] = -0.5 * s;
        b[3] = 0.2 * s;
    }
    TruncGaussParams::new(Matrix::from_col_major(2, 2, &b)?, Matrix::from_vech(2, &TG_LAMBDA_VECH)?)
}

pub fn cmp_truth(signal: Option<f64>) -> Result<CmpParams> {
    let mut beta = CMP_BETA.to_vec();
    if let Some(s) = signal {
        for b in &mut beta[1..5] {
            *b *= s;
        }
    }
    CmpParams::new(beta, CMP_NU)
}

struct Replicate {
    est: Vec<f64>,
    se: Vec<f64>,
}

fn run_parallel<T: Send, F>(reps: usize, f: F) -> Vec<Option<T>>
where
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..reps).into_par_iter().map(|r| f(r as u64).ok()).collect()
}

fn collect_summary(n: usize, names: &[String], truth: &[f64], out: Vec<Option<Replicate>>) -> Result<(Vec<ParamSummary>, usize)> {
    let failures = out.iter().filter(|o| o.is_none()).count();
    let good: Vec<Replicate> = out.into_iter().flatten().collect();
    if good.is_empty() {
        return Err(Error::DegenerateVariance(format!("all replicates failed at n = {n}")));
    }
    let est: Vec<Vec<f64>> = good.iter().map(|g| g.est.clone()).collect();
    let se: Vec<Vec<f64>> = good.iter().map(|g| g.se.clone()).collect();
    Ok((summarize(n, names, truth, &est, &se), failures))
}

fn tg_replicate(x: &Matrix, truth: &TruncGaussParams, seed: u64, r: u64) -> Result<Replicate> {
    let mut rng = RngStream::new(seed, r);
    let data = simulate_tg(x, truth, &mut rng)?;
    let fit = fit_tg(&data, &tg_default_init(&data)?)?;
    if !fit.converged {
        return Err(Error::DegenerateVariance("fit did not converge".into()));
    }
    let logged = log_transform(&data)?;
    let obj = TgObjective::new(&logged, 2, 2)?;
    let sw = estimate_sandwich(&obj, fit.params.values())?;
    Ok(Replicate { est: fit.params.values().to_vec(), se: sw.standard_errors() })
}

fn cmp_replicate(x: &Matrix, truth: &CmpParams, seed: u64, r: u64) -> Result<Replicate> {
    let mut rng = RngStream::new(seed, r);
    let data = simulate_cmp(x, truth, &mut rng)?;
    let fit = fit_cmp(&data, &cmp_default_init(&data)?)?;
    if !fit.converged {
        return Err(Error::DegenerateVariance("fit did not converge".into()));
    }
    let obj = CmpObjective::new(&data)?;
    let sw = estimate_sandwich(&obj, fit.params.values())?;
    Ok(Replicate { est: fit.params.values().to_vec(), se: sw.standard_errors() })
}

fn vmf_replicate(n: usize, seed: u64, r: u64) -> Result<(Replicate, f64)> {
    let mut rng = RngStream::new(seed, r);
    let y = simulate_vmf_iid(n, &VMF_BETA, &mut rng)?;
    let graph = build_grid_neighbors(&near_square_coords(n))?;
    let (est, cov) = auto_model_covariance(&y, &graph)?;
    let se = cov.diagonal().iter().map(|v| (v.max(0.0) / n as f64).sqrt()).collect();
    let p = spatial_wald(&y, &graph)?.p_value;
    Ok((Replicate { est: est.theta(), se }, p))
}

/// Wald and change-in-SM p-values on one dataset.
fn two_tests(obj: &dyn RowObjective, fit_params: &ParamVec, tested: &[&str]) -> Result<(f64, f64)> {
    let t = null_tests(obj, fit_params, tested)?;
    Ok((t.wald.p_value, t.change_in_sm.p_value))
}

fn cmp_tests(x: &Matrix, truth: &CmpParams, seed: u64, r: u64) -> Result<(f64, f64)> {
    let mut rng = RngStream::new(seed, r);
    let data = simulate_cmp(x, truth, &mut rng)?;
    let fit = fit_cmp(&data, &cmp_default_init(&data)?)?;
    if !fit.converged {
        return Err(Error::DegenerateVariance("fit did not converge".into()));
    }
    two_tests(&CmpObjective::new(&data)?, &fit.params, &CMP_TESTED)
}

fn tg_tests(x: &Matrix, truth: &TruncGaussParams, seed: u64, r: u64) -> Result<(f64, f64)> {
    let mut rng = RngStream::new(seed, r);
    let data = simulate_tg(x, truth, &mut rng)?;
    let fit = fit_tg(&data, &tg_default_init(&data)?)?;
    if !fit.converged {
        return Err(Error::DegenerateVariance("fit did not converge".into()));
    }
    let logged = log_transform(&data)?;
    two_tests(&TgObjective::new(&logged, 2, 2)?, &fit.params, &TG_TESTED)
}

fn split_pvalues(out: Vec<Option<(f64, f64)>>) -> (Vec<f64>, Vec<f64>, usize) {
    let failures = out.iter().filter(|o| o.is_none()).count();
    let (w, c) = out.into_iter().flatten().unzip();
    (w, c, failures)
}

/// Design seed derived from the study seed and sample size.
fn design_seed(seed: u64, n: usize) -> u64 {
    seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Replicate seed for one `(n, signal)` cell.
fn cell_seed(seed: u64, n: usize, cell: u64) -> u64 {
    design_seed(seed, n).wrapping_add(cell.wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

pub fn run_study(id: StudyId, opts: &StudyOptions) -> Result<StudyReport> {
    if opts.reps == 0 {
        return invalid("replicate count must be positive");
    }
    let start = Instant::now();
    let sizes = opts.sizes.clone().unwrap_or_else(|| id.default_sizes());
    let signals = opts.signals.clone().unwrap_or_else(|| id.default_signals());
    let power_reps = opts.power_reps.unwrap_or(opts.reps);
    let mut report = StudyReport {
        study: id.name().to_string(),
        seed: opts.seed,
        reps: opts.reps,
        params: vec![],
        size: vec![],
        power: vec![],
        failures: 0,
        notes: vec![],
        runtime_secs: 0.0,
    };
    match id {
        StudyId::TableS1 => {
            let truth = tg_truth(None)?;
            let names = TruncGaussParams::names(2, 2);
            for &n in &sizes {
                let x = tg_design(n, design_seed(opts.seed, n))?;
                let out = run_parallel(opts.reps, |r| tg_replicate(&x, &truth, cell_seed(opts.seed, n, 0), r));
                let (rows, f) = collect_summary(n, &names, &truth.to_theta(), out)?;
                report.params.extend(rows);
                report.failures += f;
            }
        }
        StudyId::TableS2 | StudyId::Table1Coverage => {
            let truth = cmp_truth(None)?;
            let names = CmpParams::names(6);
            for &n in &sizes {
                let x = cmp_design(n, design_seed(opts.seed, n))?;
                let out = run_parallel(opts.reps, |r| cmp_replicate(&x, &truth, cell_seed(opts.seed, n, 0), r));
                let (rows, f) = collect_summary(n, &names, &truth.to_vec(), out)?;
                report.params.extend(rows);
                report.failures += f;
            }
            report.notes.push(SYNTHETIC_DESIGN_NOTE.to_string());
        }
        StudyId::TableS3 | StudyId::SizeS8 => {
            let mut names = vec!["xi".to_string()];
            names.extend((1..=VMF_BETA.len()).map(|j| format!("beta{j}")));
            let mut truth = vec![0.0];
            truth.extend_from_slice(&VMF_BETA);
            for &n in &sizes {
                let out = run_parallel(opts.reps, |r| vmf_replicate(n, cell_seed(opts.seed, n, 0), r));
                let pvals: Vec<f64> = out.iter().flatten().map(|(_, p)| *p).collect();
                let reps: Vec<Option<Replicate>> = out.into_iter().map(|o| o.map(|(r, _)| r)).collect();
                let (rows, f) = collect_summary(n, &names, &truth, reps)?;
                report.params.extend(rows);
                report.failures += f;
                report.size.extend(rejection_rows("spatial-wald", n, 0.0, &opts.levels, &pvals));
            }
            report.notes.push("sites on a near-square grid with queen adjacency".to_string());
        }
        StudyId::SizePowerCmp => {
            for &n in &sizes {
                let x = cmp_design(n, design_seed(opts.seed, n))?;
                let null = cmp_truth(Some(0.0))?;
                let out = run_parallel(opts.reps, |r| cmp_tests(&x, &null, cell_seed(opts.seed, n, 0), r));
                let (w, c, f) = split_pvalues(out);
                report.failures += f;
                report.size.extend(rejection_rows("wald", n, 0.0, &opts.levels, &w));
                report.size.extend(rejection_rows("change-in-sm", n, 0.0, &opts.levels, &c));
                for (k, &s) in signals.iter().enumerate() {
                    let alt = cmp_truth(Some(s))?;
                    let out = run_parallel(power_reps, |r| cmp_tests(&x, &alt, cell_seed(opts.seed, n, k as u64 + 1), r));
                    let (w, c, f) = split_pvalues(out);
                    report.failures += f;
                    report.power.extend(rejection_rows("wald", n, s, &[opts.power_level], &w));
                    report.power.extend(rejection_rows("change-in-sm", n, s, &[opts.power_level], &c));
                }
            }
            report.notes.push(SYNTHETIC_DESIGN_NOTE.to_string());
        }
        StudyId::SizePowerTg => {
            for &n in &sizes {
                let x = tg_design(n, design_seed(opts.seed, n))?;
                let null = tg_truth(Some(0.0))?;
                let out = run_parallel(opts.reps, |r| tg_tests(&x, &null, cell_seed(opts.seed, n, 0), r));
                let (w, c, f) = split_pvalues(out);
                report.failures += f;
                report.size.extend(rejection_rows("wald", n, 0.0, &opts.levels, &w));
                report.size.extend(rejection_rows("change-in-sm", n, 0.0, &opts.levels, &c));
                for (k, &s) in signals.iter().enumerate() {
                    let alt = tg_truth(Some(s))?;
                    let out = run_parallel(power_reps, |r| tg_tests(&x, &alt, cell_seed(opts.seed, n, k as u64 + 1), r));
                    let (w, c, f) = split_pvalues(out);
                    report.failures += f;
                    report.power.extend(rejection_rows("wald", n, s, &[opts.power_level], &w));
                    report.power.extend(rejection_rows("change-in-sm", n, s, &[opts.power_level], &c));
                }
            }
        }
    }
    if report.failures > 0 {
        report.notes.push(format!("{} replicate(s) failed and were excluded", report.failures));
    }
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// A dataset simulated at a study's truth, for CLI demos and tests.
pub fn simulate_study_data(id: StudyId, n: usize, seed: u64, stream: u64) -> Result<Dataset> {
    let mut rng = RngStream::new(seed, stream);
    match id {
        StudyId::TableS1 | StudyId::SizePowerTg => simulate_tg(&tg_design(n, design_seed(seed, n))?, &tg_truth(None)?, &mut rng),
        StudyId::TableS2 | StudyId::Table1Coverage | StudyId::SizePowerCmp => {
            simulate_cmp(&cmp_design(n, design_seed(seed, n))?, &cmp_truth(None)?, &mut rng)
        }
        StudyId::TableS3 | StudyId::SizeS8 => invalid("spherical studies have no covariate design"),
    }
}

/// CMP regression on a fixed design, for the parametric bootstrap.
pub struct CmpParametric<'a> {
    pub covariates: &'a Matrix,
}

impl ParametricModel for CmpParametric<'_> {
    fn simulate(&self, theta: &ParamVec, rng: &mut RngStream) -> Result<Dataset> {
        simulate_cmp(self.covariates, &CmpParams::from_slice(theta.values())?, rng)
    }
    fn fit(&self, data: &Dataset, init: &ParamVec) -> Result<FitResult> {
        fit_cmp(data, &CmpParams::from_slice(init.values())?)
    }
}

/// Truncated Gaussian regression on a fixed design.
pub struct TgParametric<'a> {
    pub covariates: &'a Matrix,
    pub d: usize,
}

impl ParametricModel for TgParametric<'_> {
    fn simulate(&self, theta: &ParamVec, rng: &mut RngStream) -> Result<Dataset> {
        simulate_tg(self.covariates, &TruncGaussParams::from_theta(self.d, self.covariates.cols(), theta.values())?, rng)
    }
    fn fit(&self, data: &Dataset, init: &ParamVec) -> Result<FitResult> {
        fit_tg(data, &TruncGaussParams::from_theta(self.d, self.covariates.cols(), init.values())?)
    }
}
