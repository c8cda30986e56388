//! Sandwich covariance, Wald and change-in-SM tests, weighted chi-square
//! tails and parametric bootstrap intervals.

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::numkit::{inverse, sym_apply, sym_eigen, sym_inverse, Matrix};
use crate::objective::{
    fit_objective_restricted, mean_objective, DerivativeSource, FitOptions, FitResult, RowObjective,
};
use crate::params::ParamVec;
use crate::samplers::RngStream;

/// Reference law of a test statistic.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    ChiSquare { df: usize },
    WeightedChiSquare { weights: Vec<f64> },
}

impl std::fmt::Display for Reference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reference::ChiSquare { df } => write!(f, "chi-square(df={df})"),
            Reference::WeightedChiSquare { weights } => {
                let w: Vec<String> = weights.iter().map(|w| format!("{w:.6}")).collect();
                write!(f, "weighted-chi-square(weights=[{}])", w.join(" "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub reference: Reference,
    pub p_value: f64,
    pub notes: Vec<String>,
}

/// `Î` is the mean Hessian of ρ (positive definite at a minimum), `Ĵ` the
/// mean outer product of row scores, `K̂ = Î⁻¹ Ĵ Î⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichEstimate {
    pub i_hat: Matrix,
    pub j_hat: Matrix,
    pub k_hat: Matrix,
    pub n: usize,
    pub hessian_source: DerivativeSource,
}

impl SandwichEstimate {
    /// Standard errors `sqrt(K̂_jj / n)`.
    pub fn standard_errors(&self) -> Vec<f64> {
        self.k_hat.diagonal().iter().map(|k| (k.max(0.0) / self.n as f64).sqrt()).collect()
    }
}

pub fn estimate_sandwich(obj: &dyn RowObjective, theta: &[f64]) -> Result<SandwichEstimate> {
    let n = obj.n_rows();
    if n == 0 {
        return invalid("sandwich needs at least one row");
    }
    let p = theta.len();
    if p != obj.n_params() {
        return invalid(format!("expected {} parameters, got {p}", obj.n_params()));
    }
    let mut i_hat = Matrix::zeros(p, p);
    let mut j_hat = Matrix::zeros(p, p);
    for i in 0..n {
        let (_, s, h) = obj.row_derivatives(i, theta)?;
        i_hat.add_assign_scaled(&h, 1.0);
        j_hat.add_outer(&s, &s, 1.0);
    }
    let i_hat = i_hat.scale(1.0 / n as f64).symmetrize();
    let j_hat = j_hat.scale(1.0 / n as f64).symmetrize();
    let i_inv = inverse(&i_hat)?;
    let k_hat = i_inv.matmul(&j_hat)?.matmul(&i_inv.transpose())?.symmetrize();
    Ok(SandwichEstimate { i_hat, j_hat, k_hat, n, hessian_source: obj.hessian_source() })
}

/// `T_w = n (θ̂₁ − θ₀₁)ᵀ K̂₁₁⁻¹ (θ̂₁ − θ₀₁)` against χ²_ℓ.
pub fn wald_test(theta_hat: &ParamVec, theta01: &[f64], k_hat: &Matrix, n: usize) -> Result<TestOutcome> {
    let tested = theta_hat.tested();
    if tested.len() != theta01.len() {
        return invalid(format!("{} tested parameters but {} null values", tested.len(), theta01.len()));
    }
    if k_hat.rows() != theta_hat.len() || !k_hat.is_square() {
        return invalid("covariance dimension does not match the parameter vector");
    }
    if tested.is_empty() {
        return Ok(TestOutcome {
            statistic: 0.0,
            reference: Reference::ChiSquare { df: 0 },
            p_value: 1.0,
            notes: vec!["empty partition".into()],
        });
    }
    let k11 = k_hat.select(tested, tested);
    let k11_inv = inverse(&k11)?;
    let diff: Vec<f64> = tested.iter().zip(theta01).map(|(&i, v)| theta_hat.values()[i] - v).collect();
    let statistic = (n as f64 * k11_inv.quad_form(&diff)?).max(0.0);
    let df = tested.len();
    Ok(TestOutcome {
        statistic,
        reference: Reference::ChiSquare { df },
        p_value: chisq_sf(statistic, df),
        notes: vec![],
    })
}

pub fn chisq_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("positive df").sf(x)
}

/// Minimizes over the nuisance block with the tested block of `init` pinned
/// at `theta01`.
pub fn fit_restricted(
    obj: &dyn RowObjective,
    init: &ParamVec,
    theta01: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let fit = fit_objective_restricted(obj, init, init.tested(), theta01, opts)?;
    let params = fit.params.clone().with_partition_indices(init.tested().to_vec())?;
    Ok(FitResult { params, ..fit })
}

/// `A = Ĵ₁₁ + Î₁₂Î₂₂⁻¹Ĵ₂₂Î₂₂⁻¹Î₂₁ − Î₁₂Î₂₂⁻¹Ĵ₂₁ − Ĵ₁₂Î₂₂⁻¹Î₂₁` for the
/// blocks selected by `tested` and its complement.
pub fn compute_a_matrix(i_hat: &Matrix, j_hat: &Matrix, tested: &[usize]) -> Result<Matrix> {
    let p = i_hat.rows();
    if !i_hat.is_square() || j_hat.rows() != p || j_hat.cols() != p {
        return invalid("information matrices must be square and of equal size");
    }
    let nuis: Vec<usize> = (0..p).filter(|i| !tested.contains(i)).collect();
    let j11 = j_hat.select(tested, tested);
    if nuis.is_empty() {
        return Ok(j11.symmetrize());
    }
    let i12 = i_hat.select(tested, &nuis);
    let i22_inv = inverse(&i_hat.select(&nuis, &nuis))?;
    let j12 = j_hat.select(tested, &nuis);
    let j22 = j_hat.select(&nuis, &nuis);
    // G = Î₁₂ Î₂₂⁻¹, so the four terms read J11 + G J22 Gᵀ − G J21 − J12 Gᵀ.
    let g = i12.matmul(&i22_inv)?;
    let gt = g.transpose();
    let a = j11
        .add(&g.matmul(&j22)?.matmul(&gt)?)?
        .sub(&g.matmul(&j12.transpose())?)?
        .sub(&j12.matmul(&gt)?)?;
    Ok(a.symmetrize())
}

/// `Î₁₁ − Î₁₂Î₂₂⁻¹Î₂₁`.
pub fn schur_information(i_hat: &Matrix, tested: &[usize]) -> Result<Matrix> {
    let p = i_hat.rows();
    let nuis: Vec<usize> = (0..p).filter(|i| !tested.contains(i)).collect();
    let i11 = i_hat.select(tested, tested);
    if nuis.is_empty() {
        return Ok(i11);
    }
    let i12 = i_hat.select(tested, &nuis);
    let i22_inv = inverse(&i_hat.select(&nuis, &nuis))?;
    Ok(i11.sub(&i12.matmul(&i22_inv)?.matmul(&i12.transpose())?)?.symmetrize())
}

const CLAMP_REL: f64 = 1e-12;

/// Eigenvalues of `A^{1/2} (Î₁₁ − Î₁₂Î₂₂⁻¹Î₂₁)⁻¹ A^{1/2}` and the number clamped.
pub fn change_in_sm_weights(sandwich: &SandwichEstimate, tested: &[usize]) -> Result<(Vec<f64>, usize)> {
    let a = compute_a_matrix(&sandwich.i_hat, &sandwich.j_hat, tested)?;
    let (av, avec) = sym_eigen(&a)?;
    let amax = av.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    if av.iter().any(|&v| v < -1e-8 * amax) {
        return Err(Error::NotPsd { min_eigenvalue: *av.last().unwrap() });
    }
    let a_half = sym_apply(&av, &avec, |v| v.max(0.0).sqrt());
    let s_inv = sym_inverse(&schur_information(&sandwich.i_hat, tested)?)?;
    let m = a_half.matmul(&s_inv)?.matmul(&a_half)?.symmetrize();
    let (mut w, _) = sym_eigen(&m)?;
    let wmax = w.first().copied().unwrap_or(0.0);
    if !(wmax > 0.0) {
        return Err(Error::DegenerateVariance("all change-in-SM weights are non-positive".into()));
    }
    let floor = CLAMP_REL * wmax;
    let mut clamped = 0;
    for v in w.iter_mut() {
        if *v < floor {
            *v = floor;
            clamped += 1;
        }
    }
    Ok((w, clamped))
}

/// `T_c = 2n{d̂(θ̃) − d̂(θ̂)}` against its weighted chi-square limit.
pub fn change_in_sm_test(
    obj: &dyn RowObjective,
    theta_hat: &ParamVec,
    theta_tilde: &ParamVec,
    sandwich: &SandwichEstimate,
) -> Result<TestOutcome> {
    let tested = theta_hat.tested();
    if tested.is_empty() {
        return invalid("change-in-SM test needs a non-empty tested block");
    }
    let n = obj.n_rows() as f64;
    let d_hat = mean_objective(obj, theta_hat.values())?;
    let d_tilde = mean_objective(obj, theta_tilde.values())?;
    let statistic = 2.0 * n * (d_tilde - d_hat);
    let (weights, clamped) = change_in_sm_weights(sandwich, tested)?;
    let tail = weighted_chisq_tail(statistic, &weights)?;
    let mut notes = Vec::new();
    if clamped > 0 {
        notes.push(format!("{clamped} eigenvalue(s) clamped at {CLAMP_REL:e} relative"));
    }
    if statistic < 0.0 {
        notes.push(format!("restricted objective below unrestricted by {:.3e}", -statistic));
    }
    if let TailMethod::MonteCarlo { se, draws } = tail.method {
        notes.push(format!("p-value by Monte Carlo ({draws} draws, se {se:.2e})"));
    }
    Ok(TestOutcome {
        statistic,
        reference: Reference::WeightedChiSquare { weights },
        p_value: tail.p,
        notes,
    })
}

/// Both tests of a zero tested block, plus the restricted fit.
#[derive(Debug, Clone, PartialEq)]
pub struct NullTests {
    pub wald: TestOutcome,
    pub change_in_sm: TestOutcome,
    pub restricted: FitResult,
    pub sandwich: SandwichEstimate,
}

/// Wald and change-in-SM tests of `θ₁ = 0` at the unrestricted fit.
pub fn null_tests<S: AsRef<str>>(obj: &dyn RowObjective, fit_params: &ParamVec, tested: &[S]) -> Result<NullTests> {
    let theta_hat = fit_params.clone().with_partition(tested)?;
    if theta_hat.tested().is_empty() {
        return invalid("tested block is empty");
    }
    let zeros = vec![0.0; theta_hat.tested().len()];
    let sandwich = estimate_sandwich(obj, theta_hat.values())?;
    let wald = wald_test(&theta_hat, &zeros, &sandwich.k_hat, obj.n_rows())?;
    let mut start = theta_hat.values().to_vec();
    for &i in theta_hat.tested() {
        start[i] = 0.0;
    }
    let init = theta_hat.with_values(start)?.with_partition_indices(theta_hat.tested().to_vec())?;
    let restricted = fit_restricted(obj, &init, &zeros, &FitOptions::default())?;
    if !restricted.converged {
        return Err(Error::DegenerateVariance("restricted fit did not converge".into()));
    }
    let change_in_sm = change_in_sm_test(obj, &theta_hat, &restricted.params, &sandwich)?;
    Ok(NullTests { wald, change_in_sm, restricted, sandwich })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailMethod {
    Exact,
    Quadrature { panels: usize },
    MonteCarlo { se: f64, draws: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailProbability {
    pub p: f64,
    pub method: TailMethod,
    pub clamped: usize,
}

pub fn weighted_chisq_sf(x: f64, weights: &[f64]) -> Result<f64> {
    Ok(weighted_chisq_tail(x, weights)?.p)
}

pub const MC_DRAWS: usize = 1_000_000;
const MAX_PANELS: usize = 20_000;

/// `P(Σ λ_m Z_m² > x)` by inversion of the characteristic function.
pub fn weighted_chisq_tail(x: f64, weights: &[f64]) -> Result<TailProbability> {
    if weights.is_empty() {
        return invalid("at least one weight is required");
    }
    if x.is_nan() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("weighted chi-square input".into()));
    }
    let wmax = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(wmax > 0.0) {
        return invalid("largest weight must be positive");
    }
    let floor = CLAMP_REL * wmax;
    let clamped = weights.iter().filter(|&&w| w < floor).count();
    let lam: Vec<f64> = weights.iter().map(|&w| w.max(floor)).collect();
    if x <= 0.0 {
        return Ok(TailProbability { p: 1.0, method: TailMethod::Exact, clamped });
    }
    match imhof(x, &lam) {
        Some((p, panels)) => Ok(TailProbability {
            p: p.clamp(0.0, 1.0),
            method: TailMethod::Quadrature { panels },
            clamped,
        }),
        None => {
            let (p, se) = monte_carlo_tail(x, &lam, MC_DRAWS, &mut RngStream::new(0x5eed, 0));
            Ok(TailProbability { p, method: TailMethod::MonteCarlo { se, draws: MC_DRAWS }, clamped })
        }
    }
}

/// Tail estimate and its standard error from `draws` simulated sums.
pub fn monte_carlo_tail(x: f64, lam: &[f64], draws: usize, rng: &mut RngStream) -> (f64, f64) {
    let mut hits = 0usize;
    for _ in 0..draws {
        let q: f64 = lam.iter().map(|l| {
            let z = rng.normal();
            l * z * z
        }).sum();
        if q > x {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

fn imhof_integrand(u: f64, x: f64, lam: &[f64]) -> f64 {
    let mut theta = -0.5 * x * u;
    let mut log_rho = 0.0;
    for &l in lam {
        let lu = l * u;
        theta += 0.5 * lu.atan();
        log_rho += 0.25 * (lu * lu).ln_1p();
    }
    theta.sin() / (u * log_rho.exp())
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> Option<f64> {
    let (k, err) = gauss_kronrod(f, a, b);
    if err <= tol || (b - a) <= 1e-14 * b.abs().max(1.0) {
        return Some(k);
    }
    if depth == 0 {
        return None;
    }
    let m = 0.5 * (a + b);
    Some(adaptive(f, a, m, 0.5 * tol, depth - 1)? + adaptive(f, m, b, 0.5 * tol, depth - 1)?)
}

/// Repeated averaging of consecutive partial sums of an alternating series.
fn averaged_limit(partial: &[f64]) -> f64 {
    let mut s = partial.to_vec();
    while s.len() > 1 {
        s = s.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    s[0]
}

/// Integrates panel by panel between the asymptotic zeros of the phase and
/// accelerates the alternating tail.
fn imhof(x: f64, lam: &[f64]) -> Option<(f64, usize)> {
    let f = |u: f64| imhof_integrand(u, x, lam);
    let ell = lam.len() as f64;
    let width = 2.0 * std::f64::consts::PI / x;
    let first = (0.5 * std::f64::consts::PI * ell / x) % width;
    let first = if first < 1e-3 * width { width } else { first };
    const WINDOW: usize = 16;
    let mut partial: Vec<f64> = Vec::new();
    let mut total = 0.0;
    let mut lo = 0.0;
    let mut hi = first;
    let mut last_est = f64::NAN;
    let mut stable = 0;
    for k in 0..MAX_PANELS {
        total += adaptive(&f, lo, hi, 1e-14, 40)?;
        partial.push(total);
        lo = hi;
        hi += width;
        if partial.len() >= WINDOW {
            let est = averaged_limit(&partial[partial.len() - WINDOW..]);
            if (est - last_est).abs() < 1e-13 {
                stable += 1;
                if stable >= 3 {
                    return Some((0.5 + est / std::f64::consts::PI, k + 1));
                }
            } else {
                stable = 0;
            }
            last_est = est;
        }
    }
    None
}

/// A model that can be simulated and refitted with the design held fixed.
pub trait ParametricModel: Sync {
    fn simulate(&self, theta: &ParamVec, rng: &mut RngStream) -> Result<Dataset>;
    fn fit(&self, data: &Dataset, init: &ParamVec) -> Result<FitResult>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub successes: usize,
    pub failures: usize,
    pub warnings: Vec<String>,
}

/// Empirical quantile with linear interpolation on sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const MIN_BOOTSTRAP_REPS: usize = 100;

/// Parametric bootstrap percentile intervals; replicate `r` draws from
/// stream `r` of `seed`.
pub fn bootstrap_ci(
    model: &dyn ParametricModel,
    theta_hat: &ParamVec,
    reps: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if reps < MIN_BOOTSTRAP_REPS {
        return invalid(format!("bootstrap needs at least {MIN_BOOTSTRAP_REPS} replicates"));
    }
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("level {level} must lie in (0, 1)"));
    }
    let fits: Vec<Option<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(seed, r as u64);
            let data = model.simulate(theta_hat, &mut rng).ok()?;
            let fit = model.fit(&data, theta_hat).ok()?;
            let v = fit.params.values().to_vec();
            (fit.converged && v.iter().all(|x| x.is_finite())).then_some(v)
        })
        .collect();
    let good: Vec<&Vec<f64>> = fits.iter().flatten().collect();
    let failures = reps - good.len();
    if good.len() < 2 {
        return Err(Error::DegenerateVariance("fewer than two bootstrap refits succeeded".into()));
    }
    let alpha = 1.0 - level;
    let p = theta_hat.len();
    let (mut lower, mut upper) = (Vec::with_capacity(p), Vec::with_capacity(p));
    for j in 0..p {
        let mut col: Vec<f64> = good.iter().map(|v| v[j]).collect();
        col.sort_by(|a, b| a.total_cmp(b));
        lower.push(quantile_sorted(&col, alpha / 2.0));
        upper.push(quantile_sorted(&col, 1.0 - alpha / 2.0));
    }
    let mut warnings = Vec::new();
    if failures as f64 > 0.05 * reps as f64 {
        warnings.push(format!("{failures} of {reps} refits failed; intervals may be unreliable"));
    }
    Ok(BootstrapResult {
        names: theta_hat.names().to_vec(),
        lower,
        upper,
        level,
        successes: good.len(),
        failures,
        warnings,
    })
}
