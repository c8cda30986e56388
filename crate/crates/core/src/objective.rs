//! Per-row objectives and the shared fitting driver.

use crate::error::{invalid, Error, Result};
use crate::numkit::{fd_gradient, fd_hessian, fd_jacobian, nelder_mead_minimize, newton_minimize, Matrix, MinResult, DEFAULT_FD_STEP};
use crate::params::ParamVec;

/// Where a derivative comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeSource {
    Analytic,
    FiniteDifferenceOfScore,
    FiniteDifferenceOfRho,
}

/// An empirical objective `(1/n) Σ ρ_i(θ)` with bound data.
pub trait RowObjective: Sync {
    fn n_rows(&self) -> usize;
    fn n_params(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
    fn rho(&self, i: usize, theta: &[f64]) -> Result<f64>;

    fn score(&self, i: usize, theta: &[f64]) -> Result<Vec<f64>> {
        fd_gradient(|t| self.rho(i, t).unwrap_or(f64::NAN), theta, DEFAULT_FD_STEP)
    }

    fn hessian(&self, i: usize, theta: &[f64]) -> Result<Matrix> {
        match self.score_source() {
            DerivativeSource::Analytic => {
                Ok(fd_jacobian(|t| self.score(i, t), theta, DEFAULT_FD_STEP)?.symmetrize())
            }
            _ => fd_hessian(|t| self.rho(i, t).unwrap_or(f64::NAN), theta, DEFAULT_FD_STEP),
        }
    }

    fn score_source(&self) -> DerivativeSource {
        DerivativeSource::FiniteDifferenceOfRho
    }

    fn hessian_source(&self) -> DerivativeSource {
        match self.score_source() {
            DerivativeSource::Analytic => DerivativeSource::FiniteDifferenceOfScore,
            s => s,
        }
    }

    /// Value, score and Hessian of one row in one pass.
    fn row_derivatives(&self, i: usize, theta: &[f64]) -> Result<(f64, Vec<f64>, Matrix)> {
        Ok((self.rho(i, theta)?, self.score(i, theta)?, self.hessian(i, theta)?))
    }

    /// Parameter constraints checked before evaluation.
    fn in_domain(&self, _theta: &[f64]) -> bool {
        true
    }

    /// Map to the unconstrained coordinates used by the simplex search.
    fn to_search(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn from_search(&self, z: &[f64]) -> Vec<f64> {
        z.to_vec()
    }
}

fn check_rows(obj: &dyn RowObjective, theta: &[f64]) -> Result<f64> {
    if obj.n_rows() == 0 {
        return invalid("objective has no rows");
    }
    if theta.len() != obj.n_params() {
        return invalid(format!("expected {} parameters, got {}", obj.n_params(), theta.len()));
    }
    Ok(obj.n_rows() as f64)
}

/// `(1/n) Σ ρ_i(θ)`, summed in row order.
pub fn mean_objective(obj: &dyn RowObjective, theta: &[f64]) -> Result<f64> {
    let n = check_rows(obj, theta)?;
    let mut s = 0.0;
    for i in 0..obj.n_rows() {
        s += obj.rho(i, theta)?;
    }
    Ok(s / n)
}

pub fn mean_score(obj: &dyn RowObjective, theta: &[f64]) -> Result<Vec<f64>> {
    let n = check_rows(obj, theta)?;
    let mut g = vec![0.0; theta.len()];
    for i in 0..obj.n_rows() {
        for (a, b) in g.iter_mut().zip(obj.score(i, theta)?) {
            *a += b;
        }
    }
    Ok(g.into_iter().map(|v| v / n).collect())
}

pub fn mean_hessian(obj: &dyn RowObjective, theta: &[f64]) -> Result<Matrix> {
    let n = check_rows(obj, theta)?;
    let mut h = Matrix::zeros(theta.len(), theta.len());
    for i in 0..obj.n_rows() {
        h.add_assign_scaled(&obj.hessian(i, theta)?, 1.0 / n);
    }
    Ok(h.symmetrize())
}

/// Mean value, score and Hessian together.
pub fn mean_derivatives(obj: &dyn RowObjective, theta: &[f64]) -> Result<(f64, Vec<f64>, Matrix)> {
    let n = check_rows(obj, theta)?;
    let p = theta.len();
    let (mut v, mut g, mut h) = (0.0, vec![0.0; p], Matrix::zeros(p, p));
    for i in 0..obj.n_rows() {
        let (vi, gi, hi) = obj.row_derivatives(i, theta)?;
        v += vi;
        for (a, b) in g.iter_mut().zip(gi) {
            *a += b;
        }
        h.add_assign_scaled(&hi, 1.0);
    }
    Ok((v / n, g.into_iter().map(|x| x / n).collect(), h.scale(1.0 / n).symmetrize()))
}

/// Minimization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Newton when analytic derivatives exist, with a simplex fallback.
    Auto,
    NelderMead,
    Newton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub tol: f64,
    /// Defaults to `2000 · p` when `None`.
    pub max_iter: Option<usize>,
    pub method: Method,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: None, method: Method::Auto }
    }
}

/// Estimate plus optimizer diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ParamVec,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: &'static str,
    pub warnings: Vec<String>,
}

fn newton_fit(obj: &dyn RowObjective, x0: &[f64]) -> Result<MinResult> {
    newton_minimize(
        |t| {
            if !obj.in_domain(t) {
                return Err(Error::Domain("parameter outside its domain".into()));
            }
            mean_objective(obj, t)
        },
        |t| {
            if !obj.in_domain(t) {
                return Err(Error::Domain("parameter outside its domain".into()));
            }
            mean_derivatives(obj, t)
        },
        x0,
        1e-10,
        200,
    )
}

fn simplex_fit(obj: &dyn RowObjective, x0: &[f64], opts: &FitOptions) -> Result<MinResult> {
    let max_iter = opts.max_iter.unwrap_or(2000 * x0.len().max(1));
    let z0 = obj.to_search(x0);
    let r = nelder_mead_minimize(
        |z| {
            let t = obj.from_search(z);
            if !obj.in_domain(&t) {
                return f64::INFINITY;
            }
            mean_objective(obj, &t).unwrap_or(f64::INFINITY)
        },
        &z0,
        opts.tol,
        max_iter,
    )?;
    Ok(MinResult { argmin: obj.from_search(&r.argmin), ..r })
}

/// Minimizes the mean objective from `init`.
pub fn fit_objective(obj: &dyn RowObjective, init: &ParamVec, opts: &FitOptions) -> Result<FitResult> {
    let x0 = init.values();
    let f0 = mean_objective(obj, x0)?;
    if !f0.is_finite() {
        return invalid("objective is not finite at the initial value");
    }
    let analytic = obj.hessian_source() == DerivativeSource::Analytic;
    let mut warnings = Vec::new();
    let (r, method) = match opts.method {
        Method::NelderMead => (simplex_fit(obj, x0, opts)?, "nelder-mead"),
        Method::Newton => (newton_fit(obj, x0)?, "newton"),
        Method::Auto if !analytic => (simplex_fit(obj, x0, opts)?, "nelder-mead"),
        Method::Auto => match newton_fit(obj, x0) {
            Ok(r) if r.converged => (r, "newton"),
            _ => {
                warnings.push("newton iteration failed; used simplex search".to_string());
                let nm = simplex_fit(obj, x0, opts)?;
                match newton_fit(obj, &nm.argmin) {
                    Ok(pol) if pol.converged && pol.value <= nm.value => (
                        MinResult { iterations: nm.iterations + pol.iterations, ..pol },
                        "nelder-mead+newton",
                    ),
                    _ => (nm, "nelder-mead"),
                }
            }
        },
    };
    if !r.converged {
        warnings.push(format!("optimizer stopped after {} iterations without converging", r.iterations));
    }
    Ok(FitResult {
        params: init.with_values(r.argmin)?,
        objective: r.value,
        iterations: r.iterations,
        converged: r.converged,
        method,
        warnings,
    })
}

/// Minimizes over θ₂ with the entries at `fixed` pinned to `values`.
pub fn fit_objective_restricted(
    obj: &dyn RowObjective,
    init: &ParamVec,
    fixed: &[usize],
    values: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    if fixed.len() != values.len() {
        return invalid("fixed indices and values differ in length");
    }
    let restricted = Restricted::new(obj, fixed, values, init.values())?;
    let free_names: Vec<String> = restricted.free.iter().map(|&i| init.names()[i].clone()).collect();
    let free_init = ParamVec::new(restricted.free.iter().map(|&i| init.values()[i]).collect(), free_names)?;
    let fit = if restricted.free.is_empty() {
        FitResult {
            params: free_init,
            objective: mean_objective(obj, &restricted.expand(&[]))?,
            iterations: 0,
            converged: true,
            method: "none",
            warnings: vec![],
        }
    } else {
        fit_objective(&restricted, &free_init, opts)?
    };
    let full = restricted.expand(fit.params.values());
    Ok(FitResult { params: init.with_values(full)?, ..fit })
}

struct Restricted<'a> {
    inner: &'a dyn RowObjective,
    free: Vec<usize>,
    template: Vec<f64>,
}

impl<'a> Restricted<'a> {
    fn new(inner: &'a dyn RowObjective, fixed: &[usize], values: &[f64], init: &[f64]) -> Result<Self> {
        let p = inner.n_params();
        if let Some(&bad) = fixed.iter().find(|&&i| i >= p) {
            return invalid(format!("fixed index {bad} out of range"));
        }
        let mut template = init.to_vec();
        for (&i, &v) in fixed.iter().zip(values) {
            template[i] = v;
        }
        let free = (0..p).filter(|i| !fixed.contains(i)).collect();
        Ok(Self { inner, free, template })
    }

    fn expand(&self, free_vals: &[f64]) -> Vec<f64> {
        let mut t = self.template.clone();
        for (&i, &v) in self.free.iter().zip(free_vals) {
            t[i] = v;
        }
        t
    }
}

impl RowObjective for Restricted<'_> {
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }
    fn n_params(&self) -> usize {
        self.free.len()
    }
    fn param_names(&self) -> Vec<String> {
        let names = self.inner.param_names();
        self.free.iter().map(|&i| names[i].clone()).collect()
    }
    fn rho(&self, i: usize, theta: &[f64]) -> Result<f64> {
        self.inner.rho(i, &self.expand(theta))
    }
    fn score(&self, i: usize, theta: &[f64]) -> Result<Vec<f64>> {
        let s = self.inner.score(i, &self.expand(theta))?;
        Ok(self.free.iter().map(|&k| s[k]).collect())
    }
    fn hessian(&self, i: usize, theta: &[f64]) -> Result<Matrix> {
        Ok(self.inner.hessian(i, &self.expand(theta))?.select(&self.free, &self.free))
    }
    fn row_derivatives(&self, i: usize, theta: &[f64]) -> Result<(f64, Vec<f64>, Matrix)> {
        let (v, s, h) = self.inner.row_derivatives(i, &self.expand(theta))?;
        Ok((v, self.free.iter().map(|&k| s[k]).collect(), h.select(&self.free, &self.free)))
    }
    fn score_source(&self) -> DerivativeSource {
        self.inner.score_source()
    }
    fn hessian_source(&self) -> DerivativeSource {
        self.inner.hessian_source()
    }
    fn in_domain(&self, theta: &[f64]) -> bool {
        self.inner.in_domain(&self.expand(theta))
    }
    fn to_search(&self, theta: &[f64]) -> Vec<f64> {
        let z = self.inner.to_search(&self.expand(theta));
        self.free.iter().map(|&k| z[k]).collect()
    }
    fn from_search(&self, z: &[f64]) -> Vec<f64> {
        let mut full = self.inner.to_search(&self.template);
        for (&k, &v) in self.free.iter().zip(z) {
            full[k] = v;
        }
        let t = self.inner.from_search(&full);
        self.free.iter().map(|&k| t[k]).collect()
    }
}
