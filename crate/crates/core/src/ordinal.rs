//! Generalized score matching for ordinal (including count) responses.
//!
//! A model exposes only neighbour log-ratios `log p(y^{(j+)}) − log p(y)` and
//! `log p(y) − log p(y^{(j−)})`, so the normalizing constant never enters.
//! Supports are integer ranges; a general ordered support is handled by
//! indexing its values with [`OrderedSupport`] and working on ranks.

use crate::data::{require_nonempty, Dataset};
use crate::error::{invalid, Error, Result};
use crate::objective::{fit_objective, FitOptions, FitResult, Method, RowObjective};
use crate::params::ParamVec;

/// Integer support `[lower, upper]`; `None` marks an infinite end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Support {
    pub lower: Option<i64>,
    pub upper: Option<i64>,
}

impl Support {
    pub const COUNTS: Support = Support { lower: Some(0), upper: None };

    pub fn finite(lower: i64, upper: i64) -> Self {
        Self { lower: Some(lower), upper: Some(upper) }
    }

    pub fn contains(&self, y: i64) -> bool {
        self.lower.is_none_or(|l| y >= l) && self.upper.is_none_or(|u| y <= u)
    }

    pub fn at_lower(&self, y: i64) -> bool {
        self.lower == Some(y)
    }

    pub fn at_upper(&self, y: i64) -> bool {
        self.upper == Some(y)
    }
}

/// A strictly increasing list of support values addressed by rank.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedSupport {
    values: Vec<f64>,
}

impl OrderedSupport {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("ordered support is empty");
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("ordered support values must be strictly increasing");
        }
        Ok(Self { values })
    }

    pub fn support(&self) -> Support {
        Support::finite(0, self.values.len() as i64 - 1)
    }

    pub fn value(&self, rank: i64) -> Option<f64> {
        usize::try_from(rank).ok().and_then(|r| self.values.get(r).copied())
    }

    pub fn rank(&self, value: f64) -> Option<i64> {
        self.values.iter().position(|&v| v == value).map(|r| r as i64)
    }

    pub fn successor(&self, rank: i64) -> Option<i64> {
        (rank + 1 < self.values.len() as i64 && rank >= 0).then_some(rank + 1)
    }

    pub fn predecessor(&self, rank: i64) -> Option<i64> {
        (rank > 0 && rank < self.values.len() as i64).then_some(rank - 1)
    }
}

/// Unnormalized ordinal model for one row of a regression.
pub trait OrdinalModel: Sync {
    fn dim(&self) -> usize;
    fn support(&self, j: usize) -> Support;
    fn n_params(&self) -> usize;

    fn param_names(&self) -> Vec<String> {
        (1..=self.n_params()).map(|k| format!("theta{k}")).collect()
    }

    /// `log p(y^{(j+)}) − log p(y)`; only called when `y_j` is below the upper bound.
    fn log_ratio_up(&self, row: usize, y: &[i64], j: usize, theta: &[f64]) -> f64;

    /// `log p(y) − log p(y^{(j−)})`; only called when `y_j` is above the lower bound.
    fn log_ratio_down(&self, row: usize, y: &[i64], j: usize, theta: &[f64]) -> f64;
}

/// `t(u) = 1/(1+u)` with `t(+∞) = 0`.
pub fn transform_t(u: f64) -> Result<f64> {
    if u.is_nan() || u < 0.0 {
        return invalid(format!("t(u) needs u >= 0, got {u}"));
    }
    if u.is_infinite() {
        return Ok(0.0);
    }
    Ok(1.0 / (1.0 + u))
}

/// `t(exp(lr))`, stable for large `|lr|` and exact at `±∞`.
pub fn t_of_log_ratio(lr: f64) -> f64 {
    if lr > 0.0 {
        let e = (-lr).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + lr.exp())
    }
}

fn check_in_support<M: OrdinalModel + ?Sized>(model: &M, y: &[i64]) -> Result<()> {
    if y.len() != model.dim() {
        return invalid(format!("expected {} coordinates, got {}", model.dim(), y.len()));
    }
    for (j, &v) in y.iter().enumerate() {
        if !model.support(j).contains(v) {
            return Err(Error::Domain(format!("y[{j}] = {v} is outside {:?}", model.support(j))));
        }
    }
    Ok(())
}

/// Forward and backward `t` values for coordinate `j`.
pub fn t_pair<M: OrdinalModel + ?Sized>(model: &M, row: usize, y: &[i64], j: usize, theta: &[f64]) -> Result<(f64, f64)> {
    let s = model.support(j);
    let up = if s.at_upper(y[j]) {
        1.0
    } else {
        let lr = model.log_ratio_up(row, y, j, theta);
        if lr.is_nan() || lr == f64::INFINITY {
            return Err(Error::NonFinite(format!("forward log-ratio {lr} at coordinate {j}")));
        }
        t_of_log_ratio(lr)
    };
    let down = if s.at_lower(y[j]) {
        0.0
    } else {
        let lr = model.log_ratio_down(row, y, j, theta);
        if lr.is_nan() || lr == f64::NEG_INFINITY {
            return Err(Error::NonFinite(format!("backward log-ratio {lr} at coordinate {j}")));
        }
        t_of_log_ratio(lr)
    };
    Ok((up, down))
}

/// `Σ_j t(r_j⁺)² + t(r_j)² − 2 t(r_j⁺)`.
pub fn rho_gsm_multivariate<M: OrdinalModel + ?Sized>(model: &M, row: usize, y: &[i64], theta: &[f64]) -> Result<f64> {
    check_in_support(model, y)?;
    let mut total = 0.0;
    for j in 0..y.len() {
        let (tu, td) = t_pair(model, row, y, j, theta)?;
        total += tu * tu + td * td - 2.0 * tu;
    }
    Ok(total)
}

pub fn rho_gsm_univariate<M: OrdinalModel + ?Sized>(model: &M, row: usize, y: i64, theta: &[f64]) -> Result<f64> {
    if model.dim() != 1 {
        return invalid(format!("univariate rho on a {}-dimensional model", model.dim()));
    }
    rho_gsm_multivariate(model, row, &[y], theta)
}

/// Binds an ordinal model to a dataset of integer responses.
pub struct GsmObjective<'a, M: OrdinalModel + ?Sized> {
    pub model: &'a M,
    pub data: &'a Dataset,
}

impl<'a, M: OrdinalModel + ?Sized> GsmObjective<'a, M> {
    pub fn new(model: &'a M, data: &'a Dataset) -> Result<Self> {
        require_nonempty(data)?;
        if data.responses.d() != model.dim() {
            return invalid(format!("model has dim {} but data has {} response columns", model.dim(), data.responses.d()));
        }
        for i in 0..data.n() {
            let y = data.int_row(i)?;
            for (j, &v) in y.iter().enumerate() {
                if !model.support(j).contains(v) {
                    return Err(Error::Domain(format!("row {i}: y[{j}] = {v} outside the support")));
                }
            }
        }
        Ok(Self { model, data })
    }
}

impl<M: OrdinalModel + ?Sized> RowObjective for GsmObjective<'_, M> {
    fn n_rows(&self) -> usize {
        self.data.n()
    }
    fn n_params(&self) -> usize {
        self.model.n_params()
    }
    fn param_names(&self) -> Vec<String> {
        self.model.param_names()
    }
    fn rho(&self, i: usize, theta: &[f64]) -> Result<f64> {
        let y = self.data.int_row(i)?;
        let mut total = 0.0;
        for j in 0..y.len() {
            let (tu, td) = t_pair(self.model, i, y, j, theta)?;
            total += tu * tu + td * td - 2.0 * tu;
        }
        Ok(total)
    }
}

/// `(1/n) Σ_i ρ_i(θ)`.
pub fn objective_gsm(model: &dyn OrdinalModel, data: &Dataset, theta: &[f64]) -> Result<f64> {
    let obj = GsmObjective::new(model, data)?;
    crate::objective::mean_objective(&obj, theta)
}

/// Minimizes the empirical GSM objective by Nelder–Mead.
pub fn fit_gsm(model: &dyn OrdinalModel, data: &Dataset, init: &ParamVec) -> Result<FitResult> {
    let obj = GsmObjective::new(model, data)?;
    fit_objective(&obj, init, &FitOptions { method: Method::NelderMead, ..FitOptions::default() })
}

/// Ordinal model given by an unnormalized log-pmf.
pub struct LogPmfModel<F> {
    supports: Vec<Support>,
    n_params: usize,
    log_pmf: F,
}

impl<F> LogPmfModel<F>
where
    F: Fn(usize, &[i64], &[f64]) -> f64 + Sync,
{
    pub fn new(supports: Vec<Support>, n_params: usize, log_pmf: F) -> Self {
        Self { supports, n_params, log_pmf }
    }

    pub fn log_pmf(&self, row: usize, y: &[i64], theta: &[f64]) -> f64 {
        (self.log_pmf)(row, y, theta)
    }
}

impl<F> OrdinalModel for LogPmfModel<F>
where
    F: Fn(usize, &[i64], &[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.supports.len()
    }
    fn support(&self, j: usize) -> Support {
        self.supports[j]
    }
    fn n_params(&self) -> usize {
        self.n_params
    }
    fn log_ratio_up(&self, row: usize, y: &[i64], j: usize, theta: &[f64]) -> f64 {
        let mut yp = y.to_vec();
        yp[j] += 1;
        (self.log_pmf)(row, &yp, theta) - (self.log_pmf)(row, y, theta)
    }
    fn log_ratio_down(&self, row: usize, y: &[i64], j: usize, theta: &[f64]) -> f64 {
        let mut ym = y.to_vec();
        ym[j] -= 1;
        (self.log_pmf)(row, y, theta) - (self.log_pmf)(row, &ym, theta)
    }
}
