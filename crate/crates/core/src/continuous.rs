//! Score matching for continuous responses and the truncated Gaussian
//! regression model on the positive orthant.
//!
//! Truncated Gaussian parameters are ordered `(vec(B), vech(Λ))`, both
//! column-major: for `d = p = 2` that is `B11, B21, B12, B22, L11, L21, L22`.

use crate::data::{require_nonempty, Dataset, Responses};
use crate::error::{invalid, Error, Result};
use crate::numkit::{cholesky, dot, inverse, sym_eigen, Matrix};
use crate::objective::{fit_objective, mean_hessian, mean_score, DerivativeSource, FitOptions, FitResult, RowObjective};
use crate::params::ParamVec;

/// Density known up to a constant through its first two derivatives in `y`.
pub trait ContinuousModel: Sync {
    fn dim(&self) -> usize;
    fn n_params(&self) -> usize;
    fn grad_log_p(&self, y: &[f64], row: usize, theta: &[f64]) -> Result<Vec<f64>>;
    /// `Σ_j ∂² log p / ∂y_j²`.
    fn laplacian_log_p(&self, y: &[f64], row: usize, theta: &[f64]) -> Result<f64>;
}

/// `2 Δ log p + ‖∇ log p‖²`.
pub fn rho_sm<M: ContinuousModel + ?Sized>(model: &M, y: &[f64], row: usize, theta: &[f64]) -> Result<f64> {
    let g = model.grad_log_p(y, row, theta)?;
    let lap = model.laplacian_log_p(y, row, theta)?;
    let v = 2.0 * lap + dot(&g, &g);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("score matching term at row {row}")));
    }
    Ok(v)
}

/// Binds a continuous model to real-valued data.
pub struct SmObjective<'a, M: ContinuousModel + ?Sized> {
    pub model: &'a M,
    pub data: &'a Dataset,
}

impl<'a, M: ContinuousModel + ?Sized> SmObjective<'a, M> {
    pub fn new(model: &'a M, data: &'a Dataset) -> Result<Self> {
        require_nonempty(data)?;
        if data.real_responses()?.cols() != model.dim() {
            return invalid("response dimension does not match the model");
        }
        Ok(Self { model, data })
    }
}

impl<M: ContinuousModel + ?Sized> RowObjective for SmObjective<'_, M> {
    fn n_rows(&self) -> usize {
        self.data.n()
    }
    fn n_params(&self) -> usize {
        self.model.n_params()
    }
    fn param_names(&self) -> Vec<String> {
        (1..=self.model.n_params()).map(|k| format!("theta{k}")).collect()
    }
    fn rho(&self, i: usize, theta: &[f64]) -> Result<f64> {
        rho_sm(self.model, self.data.real_row(i)?, i, theta)
    }
}

/// `(1/n) Σ_i ρ_SM(y_i)`.
pub fn objective_sm<M: ContinuousModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64]) -> Result<f64> {
    crate::objective::mean_objective(&SmObjective::new(model, data)?, theta)
}

/// Elementwise natural log of strictly positive responses.
pub fn log_transform(data: &Dataset) -> Result<Dataset> {
    let y = data.real_responses()?;
    let mut out = Vec::with_capacity(y.rows() * y.cols());
    for i in 0..y.rows() {
        for (j, &v) in y.row(i).iter().enumerate() {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("row {i}: response {j} is {v}, not positive")));
            }
            out.push(v.ln());
        }
    }
    data.with_responses(Responses::Real(Matrix::from_vec(y.rows(), y.cols(), out)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncGaussParams {
    pub b: Matrix,
    pub lambda: Matrix,
}

impl TruncGaussParams {
    pub fn new(b: Matrix, lambda: Matrix) -> Result<Self> {
        if !lambda.is_square() || lambda.rows() != b.rows() {
            return invalid(format!("B is {}x{} but Lambda is {}x{}", b.rows(), b.cols(), lambda.rows(), lambda.cols()));
        }
        if !lambda.is_symmetric(1e-12) {
            return invalid("Lambda must be symmetric");
        }
        Ok(Self { b, lambda: lambda.symmetrize() })
    }

    pub fn d(&self) -> usize {
        self.b.rows()
    }

    pub fn p(&self) -> usize {
        self.b.cols()
    }

    pub fn n_params(d: usize, p: usize) -> usize {
        d * p + d * (d + 1) / 2
    }

    pub fn from_theta(d: usize, p: usize, theta: &[f64]) -> Result<Self> {
        if theta.len() != Self::n_params(d, p) {
            return invalid(format!("expected {} parameters, got {}", Self::n_params(d, p), theta.len()));
        }
        let b = Matrix::from_col_major(d, p, &theta[..d * p])?;
        let lambda = Matrix::from_vech(d, &theta[d * p..])?;
        Ok(Self { b, lambda })
    }

    pub fn to_theta(&self) -> Vec<f64> {
        let mut v = self.b.vec();
        v.extend(self.lambda.vech());
        v
    }

    pub fn names(d: usize, p: usize) -> Vec<String> {
        let mut v = Vec::new();
        for c in 1..=p {
            for r in 1..=d {
                v.push(format!("B{r}{c}"));
            }
        }
        for c in 1..=d {
            for r in c..=d {
                v.push(format!("L{r}{c}"));
            }
        }
        v
    }

    pub fn to_param_vec(&self) -> ParamVec {
        ParamVec::new(self.to_theta(), Self::names(self.d(), self.p())).expect("names are unique")
    }

    pub fn mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.b.matvec(x)
    }
}

fn check_dims(params: &TruncGaussParams, y: &[f64], x: &[f64]) -> Result<()> {
    if y.len() != params.d() || x.len() != params.p() {
        return invalid(format!(
            "row has {} responses and {} covariates; parameters expect {} and {}",
            y.len(),
            x.len(),
            params.d(),
            params.p()
        ));
    }
    Ok(())
}

/// Log-scale row term `−4 rᵀΛt − 2 tr(TΛT) + rᵀΛT²Λr` with `t = exp(ỹ)`, `r = t − Bx`.
pub fn rho_tg_log(ytilde: &[f64], x: &[f64], params: &TruncGaussParams) -> Result<f64> {
    check_dims(params, ytilde, x)?;
    let t: Vec<f64> = ytilde.iter().map(|v| v.exp()).collect();
    Ok(tg_core(&t, x, params).0)
}

struct TgRow {
    t: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
}

fn tg_core(t: &[f64], x: &[f64], params: &TruncGaussParams) -> (f64, TgRow) {
    let d = t.len();
    let l = &params.lambda;
    let bx = params.b.matvec(x).expect("dimensions checked");
    let r: Vec<f64> = t.iter().zip(&bx).map(|(a, b)| a - b).collect();
    let lt = l.matvec(t).expect("square");
    let z = l.matvec(&r).expect("square");
    let mut v = -4.0 * dot(&r, &lt);
    for j in 0..d {
        v += -2.0 * t[j] * t[j] * l[(j, j)] + z[j] * t[j] * t[j] * z[j];
    }
    (v, TgRow { t: t.to_vec(), r, z })
}

/// Per-coordinate weight `g` and its derivative.
pub trait WeightFunction: Sync {
    fn g(&self, y: f64) -> f64;
    fn dg(&self, y: f64) -> f64;
}

/// `g(y) = y²`.
pub struct SquareWeight;

impl WeightFunction for SquareWeight {
    fn g(&self, y: f64) -> f64 {
        y * y
    }
    fn dg(&self, y: f64) -> f64 {
        2.0 * y
    }
}

/// `g ≡ 1`.
pub struct UnitWeight;

impl WeightFunction for UnitWeight {
    fn g(&self, _y: f64) -> f64 {
        1.0
    }
    fn dg(&self, _y: f64) -> f64 {
        0.0
    }
}

/// Weighted row term `−2 g′ᵀΛr + rᵀΛGΛr − 2 tr(G^{1/2} Λ G^{1/2})` on the original scale.
pub fn rho_tg_weighted(y: &[f64], x: &[f64], params: &TruncGaussParams, w: &dyn WeightFunction) -> Result<f64> {
    check_dims(params, y, x)?;
    let l = &params.lambda;
    let bx = params.b.matvec(x)?;
    let r: Vec<f64> = y.iter().zip(&bx).map(|(a, b)| a - b).collect();
    let z = l.matvec(&r)?;
    let mut v = 0.0;
    for j in 0..y.len() {
        let g = w.g(y[j]);
        if !(g >= 0.0) {
            return invalid(format!("weight function is {g} at y = {}", y[j]));
        }
        v += -2.0 * w.dg(y[j]) * z[j] + g * z[j] * z[j] - 2.0 * g * l[(j, j)];
    }
    Ok(v)
}

/// Mean of [`rho_tg_log`] over a log-transformed dataset.
pub fn objective_tg_log(data: &Dataset, params: &TruncGaussParams) -> Result<f64> {
    require_nonempty(data)?;
    let y = data.real_responses()?;
    let mut s = 0.0;
    for i in 0..data.n() {
        s += rho_tg_log(y.row(i), data.x(i), params)?;
    }
    Ok(s / data.n() as f64)
}

/// Mean of [`rho_tg_weighted`] over an untransformed dataset.
pub fn objective_tg_weighted(data: &Dataset, params: &TruncGaussParams, w: &dyn WeightFunction) -> Result<f64> {
    require_nonempty(data)?;
    let y = data.real_responses()?;
    let mut s = 0.0;
    for i in 0..data.n() {
        s += rho_tg_weighted(y.row(i), data.x(i), params, w)?;
    }
    Ok(s / data.n() as f64)
}

/// Per-parameter perturbation directions `(dB x, dΛ)`.
struct Directions {
    u: Vec<Vec<f64>>,
    m: Vec<Option<Matrix>>,
}

fn directions(d: usize, p: usize, x: &[f64]) -> Directions {
    let k = TruncGaussParams::n_params(d, p);
    let mut u = Vec::with_capacity(k);
    let mut m = Vec::with_capacity(k);
    for c in 0..p {
        for r in 0..d {
            let mut v = vec![0.0; d];
            v[r] = x[c];
            u.push(v);
            m.push(None);
        }
    }
    for c in 0..d {
        for r in c..d {
            let mut e = Matrix::zeros(d, d);
            e[(r, c)] = 1.0;
            e[(c, r)] = 1.0;
            u.push(vec![0.0; d]);
            m.push(Some(e));
        }
    }
    Directions { u, m }
}

fn row_score(row: &TgRow, x: &[f64], params: &TruncGaussParams) -> Vec<f64> {
    let d = params.d();
    let l = &params.lambda;
    let (t, r, z) = (&row.t, &row.r, &row.z);
    let v: Vec<f64> = (0..d).map(|j| t[j] * t[j] * z[j]).collect();
    let lt = l.matvec(t).expect("square");
    let lv = l.matvec(&v).expect("square");
    let mut s = Vec::with_capacity(TruncGaussParams::n_params(d, params.p()));
    for c in 0..params.p() {
        for rr in 0..d {
            s.push((4.0 * lt[rr] - 2.0 * lv[rr]) * x[c]);
        }
    }
    let g = |a: usize, b: usize| {
        let diag = if a == b { -2.0 * t[a] * t[a] } else { 0.0 };
        -4.0 * r[a] * t[b] + diag + r[a] * v[b] + v[a] * r[b]
    };
    for c in 0..d {
        for rr in c..d {
            s.push(if rr == c { g(rr, rr) } else { g(rr, c) + g(c, rr) });
        }
    }
    s
}

fn row_hessian(row: &TgRow, x: &[f64], params: &TruncGaussParams) -> Matrix {
    let d = params.d();
    let l = &params.lambda;
    let (t, r, z) = (&row.t, &row.r, &row.z);
    let t2: Vec<f64> = t.iter().map(|v| v * v).collect();
    let dir = directions(d, params.p(), x);
    let k = dir.u.len();
    let apply = |m: &Option<Matrix>, v: &[f64]| -> Vec<f64> {
        match m {
            Some(m) => m.matvec(v).expect("square"),
            None => vec![0.0; v.len()],
        }
    };
    let dz: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            let mr = apply(&dir.m[a], r);
            let lu = l.matvec(&dir.u[a]).expect("square");
            mr.iter().zip(&lu).map(|(p, q)| p - q).collect()
        })
        .collect();
    let mt: Vec<Vec<f64>> = (0..k).map(|a| apply(&dir.m[a], t)).collect();
    let mut h = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let f1 = 4.0 * (dot(&dir.u[a], &mt[b]) + dot(&dir.u[b], &mt[a]));
            let mub = apply(&dir.m[a], &dir.u[b]);
            let mua = apply(&dir.m[b], &dir.u[a]);
            let mut f3 = 0.0;
            for j in 0..d {
                f3 += 2.0 * t2[j] * dz[a][j] * dz[b][j] - 2.0 * z[j] * t2[j] * (mub[j] + mua[j]);
            }
            h[(a, b)] = f1 + f3;
            h[(b, a)] = f1 + f3;
        }
    }
    h
}

/// Gradient of the log-scale row term.
pub fn tg_row_score(ytilde: &[f64], x: &[f64], params: &TruncGaussParams) -> Result<Vec<f64>> {
    check_dims(params, ytilde, x)?;
    let t: Vec<f64> = ytilde.iter().map(|v| v.exp()).collect();
    let (_, row) = tg_core(&t, x, params);
    Ok(row_score(&row, x, params))
}

/// Second derivatives of the log-scale row term.
pub fn tg_row_hessian(ytilde: &[f64], x: &[f64], params: &TruncGaussParams) -> Result<Matrix> {
    check_dims(params, ytilde, x)?;
    let t: Vec<f64> = ytilde.iter().map(|v| v.exp()).collect();
    let (_, row) = tg_core(&t, x, params);
    Ok(row_hessian(&row, x, params))
}

/// Gradient of [`objective_tg_log`] over `(vec B, vech Λ)`.
pub fn tg_score(data: &Dataset, params: &TruncGaussParams) -> Result<Vec<f64>> {
    let obj = TgObjective::new(data, params.d(), params.p())?;
    mean_score(&obj, &params.to_theta())
}

/// Second derivatives of [`objective_tg_log`]; positive definite near a minimum.
pub fn tg_hessian(data: &Dataset, params: &TruncGaussParams) -> Result<Matrix> {
    let obj = TgObjective::new(data, params.d(), params.p())?;
    mean_hessian(&obj, &params.to_theta())
}

/// Log-scale truncated Gaussian objective over a log-transformed dataset.
pub struct TgObjective<'a> {
    data: &'a Dataset,
    t: Matrix,
    d: usize,
    p: usize,
}

impl<'a> TgObjective<'a> {
    pub fn new(data: &'a Dataset, d: usize, p: usize) -> Result<Self> {
        require_nonempty(data)?;
        let y = data.real_responses()?;
        if y.cols() != d || data.p() != p {
            return invalid(format!("data is {}x{} but the model expects d = {d}, p = {p}", y.cols(), data.p()));
        }
        let t = Matrix::from_vec(y.rows(), d, y.as_slice().iter().map(|v| v.exp()).collect())?;
        Ok(Self { data, t, d, p })
    }

    fn row(&self, i: usize, theta: &[f64]) -> Result<(f64, TgRow, TruncGaussParams)> {
        let params = TruncGaussParams::from_theta(self.d, self.p, theta)?;
        let (v, row) = tg_core(self.t.row(i), self.data.x(i), &params);
        Ok((v, row, params))
    }
}

impl RowObjective for TgObjective<'_> {
    fn n_rows(&self) -> usize {
        self.data.n()
    }
    fn n_params(&self) -> usize {
        TruncGaussParams::n_params(self.d, self.p)
    }
    fn param_names(&self) -> Vec<String> {
        TruncGaussParams::names(self.d, self.p)
    }
    fn rho(&self, i: usize, theta: &[f64]) -> Result<f64> {
        Ok(self.row(i, theta)?.0)
    }
    fn score(&self, i: usize, theta: &[f64]) -> Result<Vec<f64>> {
        let (_, row, params) = self.row(i, theta)?;
        Ok(row_score(&row, self.data.x(i), &params))
    }
    fn hessian(&self, i: usize, theta: &[f64]) -> Result<Matrix> {
        let (_, row, params) = self.row(i, theta)?;
        Ok(row_hessian(&row, self.data.x(i), &params))
    }
    fn row_derivatives(&self, i: usize, theta: &[f64]) -> Result<(f64, Vec<f64>, Matrix)> {
        let (v, row, params) = self.row(i, theta)?;
        let x = self.data.x(i);
        Ok((v, row_score(&row, x, &params), row_hessian(&row, x, &params)))
    }
    fn score_source(&self) -> DerivativeSource {
        DerivativeSource::Analytic
    }
    fn hessian_source(&self) -> DerivativeSource {
        DerivativeSource::Analytic
    }
}

/// Starting values from least squares on the original scale.
pub fn tg_default_init(data: &Dataset) -> Result<TruncGaussParams> {
    let y = data.real_responses()?;
    let x = &data.covariates;
    let xtx = x.transpose().matmul(x)?;
    let xty = x.transpose().matmul(y)?;
    let coef = inverse(&xtx)?.matmul(&xty)?;
    let b = coef.transpose();
    let resid = y.sub(&x.matmul(&coef)?)?;
    let cov = resid.transpose().matmul(&resid)?.scale(1.0 / data.n().max(1) as f64);
    let lambda = inverse(&cov.symmetrize())?.symmetrize();
    TruncGaussParams::new(b, lambda)
}

/// Fits the truncated Gaussian regression to strictly positive responses.
pub fn fit_tg(data: &Dataset, init: &TruncGaussParams) -> Result<FitResult> {
    fit_tg_with(data, init, &FitOptions::default())
}

pub fn fit_tg_with(data: &Dataset, init: &TruncGaussParams, opts: &FitOptions) -> Result<FitResult> {
    let logged = log_transform(data)?;
    let obj = TgObjective::new(&logged, init.d(), init.p())?;
    let mut fit = fit_objective(&obj, &init.to_param_vec(), opts)?;
    let est = TruncGaussParams::from_theta(init.d(), init.p(), fit.params.values())?;
    if cholesky(&est.lambda).is_err() {
        let (vals, _) = sym_eigen(&est.lambda)?;
        fit.warnings.push(format!(
            "estimated precision matrix is not positive definite (smallest eigenvalue {:e})",
            vals.last().copied().unwrap_or(f64::NAN)
        ));
    }
    Ok(fit)
}

/// Untruncated-domain Gaussian regression density `N(Bx, Λ⁻¹)` seen as a
/// [`ContinuousModel`]: `∇ log p = −Λ(y − Bx)`, `Δ log p = −tr Λ`.
pub struct GaussRegressionModel<'a> {
    pub covariates: &'a Matrix,
    pub d: usize,
}

impl ContinuousModel for GaussRegressionModel<'_> {
    fn dim(&self) -> usize {
        self.d
    }
    fn n_params(&self) -> usize {
        TruncGaussParams::n_params(self.d, self.covariates.cols())
    }
    fn grad_log_p(&self, y: &[f64], row: usize, theta: &[f64]) -> Result<Vec<f64>> {
        let params = TruncGaussParams::from_theta(self.d, self.covariates.cols(), theta)?;
        let bx = params.mean(self.covariates.row(row))?;
        let r: Vec<f64> = y.iter().zip(&bx).map(|(a, b)| a - b).collect();
        Ok(params.lambda.matvec(&r)?.into_iter().map(|v| -v).collect())
    }
    fn laplacian_log_p(&self, _y: &[f64], _row: usize, theta: &[f64]) -> Result<f64> {
        let params = TruncGaussParams::from_theta(self.d, self.covariates.cols(), theta)?;
        Ok(-params.lambda.trace())
    }
}
