//! von Mises–Fisher auto model on a product of spheres.
//!
//! Joint density `∝ exp{βᵀ Σ_i y_i + ξ Σ_i Σ_{k∈N(i)} y_iᵀ y_k}` with
//! `θ = (ξ, β)`. The score matching objective is the quadratic
//! `½ θᵀŴθ − θᵀd̂`, so the estimator is available in closed form.

use std::collections::HashMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};
use crate::inference::{Reference, TestOutcome};
use crate::numkit::{dot, norm, solve_spd, sym_inverse, Matrix};
use crate::objective::FitResult;
use crate::params::ParamVec;

const UNIT_TOL: f64 = 1e-10;

/// Points on the unit sphere `S^{d−1}`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereSample {
    points: Matrix,
}

impl SphereSample {
    pub fn new(points: Matrix) -> Result<Self> {
        for i in 0..points.rows() {
            let r = norm(points.row(i));
            if (r - 1.0).abs() > UNIT_TOL {
                return invalid(format!("row {i} has norm {r}, not 1"));
            }
        }
        Ok(Self { points })
    }

    /// Maps compositions (non-negative rows summing to one) to the sphere by
    /// elementwise square root.
    pub fn from_compositions(comp: &Matrix) -> Result<Self> {
        let mut out = Matrix::zeros(comp.rows(), comp.cols());
        for i in 0..comp.rows() {
            let row = comp.row(i);
            if row.iter().any(|v| *v < 0.0) {
                return invalid(format!("row {i} has a negative component"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-8 {
                return invalid(format!("row {i} sums to {total}, not 1"));
            }
            for (j, v) in row.iter().enumerate() {
                out[(i, j)] = (v / total).sqrt();
            }
        }
        Self::new(out)
    }

    pub fn n(&self) -> usize {
        self.points.rows()
    }

    pub fn d(&self) -> usize {
        self.points.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    /// Replaces site `i`; the caller guarantees unit norm.
    pub(crate) fn set_point(&mut self, i: usize, y: &[f64]) {
        for (j, v) in y.iter().enumerate() {
            self.points[(i, j)] = *v;
        }
    }
}

/// Symmetric adjacency lists without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        for list in adjacency.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        for (i, list) in adjacency.iter().enumerate() {
            for &k in list {
                if k >= n {
                    return invalid(format!("site {i} lists neighbour {k} out of range"));
                }
                if k == i {
                    return invalid(format!("site {i} lists itself as a neighbour"));
                }
                if adjacency[k].binary_search(&i).is_err() {
                    return invalid(format!("adjacency is not symmetric between sites {i} and {k}"));
                }
            }
        }
        Ok(Self { adjacency })
    }

    pub fn empty(n: usize) -> Self {
        Self { adjacency: vec![Vec::new(); n] }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Queen adjacency: sites are neighbours when their Chebyshev distance is 1.
pub fn build_grid_neighbors(coords: &[(i64, i64)]) -> Result<NeighborGraph> {
    let mut index = HashMap::with_capacity(coords.len());
    for (i, &c) in coords.iter().enumerate() {
        if index.insert(c, i).is_some() {
            return invalid(format!("duplicate grid coordinate {c:?}"));
        }
    }
    let adjacency = coords
        .iter()
        .map(|&(r, c)| {
            let mut list = Vec::new();
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    if let Some(&k) = index.get(&(r + dr, c + dc)) {
                        list.push(k);
                    }
                }
            }
            list
        })
        .collect();
    NeighborGraph::from_adjacency(adjacency)
}

/// Row-major coordinates of a `rows × cols` grid.
pub fn grid_coords(rows: usize, cols: usize) -> Vec<(i64, i64)> {
    (0..rows).flat_map(|r| (0..cols).map(move |c| (r as i64, c as i64))).collect()
}

/// Coordinates of the most nearly square grid holding exactly `n` sites:
/// `c = ⌈√n⌉` columns, filled row by row.
pub fn near_square_coords(n: usize) -> Vec<(i64, i64)> {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    (0..n).map(|i| ((i / cols) as i64, (i % cols) as i64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoModelParams {
    pub xi: f64,
    pub beta: Vec<f64>,
}

impl AutoModelParams {
    pub fn theta(&self) -> Vec<f64> {
        let mut v = vec![self.xi];
        v.extend(&self.beta);
        v
    }

    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        match theta.split_first() {
            Some((&xi, beta)) => Ok(Self { xi, beta: beta.to_vec() }),
            None => invalid("empty auto-model parameter vector"),
        }
    }

    pub fn names(d: usize) -> Vec<String> {
        let mut v = vec!["xi".to_string()];
        v.extend((1..=d).map(|j| format!("beta{j}")));
        v
    }
}

fn check_pair(y: &SphereSample, graph: &NeighborGraph) -> Result<()> {
    if y.n() != graph.n() {
        return invalid(format!("{} sites in the sample but {} in the graph", y.n(), graph.n()));
    }
    if y.n() == 0 {
        return invalid("empty sample");
    }
    Ok(())
}

/// `S_i = Σ_{k∈N(i)} y_k`.
pub fn neighbor_sums(y: &SphereSample, graph: &NeighborGraph) -> Vec<Vec<f64>> {
    (0..y.n())
        .map(|i| {
            let mut s = vec![0.0; y.d()];
            for &k in graph.neighbors(i) {
                for (a, b) in s.iter_mut().zip(y.point(k)) {
                    *a += b;
                }
            }
            s
        })
        .collect()
}

/// `P = I − blockdiag(y_i y_iᵀ)`.
pub fn projection_matrix(y: &SphereSample) -> Matrix {
    let (n, d) = (y.n(), y.d());
    let mut p = Matrix::identity(n * d);
    for i in 0..n {
        let yi = y.point(i);
        for a in 0..d {
            for b in 0..d {
                p[(i * d + a, i * d + b)] -= yi[a] * yi[b];
            }
        }
    }
    p
}

/// Euclidean gradients `u_1, …, u_{d+1}` of the sufficient statistics, each of length `nd`.
pub fn sufficient_grads(y: &SphereSample, graph: &NeighborGraph) -> Result<Vec<Vec<f64>>> {
    check_pair(y, graph)?;
    let (n, d) = (y.n(), y.d());
    let sums = neighbor_sums(y, graph);
    let mut out = Vec::with_capacity(d + 1);
    out.push(sums.iter().flat_map(|s| s.iter().map(|v| 2.0 * v)).collect());
    for l in 0..d {
        let mut u = vec![0.0; n * d];
        for i in 0..n {
            u[i * d + l] = 1.0;
        }
        out.push(u);
    }
    Ok(out)
}

/// `t₁ = Σ_i y_iᵀ S_i`.
pub fn pair_statistic(y: &SphereSample, graph: &NeighborGraph) -> f64 {
    neighbor_sums(y, graph).iter().enumerate().map(|(i, s)| dot(y.point(i), s)).sum()
}

/// Sample `Ŵ` and `d̂`, assembled site by site.
pub fn build_w_d(y: &SphereSample, graph: &NeighborGraph) -> Result<(Matrix, Vec<f64>)> {
    check_pair(y, graph)?;
    let (n, d) = (y.n(), y.d());
    let sums = neighbor_sums(y, graph);
    let mut w = Matrix::zeros(d + 1, d + 1);
    let mut dv = vec![0.0; d + 1];
    let dm1 = (d - 1) as f64;
    for i in 0..n {
        let yi = y.point(i);
        let s = &sums[i];
        // P_i applied to 2S_i and to the unit vectors.
        let ys = dot(yi, s);
        let ps: Vec<f64> = (0..d).map(|a| 2.0 * (s[a] - yi[a] * ys)).collect();
        w[(0, 0)] += 2.0 * dot(s, &ps);
        for a in 0..d {
            w[(0, a + 1)] += ps[a];
            for b in 0..d {
                let pab = if a == b { 1.0 } else { 0.0 } - yi[a] * yi[b];
                w[(a + 1, b + 1)] += pab;
            }
        }
        dv[0] += 2.0 * dm1 * ys;
        for a in 0..d {
            dv[a + 1] += dm1 * yi[a];
        }
    }
    for a in 1..=d {
        w[(a, 0)] = w[(0, a)];
    }
    let inv_n = 1.0 / n as f64;
    Ok((w.scale(inv_n), dv.into_iter().map(|v| v * inv_n).collect()))
}

/// `½ θᵀŴθ − θᵀd̂`.
pub fn quadratic_objective(w: &Matrix, dv: &[f64], theta: &[f64]) -> Result<f64> {
    Ok(0.5 * w.quad_form(theta)? - dot(theta, dv))
}

fn to_fit(theta: Vec<f64>, w: &Matrix, dv: &[f64]) -> Result<FitResult> {
    let d = theta.len() - 1;
    let objective = quadratic_objective(w, dv, &theta)?;
    Ok(FitResult {
        params: ParamVec::new(theta, AutoModelParams::names(d))?,
        objective,
        iterations: 0,
        converged: true,
        method: "closed-form",
        warnings: vec![],
    })
}

/// `θ̂ = Ŵ⁻¹ d̂`.
pub fn fit_vmf_auto(y: &SphereSample, graph: &NeighborGraph) -> Result<FitResult> {
    let (w, dv) = build_w_d(y, graph)?;
    let theta = solve_spd(&w, &dv).map_err(|e| match e {
        Error::Singular(m) => Error::Singular(format!("W matrix: {m}")),
        other => other,
    })?;
    to_fit(theta, &w, &dv)
}

/// β̂ with ξ pinned at 0.
pub fn restricted_fit_vmf(y: &SphereSample, graph: &NeighborGraph) -> Result<AutoModelParams> {
    let (w, dv) = build_w_d(y, graph)?;
    let idx: Vec<usize> = (1..w.rows()).collect();
    let beta = solve_spd(&w.select(&idx, &idx), &dv[1..])?;
    Ok(AutoModelParams { xi: 0.0, beta })
}

/// Per-site residual `h_i = P_i(2ξS_i + β) − (d−1) y_i`.
fn site_residuals(y: &SphereSample, sums: &[Vec<f64>], theta: &AutoModelParams) -> Vec<Vec<f64>> {
    let d = y.d();
    let dm1 = (d - 1) as f64;
    (0..y.n())
        .map(|i| {
            let yi = y.point(i);
            let a: Vec<f64> = (0..d).map(|j| 2.0 * theta.xi * sums[i][j] + theta.beta[j]).collect();
            let ya = dot(yi, &a);
            (0..d).map(|j| a[j] - yi[j] * ya - dm1 * yi[j]).collect()
        })
        .collect()
}

/// Variance of `√n (Ŵθ − d̂)` from site-ordered martingale differences.
///
/// Each neighbouring pair `k < i` contributes its centred cross terms at
/// the later site, so the summands are conditionally centred under
/// independence of sites and their sum equals `n (Ŵθ − d̂)`.
pub fn gradient_variance(y: &SphereSample, graph: &NeighborGraph, theta: &AutoModelParams) -> Result<Matrix> {
    check_pair(y, graph)?;
    let (n, d) = (y.n(), y.d());
    if theta.beta.len() != d {
        return invalid(format!("beta has {} entries for d = {d}", theta.beta.len()));
    }
    let sums = neighbor_sums(y, graph);
    let h = site_residuals(y, &sums, theta);
    let mut ybar = vec![0.0; d];
    for i in 0..n {
        for (a, b) in ybar.iter_mut().zip(y.point(i)) {
            *a += b / n as f64;
        }
    }
    let centred: Vec<Vec<f64>> = (0..n).map(|i| y.point(i).iter().zip(&ybar).map(|(a, b)| a - b).collect()).collect();
    let mut k = Matrix::zeros(d + 1, d + 1);
    let mut z = vec![0.0; d + 1];
    for i in 0..n {
        let nb = graph.neighbors(i);
        let mut first = 2.0 * nb.len() as f64 * dot(&ybar, &h[i]);
        for &kk in nb.iter().filter(|&&kk| kk < i) {
            first += 2.0 * (dot(&centred[kk], &h[i]) + dot(&centred[i], &h[kk]));
        }
        z[0] = first;
        z[1..].copy_from_slice(&h[i]);
        k.add_outer(&z, &z, 1.0);
    }
    Ok(k.scale(1.0 / n as f64))
}

/// Closed-form estimate with its asymptotic covariance `Ŵ⁻¹ K̂ Ŵ⁻¹`.
pub fn auto_model_covariance(y: &SphereSample, graph: &NeighborGraph) -> Result<(AutoModelParams, Matrix)> {
    let (w, dv) = build_w_d(y, graph)?;
    let theta = solve_spd(&w, &dv)?;
    let est = AutoModelParams::from_theta(&theta)?;
    let k = gradient_variance(y, graph, &est)?;
    let winv = sym_inverse(&w)?;
    let cov = winv.matmul(&k)?.matmul(&winv)?.symmetrize();
    Ok((est, cov))
}

/// Wald test of `ξ = 0` with `T_w = n ξ̂² / [Ŵ⁻¹ K̂ Ŵ⁻¹]₁₁`.
pub fn spatial_wald(y: &SphereSample, graph: &NeighborGraph) -> Result<TestOutcome> {
    let (est, cov) = auto_model_covariance(y, graph)?;
    let v = cov[(0, 0)];
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::DegenerateVariance(format!("variance of xi-hat is {v}")));
    }
    let statistic = y.n() as f64 * est.xi * est.xi / v;
    let p_value = ChiSquared::new(1.0).expect("df 1").sf(statistic);
    Ok(TestOutcome {
        statistic,
        reference: Reference::ChiSquare { df: 1 },
        p_value,
        notes: vec![],
    })
}

/// Conditional distribution of site `i` given all others.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub kappa: f64,
    pub mu: Vec<f64>,
    /// Set when `κ = 0`: the conditional is uniform and `mu` is `e₁`.
    pub uniform: bool,
}

/// Site `i` is vMF with natural parameter `β + 2ξ S_i`; each neighbouring
/// pair appears twice in the double sum of the joint density.
pub fn conditional_vmf_params(i: usize, y: &SphereSample, graph: &NeighborGraph, theta: &AutoModelParams) -> Result<Conditional> {
    check_pair(y, graph)?;
    if i >= y.n() {
        return invalid(format!("site {i} out of range"));
    }
    let d = y.d();
    let mut a = theta.beta.clone();
    for &k in graph.neighbors(i) {
        for (aj, yk) in a.iter_mut().zip(y.point(k)) {
            *aj += 2.0 * theta.xi * yk;
        }
    }
    let kappa = norm(&a);
    if kappa == 0.0 {
        let mut mu = vec![0.0; d];
        mu[0] = 1.0;
        return Ok(Conditional { kappa: 0.0, mu, uniform: true });
    }
    Ok(Conditional { kappa, mu: a.iter().map(|v| v / kappa).collect(), uniform: false })
}
