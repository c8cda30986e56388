use super::linalg::{solve_spd, sym_eigen};
use super::matrix::Matrix;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Outcome of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct MinResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex minimization.
///
/// Stops once both the spread of simplex values and the simplex diameter
/// (max infinity-norm distance to the best vertex) are below `tol`, then
/// restarts from a fresh simplex around the best vertex until a restart no
/// longer improves the value by more than `tol`. Non-finite values away from
/// `x0` are treated as `+∞`.
pub fn nelder_mead_minimize<F>(mut f: F, x0: &[f64], tol: f64, max_iter: usize) -> Result<MinResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(tol > 0.0) {
        return invalid("nelder_mead: tol must be positive");
    }
    let n = x0.len();
    let f0 = f(x0);
    if !f0.is_finite() {
        return invalid(format!("nelder_mead: objective is {f0} at the initial point"));
    }
    if n == 0 {
        return Ok(MinResult { argmin: vec![], value: f0, iterations: 0, converged: true });
    }
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut best = MinResult { argmin: x0.to_vec(), value: f0, iterations: 0, converged: false };
    for _ in 0..MAX_RESTARTS {
        let r = simplex_run(&mut eval, &best.argmin, best.value, tol, max_iter - best.iterations.min(max_iter));
        let gain = best.value - r.value;
        let iterations = best.iterations + r.iterations;
        let first = best.iterations == 0;
        if r.value <= best.value {
            best = MinResult { iterations, ..r };
        } else {
            best.iterations = iterations;
            best.converged = r.converged;
        }
        if !best.converged || (!first && gain <= tol) || best.iterations >= max_iter {
            break;
        }
    }
    Ok(best)
}

const MAX_RESTARTS: usize = 50;

fn simplex_run(eval: &mut impl FnMut(&[f64]) -> f64, x0: &[f64], f0: f64, tol: f64, max_iter: usize) -> MinResult {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    values.push(f0);
    for j in 0..n {
        let mut x = x0.to_vec();
        x[j] += (0.05 * x0[j].abs()).max(0.00025);
        values.push(eval(&x));
        simplex.push(x);
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0_f64, f64::max);
        if spread.abs() < tol && diameter < tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(alpha * gamma);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(alpha * rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            let x: Vec<f64> = best.iter().zip(&simplex[i]).map(|(b, v)| b + sigma * (v - b)).collect();
            values[i] = eval(&x);
            simplex[i] = x;
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    MinResult { argmin: simplex[best].clone(), value: values[best], iterations, converged }
}

fn fd_step(h: f64, xj: f64) -> f64 {
    h * xj.abs().max(1.0)
}

/// Central-difference gradient with per-coordinate step `h · max(1, |x_j|)`.
pub fn fd_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return invalid("fd_gradient: h must be positive");
    }
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let hj = fd_step(h, x[j]);
        xp[j] = x[j] + hj;
        let fp = f(&xp);
        xp[j] = x[j] - hj;
        let fm = f(&xp);
        xp[j] = x[j];
        if !fp.is_finite() || !fm.is_finite() {
            return invalid(format!("fd_gradient: non-finite evaluation along coordinate {j}"));
        }
        g.push((fp - fm) / (2.0 * hj));
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector function.
pub fn fd_jacobian<F>(mut f: F, x: &[f64], h: f64) -> Result<Matrix>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return invalid("fd_jacobian: h must be positive");
    }
    let m = f(x)?.len();
    let mut jac = Matrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let hj = fd_step(h, x[j]);
        xp[j] = x[j] + hj;
        let fp = f(&xp)?;
        xp[j] = x[j] - hj;
        let fm = f(&xp)?;
        xp[j] = x[j];
        for i in 0..m {
            let v = (fp[i] - fm[i]) / (2.0 * hj);
            if !v.is_finite() {
                return invalid(format!("fd_jacobian: non-finite evaluation along coordinate {j}"));
            }
            jac[(i, j)] = v;
        }
    }
    Ok(jac)
}

/// Second derivatives of a scalar function by nested central differences.
pub fn fd_hessian<F>(mut f: F, x: &[f64], h: f64) -> Result<Matrix>
where
    F: FnMut(&[f64]) -> f64,
{
    let jac = fd_jacobian(|y| fd_gradient(&mut f, y, h), x, h.max(1e-4))?;
    Ok(jac.symmetrize())
}

/// Damped Newton iteration for a smooth objective with analytic derivatives.
///
/// `f` returns the value alone and `fgh` value, gradient and Hessian. Steps
/// use the Hessian when it is positive definite and a shifted Hessian
/// otherwise, halved until the Armijo condition holds. Converges when the
/// gradient infinity-norm drops below `gtol` or, with a positive-definite
/// Hessian, the Newton decrement `−gᵀs` falls to `1e-13 (1 + |f|)`, the
/// rounding floor of the objective.
pub fn newton_minimize<F, G>(mut f: F, mut fgh: G, x0: &[f64], gtol: f64, max_iter: usize) -> Result<MinResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
    G: FnMut(&[f64]) -> Result<(f64, Vec<f64>, Matrix)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g, mut h) = fgh(&x)?;
    if !fx.is_finite() {
        return invalid("newton: objective is not finite at the initial point");
    }
    let mut iterations = 0;
    loop {
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax < gtol {
            return Ok(MinResult { argmin: x, value: fx, iterations, converged: true });
        }
        if iterations >= max_iter {
            return Ok(MinResult { argmin: x, value: fx, iterations, converged: false });
        }
        iterations += 1;

        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let hs = h.symmetrize();
        let (step, pd) = match solve_spd(&hs, &neg_g) {
            Ok(s) => (s, true),
            Err(_) => {
                let (vals, _) = sym_eigen(&hs)?;
                let shift = (-vals[n - 1]).max(0.0) + 1e-6 * vals[0].abs().max(1.0);
                (solve_spd(&hs.add(&Matrix::identity(n).scale(shift))?, &neg_g)?, false)
            }
        };
        let decrement = -super::matrix::dot(&g, &step);
        if pd && decrement <= 1e-13 * (1.0 + fx.abs()) {
            let (x, fx, _) = polish(&mut fgh, x, fx, gmax, &step);
            return Ok(MinResult { argmin: x, value: fx, iterations, converged: true });
        }
        let slope = super::matrix::dot(&g, &step).min(0.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            if let Ok(ft) = f(&trial) {
                if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(trial) => {
                (fx, g, h) = fgh(&trial)?;
                x = trial;
            }
            None => {
                let (x, fx, gmax) = if pd { polish(&mut fgh, x, fx, gmax, &step) } else { (x, fx, gmax) };
                let converged = pd && gmax < 1e3 * gtol;
                return Ok(MinResult { argmin: x, value: fx, iterations, converged });
            }
        }
    }
}

/// Full Newton step near the optimum, where the objective is flat to
/// roundoff and the line search cannot see progress. Kept only if it shrinks
/// the gradient.
fn polish<G>(fgh: &mut G, x: Vec<f64>, fx: f64, gmax: f64, step: &[f64]) -> (Vec<f64>, f64, f64)
where
    G: FnMut(&[f64]) -> Result<(f64, Vec<f64>, Matrix)>,
{
    let trial: Vec<f64> = x.iter().zip(step).map(|(a, s)| a + s).collect();
    match fgh(&trial) {
        Ok((ft, gt, _)) if ft.is_finite() && ft <= fx + 1e-12 * (1.0 + fx.abs()) => {
            let gt_max = gt.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if gt_max < gmax {
                (trial, ft, gt_max)
            } else {
                (x, fx, gmax)
            }
        }
        _ => (x, fx, gmax),
    }
}

/// Checks that every entry of a vector is finite.
pub fn ensure_finite(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what}[{i}] = {}", v[i]))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nm_one_dimensional() {
        let r = nelder_mead_minimize(|x| (x[0] - 1.0).powi(2), &[5.0], 1e-10, 10_000).unwrap();
        assert!(r.converged);
        assert!((r.argmin[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn nm_rosenbrock() {
        let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = nelder_mead_minimize(rosen, &[-1.2, 1.0], 1e-10, 20_000).unwrap();
        assert!(r.converged);
        assert!((r.argmin[0] - 1.0).abs() < 1e-4 && (r.argmin[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn nm_rejects_bad_start() {
        assert!(nelder_mead_minimize(|_| f64::NAN, &[0.0], 1e-8, 10).is_err());
        assert!(nelder_mead_minimize(|x| x[0], &[0.0], 0.0, 10).is_err());
    }

    #[test]
    fn fd_examples() {
        let g = fd_gradient(|x| x[0] * x[0], &[1.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        let g = fd_gradient(|x| x[0].sin(), &[0.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8);
        assert_eq!(fd_gradient(|_| 3.0, &[1.0, 2.0], 1e-5).unwrap(), vec![0.0, 0.0]);
        assert!(fd_gradient(|x| x[0].ln(), &[0.0], 1e-5).is_err());
    }

    #[test]
    fn newton_quadratic_one_step() {
        let q = Matrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let b = [1.0, -1.0];
        let value = |x: &[f64]| {
            let qx = q.matvec(x)?;
            Ok(0.5 * super::super::matrix::dot(x, &qx) - super::super::matrix::dot(&b, x))
        };
        let r = newton_minimize(
            value,
            |x| {
                let qx = q.matvec(x)?;
                let v = 0.5 * super::super::matrix::dot(x, &qx) - super::super::matrix::dot(&b, x);
                let g = qx.iter().zip(&b).map(|(a, c)| a - c).collect();
                Ok((v, g, q.clone()))
            },
            &[10.0, 10.0],
            1e-12,
            10,
        )
        .unwrap();
        assert!(r.converged && r.iterations <= 2);
        let expect = solve_spd(&q, &b).unwrap();
        assert!((r.argmin[0] - expect[0]).abs() < 1e-12);
    }
}
