use super::matrix::Matrix;
use crate::error::{invalid, Error, Result};

const SYM_TOL: f64 = 1e-10;
const NEG_EIG_TOL: f64 = 1e-10;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Eigenvalues are returned in descending order; column `k` of the second
/// matrix is the eigenvector for `values[k]`.
pub fn sym_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !m.is_square() {
        return invalid(format!("sym_eigen needs a square matrix, got {}x{}", m.rows(), m.cols()));
    }
    if !m.is_symmetric(SYM_TOL) {
        return invalid(format!("sym_eigen input is not symmetric (asymmetry {:e})", m.max_asymmetry()));
    }
    let n = m.rows();
    let mut a = m.symmetrize();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok((values, vectors))
}

/// `V diag(f(λ)) Vᵀ` for a symmetric matrix.
pub fn sym_apply(values: &[f64], vectors: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let n = values.len();
    let mut out = Matrix::zeros(n, n);
    for (k, &lam) in values.iter().enumerate() {
        let fl = f(lam);
        if fl == 0.0 {
            continue;
        }
        let col = vectors.col_vec(k);
        out.add_outer(&col, &col, fl);
    }
    out.symmetrize()
}

/// Symmetric positive semi-definite square root.
///
/// Eigenvalues down to `-1e-10 · max(1, λ_max)` are clamped to zero.
pub fn sym_sqrt(m: &Matrix) -> Result<Matrix> {
    let (values, vectors) = sym_eigen(m)?;
    let top = values.first().copied().unwrap_or(0.0).abs().max(1.0);
    if let Some(&min) = values.last() {
        if min < -NEG_EIG_TOL * top {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
    }
    Ok(sym_apply(&values, &vectors, |l| l.max(0.0).sqrt()))
}

/// Duplication matrix `D_p` with `D_p · vech(S) = vec(S)` for symmetric `S`.
pub fn duplication_matrix(p: usize) -> Result<Matrix> {
    if p == 0 {
        return invalid("duplication matrix needs p >= 1");
    }
    let mut d = Matrix::zeros(p * p, p * (p + 1) / 2);
    let mut k = 0;
    for j in 0..p {
        for i in j..p {
            d[(j * p + i, k)] = 1.0;
            d[(i * p + j, k)] = 1.0;
            k += 1;
        }
    }
    Ok(d)
}

/// Lower Cholesky factor `L` with `L Lᵀ = M`.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return invalid("cholesky needs a square matrix");
    }
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::Singular(format!("cholesky pivot {j} is {diag:e}")));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

fn forward_sub(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `Lᵀ x = y` for lower-triangular `L`.
pub fn back_sub_transpose(l: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `M x = b` for symmetric positive definite `M`.
pub fn solve_spd(m: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if m.rows() != b.len() {
        return invalid(format!("solve_spd: matrix has {} rows, rhs has {}", m.rows(), b.len()));
    }
    if !m.is_symmetric(SYM_TOL) {
        return invalid("solve_spd: matrix is not symmetric");
    }
    let l = cholesky(m)?;
    Ok(back_sub_transpose(&l, &forward_sub(&l, b)))
}

/// General inverse by LU decomposition with partial pivoting.
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return invalid("inverse needs a square matrix");
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        if a[(pivot, col)].abs() <= 1e-14 * scale {
            return Err(Error::Singular(format!("pivot {col} vanishes")));
        }
        if pivot != col {
            for k in 0..n {
                let t = a[(col, k)];
                a[(col, k)] = a[(pivot, k)];
                a[(pivot, k)] = t;
                let t = inv[(col, k)];
                inv[(col, k)] = inv[(pivot, k)];
                inv[(pivot, k)] = t;
            }
        }
        let d = a[(col, col)];
        for k in 0..n {
            a[(col, k)] /= d;
            inv[(col, k)] /= d;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[(i, col)];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                a[(i, k)] -= f * a[(col, k)];
                inv[(i, k)] -= f * inv[(col, k)];
            }
        }
    }
    Ok(inv)
}

/// Inverse of a symmetric matrix, symmetrized on output.
pub fn sym_inverse(m: &Matrix) -> Result<Matrix> {
    Ok(inverse(m)?.symmetrize())
}
