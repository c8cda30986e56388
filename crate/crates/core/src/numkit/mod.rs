//! Dense numerical kernel shared by the model fitters.

mod linalg;
mod matrix;
mod optim;

pub use linalg::{
    back_sub_transpose, cholesky, duplication_matrix, inverse, solve_spd, sym_apply, sym_eigen,
    sym_inverse, sym_sqrt,
};
pub use matrix::{dot, norm, Matrix};
pub use optim::{
    ensure_finite, fd_gradient, fd_hessian, fd_jacobian, nelder_mead_minimize, newton_minimize,
    MinResult, DEFAULT_FD_STEP,
};
