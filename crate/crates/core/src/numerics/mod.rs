//! Reverse-mode autodiff, Gaussian special functions, and bracketed root
//! finding.

pub mod autodiff;
pub mod gradcheck;
pub mod roots;
pub mod special;

pub use autodiff::{compute_gradients, concat_cols, DiffScalar, Tape, Tensor, Var};
pub use gradcheck::{finite_difference_check, GradCheck};
pub use roots::{bisection, chandrupatla, secant, Bracket, Root, Solver};
pub use special::{std_normal_cdf, std_normal_quantile, QUANTILE_EPS};
