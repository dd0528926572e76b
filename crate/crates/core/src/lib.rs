//! Numerical verification of many-function Hanner inequalities with
//! coefficients uniform on Euclidean spheres.
//!
//! The inequality `E||sum xi_k f_k||_p^p <= E|sum xi_k ||f_k||_p|^p` (reversed
//! for `1 <= p <= 2`, `d >= 3`) is equivalent to concavity (convexity) of
//! `phi_n(x) = E|sum x_k^{1/p} xi_k|^p` on the positive orthant. This crate
//! evaluates `phi_n`, its analytic Hessian and the cross expectations
//! `E_{k,l}` that control its sign, checks the inequalities directly on step
//! functions, and sweeps parameter grids.

// NaN-rejecting `!(x > 0.0)` guards and index loops over small matrices are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod distributions;
pub mod error;
pub mod explorer;
pub mod hanner;
pub mod hessian;
pub mod integrate;
pub mod numeric;
pub mod phi;
pub mod selftest;
pub mod specfun;

pub use distributions::{ProjectionDist, RandomStream, SphereDist};
pub use error::{HannerError, Result};
pub use explorer::{SignMap, SweepConfig, SweepReport};
pub use hanner::{CheckRecord, CheckVerdict, StepFunction};
pub use hessian::{Direction, HessianReport, Matrix, Verdict};
pub use integrate::{EstimateWithError, QuadratureRule, SampleLaw};
pub use phi::{HannerPoint, PhiEvaluator};
pub use specfun::PExponent;
