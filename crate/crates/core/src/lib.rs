//! Boundary-element solver for a nonlinear transmission problem of the
//! Laplace equation in a planar domain with a perturbable inclusion.
//!
//! The solution pair `(u^o, u^i)` is represented by single layer potentials
//! plus constants. The resulting boundary integral system is discretized by
//! a Nyström method (spectrally accurate on smooth curves) and solved by
//! Picard and Newton iteration. [`shape`] follows the solution along a
//! one-parameter family of inclusion shapes.

// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting branch, and
// index loops read more clearly than iterator chains in the dense kernels.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::large_enum_variant,
    clippy::result_large_err
)]

pub mod error;
pub mod expr;
pub mod geometry;
pub mod linalg;
pub mod nonlinear;
pub mod operators;
pub mod oracle;
pub mod potential;
pub mod shape;
pub mod study;

pub use error::{Error, Result};
pub use expr::{parse_expression, Expr, ParseError};
pub use geometry::{
    discretize, sigma_tilde, validate_shape, Curve, DiscreteBoundary, Displacement,
    ParametricCurve, Point, ShapeMap, ShapeReport,
};
pub use nonlinear::{
    boundary_residuals, check_growth, linearization_matrix, nemytskii_apply, picard_step,
    reconstruct_solution, solve_system, solve_unperturbed, HarmonicPair, Method, NonlinearSystem,
    PicardMatrix, SolveFailure, SolveOutput, SolverOptions, TransmissionData,
};
pub use operators::{
    assemble_ja, check_a_conditions, solve_ja, AdmissibilityReport, BlockOperator, DensitySet,
    InterfaceOperators, MatrixField,
};
pub use oracle::{
    concentric_linear_solve, manufactured_affine_case, mean_value_check, FourierSeries,
};
pub use potential::{
    apply_wstar, eval_single_layer, fundamental_solution, grad_single_layer, normal_derivative,
    trace_v, Side,
};
pub use shape::{
    continue_branch, smoothness_probe, BranchPoint, ContinuationOptions, Probes, ShapeFamily,
    ShapeProblem, SmoothnessReport,
};
