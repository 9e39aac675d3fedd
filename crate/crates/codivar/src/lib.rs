//! Nonsmooth calculus-of-variations toolkit built on polytopal codifferentials.
//!
//! A codifferential is a pair of convex polytopes `[hypo, hyper]` in
//! `R x R^n` whose support functions give a convex-plus-concave first-order
//! model of a nonsmooth function: `f(x + dx) - f(x) ~ Phi(dx) + Psi(dx)`
//! with `Phi` a max of affine pieces and `Psi` a min of affine pieces.
//! The crate propagates such pairs through expression trees, assembles them
//! cellwise for discretized integral functionals on interval and rectangle
//! grids, and reduces the nonsmooth Euler-Lagrange, transversality,
//! isoperimetric, nonholonomic and Noether-type necessary conditions to
//! linear-programming feasibility with re-validated witnesses and Farkas
//! infeasibility certificates.
//!
//! Module map:
//! - [`codiff`]: polytopes, codifferential arithmetic, quasidifferential
//!   extraction, Hausdorff distance.
//! - [`expr`]: integrand expression DSL with pointwise codifferential
//!   propagation.
//! - [`grid`]: structured 1D/2D grids, discrete gradient/divergence pair,
//!   functional assembly.
//! - [`lp`]: dense two-phase simplex with certified outcomes.
//! - [`optimality`]: necessary-condition checkers returning certificates.
//! - [`descent`]: trust-region codifferential descent for unconstrained
//!   discrete problems.
//! - [`noether`]: inner-variation (Noether) inclusion and the 1D
//!   conservation-of-energy check.

pub mod codiff;
pub mod expr;
pub mod grid;
mod linalg;
pub mod lp;
pub mod optimality;

pub use codiff::{AffinePiece, Codifferential, Polytope, Quasidifferential};
pub use expr::{Expr, ParseError, VarSelector, Vocabulary};
pub use grid::{CellSelection, DiscreteField, DiscreteFunctional, Grid};
pub use lp::{FarkasCertificate, LinearProgram, LpOutcome};
pub use optimality::{Certificate, ConstraintFamily, VariationalProblem, Verdict};
