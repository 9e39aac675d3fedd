//! Necessary-condition checkers for discretized variational problems.
//!
//! Every checker reduces its inclusion to linear-programming feasibility
//! over per-cell convex coefficients (the discrete measurable selections),
//! multiplier variables, and an implied cell flux `zeta`. A feasible LP
//! yields `ConditionsHold` with a re-validated witness; an infeasible LP
//! yields `ConditionsFail` with a Farkas certificate, which is evidence of
//! non-optimality at the tested resolution. Hyper-side selections are
//! caller-supplied: the underlying conditions quantify over all selections,
//! so a single violating selection refutes optimality, and the interesting
//! refutations are constructed selections.
//!
//! Checkers are pure functions of `(problem, field, selections)`; distinct
//! checks may run concurrently, each builds a private LP.

mod assembler;
mod boundary;
mod isoperimetric;
mod nonholonomic;
mod unconstrained;

pub use boundary::{check_boundary, check_cq_boundary, BoundaryPicks, CqCheck, CqReport};
pub use isoperimetric::{check_isoperimetric, check_isoperimetric_cq};
pub use nonholonomic::{
    check_nonholonomic_regular, convexify_nonholonomic, min_multiplier_mass, ConvexifiedProblem,
    MassReport, PiecewiseLinear,
};
pub use unconstrained::{check_unconstrained, enumerate_hyper_selections};

use crate::expr::{EvalError, Expr, Vocabulary};
use crate::grid::{CellSelection, DiscreteField, Grid, GridError};
use crate::lp::{FarkasCertificate, LinearProgram, LpError};
use thiserror::Error;

/// Active-set tolerance for constraint activity and complementarity.
pub const TOL_ACTIVE: f64 = 1e-8;
/// Complementarity slack allowed in witness validation.
pub const TOL_COMP: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("problem: {0}")]
    Problem(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Codiff(#[from] crate::codiff::CodiffError),
}

/// The constraint structure attached to a problem; exactly one family per
/// instance.
#[derive(Debug, Clone)]
pub enum ConstraintFamily {
    /// Fixed boundary values, no further constraints.
    None,
    /// Endpoint cost `g0(u(a), u(b))` plus inequality and equality
    /// constraints on the endpoint values (1D only).
    Boundary {
        g0: Option<Expr>,
        inequalities: Vec<Expr>,
        equalities: Vec<Expr>,
    },
    /// Integral constraints `I_i(u) <= theta_i`.
    Isoperimetric { integrands: Vec<Expr>, levels: Vec<f64> },
    /// Pointwise constraints `g_i(x, u, grad u) <= 0`.
    Nonholonomic { constraints: Vec<Expr> },
}

/// A discretized variational problem: integrand, grid, boundary data and
/// one constraint family.
#[derive(Debug, Clone)]
pub struct VariationalProblem {
    pub vocab: Vocabulary,
    pub integrand: Expr,
    pub grid: Grid,
    pub boundary: DiscreteField,
    pub family: ConstraintFamily,
}

impl VariationalProblem {
    pub fn components(&self) -> usize {
        match self.vocab {
            Vocabulary::Integrand { m, .. } => m,
            Vocabulary::Boundary { m } => m,
        }
    }

    pub(crate) fn check_candidate(&self, u: &DiscreteField) -> Result<(), CheckError> {
        if u.components() != self.components() || u.num_nodes() != self.grid.num_nodes() {
            return Err(CheckError::Problem(
                "candidate field does not match the problem grid".into(),
            ));
        }
        Ok(())
    }

    /// For fixed-boundary families the candidate must agree with the
    /// boundary data on boundary nodes.
    pub(crate) fn check_boundary_data(&self, u: &DiscreteField) -> Result<(), CheckError> {
        for node in 0..self.grid.num_nodes() {
            if self.grid.is_boundary(node) {
                for comp in 0..self.components() {
                    let expect = self.boundary.get(comp, node);
                    if (u.get(comp, node) - expect).abs() > 1e-12 * 1.0f64.max(expect.abs()) {
                        return Err(CheckError::Problem(format!(
                            "candidate violates boundary data at node {node}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    ConditionsHold,
    ConditionsFail,
    Inconclusive(String),
}

/// Re-validated witness of a feasible inclusion system.
#[derive(Debug, Clone, Default)]
pub struct Witness {
    /// Cell flux, laid out `cell * (p*d) + row * d + axis` with `p` the
    /// middle-block dimension (`m` for Euler-Lagrange, `d` for the inner
    /// variation checks).
    pub zeta: Vec<f64>,
    /// Its discrete divergence (component-major nodal values).
    pub div_zeta: Vec<f64>,
    /// Nodal flux for the 1D boundary-constrained checker.
    pub zeta_nodal: Vec<f64>,
    /// Family-specific multipliers, in the order documented per checker.
    pub multipliers: Vec<f64>,
    /// Recovered hypo-side selections, one per variable group.
    pub selections: Vec<CellSelection>,
}

/// Outcome of one necessary-condition check.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub verdict: Verdict,
    /// Cells per axis of the grid the check ran on.
    pub resolution: Vec<usize>,
    pub witness: Option<Witness>,
    pub farkas: Option<FarkasCertificate>,
    /// The assembled feasibility system, with labeled rows and variables.
    pub lp: LinearProgram,
    pub notes: Vec<String>,
}

impl Certificate {
    pub(crate) fn inconclusive(reason: String, lp: LinearProgram, resolution: Vec<usize>) -> Self {
        Certificate {
            verdict: Verdict::Inconclusive(reason),
            resolution,
            witness: None,
            farkas: None,
            lp,
            notes: Vec::new(),
        }
    }

    /// Structured text serialization: verdict, witness vectors, Farkas
    /// vector and LP statistics.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let verdict = match &self.verdict {
            Verdict::ConditionsHold => "ConditionsHold".to_string(),
            Verdict::ConditionsFail => "ConditionsFail".to_string(),
            Verdict::Inconclusive(r) => format!("Inconclusive: {r}"),
        };
        out.push_str("certificate v1\n");
        out.push_str(&format!("verdict {verdict}\n"));
        let res: Vec<String> = self.resolution.iter().map(|n| n.to_string()).collect();
        out.push_str(&format!("resolution {}\n", res.join("x")));
        out.push_str(&format!(
            "lp vars {} eq {} le {}\n",
            self.lp.num_vars,
            self.lp.a_eq.len(),
            self.lp.a_le.len()
        ));
        if let Some(w) = &self.witness {
            let fmt = |name: &str, data: &[f64]| -> String {
                let items: Vec<String> = data.iter().map(|v| format!("{v:e}")).collect();
                format!("{name} {}\n", items.join(" "))
            };
            if !w.zeta.is_empty() {
                out.push_str(&fmt("zeta", &w.zeta));
                out.push_str(&fmt("div_zeta", &w.div_zeta));
            }
            if !w.zeta_nodal.is_empty() {
                out.push_str(&fmt("zeta_nodal", &w.zeta_nodal));
            }
            if !w.multipliers.is_empty() {
                out.push_str(&fmt("multipliers", &w.multipliers));
            }
        }
        if let Some(f) = &self.farkas {
            let items: Vec<String> = f
                .y_eq
                .iter()
                .map(|v| format!("{v:e}"))
                .chain(f.y_le.iter().map(|v| format!("{v:e}")))
                .collect();
            out.push_str(&format!("farkas {}\n", items.join(" ")));
        }
        for n in &self.notes {
            out.push_str(&format!("note {n}\n"));
        }
        out.push_str("end\n");
        out
    }
}

/// Evaluates a constraint expression at every cell point of `u`.
pub(crate) fn cell_values(
    expr: &Expr,
    vocab: &Vocabulary,
    grid: &Grid,
    u: &DiscreteField,
) -> Result<Vec<f64>, CheckError> {
    match *vocab {
        Vocabulary::Integrand { d, m } if d == grid.dim() && m == u.components() => {}
        _ => {
            return Err(CheckError::Problem(
                "integrand vocabulary does not match grid and field".into(),
            ))
        }
    }
    let m = u.components();
    let d = grid.dim();
    let grads = crate::grid::gradient(grid, u);
    let avgs = crate::grid::cell_average(grid, u);
    let mut out = Vec::with_capacity(grid.num_cells());
    for cell in 0..grid.num_cells() {
        let x = grid.cell_center(cell);
        let uu = &avgs[cell * m..(cell + 1) * m];
        let xi = &grads[cell * m * d..(cell + 1) * m * d];
        out.push(expr.eval(&[&x, uu, xi])?);
    }
    Ok(out)
}
