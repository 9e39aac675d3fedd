//! Euler-Lagrange inclusion for fixed-boundary problems.
//!
//! Given a candidate `u` and a zero-face selection `(0, w1, w2)` from the
//! per-cell hyperdifferentials, the check decides feasibility of
//!
//! ```text
//! (0, div(zeta)(c), zeta_c) in hypo_c + (0, w1_c, w2_c)    for every cell
//! ```
//!
//! over per-cell convex coefficients, with the discrete divergence the
//! negative adjoint of the cell gradient. Infeasibility is certified and
//! reported as a necessary-condition violation at the tested resolution.

use super::assembler::{Coupling, InclusionAssembler, VarGroup, VertexData};
use super::{Certificate, CheckError, ConstraintFamily, VariationalProblem, Verdict};
use crate::expr::VarSelector;
use crate::grid::{assemble_codifferential, CellSelection, DiscreteField, Side};
use crate::lp::LpOutcome;

pub fn check_unconstrained(
    problem: &VariationalProblem,
    u: &DiscreteField,
    hyper_sel: &CellSelection,
) -> Result<Certificate, CheckError> {
    if !matches!(
        problem.family,
        ConstraintFamily::None | ConstraintFamily::Isoperimetric { .. }
    ) {
        return Err(CheckError::Problem(
            "unconstrained check needs a fixed-boundary problem".into(),
        ));
    }
    problem.check_candidate(u)?;
    problem.check_boundary_data(u)?;
    let grid = &problem.grid;
    let m = problem.components();
    let func = assemble_codifferential(
        &problem.integrand,
        &problem.vocab,
        &VarSelector::u_xi(),
        grid,
        u,
    )?;
    let fixed_w = hyper_sel.require_zero_face(&func, Side::Hyper)?;
    let fixed: Vec<(Vec<f64>, Vec<f64>)> = fixed_w
        .into_iter()
        .map(|w| (w[..m].to_vec(), w[m..].to_vec()))
        .collect();
    let mut asm = InclusionAssembler::new(grid, m, 1.0, fixed);
    let verts: Vec<Vec<VertexData>> = func
        .cells
        .iter()
        .map(|cell| {
            cell.codiff
                .hypo()
                .vertices()
                .iter()
                .map(|p| VertexData {
                    a: p.a,
                    v1: p.v[..m].to_vec(),
                    v2: p.v[m..].to_vec(),
                })
                .collect()
        })
        .collect();
    asm.add_group(VarGroup {
        name: "mu".into(),
        coupling: Coupling::Convex,
        verts,
    });
    let built = asm.build();
    let outcome = built.lp.solve()?;
    let resolution = grid.cells_per_axis().to_vec();
    let cert = match &outcome {
        LpOutcome::Feasible { .. } => Certificate {
            verdict: Verdict::ConditionsHold,
            resolution,
            witness: built.witness(&asm, &outcome),
            farkas: None,
            lp: built.lp,
            notes: Vec::new(),
        },
        LpOutcome::Infeasible { farkas } => Certificate {
            verdict: Verdict::ConditionsFail,
            resolution,
            witness: None,
            farkas: Some(farkas.clone()),
            lp: built.lp,
            notes: vec![
                "necessary-condition violation at this resolution for the supplied hyper selection"
                    .into(),
            ],
        },
        LpOutcome::Unbounded { .. } => Certificate::inconclusive(
            "feasibility system reported unbounded".into(),
            built.lp,
            resolution,
        ),
    };
    Ok(cert)
}

/// Enumerates region-constant hyper-selection candidates: all constant
/// single-vertex patterns first, then seeded random per-cell patterns up
/// to `bound` selections total.
pub fn enumerate_hyper_selections(
    func: &crate::grid::DiscreteFunctional,
    bound: usize,
    seed: u64,
) -> Vec<CellSelection> {
    use rand::{Rng, SeedableRng};
    let max_verts = func
        .cells
        .iter()
        .map(|c| c.codiff.hyper().vertices().len())
        .max()
        .unwrap_or(1);
    let mut out = Vec::new();
    for v in 0..max_verts {
        let idx: Vec<usize> = func
            .cells
            .iter()
            .map(|c| v.min(c.codiff.hyper().vertices().len() - 1))
            .collect();
        if let Ok(sel) = CellSelection::from_vertex_indices(func, Side::Hyper, &idx) {
            out.push(sel);
            if out.len() >= bound {
                return out;
            }
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    while out.len() < bound {
        let idx: Vec<usize> = func
            .cells
            .iter()
            .map(|c| rng.gen_range(0..c.codiff.hyper().vertices().len()))
            .collect();
        match CellSelection::from_vertex_indices(func, Side::Hyper, &idx) {
            Ok(sel) => out.push(sel),
            Err(_) => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expr, Vocabulary};
    use crate::grid::{DiscreteField, Grid, RegionPattern, VertexPick};

    fn problem_1d(expr: &str, n: usize, boundary: impl Fn(f64) -> f64) -> VariationalProblem {
        let vocab = Vocabulary::Integrand { d: 1, m: 1 };
        let grid = Grid::interval(0.0, 1.0, n).unwrap();
        let mut b = DiscreteField::zeros(&grid, 1);
        for node in 0..grid.num_nodes() {
            b.set(0, node, boundary(grid.node_coord(node)[0]));
        }
        VariationalProblem {
            vocab,
            integrand: Expr::parse(expr, &vocab).unwrap(),
            grid,
            boundary: b,
            family: ConstraintFamily::None,
        }
    }

    fn trivial_hyper(p: &VariationalProblem, u: &DiscreteField) -> CellSelection {
        let func = assemble_codifferential(
            &p.integrand,
            &p.vocab,
            &VarSelector::u_xi(),
            &p.grid,
            u,
        )
        .unwrap();
        CellSelection::from_vertex_indices(&func, Side::Hyper, &vec![0; p.grid.num_cells()])
            .unwrap()
    }

    #[test]
    fn dirichlet_linear_minimizer_holds() {
        let p = problem_1d("0.5*xi1^2", 16, |x| x);
        let u = p.boundary.clone();
        let sel = trivial_hyper(&p, &u);
        let cert = check_unconstrained(&p, &u, &sel).unwrap();
        assert_eq!(cert.verdict, Verdict::ConditionsHold);
        let w = cert.witness.unwrap();
        for cell in 0..p.grid.num_cells() {
            assert!((w.zeta[cell] - 1.0).abs() < 1e-9, "zeta should be f_xi = 1");
        }
        for node in 0..p.grid.num_nodes() {
            assert!(w.div_zeta[node].abs() < 1e-9);
        }
    }

    #[test]
    fn l1_norm_at_zero_holds_with_zero_flux() {
        let p = problem_1d("abs(u1)", 16, |_| 0.0);
        let u = DiscreteField::zeros(&p.grid, 1);
        let sel = trivial_hyper(&p, &u);
        let cert = check_unconstrained(&p, &u, &sel).unwrap();
        assert_eq!(cert.verdict, Verdict::ConditionsHold);
        let w = cert.witness.unwrap();
        assert!(w.zeta.iter().all(|z| z.abs() < 1e-9));
    }

    #[test]
    fn anisotropic_example_fails_with_alternating_selection() {
        // f = |d1 u| - |d2 u| on the square, u = 0: the alternating-band
        // hyper selection makes the inclusion infeasible.
        let vocab = Vocabulary::Integrand { d: 2, m: 1 };
        let grid = Grid::rectangle((-1.0, 1.0), (-1.0, 1.0), 16, 16).unwrap();
        let p = VariationalProblem {
            vocab,
            integrand: Expr::parse("abs(xi1) - abs(xi2)", &vocab).unwrap(),
            grid,
            boundary: DiscreteField::zeros(&Grid::rectangle((-1.0, 1.0), (-1.0, 1.0), 16, 16).unwrap(), 1),
            family: ConstraintFamily::None,
        };
        let u = DiscreteField::zeros(&p.grid, 1);
        let func = assemble_codifferential(
            &p.integrand,
            &p.vocab,
            &VarSelector::u_xi(),
            &p.grid,
            &u,
        )
        .unwrap();
        // w2 = (0, w_1(x2)) with w_1 the alternating unit step of period 1.
        let pattern = RegionPattern {
            axis: 1,
            breaks: vec![-0.5, 0.0, 0.5],
            picks: vec![
                VertexPick::Nearest(vec![0.0, 0.0, 1.0]),
                VertexPick::Nearest(vec![0.0, 0.0, -1.0]),
                VertexPick::Nearest(vec![0.0, 0.0, 1.0]),
                VertexPick::Nearest(vec![0.0, 0.0, -1.0]),
            ],
        };
        let sel = CellSelection::from_pattern(&func, Side::Hyper, &p.grid, &pattern).unwrap();
        let cert = check_unconstrained(&p, &u, &sel).unwrap();
        assert_eq!(cert.verdict, Verdict::ConditionsFail);
        let farkas = cert.farkas.unwrap();
        cert.lp.validate_farkas(&farkas, crate::lp::TOL_LP).unwrap();
        // The constant selection, by contrast, admits zeta = 0.
        let uniform = CellSelection::from_pattern(
            &func,
            Side::Hyper,
            &p.grid,
            &RegionPattern::uniform(VertexPick::Nearest(vec![0.0, 0.0, 1.0])),
        )
        .unwrap();
        let cert = check_unconstrained(&p, &u, &uniform).unwrap();
        assert_eq!(cert.verdict, Verdict::ConditionsHold);
    }

    #[test]
    fn scaling_never_flips_the_verdict() {
        let p = problem_1d("0.5*xi1^2 + abs(u1)", 12, |x| x * (1.0 - x) * 0.0);
        let u = DiscreteField::zeros(&p.grid, 1);
        let sel = trivial_hyper(&p, &u);
        let base = check_unconstrained(&p, &u, &sel).unwrap();
        let scaled_p = VariationalProblem {
            integrand: Expr::parse(
                "3.0*(0.5*xi1^2 + abs(u1))",
                &p.vocab,
            )
            .unwrap(),
            ..p.clone()
        };
        let sel3 = trivial_hyper(&scaled_p, &u);
        let scaled = check_unconstrained(&scaled_p, &u, &sel3).unwrap();
        assert_eq!(base.verdict, scaled.verdict);
        // The scaled witness flux is the scaled flux.
        let wz = base.witness.unwrap().zeta;
        let wz3 = scaled.witness.unwrap().zeta;
        for (a, b) in wz.iter().zip(&wz3) {
            assert!((3.0 * a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn mesh_refinement_keeps_verdicts() {
        for n in [8, 16] {
            let p = problem_1d("0.5*xi1^2", n, |x| x);
            let u = p.boundary.clone();
            let sel = trivial_hyper(&p, &u);
            let cert = check_unconstrained(&p, &u, &sel).unwrap();
            assert_eq!(cert.verdict, Verdict::ConditionsHold);
        }
    }
}
