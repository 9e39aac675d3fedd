//! Pointwise inequality constraints: local convexification, regular
//! multipliers, and the minimum-multiplier-mass lower bound.
//!
//! [`convexify_nonholonomic`] materializes the convex model attached to a
//! candidate and a set of hyper selections: the objective becomes a
//! cellwise max-affine functional of the variation and every constraint
//! `g_i` a quasilinear cellwise function `phi_i` with `phi_i(., 0, 0) =
//! g_i(., u, grad u) <= 0`. The qualification report evaluates
//! `max_c phi_i(x_c, h*, grad h*)` for a user-supplied interior field.
//!
//! [`check_nonholonomic_regular`] decides whether nonnegative cell
//! densities `lambda_i` (vanishing where the constraint is inactive) close
//! the inclusion; [`min_multiplier_mass`] bounds from below the total mass
//! any such density must carry to survive a list of test variations,
//! integrating the paired rows exactly against piecewise-linear test
//! fields so that selections oscillating below the mesh scale are still
//! resolved.

use super::assembler::{Coupling, InclusionAssembler, VarGroup, VertexData};
use super::{
    cell_values, Certificate, CheckError, ConstraintFamily, VariationalProblem, Verdict,
    TOL_ACTIVE,
};
use crate::codiff::{Codifferential, TOL_FACE};
use crate::expr::VarSelector;
use crate::grid::{
    assemble_codifferential, cell_average, gradient, CellSelection, DiscreteField,
    DiscreteFunctional, Grid, RegionPattern, Side, VertexPick,
};
use crate::lp::{LinearProgram, LpOutcome};

/// Cellwise max-affine model `base + max_v (a_v + <v, dir>) + <shift, dir>`
/// over directions `dir = (hbar, grad h)` per cell.
#[derive(Debug, Clone)]
pub struct CellModel {
    pub base: Vec<f64>,
    pub verts: Vec<Vec<(f64, Vec<f64>)>>,
    pub shift: Vec<Vec<f64>>,
}

impl CellModel {
    pub fn eval_cell(&self, cell: usize, dir: &[f64]) -> f64 {
        let max = self.verts[cell]
            .iter()
            .map(|(a, v)| a + dot(v, dir))
            .fold(f64::NEG_INFINITY, f64::max);
        self.base[cell] + max + dot(&self.shift[cell], dir)
    }
}

/// The convex problem induced at a feasible candidate: minimize the
/// max-affine objective subject to `phi_i(x_c, h, grad h) <= 0`.
#[derive(Debug, Clone)]
pub struct ConvexifiedProblem {
    pub objective: CellModel,
    pub constraints: Vec<CellModel>,
    m: usize,
}

impl ConvexifiedProblem {
    fn directions(&self, grid: &Grid, h: &DiscreteField) -> Vec<Vec<f64>> {
        let m = self.m;
        let d = grid.dim();
        let avgs = cell_average(grid, h);
        let grads = gradient(grid, h);
        (0..grid.num_cells())
            .map(|cell| {
                let mut dir = Vec::with_capacity(m + m * d);
                dir.extend_from_slice(&avgs[cell * m..(cell + 1) * m]);
                dir.extend_from_slice(&grads[cell * m * d..(cell + 1) * m * d]);
                dir
            })
            .collect()
    }

    /// Quadrature value of the convexified objective at a variation.
    pub fn objective_value(&self, grid: &Grid, h: &DiscreteField) -> f64 {
        let w = grid.cell_volume();
        self.directions(grid, h)
            .iter()
            .enumerate()
            .map(|(cell, dir)| w * self.objective.eval_cell(cell, dir))
            .sum()
    }

    /// Per-cell values of `phi_i` at a variation.
    pub fn phi_values(&self, grid: &Grid, i: usize, h: &DiscreteField) -> Vec<f64> {
        self.directions(grid, h)
            .iter()
            .enumerate()
            .map(|(cell, dir)| self.constraints[i].eval_cell(cell, dir))
            .collect()
    }

    /// Qualification report: `max_c phi_i(x_c, h*, grad h*)` per
    /// constraint. The qualification asks each maximum to stay below a
    /// negative margin.
    pub fn cq_report(&self, grid: &Grid, h_star: &DiscreteField) -> Vec<f64> {
        (0..self.constraints.len())
            .map(|i| {
                self.phi_values(grid, i, h_star)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct NonholData {
    f: DiscreteFunctional,
    constraints: Vec<DiscreteFunctional>,
    constraint_values: Vec<Vec<f64>>,
}

fn nonhol_data(
    problem: &VariationalProblem,
    u: &DiscreteField,
) -> Result<NonholData, CheckError> {
    let ConstraintFamily::Nonholonomic { constraints } = &problem.family else {
        return Err(CheckError::Problem(
            "nonholonomic check needs pointwise constraints".into(),
        ));
    };
    problem.check_candidate(u)?;
    problem.check_boundary_data(u)?;
    let sel = VarSelector::u_xi();
    let f = assemble_codifferential(&problem.integrand, &problem.vocab, &sel, &problem.grid, u)?;
    let mut cds = Vec::new();
    let mut vals = Vec::new();
    for (i, g) in constraints.iter().enumerate() {
        let v = cell_values(g, &problem.vocab, &problem.grid, u)?;
        if let Some(bad) = v.iter().find(|x| **x > TOL_ACTIVE) {
            return Err(CheckError::Problem(format!(
                "candidate violates pointwise constraint {i}: max value {bad:e}"
            )));
        }
        vals.push(v);
        cds.push(assemble_codifferential(
            g,
            &problem.vocab,
            &sel,
            &problem.grid,
            u,
        )?);
    }
    Ok(NonholData {
        f,
        constraints: cds,
        constraint_values: vals,
    })
}

fn model_from(
    func: &DiscreteFunctional,
    selection: &CellSelection,
    base: Vec<f64>,
) -> Result<CellModel, CheckError> {
    let shift = selection.require_zero_face(func, Side::Hyper)?;
    let verts = func
        .cells
        .iter()
        .map(|cell| {
            cell.codiff
                .hypo()
                .vertices()
                .iter()
                .map(|p| (p.a, p.v.clone()))
                .collect()
        })
        .collect();
    Ok(CellModel { base, verts, shift })
}

/// Builds the convexified problem at a feasible candidate for the given
/// hyper selections.
pub fn convexify_nonholonomic(
    problem: &VariationalProblem,
    u: &DiscreteField,
    f_hyper: &CellSelection,
    g_hypers: &[CellSelection],
) -> Result<ConvexifiedProblem, CheckError> {
    let data = nonhol_data(problem, u)?;
    if g_hypers.len() != data.constraints.len() {
        return Err(CheckError::Problem(
            "one hyper selection per constraint required".into(),
        ));
    }
    let m = problem.components();
    let cells = problem.grid.num_cells();
    let objective = model_from(&data.f, f_hyper, vec![0.0; cells])?;
    let mut constraints = Vec::new();
    for (i, func) in data.constraints.iter().enumerate() {
        constraints.push(model_from(
            func,
            &g_hypers[i],
            data.constraint_values[i].clone(),
        )?);
    }
    Ok(ConvexifiedProblem {
        objective,
        constraints,
        m,
    })
}

/// Regular-multiplier feasibility: nonnegative cell densities
/// `lambda_i(x_c)`, zero on inactive cells, closing the Euler-Lagrange
/// inclusion. Witness multipliers report the total mass per constraint.
pub fn check_nonholonomic_regular(
    problem: &VariationalProblem,
    u: &DiscreteField,
    f_hyper: &CellSelection,
    g_hypers: &[CellSelection],
) -> Result<Certificate, CheckError> {
    if problem.grid.dim() != 1 {
        return Err(CheckError::Problem(
            "regular-multiplier check supports d = 1 only".into(),
        ));
    }
    let data = nonhol_data(problem, u)?;
    if g_hypers.len() != data.constraints.len() {
        return Err(CheckError::Problem(
            "one hyper selection per constraint required".into(),
        ));
    }
    let grid = &problem.grid;
    let m = problem.components();
    let resolution = grid.cells_per_axis().to_vec();
    let fixed_w = f_hyper.require_zero_face(&data.f, Side::Hyper)?;
    let fixed: Vec<(Vec<f64>, Vec<f64>)> = fixed_w
        .into_iter()
        .map(|w| (w[..m].to_vec(), w[m..].to_vec()))
        .collect();
    let mut asm = InclusionAssembler::new(grid, m, 1.0, fixed);
    let f_verts: Vec<Vec<VertexData>> = data
        .f
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
        verts: f_verts,
    });
    let mut inactive_notes = Vec::new();
    for (i, func) in data.constraints.iter().enumerate() {
        let w = g_hypers[i].require_zero_face(func, Side::Hyper)?;
        let mut inactive = 0usize;
        let verts: Vec<Vec<VertexData>> = func
            .cells
            .iter()
            .enumerate()
            .map(|(cell, cd)| {
                // Complementarity: no density where the constraint is
                // strictly inactive.
                if data.constraint_values[i][cell] < -super::TOL_COMP {
                    inactive += 1;
                    return Vec::new();
                }
                cd.codiff
                    .hypo()
                    .vertices()
                    .iter()
                    .map(|p| VertexData {
                        a: p.a,
                        v1: p.v[..m].iter().zip(&w[cell][..m]).map(|(a, b)| a + b).collect(),
                        v2: p.v[m..].iter().zip(&w[cell][m..]).map(|(a, b)| a + b).collect(),
                    })
                    .collect()
            })
            .collect();
        if inactive > 0 {
            inactive_notes.push(format!(
                "constraint {}: density fixed to 0 on {inactive} inactive cells",
                i + 1
            ));
        }
        asm.add_group(VarGroup {
            name: format!("lambda{}", i + 1),
            coupling: Coupling::FreeNonneg,
            verts,
        });
    }
    let built = asm.build();
    let outcome = built.lp.solve()?;
    let cert = match &outcome {
        LpOutcome::Feasible { .. } => Certificate {
            verdict: Verdict::ConditionsHold,
            resolution,
            witness: built.witness(&asm, &outcome),
            farkas: None,
            lp: built.lp,
            notes: inactive_notes,
        },
        LpOutcome::Infeasible { farkas } => Certificate {
            verdict: Verdict::ConditionsFail,
            resolution,
            witness: None,
            farkas: Some(farkas.clone()),
            lp: built.lp,
            notes: vec![
                "no regular multiplier density exists at this resolution for the supplied selections"
                    .into(),
            ],
        },
        LpOutcome::Unbounded { .. } => Certificate::inconclusive(
            "multiplier system unbounded".into(),
            built.lp,
            resolution,
        ),
    };
    Ok(cert)
}

/// Continuous piecewise-linear function of one variable, used as an exact
/// test field: constant extrapolation outside the breakpoint range.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear {
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self, CheckError> {
        if breaks.len() != values.len() || breaks.len() < 2 {
            return Err(CheckError::Problem(
                "piecewise-linear data needs matching breaks and values".into(),
            ));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CheckError::Problem(
                "piecewise-linear breaks must increase strictly".into(),
            ));
        }
        Ok(PiecewiseLinear { breaks, values })
    }

    pub fn scale(&self, c: f64) -> PiecewiseLinear {
        PiecewiseLinear {
            breaks: self.breaks.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        if x <= self.breaks[0] {
            return self.values[0];
        }
        if x >= *self.breaks.last().unwrap() {
            return *self.values.last().unwrap();
        }
        let k = self.breaks.partition_point(|b| *b <= x) - 1;
        let t = (x - self.breaks[k]) / (self.breaks[k + 1] - self.breaks[k]);
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }

    fn slope_at_segment(&self, x0: f64, x1: f64) -> f64 {
        let mid = 0.5 * (x0 + x1);
        if mid <= self.breaks[0] || mid >= *self.breaks.last().unwrap() {
            return 0.0;
        }
        let k = self.breaks.partition_point(|b| *b <= mid) - 1;
        (self.values[k + 1] - self.values[k]) / (self.breaks[k + 1] - self.breaks[k])
    }

    fn breaks_in(&self, a: f64, b: f64) -> Vec<f64> {
        self.breaks
            .iter()
            .copied()
            .filter(|x| *x > a && *x < b)
            .collect()
    }
}

fn resolve_pick_at(
    cd: &Codifferential,
    pick: &VertexPick,
    what: &str,
) -> Result<Vec<f64>, CheckError> {
    let poly = cd.hyper();
    let (a, v) = match pick {
        VertexPick::Index(i) => {
            let p = poly
                .vertices()
                .get(*i)
                .ok_or_else(|| CheckError::Problem(format!("{what}: vertex {i} out of range")))?;
            (p.a, p.v.clone())
        }
        VertexPick::Nearest(g) => {
            let mut best: Option<(f64, usize)> = None;
            for (k, p) in poly.vertices().iter().enumerate() {
                if p.v.len() != g.len() {
                    return Err(CheckError::Problem(format!(
                        "{what}: vertex vector length mismatch"
                    )));
                }
                let dist: f64 = p
                    .v
                    .iter()
                    .zip(g)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    .hypot(p.a);
                if best.map_or(true, |(bd, _)| dist < bd) {
                    best = Some((dist, k));
                }
            }
            let p = &poly.vertices()[best.unwrap().1];
            (p.a, p.v.clone())
        }
        VertexPick::Coeffs(c) => {
            if c.len() != poly.vertices().len() {
                return Err(CheckError::Problem(format!(
                    "{what}: {} coefficients for {} vertices",
                    c.len(),
                    poly.vertices().len()
                )));
            }
            let sum: f64 = c.iter().sum();
            if c.iter().any(|x| *x < -1e-12) || (sum - 1.0).abs() > 1e-9 {
                return Err(CheckError::Problem(format!("{what}: coefficients not convex")));
            }
            let mut a = 0.0;
            let mut v = vec![0.0; poly.vertices()[0].v.len()];
            for (x, p) in c.iter().zip(poly.vertices()) {
                a += x * p.a;
                for (vi, pi) in v.iter_mut().zip(&p.v) {
                    *vi += x * pi;
                }
            }
            (a, v)
        }
    };
    if a.abs() > TOL_FACE {
        return Err(CheckError::Problem(format!(
            "{what}: selected element off the zero face ({a:e})"
        )));
    }
    Ok(v)
}

/// Exact integral over `[x0, x1]` of
/// `max_v (a_v + <v, (h(x), h'(x))>) + <w, (h(x), h'(x))>` where `h` is
/// affine on the segment and `w` constant: the integrand is a maximum of
/// affine functions of `x`, integrated exactly by splitting at every
/// pairwise crossing.
fn integrate_max_affine_segment(
    verts: &[(f64, Vec<f64>)],
    w: &[f64],
    h: &PiecewiseLinear,
    x0: f64,
    x1: f64,
) -> f64 {
    let slope = h.slope_at_segment(x0, x1);
    let line = |x: f64, a: f64, v: &[f64]| -> f64 {
        a + (v[0] + w[0]) * h.value(x) + (v[1] + w[1]) * slope
    };
    // Affine pieces sampled at both ends determine slopes and crossings.
    let pieces: Vec<(f64, f64)> = verts
        .iter()
        .map(|(a, v)| {
            let l0 = line(x0, *a, v);
            let l1 = line(x1, *a, v);
            (l0, (l1 - l0) / (x1 - x0))
        })
        .collect();
    let mut cuts = vec![x0, x1];
    for i in 0..pieces.len() {
        for j in i + 1..pieces.len() {
            let (b1, m1) = pieces[i];
            let (b2, m2) = pieces[j];
            if (m1 - m2).abs() > 1e-14 {
                let xc = x0 + (b2 - b1) / (m1 - m2);
                if xc > x0 && xc < x1 {
                    cuts.push(xc);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let eval_max = |x: f64| -> f64 {
        pieces
            .iter()
            .map(|(b, m)| b + m * (x - x0))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if b - a <= 0.0 {
            continue;
        }
        total += (b - a) * 0.5 * (eval_max(a) + eval_max(b));
    }
    total
}

/// Outcome of the minimum-mass bound.
#[derive(Debug, Clone)]
pub struct MassReport {
    /// Minimal total multiplier mass consistent with the test rows, when
    /// the system is feasible.
    pub mass: Option<f64>,
    /// Quadrature value of the convexified objective row per test field.
    pub objective_rows: Vec<f64>,
    pub lp: LinearProgram,
    pub outcome: LpOutcome,
}

/// Minimum total multiplier mass `sum_i int lambda_i` subject to the
/// weak-form inequality rows generated by the test fields:
///
/// ```text
/// J(h_t) + sum_i sum_c lambda_{i,c} * int_cell Lambda_i(x; h_t) dx >= 0.
/// ```
///
/// Selections are analytic region patterns resolved pointwise in `x`, and
/// all pairings are integrated exactly for piecewise-linear test fields,
/// so the bound survives selections that oscillate below the mesh scale.
/// Scalar 1D problems only.
pub fn min_multiplier_mass(
    problem: &VariationalProblem,
    u: &DiscreteField,
    f_pattern: &RegionPattern,
    g_patterns: &[RegionPattern],
    test_fields: &[PiecewiseLinear],
) -> Result<MassReport, CheckError> {
    if problem.grid.dim() != 1 || problem.components() != 1 {
        return Err(CheckError::Problem(
            "mass bound supports scalar 1D problems only".into(),
        ));
    }
    if test_fields.is_empty() {
        return Err(CheckError::Problem("no test fields supplied".into()));
    }
    let data = nonhol_data(problem, u)?;
    if g_patterns.len() != data.constraints.len() {
        return Err(CheckError::Problem(
            "one selection pattern per constraint required".into(),
        ));
    }
    let grid = &problem.grid;
    let cells = grid.num_cells();
    let w_cell = grid.cell_volume();

    // Active cells carry one density variable per constraint.
    let mut var_of: Vec<Vec<Option<usize>>> = Vec::new();
    let mut names = Vec::new();
    let mut next = 0usize;
    for (i, values) in data.constraint_values.iter().enumerate() {
        let mut row = Vec::with_capacity(cells);
        for (cell, v) in values.iter().enumerate() {
            if *v >= -super::TOL_COMP {
                row.push(Some(next));
                names.push(format!("lambda{}[{cell}]", i + 1));
                next += 1;
            } else {
                row.push(None);
            }
        }
        var_of.push(row);
    }
    let mut lp = LinearProgram::new(next);
    lp.var_names = names;
    for j in 0..next {
        lp.set_nonneg(j);
    }
    lp.set_objective(vec![w_cell; next]);

    // Segment integration bounds per cell: cell bounds, test-field breaks,
    // and the relevant selection's region breaks.
    let segment_bounds = |cell: usize, h: &PiecewiseLinear, pattern: &RegionPattern| {
        let a = grid.bounds()[0].0 + cell as f64 * grid.spacing(0);
        let b = a + grid.spacing(0);
        let mut cuts = vec![a, b];
        cuts.extend(h.breaks_in(a, b));
        cuts.extend(pattern.breaks.iter().copied().filter(|x| *x > a && *x < b));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts
    };
    let resolve = |cd: &Codifferential, pattern: &RegionPattern, x: f64, what: &str| {
        resolve_pick_at(cd, &pattern.picks[pattern.region_of(x)], what)
    };

    let mut objective_rows = Vec::with_capacity(test_fields.len());
    for (t, h) in test_fields.iter().enumerate() {
        // J(h) integrated cellwise against the analytic f selection.
        let mut j_val = 0.0;
        for cell in 0..cells {
            let cd = &data.f.cells[cell].codiff;
            let verts: Vec<(f64, Vec<f64>)> = cd
                .hypo()
                .vertices()
                .iter()
                .map(|p| (p.a, p.v.clone()))
                .collect();
            let cuts = segment_bounds(cell, h, f_pattern);
            for seg in cuts.windows(2) {
                let xm = 0.5 * (seg[0] + seg[1]);
                let w = resolve(cd, f_pattern, xm, "objective selection")?;
                j_val += integrate_max_affine_segment(&verts, &w, h, seg[0], seg[1]);
            }
        }
        objective_rows.push(j_val);
        // Row: -sum lambda * C <= J.
        let mut row = vec![0.0; lp.num_vars];
        for (i, func) in data.constraints.iter().enumerate() {
            for cell in 0..cells {
                let Some(col) = var_of[i][cell] else { continue };
                let cd = &func.cells[cell].codiff;
                let verts: Vec<(f64, Vec<f64>)> = cd
                    .hypo()
                    .vertices()
                    .iter()
                    .map(|p| (p.a, p.v.clone()))
                    .collect();
                let mut coef = 0.0;
                let cuts = segment_bounds(cell, h, &g_patterns[i]);
                for seg in cuts.windows(2) {
                    let xm = 0.5 * (seg[0] + seg[1]);
                    let w = resolve(cd, &g_patterns[i], xm, "constraint selection")?;
                    coef += integrate_max_affine_segment(&verts, &w, h, seg[0], seg[1]);
                }
                row[col] = -coef;
            }
        }
        lp.add_le(row, j_val, format!("testfield{t}"));
    }

    let outcome = lp.solve()?;
    let mass = match &outcome {
        LpOutcome::Feasible { objective, .. } => *objective,
        _ => None,
    };
    Ok(MassReport {
        mass,
        objective_rows,
        lp,
        outcome,
    })
}
