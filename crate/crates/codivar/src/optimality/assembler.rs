//! Shared LP assembly for cellwise inclusion systems.
//!
//! The systems decided here all have the shape
//!
//! ```text
//! (0, s * div(zeta), zeta) in sum_g coef_g . V_g(cell) + fixed(cell)   per cell
//! ```
//!
//! with `V_g` per-cell vertex lists `(a, v1, v2)`, `coef_g` nonnegative
//! coefficients coupled per cell (convex combination, tied to a global
//! multiplier, or free), `fixed` a caller-chosen zero-face selection, and
//! `zeta` one flux vector per cell whose divergence is the negative adjoint
//! of the discrete gradient. The flux is eliminated: substituting
//! `zeta_c = sum coef v2 + fixed_w2` into the weak-form node rows leaves a
//! system over the coefficients only, and the witness flux is recovered
//! from the solution afterwards. Free-coefficient rows force each cell's
//! combination onto the zero face of its polytope.

use super::Witness;
use crate::grid::{CellSelection, Grid};
use crate::lp::{LinearProgram, LpOutcome};

/// How a group's per-cell coefficients are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Coupling {
    /// Convex combination per cell: `sum = 1`.
    Convex,
    /// `sum = lambda` with one global nonnegative multiplier for the group.
    TiedNonneg,
    /// Independent nonnegative coefficients per cell (an `L^1` density).
    FreeNonneg,
}

/// Per-cell vertex data of one coefficient group.
#[derive(Debug, Clone)]
pub(crate) struct VertexData {
    pub a: f64,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

pub(crate) struct VarGroup {
    pub name: String,
    pub coupling: Coupling,
    /// Vertex list per cell; empty on cells where the group is inactive.
    pub verts: Vec<Vec<VertexData>>,
}

pub(crate) struct InclusionAssembler<'g> {
    grid: &'g Grid,
    /// Middle-block dimension (`m` for Euler-Lagrange inclusions, `d` for
    /// the inner-variation inclusion).
    p: usize,
    /// Sign of the divergence block on the left-hand side.
    div_sign: f64,
    groups: Vec<VarGroup>,
    /// Fixed zero-face selection folded into the right-hand side:
    /// per cell `(w1, w2)`.
    fixed: Vec<(Vec<f64>, Vec<f64>)>,
}

pub(crate) struct AssembledLp {
    pub lp: LinearProgram,
    /// Column ranges: `cols[group][cell] = (start, len)`.
    cols: Vec<Vec<(usize, usize)>>,
    /// Column of each group's global multiplier (tied groups only).
    tie_cols: Vec<Option<usize>>,
    p: usize,
}

impl<'g> InclusionAssembler<'g> {
    pub fn new(grid: &'g Grid, p: usize, div_sign: f64, fixed: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        assert_eq!(fixed.len(), grid.num_cells());
        InclusionAssembler {
            grid,
            p,
            div_sign,
            groups: Vec::new(),
            fixed,
        }
    }

    pub fn add_group(&mut self, group: VarGroup) {
        assert_eq!(group.verts.len(), self.grid.num_cells());
        self.groups.push(group);
    }

    pub fn build(&self) -> AssembledLp {
        let grid = self.grid;
        let p = self.p;
        let d = grid.dim();
        let cells = grid.num_cells();
        let k = grid.corners_per_cell() as f64;
        let w_c = grid.cell_volume();

        // Column layout: per-cell coefficients group by group, then tie
        // multipliers.
        let mut cols: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut names: Vec<String> = Vec::new();
        let mut next = 0usize;
        for g in &self.groups {
            let mut per_cell = Vec::with_capacity(cells);
            for (cell, verts) in g.verts.iter().enumerate() {
                per_cell.push((next, verts.len()));
                for vi in 0..verts.len() {
                    names.push(format!("{}[{cell}][{vi}]", g.name));
                }
                next += verts.len();
            }
            cols.push(per_cell);
        }
        let mut tie_cols: Vec<Option<usize>> = Vec::new();
        for g in &self.groups {
            if g.coupling == Coupling::TiedNonneg {
                tie_cols.push(Some(next));
                names.push(format!("{}.multiplier", g.name));
                next += 1;
            } else {
                tie_cols.push(None);
            }
        }
        let mut lp = LinearProgram::new(next);
        lp.var_names = names;
        for j in 0..next {
            lp.set_nonneg(j);
        }

        // Coupling rows.
        for (gi, g) in self.groups.iter().enumerate() {
            for cell in 0..cells {
                let (start, len) = cols[gi][cell];
                if len == 0 {
                    continue;
                }
                let mut row = vec![0.0; lp.num_vars];
                for j in 0..len {
                    row[start + j] = 1.0;
                }
                match g.coupling {
                    Coupling::Convex => {
                        lp.add_eq(row, 1.0, format!("cell{cell}.{}.convex", g.name));
                    }
                    Coupling::TiedNonneg => {
                        row[tie_cols[gi].unwrap()] = -1.0;
                        lp.add_eq(row, 0.0, format!("cell{cell}.{}.tie", g.name));
                    }
                    Coupling::FreeNonneg => {}
                }
            }
        }

        // Zero-face rows: the free coefficients of the combination vanish.
        for cell in 0..cells {
            let mut row = vec![0.0; lp.num_vars];
            let mut nonzero = false;
            for (gi, g) in self.groups.iter().enumerate() {
                let (start, _) = cols[gi][cell];
                for (j, v) in g.verts[cell].iter().enumerate() {
                    row[start + j] = v.a;
                    nonzero |= v.a != 0.0;
                }
            }
            if nonzero {
                lp.add_eq(row, 0.0, format!("cell{cell}.zeroface"));
            }
        }

        // Weak-form node rows: for every interior node and component,
        //   sum_{c ~ n} (w_c / K) * s * (v1 + w1)[i]
        //   + sum_{c ~ n} w_c * sum_k (v2 + w2)[i*d + k] * grad_coef = 0.
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); grid.num_nodes()];
        for cell in 0..cells {
            for (corner, &node) in grid.cell_corners(cell).iter().enumerate() {
                adjacency[node].push((cell, corner));
            }
        }
        for node in 0..grid.num_nodes() {
            if grid.is_boundary(node) {
                continue;
            }
            for comp in 0..p {
                let mut row = vec![0.0; lp.num_vars];
                let mut rhs = 0.0;
                for &(cell, corner) in &adjacency[node] {
                    let pair = |v1: &[f64], v2: &[f64]| -> f64 {
                        let mut c = self.div_sign * w_c / k * v1[comp];
                        for axis in 0..d {
                            c += w_c * v2[comp * d + axis] * grid.gradient_coef(corner, axis);
                        }
                        c
                    };
                    for (gi, g) in self.groups.iter().enumerate() {
                        let (start, _) = cols[gi][cell];
                        for (j, v) in g.verts[cell].iter().enumerate() {
                            row[start + j] += pair(&v.v1, &v.v2);
                        }
                    }
                    let (w1, w2) = &self.fixed[cell];
                    rhs -= pair(w1, w2);
                }
                lp.add_eq(row, rhs, format!("node{node}.comp{comp}"));
            }
        }

        AssembledLp {
            lp,
            cols,
            tie_cols,
            p,
        }
    }
}

impl AssembledLp {
    /// Recovers the witness from a feasible point: per-group selections,
    /// global multipliers, the implied flux and its divergence.
    pub fn witness(
        &self,
        asm: &InclusionAssembler<'_>,
        outcome: &LpOutcome,
    ) -> Option<Witness> {
        let LpOutcome::Feasible { x, .. } = outcome else {
            return None;
        };
        let grid = asm.grid;
        let d = grid.dim();
        let p = self.p;
        let cells = grid.num_cells();
        let mut zeta = vec![0.0; cells * p * d];
        for cell in 0..cells {
            let (w1_unused, w2) = &asm.fixed[cell];
            let _ = w1_unused;
            for idx in 0..p * d {
                zeta[cell * p * d + idx] = w2[idx];
            }
            for (gi, g) in asm.groups.iter().enumerate() {
                let (start, _) = self.cols[gi][cell];
                for (j, v) in g.verts[cell].iter().enumerate() {
                    for idx in 0..p * d {
                        zeta[cell * p * d + idx] += x[start + j] * v.v2[idx];
                    }
                }
            }
        }
        let div_zeta = crate::grid::divergence(grid, p, &zeta);
        let mut selections = Vec::new();
        let mut multipliers = Vec::new();
        for (gi, g) in asm.groups.iter().enumerate() {
            let mut coeffs = Vec::with_capacity(cells);
            for cell in 0..cells {
                let (start, len) = self.cols[gi][cell];
                coeffs.push(x[start..start + len].to_vec());
            }
            selections.push(CellSelection { coeffs });
            match g.coupling {
                Coupling::TiedNonneg => {
                    multipliers.push(x[self.tie_cols[gi].unwrap()]);
                }
                Coupling::FreeNonneg => {
                    // Total mass of the density.
                    let mass: f64 = (0..cells)
                        .map(|cell| {
                            let (start, len) = self.cols[gi][cell];
                            let s: f64 = x[start..start + len].iter().sum();
                            grid.cell_volume() * s
                        })
                        .sum();
                    multipliers.push(mass);
                }
                Coupling::Convex => {}
            }
        }
        Some(Witness {
            zeta,
            div_zeta,
            zeta_nodal: Vec::new(),
            multipliers,
            selections,
        })
    }

}
