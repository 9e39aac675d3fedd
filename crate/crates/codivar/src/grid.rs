//! Structured grids on intervals and axis-aligned rectangles, with the
//! discrete machinery for integral functionals.
//!
//! Fields are nodal; integrands are evaluated per cell at the cell center
//! with the cell-average of the nodal values and a constant-per-cell
//! gradient (forward differences in 1D, the bilinear-cell average in 2D).
//! Midpoint quadrature with weight equal to the cell volume makes
//! piecewise-affine fields exact and gives one codifferential polytope per
//! cell, the discrete stand-in for measurable selections.
//!
//! The discrete divergence is not an independent stencil: it is defined as
//! the negative adjoint of the gradient under the cell/node quadrature
//! pairing, so the summation-by-parts identity
//!
//! ```text
//! sum_c w_c <zeta_c, (grad h)_c> = - sum_n w_n <(div zeta)_n, h_n>
//! ```
//!
//! holds exactly (up to float roundoff) for every field `h` vanishing on
//! the boundary. The optimality checkers depend on this identity being
//! exact; with an inconsistent pair the LP certificates would be
//! meaningless.

use crate::codiff::{Codifferential, CodiffError};
use crate::expr::{EvalError, Expr, VarSelector, Vocabulary};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimension must be 1 or 2, got {0}")]
    BadDim(usize),
    #[error("axis {axis}: need at least one cell and positive extent")]
    BadAxis { axis: usize },
    #[error("field has {got} components, expected {expected}")]
    Components { expected: usize, got: usize },
    #[error("field length {got} does not match grid with {expected} nodes")]
    Nodes { expected: usize, got: usize },
    #[error("non-finite field value at node {0}")]
    NonFinite(usize),
    #[error("csv: {0}")]
    Csv(String),
    #[error("selection: {0}")]
    Selection(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Codiff(#[from] CodiffError),
}

/// Uniform structured grid over an interval (`dim = 1`) or an axis-aligned
/// rectangle (`dim = 2`).
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    bounds: Vec<(f64, f64)>,
    cells: Vec<usize>,
}

impl Grid {
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Self, GridError> {
        Grid::new(vec![(a, b)], vec![n])
    }

    pub fn rectangle(
        x: (f64, f64),
        y: (f64, f64),
        nx: usize,
        ny: usize,
    ) -> Result<Self, GridError> {
        Grid::new(vec![x, y], vec![nx, ny])
    }

    pub fn new(bounds: Vec<(f64, f64)>, cells: Vec<usize>) -> Result<Self, GridError> {
        let dim = bounds.len();
        if dim == 0 || dim > 2 || cells.len() != dim {
            return Err(GridError::BadDim(dim));
        }
        for (axis, ((a, b), n)) in bounds.iter().zip(&cells).enumerate() {
            if *n == 0 || !(b - a).is_finite() || b - a <= 0.0 {
                return Err(GridError::BadAxis { axis });
            }
        }
        Ok(Grid { dim, bounds, cells })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let (a, b) = self.bounds[axis];
        (b - a) / self.cells[axis] as f64
    }

    pub fn num_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn num_nodes(&self) -> usize {
        self.cells.iter().map(|n| n + 1).product()
    }

    /// Quadrature weight of every cell (the cell volume).
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Quadrature weight of an interior node.
    pub fn node_weight(&self) -> f64 {
        self.cell_volume()
    }

    pub fn node_coord(&self, node: usize) -> Vec<f64> {
        match self.dim {
            1 => {
                let (a, _) = self.bounds[0];
                vec![a + node as f64 * self.spacing(0)]
            }
            _ => {
                let nx = self.cells[0] + 1;
                let (i, j) = (node % nx, node / nx);
                vec![
                    self.bounds[0].0 + i as f64 * self.spacing(0),
                    self.bounds[1].0 + j as f64 * self.spacing(1),
                ]
            }
        }
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        match self.dim {
            1 => {
                let (a, _) = self.bounds[0];
                vec![a + (cell as f64 + 0.5) * self.spacing(0)]
            }
            _ => {
                let nx = self.cells[0];
                let (i, j) = (cell % nx, cell / nx);
                vec![
                    self.bounds[0].0 + (i as f64 + 0.5) * self.spacing(0),
                    self.bounds[1].0 + (j as f64 + 0.5) * self.spacing(1),
                ]
            }
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        match self.dim {
            1 => node == 0 || node == self.cells[0],
            _ => {
                let nx = self.cells[0] + 1;
                let (i, j) = (node % nx, node / nx);
                i == 0 || i == self.cells[0] || j == 0 || j == self.cells[1]
            }
        }
    }

    /// Corner node indices of a cell: `[left, right]` in 1D and
    /// `[sw, se, nw, ne]` in 2D.
    pub fn cell_corners(&self, cell: usize) -> Vec<usize> {
        match self.dim {
            1 => vec![cell, cell + 1],
            _ => {
                let nx = self.cells[0];
                let (i, j) = (cell % nx, cell / nx);
                let base = j * (nx + 1) + i;
                vec![base, base + 1, base + nx + 1, base + nx + 2]
            }
        }
    }

    /// Weight of corner `k` of a cell in the constant-per-cell gradient
    /// along `axis`: `(grad h)_{c,axis} = sum_k coef * h_corner(k)`.
    pub fn gradient_coef(&self, corner: usize, axis: usize) -> f64 {
        match self.dim {
            1 => {
                let h = self.spacing(0);
                if corner == 0 {
                    -1.0 / h
                } else {
                    1.0 / h
                }
            }
            _ => {
                let h = self.spacing(axis);
                // Corners ordered sw, se, nw, ne.
                let sign = match (axis, corner) {
                    (0, 0) | (0, 2) => -1.0,
                    (0, _) => 1.0,
                    (_, 0) | (_, 1) => -1.0,
                    _ => 1.0,
                };
                sign / (2.0 * h)
            }
        }
    }

    /// Number of corners per cell.
    pub fn corners_per_cell(&self) -> usize {
        1 << self.dim
    }
}

/// Nodal values of an `R^m`-valued field, component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    m: usize,
    nodes: usize,
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn zeros(grid: &Grid, m: usize) -> Self {
        DiscreteField {
            m,
            nodes: grid.num_nodes(),
            values: vec![0.0; m * grid.num_nodes()],
        }
    }

    pub fn from_values(grid: &Grid, m: usize, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != m * grid.num_nodes() {
            return Err(GridError::Nodes {
                expected: grid.num_nodes(),
                got: values.len() / m.max(1),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i % grid.num_nodes()));
        }
        Ok(DiscreteField {
            m,
            nodes: grid.num_nodes(),
            values,
        })
    }

    /// Interpolates expressions of the space variables at the nodes. The
    /// expressions must reference only `x`.
    pub fn from_exprs(grid: &Grid, exprs: &[Expr]) -> Result<Self, GridError> {
        let m = exprs.len();
        let mut values = vec![0.0; m * grid.num_nodes()];
        let zero_u = vec![0.0; m];
        let zero_xi = vec![0.0; m * grid.dim()];
        for node in 0..grid.num_nodes() {
            let x = grid.node_coord(node);
            for (comp, e) in exprs.iter().enumerate() {
                let v = e.eval(&[&x, &zero_u, &zero_xi])?;
                values[comp * grid.num_nodes() + node] = v;
            }
        }
        DiscreteField::from_values(grid, m, values)
    }

    pub fn components(&self) -> usize {
        self.m
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    pub fn get(&self, comp: usize, node: usize) -> f64 {
        self.values[comp * self.nodes + node]
    }

    pub fn set(&mut self, comp: usize, node: usize, v: f64) {
        self.values[comp * self.nodes + node] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Overwrites boundary nodes with the values of `other`.
    pub fn impose_boundary(&mut self, grid: &Grid, other: &DiscreteField) {
        for node in 0..self.nodes {
            if grid.is_boundary(node) {
                for comp in 0..self.m {
                    self.set(comp, node, other.get(comp, node));
                }
            }
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &DiscreteField) {
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += alpha * o;
        }
    }

    pub fn max_abs_diff(&self, other: &DiscreteField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// CSV export: node coordinates then component values, one node per
    /// line, full-precision scientific notation, LF endings.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut out = String::new();
        let coords: Vec<String> = (1..=grid.dim()).map(|i| format!("x{i}")).collect();
        let comps: Vec<String> = (1..=self.m).map(|i| format!("u{i}")).collect();
        out.push_str(&coords.join(","));
        out.push(',');
        out.push_str(&comps.join(","));
        out.push('\n');
        for node in 0..self.nodes {
            let mut fields: Vec<String> =
                grid.node_coord(node).iter().map(|v| format!("{v:e}")).collect();
            for comp in 0..self.m {
                fields.push(format!("{:e}", self.get(comp, node)));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(grid: &Grid, text: &str) -> Result<Self, GridError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| GridError::Csv("empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let d = grid.dim();
        if cols.len() <= d {
            return Err(GridError::Csv("header too short".into()));
        }
        let m = cols.len() - d;
        let mut values = vec![0.0; m * grid.num_nodes()];
        let mut count = 0;
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + m {
                return Err(GridError::Csv(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 2,
                    d + m,
                    fields.len()
                )));
            }
            if count >= grid.num_nodes() {
                return Err(GridError::Csv("too many rows".into()));
            }
            let coord = grid.node_coord(count);
            for (k, c) in coord.iter().enumerate() {
                let v: f64 = fields[k]
                    .trim()
                    .parse()
                    .map_err(|_| GridError::Csv(format!("line {}: bad number", lineno + 2)))?;
                if (v - c).abs() > 1e-9 * 1.0f64.max(c.abs()) {
                    return Err(GridError::Csv(format!(
                        "line {}: node coordinate {v} does not match grid ({c})",
                        lineno + 2
                    )));
                }
            }
            for comp in 0..m {
                let v: f64 = fields[d + comp]
                    .trim()
                    .parse()
                    .map_err(|_| GridError::Csv(format!("line {}: bad number", lineno + 2)))?;
                values[comp * grid.num_nodes() + count] = v;
            }
            count += 1;
        }
        if count != grid.num_nodes() {
            return Err(GridError::Csv(format!(
                "expected {} rows, got {count}",
                grid.num_nodes()
            )));
        }
        DiscreteField::from_values(grid, m, values)
    }
}

/// Constant-per-cell gradients, laid out `cell * (m*d) + comp * d + axis`.
pub fn gradient(grid: &Grid, field: &DiscreteField) -> Vec<f64> {
    let m = field.components();
    let d = grid.dim();
    let mut out = vec![0.0; grid.num_cells() * m * d];
    if d == 1 {
        let h = grid.spacing(0);
        for cell in 0..grid.num_cells() {
            for comp in 0..m {
                out[cell * m + comp] = (field.get(comp, cell + 1) - field.get(comp, cell)) / h;
            }
        }
        return out;
    }
    for cell in 0..grid.num_cells() {
        let corners = grid.cell_corners(cell);
        for comp in 0..m {
            for axis in 0..d {
                let mut g = 0.0;
                for (k, &node) in corners.iter().enumerate() {
                    g += grid.gradient_coef(k, axis) * field.get(comp, node);
                }
                out[cell * m * d + comp * d + axis] = g;
            }
        }
    }
    out
}

/// Cell averages of the nodal values, laid out `cell * m + comp`.
pub fn cell_average(grid: &Grid, field: &DiscreteField) -> Vec<f64> {
    let m = field.components();
    let k = grid.corners_per_cell() as f64;
    let mut out = vec![0.0; grid.num_cells() * m];
    for cell in 0..grid.num_cells() {
        let corners = grid.cell_corners(cell);
        for comp in 0..m {
            out[cell * m + comp] =
                corners.iter().map(|&n| field.get(comp, n)).sum::<f64>() / k;
        }
    }
    out
}

/// Discrete divergence of a per-cell flux (`cell * (m*d) + comp * d + axis`
/// layout), defined as the negative adjoint of [`gradient`]: nodal values
/// at interior nodes, zero on the boundary.
pub fn divergence(grid: &Grid, m: usize, flux: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    assert_eq!(flux.len(), grid.num_cells() * m * d);
    let w_c = grid.cell_volume();
    let w_n = grid.node_weight();
    let mut acc = vec![0.0; m * grid.num_nodes()];
    for cell in 0..grid.num_cells() {
        let corners = grid.cell_corners(cell);
        for (k, &node) in corners.iter().enumerate() {
            for comp in 0..m {
                let mut s = 0.0;
                for axis in 0..d {
                    s += flux[cell * m * d + comp * d + axis] * grid.gradient_coef(k, axis);
                }
                acc[comp * grid.num_nodes() + node] += w_c * s;
            }
        }
    }
    for node in 0..grid.num_nodes() {
        for comp in 0..m {
            let idx = comp * grid.num_nodes() + node;
            acc[idx] = if grid.is_boundary(node) {
                0.0
            } else {
                -acc[idx] / w_n
            };
        }
    }
    acc
}

fn check_vocab(vocab: &Vocabulary, grid: &Grid, field: &DiscreteField) -> Result<(), GridError> {
    match *vocab {
        Vocabulary::Integrand { d, m } if d == grid.dim() && m == field.components() => Ok(()),
        Vocabulary::Integrand { m, .. } => Err(GridError::Components {
            expected: m,
            got: field.components(),
        }),
        Vocabulary::Boundary { .. } => Err(GridError::Selection(
            "integrand vocabulary required for assembly".into(),
        )),
    }
}

/// Midpoint-quadrature value of the integral functional.
pub fn assemble_value(
    expr: &Expr,
    vocab: &Vocabulary,
    grid: &Grid,
    field: &DiscreteField,
) -> Result<f64, GridError> {
    check_vocab(vocab, grid, field)?;
    let m = field.components();
    let d = grid.dim();
    let grads = gradient(grid, field);
    let avgs = cell_average(grid, field);
    let w = grid.cell_volume();
    let mut total = 0.0;
    for cell in 0..grid.num_cells() {
        let x = grid.cell_center(cell);
        let u = &avgs[cell * m..(cell + 1) * m];
        let xi = &grads[cell * m * d..(cell + 1) * m * d];
        total += w * expr.eval(&[&x, u, xi])?;
    }
    Ok(total)
}

/// Per-cell data of an assembled functional: the integrand value and its
/// codifferential at `(x_c, ubar_c, grad u_c)` in the selected variables.
#[derive(Debug, Clone)]
pub struct CellData {
    pub value: f64,
    pub codiff: Codifferential,
}

/// Cellwise codifferential assembly of the integral functional. Any
/// [`CellSelection`] over the hypo (or hyper) polytopes induces an element
/// of the functional's hypo- (or hyper-) differential: the free part is
/// `sum_c w_c a_c` and the linear part pairs `(v1_c, v2_c)` with cell
/// averages and gradients of the variation.
#[derive(Debug, Clone)]
pub struct DiscreteFunctional {
    pub sel: VarSelector,
    pub m: usize,
    pub cells: Vec<CellData>,
}

pub fn assemble_codifferential(
    expr: &Expr,
    vocab: &Vocabulary,
    sel: &VarSelector,
    grid: &Grid,
    field: &DiscreteField,
) -> Result<DiscreteFunctional, GridError> {
    check_vocab(vocab, grid, field)?;
    let m = field.components();
    let d = grid.dim();
    let grads = gradient(grid, field);
    let avgs = cell_average(grid, field);
    let mut cells = Vec::with_capacity(grid.num_cells());
    for cell in 0..grid.num_cells() {
        let x = grid.cell_center(cell);
        let u = &avgs[cell * m..(cell + 1) * m];
        let xi = &grads[cell * m * d..(cell + 1) * m * d];
        let value = expr.eval(&[&x, u, xi])?;
        let codiff = expr.codiff_at(vocab, sel, &[&x, u, xi])?;
        cells.push(CellData { value, codiff });
    }
    Ok(DiscreteFunctional {
        sel: sel.clone(),
        m,
        cells,
    })
}

/// Directional derivative of the assembled functional along a variation
/// `h`: quadrature sum of the cellwise quasidifferential pairings. Only
/// meaningful for functionals assembled in the `(u, xi)` variables.
pub fn functional_directional_derivative(
    func: &DiscreteFunctional,
    grid: &Grid,
    h: &DiscreteField,
) -> Result<f64, GridError> {
    if func.sel != VarSelector::u_xi() {
        return Err(GridError::Selection(
            "directional derivative needs a (u, xi) assembly".into(),
        ));
    }
    let m = func.m;
    let d = grid.dim();
    let grads = gradient(grid, h);
    let avgs = cell_average(grid, h);
    let w = grid.cell_volume();
    let mut total = 0.0;
    for (cell, data) in func.cells.iter().enumerate() {
        let mut dir = Vec::with_capacity(m + m * d);
        dir.extend_from_slice(&avgs[cell * m..(cell + 1) * m]);
        dir.extend_from_slice(&grads[cell * m * d..(cell + 1) * m * d]);
        total += w * data.codiff.directional_derivative(&dir)?;
    }
    Ok(total)
}

/// Per-cell convex coefficients over the vertices of one side of each
/// cell's codifferential: the discrete analog of a measurable selection.
#[derive(Debug, Clone)]
pub struct CellSelection {
    pub coeffs: Vec<Vec<f64>>,
}

/// Which polytope of the codifferential a selection refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Hypo,
    Hyper,
}

/// How a region names a point of a polytope: by construction-order vertex
/// index, by the nearest gradient vector (free coefficient implied zero),
/// or by explicit convex coefficients over the vertex list.
#[derive(Debug, Clone)]
pub enum VertexPick {
    Index(usize),
    Nearest(Vec<f64>),
    Coeffs(Vec<f64>),
}

/// Region-constant selection pattern: the chosen vertex switches at the
/// `breaks` along one axis; cells are classified by their center.
#[derive(Debug, Clone)]
pub struct RegionPattern {
    pub axis: usize,
    pub breaks: Vec<f64>,
    pub picks: Vec<VertexPick>,
}

impl RegionPattern {
    /// Pattern with a single region.
    pub fn uniform(pick: VertexPick) -> Self {
        RegionPattern {
            axis: 0,
            breaks: Vec::new(),
            picks: vec![pick],
        }
    }

    pub fn region_of(&self, coord: f64) -> usize {
        self.breaks.iter().take_while(|b| coord >= **b).count()
    }
}

impl CellSelection {
    /// Point-mass selection on one vertex per cell.
    pub fn from_vertex_indices(
        func: &DiscreteFunctional,
        side: Side,
        idx: &[usize],
    ) -> Result<Self, GridError> {
        if idx.len() != func.cells.len() {
            return Err(GridError::Selection(format!(
                "{} indices for {} cells",
                idx.len(),
                func.cells.len()
            )));
        }
        let mut coeffs = Vec::with_capacity(idx.len());
        for (cell, &i) in idx.iter().enumerate() {
            let poly = match side {
                Side::Hypo => func.cells[cell].codiff.hypo(),
                Side::Hyper => func.cells[cell].codiff.hyper(),
            };
            if i >= poly.vertices().len() {
                return Err(GridError::Selection(format!(
                    "cell {cell}: vertex {i} out of range ({} vertices)",
                    poly.vertices().len()
                )));
            }
            let mut c = vec![0.0; poly.vertices().len()];
            c[i] = 1.0;
            coeffs.push(c);
        }
        Ok(CellSelection { coeffs })
    }

    /// Region-constant selection over a grid.
    pub fn from_pattern(
        func: &DiscreteFunctional,
        side: Side,
        grid: &Grid,
        pattern: &RegionPattern,
    ) -> Result<Self, GridError> {
        if pattern.axis >= grid.dim() {
            return Err(GridError::Selection(format!(
                "pattern axis {} out of range",
                pattern.axis
            )));
        }
        if pattern.picks.len() != pattern.breaks.len() + 1 {
            return Err(GridError::Selection(
                "pattern needs one pick per region".into(),
            ));
        }
        let mut coeffs = Vec::with_capacity(func.cells.len());
        for cell in 0..func.cells.len() {
            let coord = grid.cell_center(cell)[pattern.axis];
            let pick = &pattern.picks[pattern.region_of(coord)];
            let poly = match side {
                Side::Hypo => func.cells[cell].codiff.hypo(),
                Side::Hyper => func.cells[cell].codiff.hyper(),
            };
            let n = poly.vertices().len();
            let c = match pick {
                VertexPick::Index(i) => {
                    if *i >= n {
                        return Err(GridError::Selection(format!(
                            "cell {cell}: vertex {i} out of range ({n} vertices)"
                        )));
                    }
                    let mut c = vec![0.0; n];
                    c[*i] = 1.0;
                    c
                }
                VertexPick::Nearest(g) => {
                    let mut best = (f64::INFINITY, 0usize);
                    for (k, p) in poly.vertices().iter().enumerate() {
                        if p.v.len() != g.len() {
                            return Err(GridError::Selection(format!(
                                "vertex vector length {} does not match polytope dim {}",
                                g.len(),
                                p.v.len()
                            )));
                        }
                        let dist = p
                            .v
                            .iter()
                            .zip(g)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                            .hypot(p.a);
                        if dist < best.0 {
                            best = (dist, k);
                        }
                    }
                    let mut c = vec![0.0; n];
                    c[best.1] = 1.0;
                    c
                }
                VertexPick::Coeffs(c) => {
                    if c.len() != n {
                        return Err(GridError::Selection(format!(
                            "cell {cell}: {} coefficients for {n} vertices",
                            c.len()
                        )));
                    }
                    c.clone()
                }
            };
            coeffs.push(c);
        }
        let sel = CellSelection { coeffs };
        // Surface malformed coefficient data early.
        sel.induced(func, side)?;
        Ok(sel)
    }

    /// The element `(b_c, w_c)` of each cell's polytope induced by the
    /// selection: free coefficient and gradient vector per cell.
    pub fn induced(
        &self,
        func: &DiscreteFunctional,
        side: Side,
    ) -> Result<Vec<(f64, Vec<f64>)>, GridError> {
        if self.coeffs.len() != func.cells.len() {
            return Err(GridError::Selection("selection/cell count mismatch".into()));
        }
        let mut out = Vec::with_capacity(self.coeffs.len());
        for (cell, c) in self.coeffs.iter().enumerate() {
            let poly = match side {
                Side::Hypo => func.cells[cell].codiff.hypo(),
                Side::Hyper => func.cells[cell].codiff.hyper(),
            };
            if c.len() != poly.vertices().len() {
                return Err(GridError::Selection(format!(
                    "cell {cell}: {} coefficients for {} vertices",
                    c.len(),
                    poly.vertices().len()
                )));
            }
            let sum: f64 = c.iter().sum();
            if c.iter().any(|x| *x < -1e-12) || (sum - 1.0).abs() > 1e-9 {
                return Err(GridError::Selection(format!(
                    "cell {cell}: coefficients not convex (sum {sum})"
                )));
            }
            let dim = poly.dim();
            let mut b = 0.0;
            let mut w = vec![0.0; dim];
            for (x, p) in c.iter().zip(poly.vertices()) {
                b += x * p.a;
                for (wi, vi) in w.iter_mut().zip(&p.v) {
                    *wi += x * vi;
                }
            }
            out.push((b, w));
        }
        Ok(out)
    }

    /// Rejects selections whose free coefficient is not on the zero face.
    pub fn require_zero_face(
        &self,
        func: &DiscreteFunctional,
        side: Side,
    ) -> Result<Vec<Vec<f64>>, GridError> {
        let induced = self.induced(func, side)?;
        let mut out = Vec::with_capacity(induced.len());
        for (cell, (b, w)) in induced.into_iter().enumerate() {
            if b.abs() > crate::codiff::TOL_FACE {
                return Err(GridError::Selection(format!(
                    "cell {cell}: selection free coefficient {b:e} off the zero face"
                )));
            }
            out.push(w);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab11() -> Vocabulary {
        Vocabulary::Integrand { d: 1, m: 1 }
    }

    fn field_from(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> DiscreteField {
        let mut out = DiscreteField::zeros(grid, 1);
        for node in 0..grid.num_nodes() {
            out.set(0, node, f(&grid.node_coord(node)));
        }
        out
    }

    #[test]
    fn gradient_examples() {
        let grid = Grid::interval(0.0, 1.0, 4).unwrap();
        let u = field_from(&grid, |x| x[0]);
        let g = gradient(&grid, &u);
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-13));

        let u = field_from(&grid, |x| (x[0] - 0.5).abs());
        let g = gradient(&grid, &u);
        assert_eq!(g.len(), 4);
        assert!((g[0] + 1.0).abs() < 1e-13 && (g[1] + 1.0).abs() < 1e-13);
        assert!((g[2] - 1.0).abs() < 1e-13 && (g[3] - 1.0).abs() < 1e-13);

        // Dense recomputation oracle on random data.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = Grid::interval(-1.0, 2.0, 7).unwrap();
        let mut u = DiscreteField::zeros(&grid, 1);
        for n in 0..grid.num_nodes() {
            u.set(0, n, rng.gen_range(-1.0..1.0));
        }
        let g = gradient(&grid, &u);
        let h = grid.spacing(0);
        for c in 0..grid.num_cells() {
            let expect = (u.get(0, c + 1) - u.get(0, c)) / h;
            assert_eq!(g[c], expect);
        }
    }

    #[test]
    fn divergence_examples() {
        let grid = Grid::interval(0.0, 1.0, 8).unwrap();
        // Constant flux: zero interior divergence.
        let flux = vec![3.0; grid.num_cells()];
        let div = divergence(&grid, 1, &flux);
        for node in 0..grid.num_nodes() {
            if !grid.is_boundary(node) {
                assert!(div[node].abs() < 1e-13);
            }
        }
        // Flux equal to the cell center coordinate: unit divergence.
        let flux: Vec<f64> = (0..grid.num_cells())
            .map(|c| grid.cell_center(c)[0])
            .collect();
        let div = divergence(&grid, 1, &flux);
        for node in 0..grid.num_nodes() {
            if !grid.is_boundary(node) {
                assert!((div[node] - 1.0).abs() < 1e-12);
            }
        }
    }

    fn sbp_check(grid: &Grid, m: usize, rng: &mut ChaCha8Rng) {
        let d = grid.dim();
        let flux: Vec<f64> = (0..grid.num_cells() * m * d)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let mut h = DiscreteField::zeros(grid, m);
        for comp in 0..m {
            for node in 0..grid.num_nodes() {
                if !grid.is_boundary(node) {
                    h.set(comp, node, rng.gen_range(-2.0..2.0));
                }
            }
        }
        let grads = gradient(grid, &h);
        let w_c = grid.cell_volume();
        let lhs: f64 = (0..grid.num_cells() * m * d)
            .map(|i| w_c * flux[i] * grads[i])
            .sum();
        let div = divergence(grid, m, &flux);
        let w_n = grid.node_weight();
        let rhs: f64 = (0..m * grid.num_nodes())
            .map(|i| -w_n * div[i] * h.values()[i])
            .sum();
        assert!(
            (lhs - rhs).abs() < 1e-13 * 1.0f64.max(lhs.abs()),
            "sbp identity broken: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn summation_by_parts_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let g1 = Grid::interval(0.0, 1.0, 13).unwrap();
        let g2 = Grid::rectangle((-1.0, 1.0), (-1.0, 1.0), 6, 5).unwrap();
        for _ in 0..50 {
            sbp_check(&g1, 2, &mut rng);
            sbp_check(&g2, 1, &mut rng);
        }
    }

    #[test]
    fn assemble_value_examples() {
        let vocab = vocab11();
        let grid = Grid::interval(0.0, 1.0, 7).unwrap();
        let one = Expr::parse("1", &vocab).unwrap();
        let u = DiscreteField::zeros(&grid, 1);
        assert!((assemble_value(&one, &vocab, &grid, &u).unwrap() - 1.0).abs() < 1e-14);

        let dirichlet = Expr::parse("0.5*xi1^2", &vocab).unwrap();
        let u = field_from(&grid, |x| x[0]);
        assert!((assemble_value(&dirichlet, &vocab, &grid, &u).unwrap() - 0.5).abs() < 1e-14);

        let grid = Grid::interval(0.0, 1.0, 8).unwrap();
        let tv = Expr::parse("abs(xi1)", &vocab).unwrap();
        let u = field_from(&grid, |x| (x[0] - 0.5).abs());
        assert!((assemble_value(&tv, &vocab, &grid, &u).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quadrature_first_order_on_smooth_data() {
        let vocab = vocab11();
        let f = Expr::parse("sin(u1)*xi1 + 0.5*xi1^2", &vocab).unwrap();
        let exact = {
            // Fine reference.
            let grid = Grid::interval(0.0, 1.0, 4096).unwrap();
            let u = field_from(&grid, |x| (2.0 * x[0]).sin());
            assemble_value(&f, &vocab, &grid, &u).unwrap()
        };
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let grid = Grid::interval(0.0, 1.0, n).unwrap();
            let u = field_from(&grid, |x| (2.0 * x[0]).sin());
            errs.push((assemble_value(&f, &vocab, &grid, &u).unwrap() - exact).abs());
        }
        assert!(errs[1] < 0.6 * errs[0]);
        assert!(errs[2] < 0.6 * errs[1]);
    }

    #[test]
    fn assemble_codiff_smooth_and_nonsmooth() {
        let vocab = vocab11();
        let grid = Grid::interval(0.0, 1.0, 5).unwrap();
        let f = Expr::parse("0.5*xi1^2", &vocab).unwrap();
        let u = field_from(&grid, |x| x[0]);
        let func =
            assemble_codifferential(&f, &vocab, &VarSelector::u_xi(), &grid, &u).unwrap();
        for cell in &func.cells {
            assert_eq!(cell.codiff.hypo().vertices().len(), 1);
            let v = &cell.codiff.hypo().vertices()[0];
            assert!(v.a.abs() < 1e-14);
            assert!((v.v[0]).abs() < 1e-14 && (v.v[1] - 1.0).abs() < 1e-14);
        }

        // |xi1| - |xi2| at u = 0 on a rectangle: per-cell pairs match the
        // known polytopes.
        let vocab2 = Vocabulary::Integrand { d: 2, m: 1 };
        let grid2 = Grid::rectangle((-1.0, 1.0), (-1.0, 1.0), 4, 4).unwrap();
        let f2 = Expr::parse("abs(xi1) - abs(xi2)", &vocab2).unwrap();
        let u2 = DiscreteField::zeros(&grid2, 1);
        let func2 =
            assemble_codifferential(&f2, &vocab2, &VarSelector::u_xi(), &grid2, &u2).unwrap();
        for cell in &func2.cells {
            let q = cell.codiff.quasidiff().unwrap();
            assert_eq!(q.sub.len(), 2);
            assert_eq!(q.sup.len(), 2);
        }
    }

    #[test]
    fn functional_directional_derivative_examples() {
        let vocab = vocab11();
        let grid = Grid::interval(0.0, 1.0, 16).unwrap();
        // f = |u| at u = 0 along h >= 0: the derivative is the quadrature
        // integral of h.
        let f = Expr::parse("abs(u1)", &vocab).unwrap();
        let u = DiscreteField::zeros(&grid, 1);
        let func =
            assemble_codifferential(&f, &vocab, &VarSelector::u_xi(), &grid, &u).unwrap();
        let h = field_from(&grid, |x| x[0] * (1.0 - x[0]));
        let dd = functional_directional_derivative(&func, &grid, &h).unwrap();
        let avg = cell_average(&grid, &h);
        let quad: f64 = avg.iter().map(|v| grid.cell_volume() * v).sum();
        assert!((dd - quad).abs() < 1e-13);

        // Smooth case telescopes to zero for boundary-zero h.
        let f = Expr::parse("0.5*xi1^2", &vocab).unwrap();
        let u = field_from(&grid, |x| x[0]);
        let func =
            assemble_codifferential(&f, &vocab, &VarSelector::u_xi(), &grid, &u).unwrap();
        let dd = functional_directional_derivative(&func, &grid, &h).unwrap();
        assert!(dd.abs() < 1e-13);

        // Finite-difference oracle on a nonsmooth instance. Variations use
        // a few smooth modes so the quadratic term's second-order error
        // stays below the comparison tolerance.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Expr::parse("0.5*xi1^2 + abs(u1)", &vocab).unwrap();
        for _ in 0..10 {
            let u = field_from(&grid, |x| (3.0 * x[0]).sin() * 0.3);
            let amps: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let h = field_from(&grid, |x| {
                amps.iter()
                    .enumerate()
                    .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * x[0]).sin())
                    .sum()
            });
            let func =
                assemble_codifferential(&f, &vocab, &VarSelector::u_xi(), &grid, &u).unwrap();
            let dd = functional_directional_derivative(&func, &grid, &h).unwrap();
            let t = 1e-6;
            let mut ut = u.clone();
            ut.axpy(t, &h);
            let fd = (assemble_value(&f, &vocab, &grid, &ut).unwrap()
                - assemble_value(&f, &vocab, &grid, &u).unwrap())
                / t;
            assert!((dd - fd).abs() < 1e-4, "dd {dd} vs fd {fd}");
        }
    }

    #[test]
    fn csv_roundtrip_is_bit_identical() {
        let grid = Grid::rectangle((0.0, 1.0), (0.0, 2.0), 3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut u = DiscreteField::zeros(&grid, 2);
        for comp in 0..2 {
            for node in 0..grid.num_nodes() {
                u.set(comp, node, rng.gen_range(-1.0..1.0));
            }
        }
        let text = u.to_csv(&grid);
        let back = DiscreteField::from_csv(&grid, &text).unwrap();
        assert_eq!(u.values(), back.values());
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn selection_patterns() {
        let vocab = Vocabulary::Integrand { d: 2, m: 1 };
        let grid = Grid::rectangle((-1.0, 1.0), (-1.0, 1.0), 4, 4).unwrap();
        let f = Expr::parse("abs(xi1) - abs(xi2)", &vocab).unwrap();
        let u = DiscreteField::zeros(&grid, 1);
        let func =
            assemble_codifferential(&f, &vocab, &VarSelector::u_xi(), &grid, &u).unwrap();
        // Alternate the hyper vertex (0, 0, +-1) in bands of x2.
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
        let sel = CellSelection::from_pattern(&func, Side::Hyper, &grid, &pattern).unwrap();
        let w = sel.require_zero_face(&func, Side::Hyper).unwrap();
        for cell in 0..grid.num_cells() {
            let x2 = grid.cell_center(cell)[1];
            let expect = if (-1.0..-0.5).contains(&x2) || (0.0..0.5).contains(&x2) {
                1.0
            } else {
                -1.0
            };
            assert_eq!(w[cell][2], expect, "cell {cell} at x2 = {x2}");
        }
    }
}
