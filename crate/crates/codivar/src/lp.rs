//! Dense linear-programming kernel with certified outcomes.
//!
//! Every solve returns either a feasible point, a Farkas infeasibility
//! certificate, or an unboundedness ray, and the returned object is
//! re-validated by direct substitution before it leaves this module. The
//! checkers in [`crate::optimality`] and [`crate::noether`] rely on that
//! contract: a refutation of a necessary optimality condition is only ever
//! reported together with a Farkas vector that the caller can re-verify
//! independently of the solver path.
//!
//! The solver is a two-phase tableau simplex. Pivot columns are chosen by
//! the most-negative reduced cost with lowest-index tie-breaking; after a
//! run of degenerate pivots the rule switches to Bland's rule, which
//! guarantees termination. Both rules are deterministic, so identical
//! inputs produce identical outcomes.

use thiserror::Error;

/// Tolerance for witness/certificate re-validation.
pub const TOL_LP: f64 = 1e-9;

/// Pivot threshold: tableau entries below this are treated as zero.
const PIVOT_TOL: f64 = 1e-9;

/// Degenerate-pivot streak after which the entering rule switches to Bland.
const BLAND_TRIGGER: usize = 60;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// A linear program in the form
/// `min c.x  s.t.  A_eq x = b_eq,  A_le x <= b_le,  x_j >= 0 (j marked nonneg)`.
///
/// The objective is optional; without it `solve` answers pure feasibility.
/// Row and variable labels are carried along for the text dump and for
/// callers that slice the system apart when re-deriving consequences of
/// individual rows.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Option<Vec<f64>>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_le: Vec<Vec<f64>>,
    pub b_le: Vec<f64>,
    pub nonneg: Vec<bool>,
    pub var_names: Vec<String>,
    pub eq_names: Vec<String>,
    pub le_names: Vec<String>,
}

/// Farkas certificate of infeasibility: multipliers `y_eq` (free) and
/// `y_le >= 0` such that the row combination `y_eq.A_eq + y_le.A_le` is
/// componentwise `>= 0` on sign-constrained variables, `= 0` on free
/// variables, while `y_eq.b_eq + y_le.b_le < 0`.
#[derive(Debug, Clone)]
pub struct FarkasCertificate {
    pub y_eq: Vec<f64>,
    pub y_le: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Feasible { x: Vec<f64>, objective: Option<f64> },
    Infeasible { farkas: FarkasCertificate },
    Unbounded { x: Vec<f64>, ray: Vec<f64> },
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            objective: None,
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            a_le: Vec::new(),
            b_le: Vec::new(),
            nonneg: vec![false; num_vars],
            var_names: (0..num_vars).map(|j| format!("x{j}")).collect(),
            eq_names: Vec::new(),
            le_names: Vec::new(),
        }
    }

    pub fn set_objective(&mut self, c: Vec<f64>) {
        assert_eq!(c.len(), self.num_vars);
        self.objective = Some(c);
    }

    pub fn set_nonneg(&mut self, j: usize) {
        self.nonneg[j] = true;
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64, name: impl Into<String>) {
        assert_eq!(row.len(), self.num_vars);
        self.a_eq.push(row);
        self.b_eq.push(rhs);
        self.eq_names.push(name.into());
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64, name: impl Into<String>) {
        assert_eq!(row.len(), self.num_vars);
        self.a_le.push(row);
        self.b_le.push(rhs);
        self.le_names.push(name.into());
    }

    fn check_dims(&self) -> Result<(), LpError> {
        let n = self.num_vars;
        if self.nonneg.len() != n || self.var_names.len() != n {
            return Err(LpError::Dimension("variable metadata length".into()));
        }
        if let Some(c) = &self.objective {
            if c.len() != n {
                return Err(LpError::Dimension("objective length".into()));
            }
        }
        for (rows, rhs, label) in [
            (&self.a_eq, &self.b_eq, "eq"),
            (&self.a_le, &self.b_le, "le"),
        ] {
            if rows.len() != rhs.len() {
                return Err(LpError::Dimension(format!("{label} rhs length")));
            }
            for row in rows.iter() {
                if row.len() != n {
                    return Err(LpError::Dimension(format!("{label} row length")));
                }
            }
        }
        let finite = |v: &f64| v.is_finite();
        let all = self
            .a_eq
            .iter()
            .chain(self.a_le.iter())
            .all(|r| r.iter().all(finite))
            && self.b_eq.iter().all(finite)
            && self.b_le.iter().all(finite)
            && self.objective.iter().all(|c| c.iter().all(finite));
        if !all {
            return Err(LpError::Dimension("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Checks a candidate point against every row and sign constraint.
    pub fn validate_point(&self, x: &[f64], tol: f64) -> Result<(), String> {
        if x.len() != self.num_vars {
            return Err("point has wrong dimension".into());
        }
        for (i, (row, b)) in self.a_eq.iter().zip(&self.b_eq).enumerate() {
            let r = dot(row, x) - b;
            if r.abs() > tol * 1.0f64.max(b.abs()) {
                return Err(format!("eq row {i} residual {r:.3e}"));
            }
        }
        for (i, (row, b)) in self.a_le.iter().zip(&self.b_le).enumerate() {
            let r = dot(row, x) - b;
            if r > tol * 1.0f64.max(b.abs()) {
                return Err(format!("le row {i} violated by {r:.3e}"));
            }
        }
        for j in 0..self.num_vars {
            if self.nonneg[j] && x[j] < -tol {
                return Err(format!("sign constraint on var {j}: {:.3e}", x[j]));
            }
        }
        Ok(())
    }

    /// Checks a Farkas certificate by recomputing the row combination.
    pub fn validate_farkas(&self, cert: &FarkasCertificate, tol: f64) -> Result<(), String> {
        if cert.y_eq.len() != self.a_eq.len() || cert.y_le.len() != self.a_le.len() {
            return Err("certificate has wrong dimension".into());
        }
        if let Some((i, v)) = cert
            .y_le
            .iter()
            .enumerate()
            .find(|(_, v)| **v < -tol)
            .map(|(i, v)| (i, *v))
        {
            return Err(format!("negative le multiplier {v:.3e} at row {i}"));
        }
        let mut combo = vec![0.0; self.num_vars];
        let mut rhs = 0.0;
        for (y, (row, b)) in cert.y_eq.iter().zip(self.a_eq.iter().zip(&self.b_eq)) {
            for (t, a) in combo.iter_mut().zip(row) {
                *t += y * a;
            }
            rhs += y * b;
        }
        for (y, (row, b)) in cert.y_le.iter().zip(self.a_le.iter().zip(&self.b_le)) {
            for (t, a) in combo.iter_mut().zip(row) {
                *t += y * a;
            }
            rhs += y * b;
        }
        let scale = 1.0f64.max(
            cert.y_eq
                .iter()
                .chain(cert.y_le.iter())
                .fold(0.0f64, |m, v| m.max(v.abs())),
        );
        for j in 0..self.num_vars {
            if self.nonneg[j] {
                if combo[j] < -tol * scale {
                    return Err(format!("combination negative on nonneg var {j}"));
                }
            } else if combo[j].abs() > tol * scale {
                return Err(format!("combination nonzero on free var {j}"));
            }
        }
        if rhs >= -tol * scale {
            return Err(format!("combined rhs {rhs:.3e} not negative"));
        }
        Ok(())
    }

    /// Checks an unboundedness ray: feasible direction with negative cost.
    pub fn validate_ray(&self, ray: &[f64], tol: f64) -> Result<(), String> {
        if ray.len() != self.num_vars {
            return Err("ray has wrong dimension".into());
        }
        for (i, row) in self.a_eq.iter().enumerate() {
            if dot(row, ray).abs() > tol {
                return Err(format!("ray not in eq row {i} kernel"));
            }
        }
        for (i, row) in self.a_le.iter().enumerate() {
            if dot(row, ray) > tol {
                return Err(format!("ray increases le row {i}"));
            }
        }
        for j in 0..self.num_vars {
            if self.nonneg[j] && ray[j] < -tol {
                return Err(format!("ray negative on nonneg var {j}"));
            }
        }
        match &self.objective {
            Some(c) if dot(c, ray) < -tol => Ok(()),
            Some(_) => Err("ray does not improve objective".into()),
            None => Err("ray without objective".into()),
        }
    }

    /// Self-describing text dump for external cross-checking.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str("lp v1\n");
        out.push_str(&format!("vars {}\n", self.num_vars));
        for j in 0..self.num_vars {
            let sign = if self.nonneg[j] { "nonneg" } else { "free" };
            let c = self.objective.as_ref().map_or(0.0, |c| c[j]);
            out.push_str(&format!("var {j} {sign} obj={c:e} {}\n", self.var_names[j]));
        }
        let mut emit = |kind: &str, rows: &[Vec<f64>], rhs: &[f64], names: &[String]| {
            out.push_str(&format!("{kind} {}\n", rows.len()));
            for (i, row) in rows.iter().enumerate() {
                let terms: Vec<String> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| format!("{j}:{v:e}"))
                    .collect();
                let rel = if kind == "eq" { "=" } else { "<=" };
                out.push_str(&format!(
                    "row {} : {} {rel} {:e}\n",
                    names.get(i).map(String::as_str).unwrap_or(""),
                    terms.join(" "),
                    rhs[i]
                ));
            }
        };
        emit("eq", &self.a_eq, &self.b_eq, &self.eq_names);
        emit("le", &self.a_le, &self.b_le, &self.le_names);
        out.push_str("end\n");
        out
    }

    /// Solves the program. Outcomes are validated before being returned;
    /// a witness or certificate that fails re-substitution surfaces as
    /// [`LpError::Numerical`], never as a wrong answer.
    pub fn solve(&self) -> Result<LpOutcome, LpError> {
        self.check_dims()?;
        let outcome = Simplex::new(self).run()?;
        match &outcome {
            LpOutcome::Feasible { x, .. } => self
                .validate_point(x, TOL_LP)
                .map_err(|e| LpError::Numerical(format!("witness failed validation: {e}")))?,
            LpOutcome::Infeasible { farkas } => self
                .validate_farkas(farkas, TOL_LP)
                .map_err(|e| LpError::Numerical(format!("farkas failed validation: {e}")))?,
            LpOutcome::Unbounded { x, ray } => {
                self.validate_point(x, TOL_LP)
                    .map_err(|e| LpError::Numerical(format!("ray base point invalid: {e}")))?;
                self.validate_ray(ray, TOL_LP)
                    .map_err(|e| LpError::Numerical(format!("ray failed validation: {e}")))?;
            }
        }
        Ok(outcome)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mapping from a standard-form column back to the original variables.
#[derive(Clone, Copy)]
enum ColKind {
    /// Original variable with the given sign (`+1` or `-1` from splitting).
    Var(usize, f64),
    /// Slack of the given `le` row.
    Slack(usize),
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    m: usize,
    n: usize,
    width: usize,
    /// `m` rows of `width = n + m + 1` entries (structural, artificial, rhs).
    tab: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    row_active: Vec<bool>,
    col_map: Vec<ColKind>,
    flips: Vec<f64>,
    bland: bool,
    degenerate_streak: usize,
    pivots: usize,
    max_pivots: usize,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram) -> Self {
        let m = lp.a_eq.len() + lp.a_le.len();
        let mut col_map: Vec<ColKind> = Vec::new();
        for j in 0..lp.num_vars {
            col_map.push(ColKind::Var(j, 1.0));
            if !lp.nonneg[j] {
                col_map.push(ColKind::Var(j, -1.0));
            }
        }
        for i in 0..lp.a_le.len() {
            col_map.push(ColKind::Slack(i));
        }
        let n = col_map.len();
        let width = n + m + 1;
        let mut tab = vec![0.0; m * width];
        let mut flips = vec![1.0; m];
        for i in 0..m {
            let (row, rhs, slack) = if i < lp.a_eq.len() {
                (&lp.a_eq[i], lp.b_eq[i], None)
            } else {
                let k = i - lp.a_eq.len();
                (&lp.a_le[k], lp.b_le[k], Some(k))
            };
            let flip = if rhs < 0.0 { -1.0 } else { 1.0 };
            flips[i] = flip;
            let t = &mut tab[i * width..(i + 1) * width];
            for (jc, kind) in col_map.iter().enumerate() {
                t[jc] = match *kind {
                    ColKind::Var(v, s) => flip * s * row[v],
                    ColKind::Slack(k) => {
                        if Some(k) == slack {
                            flip
                        } else {
                            0.0
                        }
                    }
                };
            }
            t[n + i] = 1.0; // artificial
            t[width - 1] = flip * rhs;
        }
        let max_pivots = 50_000 + 200 * (m + n);
        Simplex {
            lp,
            m,
            n,
            width,
            tab,
            cost: vec![0.0; width],
            basis: (0..m).map(|i| n + i).collect(),
            row_active: vec![true; m],
            col_map,
            flips,
            bland: false,
            degenerate_streak: 0,
            pivots: 0,
            max_pivots,
        }
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let d = self.tab[pr * w + pc];
        for c in 0..w {
            self.tab[pr * w + c] /= d;
        }
        for r in 0..self.m {
            if r == pr || !self.row_active[r] {
                continue;
            }
            let f = self.tab[r * w + pc];
            if f != 0.0 {
                for c in 0..w {
                    self.tab[r * w + c] -= f * self.tab[pr * w + c];
                }
                self.tab[r * w + pc] = 0.0;
            }
        }
        let f = self.cost[pc];
        if f != 0.0 {
            for c in 0..w {
                self.cost[c] -= f * self.tab[pr * w + c];
            }
            self.cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Runs the simplex loop on the current cost row. `allowed` limits the
    /// entering columns. Returns the entering column when the problem is
    /// unbounded in that direction, otherwise `None` at optimality.
    fn iterate(&mut self, allowed: &dyn Fn(usize) -> bool) -> Result<Option<usize>, LpError> {
        loop {
            if self.pivots > self.max_pivots {
                return Err(LpError::Numerical("pivot limit exceeded".into()));
            }
            let mut enter: Option<usize> = None;
            if self.bland {
                for j in 0..self.n + self.m {
                    if allowed(j) && self.cost[j] < -PIVOT_TOL {
                        enter = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -PIVOT_TOL;
                for j in 0..self.n + self.m {
                    if allowed(j) && self.cost[j] < best {
                        best = self.cost[j];
                        enter = Some(j);
                    }
                }
            }
            let Some(pc) = enter else {
                return Ok(None);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if !self.row_active[i] {
                    continue;
                }
                let a = self.tab[i * self.width + pc];
                if a > PIVOT_TOL {
                    let ratio = self.tab[i * self.width + self.width - 1] / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - 1e-12
                                || (ratio < lr + 1e-12 && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                return Ok(Some(pc));
            };
            if ratio.abs() < 1e-12 {
                self.degenerate_streak += 1;
                if self.degenerate_streak > BLAND_TRIGGER {
                    self.bland = true;
                }
            } else {
                self.degenerate_streak = 0;
            }
            self.pivot(pr, pc);
        }
    }

    fn run(mut self) -> Result<LpOutcome, LpError> {
        // Phase 1: minimize the sum of artificials.
        let w = self.width;
        for c in 0..w {
            let mut s = 0.0;
            for i in 0..self.m {
                s += self.tab[i * w + c];
            }
            self.cost[c] = if c >= self.n && c < self.n + self.m {
                0.0
            } else {
                -s
            };
        }
        // Reduced cost of a basic artificial is zero; nonbasic structural
        // columns get c_j - sum of rows. The rhs slot accumulates -z.
        let n = self.n;
        self.iterate(&|j| j < n)?;
        let z1 = -self.cost[w - 1];
        let bscale = 1.0f64.max(
            self.lp
                .b_eq
                .iter()
                .chain(self.lp.b_le.iter())
                .fold(0.0f64, |m, v| m.max(v.abs())),
        );
        if z1 > TOL_LP * bscale {
            // Infeasible: the phase-1 duals give the Farkas combination.
            let mut y_eq = vec![0.0; self.lp.a_eq.len()];
            let mut y_le = vec![0.0; self.lp.a_le.len()];
            for i in 0..self.m {
                let y = 1.0 - self.cost[self.n + i];
                let v = -self.flips[i] * y;
                if i < y_eq.len() {
                    y_eq[i] = v;
                } else {
                    y_le[i - y_eq.len()] = v;
                }
            }
            for v in y_le.iter_mut() {
                if *v < 0.0 && *v > -TOL_LP {
                    *v = 0.0;
                }
            }
            return Ok(LpOutcome::Infeasible {
                farkas: FarkasCertificate { y_eq, y_le },
            });
        }
        // Drive remaining artificials out of the basis; deactivate rows
        // that prove redundant.
        for i in 0..self.m {
            if self.basis[i] < self.n || !self.row_active[i] {
                continue;
            }
            let mut found = None;
            for j in 0..self.n {
                if self.tab[i * w + j].abs() > PIVOT_TOL {
                    found = Some(j);
                    break;
                }
            }
            match found {
                Some(j) => self.pivot(i, j),
                None => self.row_active[i] = false,
            }
        }
        let objective = match &self.lp.objective {
            None => {
                let x = self.extract_point();
                return Ok(LpOutcome::Feasible { x, objective: None });
            }
            Some(c) => c.clone(),
        };
        // Phase 2 cost row over structural columns.
        let std_cost: Vec<f64> = self
            .col_map
            .iter()
            .map(|k| match *k {
                ColKind::Var(v, s) => s * objective[v],
                ColKind::Slack(_) => 0.0,
            })
            .collect();
        for c in 0..w {
            self.cost[c] = if c < self.n { std_cost[c] } else { 0.0 };
        }
        for i in 0..self.m {
            if !self.row_active[i] {
                continue;
            }
            let cb = if self.basis[i] < self.n {
                std_cost[self.basis[i]]
            } else {
                0.0
            };
            if cb != 0.0 {
                for c in 0..w {
                    self.cost[c] -= cb * self.tab[i * w + c];
                }
            }
        }
        for i in 0..self.m {
            if self.row_active[i] {
                self.cost[self.basis[i]] = 0.0;
            }
        }
        self.bland = false;
        self.degenerate_streak = 0;
        match self.iterate(&|j| j < n)? {
            None => {
                let x = self.extract_point();
                let obj = dot(&objective, &x);
                Ok(LpOutcome::Feasible {
                    x,
                    objective: Some(obj),
                })
            }
            Some(pc) => {
                let x = self.extract_point();
                let mut ray_std = vec![0.0; self.n];
                ray_std[pc] = 1.0;
                for i in 0..self.m {
                    if self.row_active[i] && self.basis[i] < self.n {
                        ray_std[self.basis[i]] = -self.tab[i * w + pc];
                    }
                }
                let mut ray = vec![0.0; self.lp.num_vars];
                for (j, kind) in self.col_map.iter().enumerate() {
                    if let ColKind::Var(v, s) = *kind {
                        ray[v] += s * ray_std[j];
                    }
                }
                Ok(LpOutcome::Unbounded { x, ray })
            }
        }
    }

    fn extract_point(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.lp.num_vars];
        for i in 0..self.m {
            if !self.row_active[i] {
                continue;
            }
            let b = self.basis[i];
            if b < self.n {
                if let ColKind::Var(v, s) = self.col_map[b] {
                    x[v] += s * self.tab[i * self.width + self.width - 1];
                }
            }
        }
        x
    }
}
