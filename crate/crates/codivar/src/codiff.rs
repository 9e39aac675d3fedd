//! Polytopal codifferential arithmetic.
//!
//! All sets are kept in V-representation: a [`Polytope`] is the convex hull
//! of finitely many `(a, v)` pairs in `R x R^n`. A [`Codifferential`] is an
//! ordered pair `[hypo, hyper]` normalized so that `max a = 0` over the
//! hypodifferential and `min a = 0` over the hyperdifferential, which makes
//! the induced model
//!
//! ```text
//! Phi(dx) = max_(a,v) (a + <v, dx>),   Psi(dx) = min_(b,w) (b + <w, dx>)
//! ```
//!
//! vanish at `dx = 0`. Codifferentials are not unique; two pairs are
//! considered equivalent when `Phi + Psi` agree as functions, and the tests
//! compare them by sampling directions rather than by vertex sets.
//!
//! Operations are pure and the types are immutable values, so everything
//! here may be used concurrently without synchronization.

use crate::linalg::{dot, norm2, solve_dense};
use crate::lp::{LinearProgram, LpOutcome};
use thiserror::Error;

/// Normalization drift allowed on the free coefficients.
pub const TOL_NORM: f64 = 1e-12;
/// Tolerance for membership in the `a = 0` face during quasidifferential
/// extraction. Wider than [`TOL_NORM`] to absorb float error accumulated by
/// Minkowski sums.
pub const TOL_FACE: f64 = 1e-9;
/// Tolerance of the LP membership test used by [`Polytope::reduce`].
pub const TOL_REDUCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CodiffError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("polytope must have at least one vertex")]
    Empty,
    #[error("non-finite entry in polytope data")]
    NonFinite,
    #[error("empty list of operands")]
    EmptyInput,
    #[error("normalization violated: {0}")]
    Normalization(String),
    #[error("empty zero-offset face (free coefficients never vanish)")]
    EmptyFace,
    #[error("lp backend failed: {0}")]
    Lp(String),
}

/// One generator `(a, v)` of a hypo- or hyperdifferential: a free scalar
/// coefficient and a gradient part.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePiece {
    pub a: f64,
    pub v: Vec<f64>,
}

impl AffinePiece {
    pub fn new(a: f64, v: Vec<f64>) -> Self {
        AffinePiece { a, v }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    fn is_finite(&self) -> bool {
        self.a.is_finite() && self.v.iter().all(|x| x.is_finite())
    }

    /// Euclidean distance in `R x R^n`.
    fn dist(&self, other: &AffinePiece) -> f64 {
        let mut s = (self.a - other.a) * (self.a - other.a);
        for (x, y) in self.v.iter().zip(&other.v) {
            s += (x - y) * (x - y);
        }
        s.sqrt()
    }
}

/// Convex hull of finitely many affine pieces, all of the same dimension.
#[derive(Debug, Clone)]
pub struct Polytope {
    dim: usize,
    verts: Vec<AffinePiece>,
}

impl Polytope {
    pub fn new(dim: usize, verts: Vec<AffinePiece>) -> Result<Self, CodiffError> {
        if verts.is_empty() {
            return Err(CodiffError::Empty);
        }
        for v in &verts {
            if v.dim() != dim {
                return Err(CodiffError::Dimension {
                    expected: dim,
                    got: v.dim(),
                });
            }
            if !v.is_finite() {
                return Err(CodiffError::NonFinite);
            }
        }
        Ok(Polytope { dim, verts })
    }

    /// The singleton `{(0, 0)}`.
    pub fn zero(dim: usize) -> Self {
        Polytope {
            dim,
            verts: vec![AffinePiece::new(0.0, vec![0.0; dim])],
        }
    }

    pub fn singleton(piece: AffinePiece) -> Self {
        Polytope {
            dim: piece.dim(),
            verts: vec![piece],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[AffinePiece] {
        &self.verts
    }

    pub fn max_a(&self) -> f64 {
        self.verts.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.a))
    }

    pub fn min_a(&self) -> f64 {
        self.verts.iter().fold(f64::INFINITY, |m, p| m.min(p.a))
    }

    fn check_dir(&self, dx: &[f64]) -> Result<(), CodiffError> {
        if dx.len() != self.dim {
            return Err(CodiffError::Dimension {
                expected: self.dim,
                got: dx.len(),
            });
        }
        Ok(())
    }

    /// `max_(a,v) (a + <v, dx>)` over the vertices.
    pub fn phi_eval(&self, dx: &[f64]) -> Result<f64, CodiffError> {
        self.check_dir(dx)?;
        Ok(self
            .verts
            .iter()
            .map(|p| p.a + dot(&p.v, dx))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// `min_(b,w) (b + <w, dx>)` over the vertices.
    pub fn psi_eval(&self, dx: &[f64]) -> Result<f64, CodiffError> {
        self.check_dir(dx)?;
        Ok(self
            .verts
            .iter()
            .map(|p| p.a + dot(&p.v, dx))
            .fold(f64::INFINITY, f64::min))
    }

    /// Elementwise Minkowski sum.
    pub fn minkowski_sum(&self, other: &Polytope) -> Result<Polytope, CodiffError> {
        if self.dim != other.dim {
            return Err(CodiffError::Dimension {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut verts = Vec::with_capacity(self.verts.len() * other.verts.len());
        for p in &self.verts {
            for q in &other.verts {
                let v = p.v.iter().zip(&q.v).map(|(x, y)| x + y).collect();
                verts.push(AffinePiece::new(p.a + q.a, v));
            }
        }
        Ok(Polytope {
            dim: self.dim,
            verts,
        })
    }

    /// Elementwise scaling `lambda * A` (any sign of `lambda`).
    pub fn scale(&self, lambda: f64) -> Polytope {
        Polytope {
            dim: self.dim,
            verts: self
                .verts
                .iter()
                .map(|p| AffinePiece::new(lambda * p.a, p.v.iter().map(|x| lambda * x).collect()))
                .collect(),
        }
    }

    pub fn translate(&self, shift: &AffinePiece) -> Result<Polytope, CodiffError> {
        Polytope::singleton(shift.clone()).minkowski_sum(self)
    }

    fn shift_a(&mut self, delta: f64) {
        for p in &mut self.verts {
            p.a += delta;
        }
    }

    /// Applies the adjoint of the linear map `m` (old = m * new) to the
    /// gradient parts: every `(a, v)` becomes `(a, m^T v)`.
    pub fn map_gradients(&self, m: &[Vec<f64>]) -> Result<Polytope, CodiffError> {
        if m.len() != self.dim {
            return Err(CodiffError::Dimension {
                expected: self.dim,
                got: m.len(),
            });
        }
        let new_dim = m.first().map_or(0, Vec::len);
        if m.iter().any(|row| row.len() != new_dim) {
            return Err(CodiffError::Dimension {
                expected: new_dim,
                got: 0,
            });
        }
        let verts = self
            .verts
            .iter()
            .map(|p| {
                let mut v = vec![0.0; new_dim];
                for (mi, pi) in m.iter().zip(&p.v) {
                    for (vj, mij) in v.iter_mut().zip(mi) {
                        *vj += pi * mij;
                    }
                }
                AffinePiece::new(p.a, v)
            })
            .collect();
        Ok(Polytope {
            dim: new_dim,
            verts,
        })
    }

    /// Removes vertices expressible as convex combinations of the others.
    /// Membership is decided by a small feasibility LP per vertex; the
    /// support function is unchanged up to [`TOL_REDUCE`].
    pub fn reduce(&self) -> Polytope {
        if self.verts.len() <= 1 {
            return self.clone();
        }
        let mut keep: Vec<bool> = vec![true; self.verts.len()];
        for i in 0..self.verts.len() {
            let others: Vec<usize> = (0..self.verts.len())
                .filter(|&j| j != i && keep[j])
                .collect();
            if others.is_empty() {
                break;
            }
            // Cheap exact-duplicate test first.
            if others
                .iter()
                .any(|&j| self.verts[j].dist(&self.verts[i]) <= TOL_REDUCE)
            {
                keep[i] = false;
                continue;
            }
            if others.len() == 1 {
                continue;
            }
            let mut lp = LinearProgram::new(others.len());
            for j in 0..others.len() {
                lp.set_nonneg(j);
            }
            for coord in 0..=self.dim {
                let row: Vec<f64> = others
                    .iter()
                    .map(|&j| {
                        if coord == 0 {
                            self.verts[j].a
                        } else {
                            self.verts[j].v[coord - 1]
                        }
                    })
                    .collect();
                let rhs = if coord == 0 {
                    self.verts[i].a
                } else {
                    self.verts[i].v[coord - 1]
                };
                lp.add_eq(row, rhs, format!("coord{coord}"));
            }
            lp.add_eq(vec![1.0; others.len()], 1.0, "convex");
            if let Ok(LpOutcome::Feasible { x, .. }) = lp.solve() {
                // Re-check the combination at the stricter reduce tolerance.
                let mut residual = (dot(
                    &x,
                    &others.iter().map(|&j| self.verts[j].a).collect::<Vec<_>>(),
                ) - self.verts[i].a)
                    .abs();
                for coord in 0..self.dim {
                    let comb: f64 = others
                        .iter()
                        .zip(&x)
                        .map(|(&j, w)| w * self.verts[j].v[coord])
                        .sum();
                    residual = residual.max((comb - self.verts[i].v[coord]).abs());
                }
                if residual <= TOL_REDUCE.max(1e-12 * self.magnitude()) {
                    keep[i] = false;
                }
            }
        }
        let verts: Vec<AffinePiece> = self
            .verts
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(p, _)| p.clone())
            .collect();
        Polytope {
            dim: self.dim,
            verts,
        }
    }

    fn magnitude(&self) -> f64 {
        self.verts
            .iter()
            .map(|p| p.a.abs().max(p.v.iter().fold(0.0f64, |m, x| m.max(x.abs()))))
            .fold(0.0, f64::max)
    }

    /// Hausdorff distance between two polytopes in `R x R^n`.
    ///
    /// The distance function to a convex set is convex, so its supremum
    /// over a polytope is attained at a vertex; the inner minimization is
    /// the exact distance from a point to the other polytope, computed as a
    /// minimum-norm point over convex coefficients.
    pub fn hausdorff_distance(&self, other: &Polytope) -> Result<f64, CodiffError> {
        if self.dim != other.dim {
            return Err(CodiffError::Dimension {
                expected: self.dim,
                got: other.dim,
            });
        }
        let one_sided = |from: &Polytope, to: &Polytope| -> f64 {
            from.verts
                .iter()
                .map(|p| dist_point_to_hull(p, &to.verts))
                .fold(0.0, f64::max)
        };
        Ok(one_sided(self, other).max(one_sided(other, self)))
    }
}

/// Distance from `p` to the convex hull of `points` via Wolfe's
/// minimum-norm-point algorithm on the shifted set.
fn dist_point_to_hull(p: &AffinePiece, points: &[AffinePiece]) -> f64 {
    let dim = p.dim() + 1;
    let qs: Vec<Vec<f64>> = points
        .iter()
        .map(|q| {
            let mut row = Vec::with_capacity(dim);
            row.push(q.a - p.a);
            row.extend(q.v.iter().zip(&p.v).map(|(x, y)| x - y));
            row
        })
        .collect();
    min_norm_in_hull(&qs)
}

/// Norm of the minimum-norm point of `co(qs)` (Wolfe's algorithm).
fn min_norm_in_hull(qs: &[Vec<f64>]) -> f64 {
    assert!(!qs.is_empty());
    let eps = 1e-12;
    // Start from the shortest generator.
    let start = (0..qs.len())
        .min_by(|&i, &j| norm2(&qs[i]).total_cmp(&norm2(&qs[j])))
        .unwrap();
    let mut corral: Vec<usize> = vec![start];
    let mut lambda: Vec<f64> = vec![1.0];
    let mut x = qs[start].clone();
    for _ in 0..200 {
        // Major step: most violating generator.
        let xx = dot(&x, &x);
        if xx <= eps {
            return 0.0;
        }
        let (jbest, sbest) = (0..qs.len())
            .map(|j| (j, dot(&x, &qs[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if sbest >= xx - eps * (1.0 + xx) {
            return xx.sqrt();
        }
        if !corral.contains(&jbest) {
            corral.push(jbest);
            lambda.push(0.0);
        }
        // Minor loop: project onto the affine hull of the corral, walking
        // back toward the previous point whenever a weight leaves the
        // simplex, and dropping the vanished generators.
        for _ in 0..200 {
            let k = corral.len();
            let mut sys = vec![vec![0.0; k + 1]; k + 1];
            let mut rhs = vec![0.0; k + 1];
            for r in 0..k {
                for c in 0..k {
                    sys[r][c] = dot(&qs[corral[r]], &qs[corral[c]]);
                }
                sys[r][r] += 1e-13;
                sys[r][k] = 1.0;
                sys[k][r] = 1.0;
            }
            rhs[k] = 1.0;
            let alpha = match solve_dense(&sys, &rhs) {
                Some(sol) => sol[..k].to_vec(),
                None => break,
            };
            if alpha.iter().all(|&a| a > eps) {
                lambda = alpha;
                break;
            }
            let mut theta = 1.0f64;
            for (l, a) in lambda.iter().zip(&alpha) {
                if *a < eps {
                    let t = l / (l - a);
                    if t < theta {
                        theta = t;
                    }
                }
            }
            let mut next_corral = Vec::new();
            let mut next_lambda = Vec::new();
            for (i, (&l, &a)) in lambda.iter().zip(&alpha).enumerate() {
                let w = (1.0 - theta) * l + theta * a;
                if w > eps {
                    next_corral.push(corral[i]);
                    next_lambda.push(w);
                }
            }
            if next_corral.is_empty() {
                next_corral.push(corral[0]);
                next_lambda.push(1.0);
            }
            corral = next_corral;
            lambda = next_lambda;
        }
        let total: f64 = lambda.iter().sum();
        x = vec![0.0; qs[0].len()];
        for (&j, &l) in corral.iter().zip(&lambda) {
            for (xi, qi) in x.iter_mut().zip(&qs[j]) {
                *xi += l / total * qi;
            }
        }
    }
    norm2(&x)
}

/// Pair `[hypo, hyper]` with the sign normalization `a <= 0, max a = 0`
/// on the hypodifferential and `b >= 0, min b = 0` on the
/// hyperdifferential.
#[derive(Debug, Clone)]
pub struct Codifferential {
    hypo: Polytope,
    hyper: Polytope,
}

impl Codifferential {
    /// Builds a codifferential, re-normalizing free coefficients that have
    /// drifted by float error. Drift beyond `1e-6` indicates a construction
    /// bug and is rejected.
    pub fn new(hypo: Polytope, hyper: Polytope) -> Result<Self, CodiffError> {
        if hypo.dim() != hyper.dim() {
            return Err(CodiffError::Dimension {
                expected: hypo.dim(),
                got: hyper.dim(),
            });
        }
        let mut hypo = hypo;
        let mut hyper = hyper;
        let amax = hypo.max_a();
        if amax.abs() > 1e-6 * (1.0 + hypo.magnitude()) {
            return Err(CodiffError::Normalization(format!(
                "hypo max free coefficient {amax:e}"
            )));
        }
        hypo.shift_a(-amax);
        let bmin = hyper.min_a();
        if bmin.abs() > 1e-6 * (1.0 + hyper.magnitude()) {
            return Err(CodiffError::Normalization(format!(
                "hyper min free coefficient {bmin:e}"
            )));
        }
        hyper.shift_a(-bmin);
        Ok(Codifferential { hypo, hyper })
    }

    /// Codifferential of a smooth function with gradient `grad`:
    /// `[{(0, grad)}, {0}]`.
    pub fn of_gradient(grad: Vec<f64>) -> Self {
        let dim = grad.len();
        Codifferential {
            hypo: Polytope::singleton(AffinePiece::new(0.0, grad)),
            hyper: Polytope::zero(dim),
        }
    }

    /// Codifferential of a constant: `[{0}, {0}]`.
    pub fn zero(dim: usize) -> Self {
        Codifferential {
            hypo: Polytope::zero(dim),
            hyper: Polytope::zero(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.hypo.dim()
    }

    pub fn hypo(&self) -> &Polytope {
        &self.hypo
    }

    pub fn hyper(&self) -> &Polytope {
        &self.hyper
    }

    pub fn phi(&self, dx: &[f64]) -> Result<f64, CodiffError> {
        self.hypo.phi_eval(dx)
    }

    pub fn psi(&self, dx: &[f64]) -> Result<f64, CodiffError> {
        self.hyper.psi_eval(dx)
    }

    /// The DC model `Phi(dx) + Psi(dx)`.
    pub fn dc_model(&self, dx: &[f64]) -> Result<f64, CodiffError> {
        Ok(self.phi(dx)? + self.psi(dx)?)
    }

    fn reduce(self) -> Self {
        Codifferential {
            hypo: self.hypo.reduce(),
            hyper: self.hyper.reduce(),
        }
        .canonicalize()
    }

    /// When both polytopes are singletons the function is smooth at the
    /// point and `Phi + Psi` is linear; fold the pair into the canonical
    /// `[{(0, g)}, {0}]` form. This keeps negations and subtractions of
    /// smooth subexpressions from parking gradients on the hyper side,
    /// so the construction reproduces the textbook pairs for `abs`,
    /// `max` and `min` of smooth arguments.
    fn canonicalize(self) -> Self {
        if self.hypo.verts.len() == 1 && self.hyper.verts.len() == 1 {
            let g: Vec<f64> = self.hypo.verts[0]
                .v
                .iter()
                .zip(&self.hyper.verts[0].v)
                .map(|(a, b)| a + b)
                .collect();
            if g.iter().all(|x| *x == 0.0) {
                return Codifferential::zero(self.dim());
            }
            return Codifferential::of_gradient(g);
        }
        self
    }

    /// Linear combination `sum lambda_i D_i` with the sign rule
    /// `lambda [A, B] = [lambda A, lambda B]` for `lambda >= 0` and
    /// `[lambda B, lambda A]` otherwise.
    pub fn linear_combine(terms: &[(f64, &Codifferential)]) -> Result<Self, CodiffError> {
        let (_, first) = terms.first().ok_or(CodiffError::EmptyInput)?;
        let dim = first.dim();
        let mut hypo = Polytope::zero(dim);
        let mut hyper = Polytope::zero(dim);
        for (lambda, cd) in terms {
            if cd.dim() != dim {
                return Err(CodiffError::Dimension {
                    expected: dim,
                    got: cd.dim(),
                });
            }
            let (h_part, g_part) = if *lambda >= 0.0 {
                (cd.hypo.scale(*lambda), cd.hyper.scale(*lambda))
            } else {
                (cd.hyper.scale(*lambda), cd.hypo.scale(*lambda))
            };
            hypo = hypo.minkowski_sum(&h_part)?;
            hyper = hyper.minkowski_sum(&g_part)?;
        }
        Codifferential::new(hypo, hyper).map(Self::reduce)
    }

    /// Pointwise maximum rule. `values[i]` must be `f_i` evaluated at the
    /// point in question; the shifts `f_i - max_j f_j` enter the free
    /// coefficients.
    pub fn max_rule(cds: &[&Codifferential], values: &[f64]) -> Result<Self, CodiffError> {
        if cds.is_empty() || cds.len() != values.len() {
            return Err(CodiffError::EmptyInput);
        }
        let dim = cds[0].dim();
        let fmax = values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let mut hypo_verts: Vec<AffinePiece> = Vec::new();
        let mut hyper = Polytope::zero(dim);
        for cd in cds {
            if cd.dim() != dim {
                return Err(CodiffError::Dimension {
                    expected: dim,
                    got: cd.dim(),
                });
            }
            hyper = hyper.minkowski_sum(&cd.hyper)?;
        }
        for (i, cd) in cds.iter().enumerate() {
            let shift = AffinePiece::new(values[i] - fmax, vec![0.0; dim]);
            let mut piece = cd.hypo.translate(&shift)?;
            for (j, other) in cds.iter().enumerate() {
                if j != i {
                    piece = piece.minkowski_sum(&other.hyper.scale(-1.0))?;
                }
            }
            hypo_verts.extend(piece.verts);
        }
        let hypo = Polytope::new(dim, hypo_verts)?;
        Codifferential::new(hypo, hyper).map(Self::reduce)
    }

    /// Pointwise minimum rule; the dual of [`Self::max_rule`].
    pub fn min_rule(cds: &[&Codifferential], values: &[f64]) -> Result<Self, CodiffError> {
        if cds.is_empty() || cds.len() != values.len() {
            return Err(CodiffError::EmptyInput);
        }
        let dim = cds[0].dim();
        let fmin = values.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let mut hyper_verts: Vec<AffinePiece> = Vec::new();
        let mut hypo = Polytope::zero(dim);
        for cd in cds {
            if cd.dim() != dim {
                return Err(CodiffError::Dimension {
                    expected: dim,
                    got: cd.dim(),
                });
            }
            hypo = hypo.minkowski_sum(&cd.hypo)?;
        }
        for (i, cd) in cds.iter().enumerate() {
            let shift = AffinePiece::new(values[i] - fmin, vec![0.0; dim]);
            let mut piece = cd.hyper.translate(&shift)?;
            for (j, other) in cds.iter().enumerate() {
                if j != i {
                    piece = piece.minkowski_sum(&other.hypo.scale(-1.0))?;
                }
            }
            hyper_verts.extend(piece.verts);
        }
        let hyper = Polytope::new(dim, hyper_verts)?;
        Codifferential::new(hypo, hyper).map(Self::reduce)
    }

    /// Chain rule through a smooth outer function: `partials[i]` is
    /// `dg/dy_i` evaluated at `(f_1(x), ..., f_m(x))`.
    pub fn compose_smooth(
        partials: &[f64],
        cds: &[&Codifferential],
    ) -> Result<Self, CodiffError> {
        if partials.len() != cds.len() {
            return Err(CodiffError::EmptyInput);
        }
        let terms: Vec<(f64, &Codifferential)> =
            partials.iter().copied().zip(cds.iter().copied()).collect();
        Codifferential::linear_combine(&terms)
    }

    /// Precomposition with an affine map whose constant Jacobian is `m`
    /// (`m` maps the new variables to the old ones): every vertex `(a, v)`
    /// becomes `(a, m^T v)`.
    pub fn precompose_affine(&self, m: &[Vec<f64>]) -> Result<Self, CodiffError> {
        let hypo = self.hypo.map_gradients(m)?;
        let hyper = self.hyper.map_gradients(m)?;
        Codifferential::new(hypo, hyper)
    }

    /// Extracts the quasidifferential: the gradient parts of the `a = 0`
    /// faces of the two polytopes.
    pub fn quasidiff(&self) -> Result<Quasidifferential, CodiffError> {
        let sub: Vec<Vec<f64>> = self
            .hypo
            .verts
            .iter()
            .filter(|p| p.a.abs() <= TOL_FACE)
            .map(|p| p.v.clone())
            .collect();
        let sup: Vec<Vec<f64>> = self
            .hyper
            .verts
            .iter()
            .filter(|p| p.a.abs() <= TOL_FACE)
            .map(|p| p.v.clone())
            .collect();
        if sub.is_empty() || sup.is_empty() {
            return Err(CodiffError::EmptyFace);
        }
        Ok(Quasidifferential {
            dim: self.dim(),
            sub,
            sup,
        })
    }

    /// Directional derivative `max_{sub} <.,v> + min_{sup} <.,v>`.
    pub fn directional_derivative(&self, v: &[f64]) -> Result<f64, CodiffError> {
        self.quasidiff()?.directional_derivative(v)
    }

    /// Maximum gap of the DC models over the sampled directions; two
    /// codifferentials of the same function should agree here even when
    /// their vertex sets differ.
    pub fn dc_distance(&self, other: &Codifferential, dirs: &[Vec<f64>]) -> Result<f64, CodiffError> {
        let mut worst = 0.0f64;
        for d in dirs {
            let gap = (self.dc_model(d)? - other.dc_model(d)?).abs();
            worst = worst.max(gap);
        }
        Ok(worst)
    }
}

/// Pair `[sub, sup]` of gradient sets representing a directional
/// derivative as `max <.,v> + min <.,v>`.
#[derive(Debug, Clone)]
pub struct Quasidifferential {
    dim: usize,
    pub sub: Vec<Vec<f64>>,
    pub sup: Vec<Vec<f64>>,
}

impl Quasidifferential {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn directional_derivative(&self, v: &[f64]) -> Result<f64, CodiffError> {
        if v.len() != self.dim {
            return Err(CodiffError::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mx = self
            .sub
            .iter()
            .map(|g| dot(g, v))
            .fold(f64::NEG_INFINITY, f64::max);
        let mn = self
            .sup
            .iter()
            .map(|g| dot(g, v))
            .fold(f64::INFINITY, f64::min);
        Ok(mx + mn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn piece(a: f64, v: &[f64]) -> AffinePiece {
        AffinePiece::new(a, v.to_vec())
    }

    fn poly(dim: usize, verts: &[(f64, &[f64])]) -> Polytope {
        Polytope::new(
            dim,
            verts.iter().map(|(a, v)| piece(*a, v)).collect(),
        )
        .unwrap()
    }

    /// Codifferential of |x| at the point `x` (1D).
    fn abs_cd(x: f64) -> Codifferential {
        let id = Codifferential::of_gradient(vec![1.0]);
        let neg = Codifferential::of_gradient(vec![-1.0]);
        Codifferential::max_rule(&[&id, &neg], &[x, -x]).unwrap()
    }

    #[test]
    fn phi_eval_examples() {
        let p = poly(1, &[(0.0, &[1.0]), (0.0, &[-1.0])]);
        assert_eq!(p.phi_eval(&[0.0]).unwrap(), 0.0);
        // |xi| - |u| at the origin: hypo in the xi-slot only.
        let h = poly(2, &[(0.0, &[0.0, 1.0]), (0.0, &[0.0, -1.0])]);
        assert_eq!(h.phi_eval(&[0.0, 2.0]).unwrap(), 2.0);
        assert!(p.phi_eval(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn psi_eval_examples() {
        let z = Polytope::zero(1);
        assert_eq!(z.psi_eval(&[17.0]).unwrap(), 0.0);
        let p = poly(1, &[(0.0, &[1.0]), (0.0, &[-1.0])]);
        assert_eq!(p.psi_eval(&[3.0]).unwrap(), -3.0);
    }

    #[test]
    fn random_phi_psi_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let dim = rng.gen_range(1..4);
            let verts: Vec<AffinePiece> = (0..rng.gen_range(1..6))
                .map(|_| {
                    AffinePiece::new(
                        -rng.gen_range(0.0..2.0),
                        (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    )
                })
                .collect();
            let p = Polytope::new(dim, verts.clone()).unwrap();
            let dx: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let brute_max = verts
                .iter()
                .map(|v| v.a + dot(&v.v, &dx))
                .fold(f64::NEG_INFINITY, f64::max);
            let brute_min = verts
                .iter()
                .map(|v| v.a + dot(&v.v, &dx))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(p.phi_eval(&dx).unwrap(), brute_max);
            assert_eq!(p.psi_eval(&dx).unwrap(), brute_min);
        }
    }

    #[test]
    fn linear_combine_examples() {
        let g1 = Codifferential::of_gradient(vec![2.0]);
        let g2 = Codifferential::of_gradient(vec![-0.5]);
        let sum = Codifferential::linear_combine(&[(1.0, &g1), (1.0, &g2)]).unwrap();
        assert_eq!(sum.hypo().vertices().len(), 1);
        assert_eq!(sum.hypo().vertices()[0].v, vec![1.5]);

        // Negation swaps hypo and hyper.
        let p = Codifferential::new(
            poly(1, &[(0.0, &[1.0]), (0.0, &[-1.0])]),
            Polytope::zero(1),
        )
        .unwrap();
        let neg = Codifferential::linear_combine(&[(-1.0, &p)]).unwrap();
        assert_eq!(neg.hypo().vertices().len(), 1);
        assert_eq!(neg.hyper().vertices().len(), 2);

        // 2 * D|x| at x = 1.
        let d = abs_cd(1.0);
        let scaled = Codifferential::linear_combine(&[(2.0, &d)]).unwrap();
        for dx in [-1.0, -0.3, 0.0, 0.7, 2.0] {
            let expect = 2.0 * d.phi(&[dx]).unwrap();
            assert!((scaled.phi(&[dx]).unwrap() - expect).abs() < 1e-12);
        }
        let mut verts: Vec<(f64, f64)> = scaled
            .hypo()
            .vertices()
            .iter()
            .map(|p| (p.a, p.v[0]))
            .collect();
        verts.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(verts, vec![(-4.0, -2.0), (0.0, 2.0)]);
    }

    #[test]
    fn max_rule_reproduces_abs() {
        let d = abs_cd(0.0);
        let mut verts: Vec<f64> = d.hypo().vertices().iter().map(|p| p.v[0]).collect();
        verts.sort_by(f64::total_cmp);
        assert_eq!(verts, vec![-1.0, 1.0]);
        assert!(d.hypo().vertices().iter().all(|p| p.a == 0.0));
        assert_eq!(d.hyper().vertices().len(), 1);

        let single = Codifferential::max_rule(&[&d], &[0.0]).unwrap();
        assert!(d.dc_distance(&single, &dirs(1, 20)).unwrap() < 1e-12);
    }

    #[test]
    fn min_rule_examples() {
        let id = Codifferential::of_gradient(vec![1.0]);
        let neg = Codifferential::of_gradient(vec![-1.0]);
        // min{x, -x} at 0.
        let d = Codifferential::min_rule(&[&id, &neg], &[0.0, 0.0]).unwrap();
        assert_eq!(d.hypo().vertices().len(), 1);
        assert_eq!(d.hypo().vertices()[0].v, vec![0.0]);
        let mut verts: Vec<f64> = d.hyper().vertices().iter().map(|p| p.v[0]).collect();
        verts.sort_by(f64::total_cmp);
        assert_eq!(verts, vec![-1.0, 1.0]);

        let single = Codifferential::min_rule(&[&d], &[0.0]).unwrap();
        assert!(d.dc_distance(&single, &dirs(1, 20)).unwrap() < 1e-12);

        // -|u| at u = 1 via min{u, -u}: shifts (f_i - f) are (2, 0); the
        // model must match 1 - |1 + dx| exactly away from second order.
        let d = Codifferential::min_rule(&[&id, &neg], &[1.0, -1.0]).unwrap();
        assert_eq!(d.hypo().vertices().len(), 1);
        for dx in [-3.0, -2.0, -1.0, -0.5, 0.0, 1.0] {
            let inc = -(1.0f64 + dx).abs() - (-1.0);
            assert!((d.dc_model(&[dx]).unwrap() - inc).abs() < 1e-12);
        }
        assert!((d.hyper().min_a() - 0.0).abs() < 1e-15);
        assert!(d.hyper().max_a() <= 2.0 + 1e-15);
    }

    #[test]
    fn compose_smooth_examples() {
        let d = abs_cd(1.0);
        // g(y) = y.
        let same = Codifferential::compose_smooth(&[1.0], &[&d]).unwrap();
        assert!(d.dc_distance(&same, &dirs(1, 20)).unwrap() < 1e-12);
        // g(y) = y^2 with f = |x| at 1: partial 2f(1) = 2.
        let sq = Codifferential::compose_smooth(&[2.0], &[&d]).unwrap();
        let direct = Codifferential::linear_combine(&[(2.0, &d)]).unwrap();
        assert!(sq.dc_distance(&direct, &dirs(1, 20)).unwrap() < 1e-12);
        // g(y1, y2) = y1 + y2 equals linear_combine with unit weights.
        let e = abs_cd(-0.5);
        let a = Codifferential::compose_smooth(&[1.0, 1.0], &[&d, &e]).unwrap();
        let b = Codifferential::linear_combine(&[(1.0, &d), (1.0, &e)]).unwrap();
        assert!(a.dc_distance(&b, &dirs(1, 20)).unwrap() < 1e-12);
    }

    #[test]
    fn precompose_affine_examples() {
        let d = abs_cd(0.3);
        let id = vec![vec![1.0]];
        let same = d.precompose_affine(&id).unwrap();
        assert!(d.dc_distance(&same, &dirs(1, 20)).unwrap() < 1e-12);

        // Forward difference stencil on a singleton.
        let h = 0.25;
        let g = Codifferential::of_gradient(vec![1.0]);
        let m = vec![vec![-1.0 / h, 1.0 / h]];
        let mapped = g.precompose_affine(&m).unwrap();
        assert_eq!(mapped.hypo().vertices()[0].v, vec![-4.0, 4.0]);

        // Phi_new(dy) = Phi_old(M dy) on random data.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let old_dim = rng.gen_range(1..4);
            let new_dim = rng.gen_range(1..4);
            let verts: Vec<AffinePiece> = (0..rng.gen_range(1..5))
                .map(|_| {
                    AffinePiece::new(
                        -rng.gen_range(0.0..1.0),
                        (0..old_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    )
                })
                .collect();
            let mut hypo = Polytope::new(old_dim, verts).unwrap();
            hypo.shift_a(-hypo.max_a());
            let cd = Codifferential::new(hypo, Polytope::zero(old_dim)).unwrap();
            let m: Vec<Vec<f64>> = (0..old_dim)
                .map(|_| (0..new_dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let mapped = cd.precompose_affine(&m).unwrap();
            for _ in 0..10 {
                let dy: Vec<f64> = (0..new_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let mut dx = vec![0.0; old_dim];
                for i in 0..old_dim {
                    dx[i] = dot(&m[i], &dy);
                }
                assert!(
                    (mapped.phi(&dy).unwrap() - cd.phi(&dx).unwrap()).abs() < 1e-12
                );
            }
        }
    }

    #[test]
    fn quasidiff_examples() {
        let d = abs_cd(1.0);
        let q = d.quasidiff().unwrap();
        assert_eq!(q.sub, vec![vec![1.0]]);
        assert_eq!(q.sup, vec![vec![0.0]]);

        let d0 = abs_cd(0.0);
        let q0 = d0.quasidiff().unwrap();
        assert_eq!(q0.sub.len(), 2);

        // max{-|u|, -|xi|} at the origin: sub has the four unit vertices.
        let hypo = poly(
            2,
            &[
                (0.0, &[1.0, 0.0]),
                (0.0, &[-1.0, 0.0]),
                (0.0, &[0.0, 1.0]),
                (0.0, &[0.0, -1.0]),
            ],
        );
        let cd = Codifferential::new(hypo, Polytope::zero(2)).unwrap();
        let q = cd.quasidiff().unwrap();
        assert_eq!(q.sub.len(), 4);
    }

    #[test]
    fn directional_derivative_examples() {
        let d0 = abs_cd(0.0);
        assert!((d0.directional_derivative(&[1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((d0.directional_derivative(&[-1.0]).unwrap() - 1.0).abs() < 1e-12);

        // f = |xi| - |u| at the origin; v = (1, 1) gives |1| - |1| = 0.
        let abs_u = {
            let iu = Codifferential::of_gradient(vec![1.0, 0.0]);
            let nu = Codifferential::of_gradient(vec![-1.0, 0.0]);
            Codifferential::max_rule(&[&iu, &nu], &[0.0, 0.0]).unwrap()
        };
        let abs_xi = {
            let ix = Codifferential::of_gradient(vec![0.0, 1.0]);
            let nx = Codifferential::of_gradient(vec![0.0, -1.0]);
            Codifferential::max_rule(&[&ix, &nx], &[0.0, 0.0]).unwrap()
        };
        let f = Codifferential::linear_combine(&[(1.0, &abs_xi), (-1.0, &abs_u)]).unwrap();
        assert!(f.directional_derivative(&[1.0, 1.0]).unwrap().abs() < 1e-12);
        assert!((f.directional_derivative(&[2.0, 0.0]).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_examples() {
        let p = poly(1, &[(0.0, &[0.0]), (0.0, &[2.0])]);
        assert!(p.hausdorff_distance(&p).unwrap() < 1e-12);

        let a = poly(1, &[(0.0, &[0.0])]);
        let b = poly(1, &[(0.0, &[3.0])]);
        assert!((a.hausdorff_distance(&b).unwrap() - 3.0).abs() < 1e-10);

        let mid = poly(1, &[(0.0, &[1.0])]);
        assert!((p.hausdorff_distance(&mid).unwrap() - 1.0).abs() < 1e-10);

        // Distance also sees the free coefficient.
        let lifted = poly(1, &[(2.0, &[0.0])]);
        assert!((a.hausdorff_distance(&lifted).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn reduce_examples() {
        let p = poly(1, &[(0.0, &[0.0]), (0.0, &[1.0]), (0.0, &[0.5])]);
        let r = p.reduce();
        assert_eq!(r.vertices().len(), 2);

        let q = poly(1, &[(0.0, &[0.0]), (0.0, &[1.0])]);
        assert_eq!(q.reduce().vertices().len(), 2);
    }

    fn dirs(dim: usize, count: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        (0..count)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect()
    }

    proptest! {
        #[test]
        fn reduce_preserves_support(vals in proptest::collection::vec((-2.0f64..0.0, -3.0f64..3.0, -3.0f64..3.0), 1..7)) {
            let verts: Vec<AffinePiece> = vals
                .iter()
                .map(|(a, x, y)| AffinePiece::new(*a, vec![*x, *y]))
                .collect();
            let p = Polytope::new(2, verts).unwrap();
            let r = p.reduce();
            for d in dirs(2, 100) {
                let lhs = p.phi_eval(&d).unwrap();
                let rhs = r.phi_eval(&d).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-8, "phi changed: {lhs} vs {rhs}");
            }
        }

        #[test]
        fn combine_keeps_normalization(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = abs_cd(rng.gen_range(-1.0..1.0));
            let b = abs_cd(rng.gen_range(-1.0..1.0));
            let l1 = rng.gen_range(-2.0..2.0);
            let l2 = rng.gen_range(-2.0..2.0);
            let c = Codifferential::linear_combine(&[(l1, &a), (l2, &b)]).unwrap();
            prop_assert!(c.hypo().max_a().abs() <= TOL_NORM);
            prop_assert!(c.hyper().min_a().abs() <= TOL_NORM);
            prop_assert!(c.hypo().vertices().iter().all(|p| p.a <= TOL_NORM));
            prop_assert!(c.hyper().vertices().iter().all(|p| p.a >= -TOL_NORM));
        }
    }

    #[test]
    fn lipschitz_bound_along_segments() {
        // |f(x1) - f(x2)| <= 2 K |x1 - x2| with K a bound on vertex norms.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = |x: f64| (x.abs() - 1.0f64).abs(); // nested kinks
        let cd_at = |x: f64| {
            let inner = abs_cd(x);
            let one = Codifferential::zero(1);
            let shifted = Codifferential::linear_combine(&[(1.0, &inner), (1.0, &one)]).unwrap();
            // |x| - 1 followed by another absolute value via the max rule.
            let v = x.abs() - 1.0;
            let neg = Codifferential::linear_combine(&[(-1.0, &shifted)]).unwrap();
            Codifferential::max_rule(&[&shifted, &neg], &[v, -v]).unwrap()
        };
        for _ in 0..50 {
            let x1 = rng.gen_range(-2.0..2.0);
            let x2 = rng.gen_range(-2.0..2.0);
            let mut k = 0.0f64;
            for t in 0..=10 {
                let x = x1 + (x2 - x1) * (t as f64) / 10.0;
                let cd = cd_at(x);
                for p in cd.hypo().vertices().iter().chain(cd.hyper().vertices()) {
                    k = k.max((p.a * p.a + dot(&p.v, &p.v)).sqrt());
                }
            }
            let lhs = (f(x1) - f(x2)).abs();
            assert!(lhs <= 2.0 * k * (x1 - x2).abs() + 1e-12);
        }
    }
}
