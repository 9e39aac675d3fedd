//! Expression DSL for integrands and boundary functions.
//!
//! Two vocabularies share one tree type: integrands `f(x, u, xi)` use the
//! variables `x1..xd`, `u1..um` and `xi..` (one index when `d = 1` or
//! `m = 1`, two digit indices `xi<i><j>` otherwise, row `i` over the field
//! components and column `j` over the space dimensions), while boundary
//! functions `g(y, z)` of the endpoint values use `y1..ym`, `z1..zm`.
//!
//! Supported operations: `+ - * /` (division only by a constant), integer
//! powers `^`, the smooth primitives `sin`, `cos`, `exp`, and the nonsmooth
//! `abs(e)`, `max(e, ...)`, `min(e, ...)`.
//!
//! [`Expr::codiff_at`] propagates codifferentials through the tree with the
//! sum, scalar, max, min and smooth-composition rules. `abs(e)` is rewritten
//! internally as `max(e, -e)`, which also covers nested nonsmooth
//! compositions such as `abs(abs(x) - 1)`. Values of the branches entering
//! a `max`/`min` node are recomputed at the evaluation point so that the
//! free-coefficient shifts are exact. Trees are immutable after parsing and
//! evaluation is pure.

use crate::codiff::{Codifferential, CodiffError};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("syntax error at position {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("variable block {block} index {index} out of range")]
    VarRange { block: usize, index: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Codiff(#[from] CodiffError),
}

/// Variable naming scheme attached to a parsed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vocabulary {
    /// `f(x, u, xi)` with `x` in `R^d`, `u` in `R^m`, `xi` in `R^(m x d)`.
    Integrand { d: usize, m: usize },
    /// `g(y, z)` with both endpoint values in `R^m`.
    Boundary { m: usize },
}

impl Vocabulary {
    pub fn block_lens(&self) -> Vec<usize> {
        match *self {
            Vocabulary::Integrand { d, m } => vec![d, m, m * d],
            Vocabulary::Boundary { m } => vec![m, m],
        }
    }
}

/// Which variable blocks a codifferential is taken with respect to.
/// Non-selected blocks are treated as frozen parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarSelector(pub Vec<bool>);

impl VarSelector {
    /// Differentiate in `(u, xi)` for an integrand vocabulary.
    pub fn u_xi() -> Self {
        VarSelector(vec![false, true, true])
    }

    /// Differentiate in `(x, xi)` for an integrand vocabulary.
    pub fn x_xi() -> Self {
        VarSelector(vec![true, false, true])
    }

    /// Differentiate in `xi` only.
    pub fn xi_only() -> Self {
        VarSelector(vec![false, false, true])
    }

    /// Differentiate in every block (used for boundary functions).
    pub fn all(vocab: &Vocabulary) -> Self {
        VarSelector(vec![true; vocab.block_lens().len()])
    }

    fn check(&self, vocab: &Vocabulary) -> Result<(), EvalError> {
        let lens = vocab.block_lens();
        if self.0.len() != lens.len() || !self.0.iter().any(|b| *b) {
            return Err(EvalError::VarRange {
                block: self.0.len(),
                index: 0,
            });
        }
        Ok(())
    }

    /// Total dimension of the selected blocks.
    pub fn dim(&self, vocab: &Vocabulary) -> usize {
        vocab
            .block_lens()
            .iter()
            .zip(&self.0)
            .filter(|(_, s)| **s)
            .map(|(l, _)| l)
            .sum()
    }

    /// Offset of each block inside the selected-variable vector
    /// (`None` for frozen blocks).
    fn offsets(&self, vocab: &Vocabulary) -> Vec<Option<usize>> {
        let mut out = Vec::new();
        let mut base = 0;
        for (len, sel) in vocab.block_lens().iter().zip(&self.0) {
            if *sel {
                out.push(Some(base));
                base += len;
            } else {
                out.push(None);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// `(block, offset)` into the vocabulary's block layout.
    Var(usize, usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Abs(Box<Expr>),
    Max(Vec<Expr>),
    Min(Vec<Expr>),
}

impl Expr {
    /// Parses `text` against the variable names of `vocab`.
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Expr, ParseError> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
            vocab: *vocab,
        };
        p.skip_ws();
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Evaluates the tree; `blocks` holds the current value of every
    /// variable block in vocabulary order.
    pub fn eval(&self, blocks: &[&[f64]]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(b, o) => *blocks
                .get(*b)
                .and_then(|blk| blk.get(*o))
                .ok_or(EvalError::VarRange {
                    block: *b,
                    index: *o,
                })?,
            Expr::Add(a, b) => a.eval(blocks)? + b.eval(blocks)?,
            Expr::Sub(a, b) => a.eval(blocks)? - b.eval(blocks)?,
            Expr::Mul(a, b) => a.eval(blocks)? * b.eval(blocks)?,
            Expr::Neg(a) => -a.eval(blocks)?,
            Expr::Pow(a, k) => a.eval(blocks)?.powi(*k),
            Expr::Sin(a) => a.eval(blocks)?.sin(),
            Expr::Cos(a) => a.eval(blocks)?.cos(),
            Expr::Exp(a) => a.eval(blocks)?.exp(),
            Expr::Abs(a) => a.eval(blocks)?.abs(),
            Expr::Max(list) => {
                let mut m = f64::NEG_INFINITY;
                for e in list {
                    m = m.max(e.eval(blocks)?);
                }
                m
            }
            Expr::Min(list) => {
                let mut m = f64::INFINITY;
                for e in list {
                    m = m.min(e.eval(blocks)?);
                }
                m
            }
        };
        if !v.is_finite() {
            return Err(EvalError::NonFinite("expression evaluation"));
        }
        Ok(v)
    }

    /// Codifferential of the expression at the given point with respect to
    /// the selected variable blocks, normalized and reduced.
    pub fn codiff_at(
        &self,
        vocab: &Vocabulary,
        sel: &VarSelector,
        blocks: &[&[f64]],
    ) -> Result<Codifferential, EvalError> {
        sel.check(vocab)?;
        let dim = sel.dim(vocab);
        let offsets = sel.offsets(vocab);
        let (_, cd) = self.value_codiff(dim, &offsets, blocks)?;
        Ok(cd)
    }

    fn value_codiff(
        &self,
        dim: usize,
        offsets: &[Option<usize>],
        blocks: &[&[f64]],
    ) -> Result<(f64, Codifferential), EvalError> {
        let out = match self {
            Expr::Const(c) => (*c, Codifferential::zero(dim)),
            Expr::Var(b, o) => {
                let v = self.eval(blocks)?;
                let cd = match offsets.get(*b).copied().flatten() {
                    Some(base) => {
                        let mut g = vec![0.0; dim];
                        g[base + o] = 1.0;
                        Codifferential::of_gradient(g)
                    }
                    None => Codifferential::zero(dim),
                };
                (v, cd)
            }
            Expr::Add(a, b) => {
                let (va, ca) = a.value_codiff(dim, offsets, blocks)?;
                let (vb, cb) = b.value_codiff(dim, offsets, blocks)?;
                (
                    va + vb,
                    Codifferential::linear_combine(&[(1.0, &ca), (1.0, &cb)])?,
                )
            }
            Expr::Sub(a, b) => {
                let (va, ca) = a.value_codiff(dim, offsets, blocks)?;
                let (vb, cb) = b.value_codiff(dim, offsets, blocks)?;
                (
                    va - vb,
                    Codifferential::linear_combine(&[(1.0, &ca), (-1.0, &cb)])?,
                )
            }
            Expr::Mul(a, b) => {
                let (va, ca) = a.value_codiff(dim, offsets, blocks)?;
                let (vb, cb) = b.value_codiff(dim, offsets, blocks)?;
                // Product rule as smooth composition g(y1, y2) = y1 y2.
                (
                    va * vb,
                    Codifferential::compose_smooth(&[vb, va], &[&ca, &cb])?,
                )
            }
            Expr::Neg(a) => {
                let (va, ca) = a.value_codiff(dim, offsets, blocks)?;
                (-va, Codifferential::linear_combine(&[(-1.0, &ca)])?)
            }
            Expr::Pow(a, k) => {
                let (va, ca) = a.value_codiff(dim, offsets, blocks)?;
                let partial = f64::from(*k) * va.powi(*k - 1);
                if !partial.is_finite() {
                    return Err(EvalError::NonFinite("power rule"));
                }
                (
                    va.powi(*k),
                    Codifferential::compose_smooth(&[partial], &[&ca])?,
                )
            }
            Expr::Sin(a) => {
                let (va, ca) = a.value_codiff(dim, offsets, blocks)?;
                (va.sin(), Codifferential::compose_smooth(&[va.cos()], &[&ca])?)
            }
            Expr::Cos(a) => {
                let (va, ca) = a.value_codiff(dim, offsets, blocks)?;
                (
                    va.cos(),
                    Codifferential::compose_smooth(&[-va.sin()], &[&ca])?,
                )
            }
            Expr::Exp(a) => {
                let (va, ca) = a.value_codiff(dim, offsets, blocks)?;
                let ev = va.exp();
                if !ev.is_finite() {
                    return Err(EvalError::NonFinite("exp"));
                }
                (ev, Codifferential::compose_smooth(&[ev], &[&ca])?)
            }
            Expr::Abs(a) => {
                let (va, ca) = a.value_codiff(dim, offsets, blocks)?;
                let neg = Codifferential::linear_combine(&[(-1.0, &ca)])?;
                (va.abs(), Codifferential::max_rule(&[&ca, &neg], &[va, -va])?)
            }
            Expr::Max(list) => {
                let mut vals = Vec::with_capacity(list.len());
                let mut cds = Vec::with_capacity(list.len());
                for e in list {
                    let (v, c) = e.value_codiff(dim, offsets, blocks)?;
                    vals.push(v);
                    cds.push(c);
                }
                let refs: Vec<&Codifferential> = cds.iter().collect();
                let v = vals.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
                (v, Codifferential::max_rule(&refs, &vals)?)
            }
            Expr::Min(list) => {
                let mut vals = Vec::with_capacity(list.len());
                let mut cds = Vec::with_capacity(list.len());
                for e in list {
                    let (v, c) = e.value_codiff(dim, offsets, blocks)?;
                    vals.push(v);
                    cds.push(c);
                }
                let refs: Vec<&Codifferential> = cds.iter().collect();
                let v = vals.iter().fold(f64::INFINITY, |m, v| m.min(*v));
                (v, Codifferential::min_rule(&refs, &vals)?)
            }
        };
        Ok(out)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vocab: Vocabulary,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            if self.eat(b'+') {
                self.skip_ws();
                let rhs = self.term()?;
                lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'-') {
                self.skip_ws();
                let rhs = self.term()?;
                lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            self.skip_ws();
            if self.eat(b'*') {
                self.skip_ws();
                let rhs = self.factor()?;
                lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'/') {
                self.skip_ws();
                let at = self.pos;
                let rhs = self.factor()?;
                let c = match rhs {
                    Expr::Const(c) => c,
                    Expr::Neg(inner) => match *inner {
                        Expr::Const(c) => -c,
                        _ => {
                            return Err(ParseError {
                                pos: at,
                                msg: "division only by a constant".into(),
                            })
                        }
                    },
                    _ => {
                        return Err(ParseError {
                            pos: at,
                            msg: "division only by a constant".into(),
                        })
                    }
                };
                if c == 0.0 {
                    return Err(ParseError {
                        pos: at,
                        msg: "division by zero".into(),
                    });
                }
                lhs = Expr::Mul(Box::new(lhs), Box::new(Expr::Const(1.0 / c)));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            self.skip_ws();
            let neg = self.eat(b'-');
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.err("expected integer exponent"));
            }
            let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let mut k: i32 = digits
                .parse()
                .map_err(|_| self.err("exponent out of range"))?;
            if neg {
                k = -k;
            }
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                self.expect(b')')?;
                Ok(e)
            }
            Some(b'-') => {
                self.pos += 1;
                let e = self.factor()?;
                Ok(match e {
                    Expr::Const(c) => Expr::Const(-c),
                    other => Expr::Neg(Box::new(other)),
                })
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.err(format!("unexpected character '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || c == b'.')
        {
            self.pos += 1;
        }
        if self.peek() == Some(b'e') || self.peek() == Some(b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.peek() == Some(b'+') || self.peek() == Some(b'-') {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let v: f64 = text.parse().map_err(|_| ParseError {
            pos: start,
            msg: format!("invalid number '{text}'"),
        })?;
        Ok(Expr::Const(v))
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let digit_start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let digits = std::str::from_utf8(&self.src[digit_start..self.pos]).unwrap();
        self.skip_ws();
        if digits.is_empty() && self.peek() == Some(b'(') {
            self.pos += 1;
            let mut args = vec![self.expr()?];
            loop {
                self.skip_ws();
                if self.eat(b',') {
                    args.push(self.expr()?);
                } else {
                    break;
                }
            }
            self.expect(b')')?;
            let one = |args: Vec<Expr>, pos: usize| -> Result<Box<Expr>, ParseError> {
                if args.len() == 1 {
                    Ok(Box::new(args.into_iter().next().unwrap()))
                } else {
                    Err(ParseError {
                        pos,
                        msg: "expected exactly one argument".into(),
                    })
                }
            };
            return match name {
                "abs" => Ok(Expr::Abs(one(args, start)?)),
                "sin" => Ok(Expr::Sin(one(args, start)?)),
                "cos" => Ok(Expr::Cos(one(args, start)?)),
                "exp" => Ok(Expr::Exp(one(args, start)?)),
                "max" => Ok(Expr::Max(args)),
                "min" => Ok(Expr::Min(args)),
                _ => Err(ParseError {
                    pos: start,
                    msg: format!("unknown function '{name}'"),
                }),
            };
        }
        let idx: usize = if digits.is_empty() {
            return Err(ParseError {
                pos: start,
                msg: format!("unknown identifier '{name}'"),
            });
        } else {
            digits.parse().map_err(|_| ParseError {
                pos: digit_start,
                msg: "invalid variable index".into(),
            })?
        };
        let bad = |msg: String| ParseError { pos: start, msg };
        match (self.vocab, name) {
            (Vocabulary::Integrand { d, .. }, "x") => {
                if idx == 0 || idx > d {
                    return Err(bad(format!("x index must be in 1..={d}")));
                }
                Ok(Expr::Var(0, idx - 1))
            }
            (Vocabulary::Integrand { m, .. }, "u") => {
                if idx == 0 || idx > m {
                    return Err(bad(format!("u index must be in 1..={m}")));
                }
                Ok(Expr::Var(1, idx - 1))
            }
            (Vocabulary::Integrand { d, m }, "xi") => {
                let (i, j) = if m == 1 {
                    if idx == 0 || idx > d {
                        return Err(bad(format!("xi index must be in 1..={d}")));
                    }
                    (0, idx - 1)
                } else if d == 1 {
                    if idx == 0 || idx > m {
                        return Err(bad(format!("xi index must be in 1..={m}")));
                    }
                    (idx - 1, 0)
                } else {
                    if digits.len() != 2 {
                        return Err(bad(
                            "xi needs two digit indices when d > 1 and m > 1".into()
                        ));
                    }
                    let i = digits[..1].parse::<usize>().unwrap();
                    let j = digits[1..].parse::<usize>().unwrap();
                    if i == 0 || i > m || j == 0 || j > d {
                        return Err(bad(format!("xi indices must be in 1..={m} x 1..={d}")));
                    }
                    (i - 1, j - 1)
                };
                Ok(Expr::Var(2, i * d + j))
            }
            (Vocabulary::Boundary { m }, "y") => {
                if idx == 0 || idx > m {
                    return Err(bad(format!("y index must be in 1..={m}")));
                }
                Ok(Expr::Var(0, idx - 1))
            }
            (Vocabulary::Boundary { m }, "z") => {
                if idx == 0 || idx > m {
                    return Err(bad(format!("z index must be in 1..={m}")));
                }
                Ok(Expr::Var(1, idx - 1))
            }
            _ => Err(bad(format!("unknown identifier '{name}{digits}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const V11: Vocabulary = Vocabulary::Integrand { d: 1, m: 1 };

    fn parse11(text: &str) -> Expr {
        Expr::parse(text, &V11).unwrap()
    }

    #[test]
    fn parse_examples() {
        parse11("abs(xi1) - abs(u1)");
        parse11("max(abs(xi1) - abs(u1), 0)");
        let err = Expr::parse("abs(", &V11).unwrap_err();
        assert_eq!(err.pos, 4);
        let err = Expr::parse("foo(u1)", &V11).unwrap_err();
        assert_eq!(err.pos, 0);
        let err = Expr::parse("u3", &V11).unwrap_err();
        assert_eq!(err.pos, 0);
        let err = Expr::parse("max()", &V11).unwrap_err();
        assert_eq!(err.pos, 4);
    }

    #[test]
    fn eval_examples() {
        let f = parse11("abs(xi1) - abs(u1)");
        let v = f.eval(&[&[0.0], &[1.0], &[0.0]]).unwrap();
        assert_eq!(v, -1.0);

        let v2 = Vocabulary::Integrand { d: 1, m: 2 };
        let f = Expr::parse("0.5*xi1^2 + 0.5*xi2^2 + abs(u1) + abs(u2)", &v2).unwrap();
        let v = f.eval(&[&[0.0], &[0.0, 0.0], &[1.0, 1.0]]).unwrap();
        assert_eq!(v, 1.0);

        let f = parse11("max(-abs(u1), -abs(xi1))");
        let v = f.eval(&[&[0.0], &[2.0], &[1.0]]).unwrap();
        assert_eq!(v, -1.0);

        let f = parse11("xi1 / 2 - u1 / -4");
        let v = f.eval(&[&[0.0], &[4.0], &[6.0]]).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn smooth_codiff_is_gradient() {
        let f = parse11("0.5*xi1^2");
        let cd = f
            .codiff_at(&V11, &VarSelector::u_xi(), &[&[0.0], &[0.0], &[3.0]])
            .unwrap();
        assert_eq!(cd.hypo().vertices().len(), 1);
        assert_eq!(cd.hypo().vertices()[0].v, vec![0.0, 3.0]);
        assert_eq!(cd.hyper().vertices().len(), 1);
    }

    #[test]
    fn example_two_gradient_vars() {
        // f = |xi1| - |xi2| on a 2D domain with one field component.
        let v = Vocabulary::Integrand { d: 2, m: 1 };
        let f = Expr::parse("abs(xi1) - abs(xi2)", &v).unwrap();
        let cd = f
            .codiff_at(&v, &VarSelector::u_xi(), &[&[0.0, 0.0], &[0.0], &[0.0, 0.0]])
            .unwrap();
        // Selected variables: (u, xi11, xi12), dimension 3.
        assert_eq!(cd.dim(), 3);
        // Reference pair from the max/min calculus at the origin.
        let hypo = crate::codiff::Polytope::new(
            3,
            vec![
                crate::codiff::AffinePiece::new(0.0, vec![0.0, 1.0, 0.0]),
                crate::codiff::AffinePiece::new(0.0, vec![0.0, -1.0, 0.0]),
            ],
        )
        .unwrap();
        let hyper = crate::codiff::Polytope::new(
            3,
            vec![
                crate::codiff::AffinePiece::new(0.0, vec![0.0, 0.0, 1.0]),
                crate::codiff::AffinePiece::new(0.0, vec![0.0, 0.0, -1.0]),
            ],
        )
        .unwrap();
        let reference = Codifferential::new(hypo, hyper).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dirs: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        assert!(cd.dc_distance(&reference, &dirs).unwrap() < 1e-12);
    }

    #[test]
    fn example_u_minus_abs_xi() {
        // f = u - |xi| at the origin; the model must match the increment of
        // f along rays up to o(alpha).
        let f = parse11("u1 - abs(xi1)");
        let cd = f
            .codiff_at(&V11, &VarSelector::u_xi(), &[&[0.0], &[0.0], &[0.0]])
            .unwrap();
        for (du, dxi) in [(1.0, 0.5), (-0.3, -2.0), (0.0, 1.0)] {
            let inc = du - (dxi as f64).abs();
            assert!((cd.dc_model(&[du, dxi]).unwrap() - inc).abs() < 1e-12);
        }
    }

    fn library(which: usize) -> (Vocabulary, Expr) {
        let v11 = V11;
        let v21 = Vocabulary::Integrand { d: 2, m: 1 };
        let v12 = Vocabulary::Integrand { d: 1, m: 2 };
        match which {
            0 => (v11, parse11("abs(xi1) - abs(u1)")),
            1 => (v11, parse11("max(abs(xi1) - abs(u1), 0)")),
            2 => (v21, Expr::parse("abs(xi1) - abs(xi2)", &v21).unwrap()),
            3 => (
                v12,
                Expr::parse("0.5*xi1^2 + 0.5*xi2^2 + abs(u1) + abs(u2)", &v12).unwrap(),
            ),
            4 => (v11, parse11("max(-abs(u1), -abs(xi1))")),
            5 => (v11, parse11("u1 - abs(xi1)")),
            6 => (v11, parse11("-abs(xi1)")),
            7 => (v11, parse11("0.5*xi1^2")),
            8 => (v11, parse11("sin(u1)*xi1 + exp(-u1^2)")),
            _ => (v11, parse11("x1*xi1 + abs(u1)*abs(xi1)")),
        }
    }

    #[test]
    fn dc_approximation_property() {
        // |f(p + a*dp) - f(p) - Phi(a*dp) - Psi(a*dp)| / a -> 0.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for which in 0..10 {
            let (vocab, f) = library(which);
            let lens = vocab.block_lens();
            for _ in 0..20 {
                let pt: Vec<Vec<f64>> = lens
                    .iter()
                    .map(|&l| (0..l).map(|_| rng.gen_range(-1.5..1.5)).collect())
                    .collect();
                let blocks: Vec<&[f64]> = pt.iter().map(Vec::as_slice).collect();
                let sel = VarSelector::u_xi();
                let cd = f.codiff_at(&vocab, &sel, &blocks).unwrap();
                let dim = sel.dim(&vocab);
                let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let f0 = f.eval(&blocks).unwrap();
                let mut prev = f64::INFINITY;
                for exp in [2, 3, 4, 5, 6] {
                    let alpha = 10f64.powi(-exp);
                    let step: Vec<f64> = dir.iter().map(|d| alpha * d).collect();
                    // Perturb only the selected blocks.
                    let mut ptp = pt.clone();
                    let mut k = 0;
                    for (b, l) in lens.iter().enumerate() {
                        if sel.0[b] {
                            for o in 0..*l {
                                ptp[b][o] += step[k + o];
                            }
                            k += l;
                        }
                    }
                    let blocksp: Vec<&[f64]> = ptp.iter().map(Vec::as_slice).collect();
                    let f1 = f.eval(&blocksp).unwrap();
                    let model = cd.dc_model(&step).unwrap();
                    let resid = (f1 - f0 - model).abs() / alpha;
                    assert!(
                        resid <= prev * (1.0 + 1e-6) + 1e-9,
                        "residual not decreasing: {resid} after {prev} (f {which})"
                    );
                    prev = resid;
                    if exp == 6 {
                        assert!(resid < 1e-3, "residual {resid} at alpha=1e-6 (f {which})");
                    }
                }
            }
        }
    }

    #[test]
    fn directional_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for which in 0..10 {
            let (vocab, f) = library(which);
            let lens = vocab.block_lens();
            for _ in 0..30 {
                let pt: Vec<Vec<f64>> = lens
                    .iter()
                    .map(|&l| (0..l).map(|_| rng.gen_range(-1.5..1.5)).collect())
                    .collect();
                let blocks: Vec<&[f64]> = pt.iter().map(Vec::as_slice).collect();
                let sel = VarSelector::u_xi();
                let cd = f.codiff_at(&vocab, &sel, &blocks).unwrap();
                let dim = sel.dim(&vocab);
                let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let dd = cd.directional_derivative(&dir).unwrap();
                let t = 1e-6;
                let mut ptp = pt.clone();
                let mut k = 0;
                for (b, l) in lens.iter().enumerate() {
                    if sel.0[b] {
                        for o in 0..*l {
                            ptp[b][o] += t * dir[o + k];
                        }
                        k += l;
                    }
                }
                let blocksp: Vec<&[f64]> = ptp.iter().map(Vec::as_slice).collect();
                let fd = (f.eval(&blocksp).unwrap() - f.eval(&blocks).unwrap()) / t;
                assert!(
                    (dd - fd).abs() < 1e-4,
                    "dd {dd} vs fd {fd} on library entry {which}"
                );
            }
        }
    }

    #[test]
    fn hausdorff_continuity_along_converging_points() {
        // Pointwise codifferential mapping of max(-|u|, -|xi|) is Hausdorff
        // continuous: d_H -> 0 along u_k -> u.
        let f = parse11("max(-abs(u1), -abs(xi1))");
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let u = rng.gen_range(-1.0..1.0);
            let xi = rng.gen_range(-1.0..1.0);
            let base = f
                .codiff_at(&V11, &VarSelector::u_xi(), &[&[0.0], &[u], &[xi]])
                .unwrap();
            let mut prev_h = f64::INFINITY;
            for exp in [1, 2, 3, 4] {
                let eps = 10f64.powi(-exp);
                let cd = f
                    .codiff_at(
                        &V11,
                        &VarSelector::u_xi(),
                        &[&[0.0], &[u + eps], &[xi - eps]],
                    )
                    .unwrap();
                let dh = base
                    .hypo()
                    .hausdorff_distance(cd.hypo())
                    .unwrap()
                    .max(base.hyper().hausdorff_distance(cd.hyper()).unwrap());
                assert!(dh <= prev_h + 1e-9);
                prev_h = dh;
                if exp == 4 {
                    assert!(dh < 1e-3, "hausdorff distance {dh} at eps=1e-4");
                }
            }
        }
    }
}
