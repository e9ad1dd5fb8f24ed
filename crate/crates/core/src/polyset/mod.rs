//! Integer tuple sets and relations defined by unions of affine constraint
//! conjunctions.
//!
//! Symbolic operations (intersection, union, difference, apply, projection,
//! lexicographic comparison sets) work with parameters left free. Queries that
//! need concrete values (lexmin/lexmax, cardinality, enumeration) take a
//! [`ParamBinding`].
//!
//! Projection removes a variable exactly whenever an equality with a unit
//! coefficient or an integer-exact Fourier-Motzkin step allows it; otherwise
//! the variable is kept as an existentially quantified local of the affected
//! disjunct, and the counting and extreme-point routines account for it.

pub mod affine;
mod conj;
mod parse;
mod scan;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use affine::AffineExpr;
use conj::{Conj, Row};
use scan::{Compiled, UnionScan};

/// A concrete integer tuple.
pub type Point = Vec<i64>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SetError {
    #[error("space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("unknown variable `{0}`")]
    UnknownVar(String),
    #[error("parameter `{0}` is not bound")]
    UnboundParam(String),
    #[error("set is unbounded along `{0}`")]
    Unbounded(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("parse error at offset {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// Concrete values for symbolic parameters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBinding(BTreeMap<String, i64>);

impl ParamBinding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: i64) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn set(&mut self, name: &str, value: i64) {
        self.0.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<i64> {
        self.0.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn as_map(&self) -> &BTreeMap<String, i64> {
        &self.0
    }

    /// Parses `M=64,N=32`.
    pub fn parse(text: &str) -> Result<Self, SetError> {
        let mut b = ParamBinding::new();
        for (pos, item) in text.split(',').map(str::trim).filter(|s| !s.is_empty()).enumerate() {
            let (k, v) = item.split_once('=').ok_or_else(|| SetError::Parse {
                pos,
                msg: format!("expected NAME=VALUE, got `{item}`"),
            })?;
            let v: i64 = v.trim().parse().map_err(|_| SetError::Parse {
                pos,
                msg: format!("bad integer in `{item}`"),
            })?;
            b.set(k.trim(), v);
        }
        Ok(b)
    }
}

impl fmt::Display for ParamBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{}", items.join(","))
    }
}

/// A named tuple of variables, e.g. `S[i, j, k]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tuple {
    pub name: String,
    pub dims: Vec<String>,
}

impl Tuple {
    pub fn new(name: &str, dims: &[&str]) -> Self {
        Self { name: name.to_string(), dims: dims.iter().map(|s| s.to_string()).collect() }
    }

    pub fn arity(&self) -> usize {
        self.dims.len()
    }
}

impl fmt::Display for Tuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name, self.dims.join(", "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// `expr >= 0`
    NonNegative,
    /// `expr = 0`
    Zero,
}

/// A single affine constraint `expr >= 0` or `expr = 0`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub expr: AffineExpr,
    pub kind: ConstraintKind,
}

impl Constraint {
    pub fn ge(lhs: AffineExpr, rhs: AffineExpr) -> Self {
        Self { expr: lhs.sub(&rhs), kind: ConstraintKind::NonNegative }
    }

    pub fn le(lhs: AffineExpr, rhs: AffineExpr) -> Self {
        Self::ge(rhs, lhs)
    }

    pub fn lt(lhs: AffineExpr, rhs: AffineExpr) -> Self {
        Self::ge(rhs, lhs.offset(1))
    }

    pub fn gt(lhs: AffineExpr, rhs: AffineExpr) -> Self {
        Self::ge(lhs, rhs.offset(1))
    }

    pub fn eq(lhs: AffineExpr, rhs: AffineExpr) -> Self {
        Self { expr: lhs.sub(&rhs), kind: ConstraintKind::Zero }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut pos = AffineExpr::constant(0);
        let mut neg = AffineExpr::constant(0);
        for (n, c) in self.expr.terms() {
            if c > 0 {
                pos.add_term(n, c);
            } else {
                neg.add_term(n, -c);
            }
        }
        let k = self.expr.constant_term();
        if pos.is_constant() && !neg.is_constant() {
            // keep the variables on the left-hand side
            let op = if self.kind == ConstraintKind::Zero { "=" } else { "<=" };
            return write!(f, "{} {op} {}", neg, AffineExpr::constant(k));
        }
        let lhs = pos.offset(if pos.is_constant() { k } else { 0 });
        let rhs = if pos.is_constant() { neg } else { neg.offset(-k) };
        let op = if self.kind == ConstraintKind::Zero { "=" } else { ">=" };
        write!(f, "{lhs} {op} {rhs}")
    }
}

fn row_from_expr(expr: &AffineExpr, cols: &[String]) -> Result<Row, SetError> {
    let mut row = Row::zero(cols.len());
    for (name, c) in expr.terms() {
        let idx = cols
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SetError::UnknownVar(name.to_string()))?;
        row.coeffs[idx] += c;
    }
    row.constant = expr.constant_term();
    Ok(row)
}

fn expr_from_row(row: &Row, cols: &[String]) -> AffineExpr {
    let mut e = AffineExpr::constant(row.constant);
    for (c, n) in row.coeffs.iter().zip(cols) {
        if *c != 0 {
            e.add_term(n, *c);
        }
    }
    e
}

/// A union of integer polyhedra over a tuple space with symbolic parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntSet {
    tuple: Tuple,
    params: Vec<String>,
    disjuncts: Vec<Conj>,
}

impl IntSet {
    pub fn universe(tuple: Tuple, params: &[String]) -> Self {
        Self { tuple, params: params.to_vec(), disjuncts: vec![Conj::universe()] }
    }

    pub fn empty(tuple: Tuple, params: &[String]) -> Self {
        Self { tuple, params: params.to_vec(), disjuncts: Vec::new() }
    }

    /// A single conjunction. Every variable must be a tuple dim or a parameter.
    pub fn from_constraints(
        tuple: Tuple,
        params: &[String],
        constraints: &[Constraint],
    ) -> Result<Self, SetError> {
        Self::from_disjuncts(tuple, params, &[constraints.to_vec()])
    }

    pub fn from_disjuncts(
        tuple: Tuple,
        params: &[String],
        disjuncts: &[Vec<Constraint>],
    ) -> Result<Self, SetError> {
        let mut set = Self::empty(tuple, params);
        let cols = set.column_names(0);
        for d in disjuncts {
            let mut conj = Conj::universe();
            for c in d {
                let row = row_from_expr(&c.expr, &cols)?;
                match c.kind {
                    ConstraintKind::Zero => conj.eqs.push(row),
                    ConstraintKind::NonNegative => conj.ineqs.push(row),
                }
            }
            if let Some(c) = conj.simplify() {
                set.disjuncts.push(c);
            }
        }
        Ok(set)
    }

    /// Axis-aligned box `lo_d <= x_d <= hi_d` (inclusive bounds).
    pub fn from_box(tuple: Tuple, bounds: &[(i64, i64)]) -> Result<Self, SetError> {
        if bounds.len() != tuple.arity() {
            return Err(SetError::DimMismatch { expected: tuple.arity(), got: bounds.len() });
        }
        let cs: Vec<Constraint> = tuple
            .dims
            .iter()
            .zip(bounds)
            .flat_map(|(d, (lo, hi))| {
                [
                    Constraint::ge(AffineExpr::var(d), AffineExpr::constant(*lo)),
                    Constraint::le(AffineExpr::var(d), AffineExpr::constant(*hi)),
                ]
            })
            .collect();
        Self::from_constraints(tuple.clone(), &[], &cs)
    }

    /// Singleton `{ p }`.
    pub fn from_point(tuple: Tuple, point: &[i64]) -> Result<Self, SetError> {
        let b: Vec<(i64, i64)> = point.iter().map(|&v| (v, v)).collect();
        Self::from_box(tuple, &b)
    }

    pub fn parse(text: &str) -> Result<Self, SetError> {
        parse::parse_set(text)
    }

    pub fn tuple(&self) -> &Tuple {
        &self.tuple
    }

    pub fn dims(&self) -> &[String] {
        &self.tuple.dims
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn arity(&self) -> usize {
        self.tuple.arity()
    }

    pub fn n_disjuncts(&self) -> usize {
        self.disjuncts.len()
    }

    pub fn has_locals(&self) -> bool {
        self.disjuncts.iter().any(|d| d.n_locals > 0)
    }

    /// True only when no disjunct survives simplification; use
    /// [`IntSet::is_empty`] for an exact answer.
    pub fn is_trivially_empty(&self) -> bool {
        self.disjuncts.is_empty()
    }

    fn column_names(&self, n_locals: usize) -> Vec<String> {
        let mut cols: Vec<String> = self.tuple.dims.clone();
        cols.extend(self.params.iter().cloned());
        cols.extend((0..n_locals).map(|l| format!("_e{l}")));
        cols
    }

    fn n_fixed(&self) -> usize {
        self.tuple.arity() + self.params.len()
    }

    /// Constraints per disjunct; existential locals appear as `_e0`, `_e1`, ...
    pub fn constraints(&self) -> Vec<Vec<Constraint>> {
        self.disjuncts
            .iter()
            .map(|d| {
                let cols = self.column_names(d.n_locals);
                d.eqs
                    .iter()
                    .map(|r| Constraint { expr: expr_from_row(r, &cols), kind: ConstraintKind::Zero })
                    .chain(d.ineqs.iter().map(|r| Constraint {
                        expr: expr_from_row(r, &cols),
                        kind: ConstraintKind::NonNegative,
                    }))
                    .collect()
            })
            .collect()
    }

    fn check_space(&self, other: &IntSet) -> Result<(), SetError> {
        if self.tuple.name != other.tuple.name || self.arity() != other.arity() {
            return Err(SetError::SpaceMismatch(format!("{} vs {}", self.tuple, other.tuple)));
        }
        Ok(())
    }

    /// Re-expresses the set over `params` (a superset of the current ones).
    pub fn align_params(&self, params: &[String]) -> Result<IntSet, SetError> {
        if params == self.params.as_slice() {
            return Ok(self.clone());
        }
        let n = self.arity();
        let mut map = Vec::with_capacity(self.params.len());
        for p in &self.params {
            map.push(
                params
                    .iter()
                    .position(|q| q == p)
                    .ok_or_else(|| SetError::SpaceMismatch(format!("parameter `{p}` dropped")))?,
            );
        }
        let disjuncts = self
            .disjuncts
            .iter()
            .map(|d| {
                let remap = |r: &Row| {
                    let mut out = Row::zero(n + params.len() + d.n_locals);
                    out.coeffs[..n].copy_from_slice(&r.coeffs[..n]);
                    for (k, &m) in map.iter().enumerate() {
                        out.coeffs[n + m] = r.coeffs[n + k];
                    }
                    let ls = n + self.params.len();
                    for l in 0..d.n_locals {
                        out.coeffs[n + params.len() + l] = r.coeffs[ls + l];
                    }
                    out.constant = r.constant;
                    out
                };
                Conj {
                    n_locals: d.n_locals,
                    eqs: d.eqs.iter().map(remap).collect(),
                    ineqs: d.ineqs.iter().map(remap).collect(),
                }
            })
            .collect();
        Ok(IntSet { tuple: self.tuple.clone(), params: params.to_vec(), disjuncts })
    }

    fn aligned_pair(&self, other: &IntSet) -> Result<(IntSet, IntSet), SetError> {
        if self.params == other.params {
            return Ok((self.clone(), other.clone()));
        }
        let mut params = self.params.clone();
        for p in &other.params {
            if !params.contains(p) {
                params.push(p.clone());
            }
        }
        Ok((self.align_params(&params)?, other.align_params(&params)?))
    }

    /// Conjunction of two disjuncts over the same fixed columns; locals of
    /// `b` are placed after those of `a`.
    fn and_conj(n_fixed: usize, a: &Conj, b: &Conj) -> Option<Conj> {
        let mut a2 = a.clone();
        let mut b2 = b.clone();
        let total = n_fixed + a.n_locals + b.n_locals;
        a2.insert_cols(n_fixed + a.n_locals, b.n_locals);
        b2.insert_cols(n_fixed, a.n_locals);
        debug_assert!(a2.rows().all(|r| r.coeffs.len() == total));
        let mut c = a2.and(&b2);
        c.n_locals = a.n_locals + b.n_locals;
        c.simplify()
    }

    pub fn intersect(&self, other: &IntSet) -> Result<IntSet, SetError> {
        self.check_space(other)?;
        let (a, b) = self.aligned_pair(other)?;
        let nf = a.n_fixed();
        let mut disjuncts = Vec::new();
        for da in &a.disjuncts {
            for db in &b.disjuncts {
                if let Some(c) = Self::and_conj(nf, da, db) {
                    disjuncts.push(c);
                }
            }
        }
        Ok(IntSet { tuple: a.tuple, params: a.params, disjuncts })
    }

    pub fn union(&self, other: &IntSet) -> Result<IntSet, SetError> {
        self.check_space(other)?;
        let (mut a, b) = self.aligned_pair(other)?;
        for d in b.disjuncts {
            if !a.disjuncts.contains(&d) {
                a.disjuncts.push(d);
            }
        }
        Ok(a)
    }

    /// Adds constraints (over dims and params) to every disjunct.
    pub fn add_constraints(&self, constraints: &[Constraint]) -> Result<IntSet, SetError> {
        let extra = IntSet::from_constraints(self.tuple.clone(), &self.params, constraints)?;
        self.intersect(&extra)
    }

    /// Set difference. The subtrahend must not carry existential locals.
    pub fn subtract(&self, other: &IntSet) -> Result<IntSet, SetError> {
        self.check_space(other)?;
        if other.has_locals() {
            return Err(SetError::Unsupported(
                "subtracting a set with existentially quantified variables".into(),
            ));
        }
        let (a, b) = self.aligned_pair(other)?;
        let nf = a.n_fixed();
        let mut disjuncts = Vec::new();
        for da in &a.disjuncts {
            let mut pieces = vec![da.clone()];
            for db in &b.disjuncts {
                let mut next = Vec::new();
                for p in &pieces {
                    next.extend(diff_conj(nf, p, db));
                }
                pieces = next;
                if pieces.is_empty() {
                    break;
                }
            }
            disjuncts.extend(pieces);
        }
        Ok(IntSet { tuple: a.tuple, params: a.params, disjuncts })
    }

    /// Rewrites the union as pairwise disjoint disjuncts (requires no locals).
    pub fn make_disjoint(&self) -> Result<IntSet, SetError> {
        let mut out = IntSet::empty(self.tuple.clone(), &self.params);
        for (i, d) in self.disjuncts.iter().enumerate() {
            let single =
                IntSet { tuple: self.tuple.clone(), params: self.params.clone(), disjuncts: vec![d.clone()] };
            let earlier = IntSet {
                tuple: self.tuple.clone(),
                params: self.params.clone(),
                disjuncts: self.disjuncts[..i].to_vec(),
            };
            out.disjuncts.extend(single.subtract(&earlier)?.disjuncts);
        }
        Ok(out)
    }

    /// Constraints describing `x <<= p` (or `x << p` when `strict`), as at most
    /// `d` disjuncts; with `above`, `x >>= p` (or `x >> p`).
    fn lex_pieces(&self, point: &[i64], strict: bool, above: bool) -> Result<IntSet, SetError> {
        let d = self.arity();
        if point.len() != d {
            return Err(SetError::DimMismatch { expected: d, got: point.len() });
        }
        let mut pieces = Vec::new();
        for level in 0..d {
            let mut cs = Vec::new();
            for (k, &pk) in point.iter().enumerate().take(level) {
                cs.push(Constraint::eq(AffineExpr::var(&self.tuple.dims[k]), AffineExpr::constant(pk)));
            }
            let (mut x, mut bound) = (AffineExpr::var(&self.tuple.dims[level]), AffineExpr::constant(point[level]));
            if above {
                std::mem::swap(&mut x, &mut bound);
            }
            if level + 1 == d && !strict {
                cs.push(Constraint::le(x, bound));
            } else {
                cs.push(Constraint::lt(x, bound));
            }
            pieces.push(cs);
        }
        if d == 0 && !strict {
            pieces.push(Vec::new());
        }
        IntSet::from_disjuncts(self.tuple.clone(), &self.params, &pieces)
    }

    /// Points of `self` lexicographically smaller than or equal to `point`.
    pub fn lex_le_point(&self, point: &[i64]) -> Result<IntSet, SetError> {
        self.intersect(&self.lex_pieces(point, false, false)?)
    }

    /// Points of `self` lexicographically strictly smaller than `point`.
    pub fn lex_lt_point(&self, point: &[i64]) -> Result<IntSet, SetError> {
        self.intersect(&self.lex_pieces(point, true, false)?)
    }

    /// Points lexicographically greater than or equal to `point`.
    pub fn lex_ge_point(&self, point: &[i64]) -> Result<IntSet, SetError> {
        self.intersect(&self.lex_pieces(point, false, true)?)
    }

    /// Existentially projects `var` out of the set.
    pub fn project_out(&self, var: &str) -> Result<IntSet, SetError> {
        let idx = self
            .tuple
            .dims
            .iter()
            .position(|d| d == var)
            .ok_or_else(|| SetError::UnknownVar(var.to_string()))?;
        let mut tuple = self.tuple.clone();
        tuple.dims.remove(idx);
        let n_fixed = self.n_fixed() - 1;
        let mut disjuncts = Vec::new();
        for d in &self.disjuncts {
            let total = self.n_fixed() + d.n_locals;
            let perm: Vec<usize> = (0..total).filter(|&c| c != idx).chain(std::iter::once(idx)).collect();
            let mut c = d.permute(&perm);
            c.n_locals += 1;
            if let Some(c) = c.eliminate_locals(n_fixed) {
                disjuncts.push(c);
            }
        }
        Ok(IntSet { tuple, params: self.params.clone(), disjuncts })
    }

    /// Substitutes parameter values; the result has no parameters.
    pub fn bind(&self, binding: &ParamBinding) -> Result<IntSet, SetError> {
        let values: Vec<i64> = self
            .params
            .iter()
            .map(|p| binding.get(p).ok_or_else(|| SetError::UnboundParam(p.clone())))
            .collect::<Result<_, _>>()?;
        let n = self.arity();
        let disjuncts = self
            .disjuncts
            .iter()
            .filter_map(|d| d.fix_cols(n, &values).eliminate_locals(n))
            .collect();
        Ok(IntSet { tuple: self.tuple.clone(), params: Vec::new(), disjuncts })
    }

    fn compiled(&self, binding: &ParamBinding) -> Result<Vec<Compiled>, SetError> {
        let bound = self.bind(binding)?;
        Ok(bound
            .disjuncts
            .iter()
            .map(|d| Compiled::new(d, bound.arity(), &bound.tuple.dims))
            .collect())
    }

    pub fn lexmin(&self, binding: &ParamBinding) -> Result<Option<Point>, SetError> {
        self.extreme(binding, false)
    }

    pub fn lexmax(&self, binding: &ParamBinding) -> Result<Option<Point>, SetError> {
        self.extreme(binding, true)
    }

    fn extreme(&self, binding: &ParamBinding, maximize: bool) -> Result<Option<Point>, SetError> {
        let mut best: Option<Point> = None;
        for c in self.compiled(binding)? {
            if let Some(p) = c.extreme(maximize)? {
                best = match best {
                    None => Some(p),
                    Some(b) => Some(if (p > b) == maximize { p } else { b }),
                };
            }
        }
        Ok(best)
    }

    /// Exact number of integer points under `binding`.
    pub fn cardinality(&self, binding: &ParamBinding) -> Result<u64, SetError> {
        let parts = self.compiled(binding)?;
        UnionScan::new(&parts, self.arity()).count()
    }

    /// All points under `binding`, lexicographically ordered and distinct.
    pub fn points(&self, binding: &ParamBinding) -> Result<Vec<Point>, SetError> {
        let parts = self.compiled(binding)?;
        UnionScan::new(&parts, self.arity()).points()
    }

    pub fn is_empty(&self, binding: &ParamBinding) -> Result<bool, SetError> {
        Ok(self.lexmin(binding)?.is_none())
    }

    pub fn contains(&self, point: &[i64], binding: &ParamBinding) -> Result<bool, SetError> {
        if point.len() != self.arity() {
            return Err(SetError::DimMismatch { expected: self.arity(), got: point.len() });
        }
        let single = IntSet::from_point(self.tuple.clone(), point)?;
        Ok(!self.intersect(&single)?.is_empty(binding)?)
    }

    /// Drops disjuncts that are empty over the rationals.
    pub fn prune(&self) -> IntSet {
        let mut out = self.clone();
        out.disjuncts.retain(|d| d.rationally_feasible());
        out
    }

    pub(crate) fn from_parts(tuple: Tuple, params: Vec<String>, disjuncts: Vec<Conj>) -> Self {
        Self { tuple, params, disjuncts }
    }

    #[cfg(test)]
    pub(crate) fn parts(&self) -> &[Conj] {
        &self.disjuncts
    }
}

/// `p - b` as a list of disjoint pieces; `b` has no locals.
fn diff_conj(n_fixed: usize, p: &Conj, b: &Conj) -> Vec<Conj> {
    let widen = |r: &Row| {
        let mut r = r.clone();
        r.insert_cols(n_fixed, p.n_locals);
        r
    };
    let mut cuts: Vec<Row> = Vec::new();
    for e in &b.eqs {
        cuts.push(widen(e));
        cuts.push(widen(&e.negate()));
    }
    cuts.extend(b.ineqs.iter().map(widen));
    let mut out = Vec::new();
    let mut acc = p.clone();
    for c in cuts {
        // not (c >= 0)  <=>  -c - 1 >= 0
        let mut neg = c.negate();
        neg.constant -= 1;
        let mut piece = acc.clone();
        piece.ineqs.push(neg);
        if let Some(piece) = piece.simplify() {
            if piece.rationally_feasible() {
                out.push(piece);
            }
        }
        acc.ineqs.push(c);
        match acc.clone().simplify() {
            Some(a) if a.rationally_feasible() => acc = a,
            _ => return out,
        }
    }
    out
}

impl fmt::Display for IntSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.params.is_empty() {
            write!(f, "[{}] -> ", self.params.join(", "))?;
        }
        write!(f, "{{ {}", self.tuple)?;
        write_disjuncts(f, &self.disjuncts, |n| self.column_names(n))?;
        write!(f, " }}")
    }
}

fn write_disjuncts(
    f: &mut fmt::Formatter<'_>,
    disjuncts: &[Conj],
    names: impl Fn(usize) -> Vec<String>,
) -> fmt::Result {
    if disjuncts.is_empty() {
        return write!(f, " : false");
    }
    if disjuncts.len() == 1 && disjuncts[0].eqs.is_empty() && disjuncts[0].ineqs.is_empty() {
        return Ok(());
    }
    write!(f, " : ")?;
    for (k, d) in disjuncts.iter().enumerate() {
        if k > 0 {
            write!(f, " or ")?;
        }
        let cols = names(d.n_locals);
        let cs: Vec<String> = d
            .eqs
            .iter()
            .map(|r| Constraint { expr: expr_from_row(r, &cols), kind: ConstraintKind::Zero }.to_string())
            .chain(d.ineqs.iter().map(|r| {
                Constraint { expr: expr_from_row(r, &cols), kind: ConstraintKind::NonNegative }.to_string()
            }))
            .collect();
        let body = if cs.is_empty() { "true".to_string() } else { cs.join(" and ") };
        if d.n_locals > 0 {
            let locals: Vec<String> = cols[cols.len() - d.n_locals..].to_vec();
            write!(f, "exists ({} : {body})", locals.join(", "))?;
        } else {
            write!(f, "{body}")?;
        }
    }
    Ok(())
}

/// A relation between two tuple spaces, stored as a set over the
/// concatenated `input ++ output` dims.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntRelation {
    input: Tuple,
    output: Tuple,
    wrapped: IntSet,
}

impl IntRelation {
    pub(crate) fn wrap_tuple(input: &Tuple, output: &Tuple) -> Tuple {
        let mut dims = input.dims.clone();
        dims.extend(output.dims.iter().cloned());
        Tuple { name: format!("{}->{}", input.name, output.name), dims }
    }

    pub fn from_constraints(
        input: Tuple,
        output: Tuple,
        params: &[String],
        constraints: &[Constraint],
    ) -> Result<Self, SetError> {
        if let Some(d) = input.dims.iter().find(|d| output.dims.contains(d)) {
            return Err(SetError::SpaceMismatch(format!("`{d}` is both an input and an output dim")));
        }
        let wrapped = IntSet::from_constraints(Self::wrap_tuple(&input, &output), params, constraints)?;
        Ok(Self { input, output, wrapped })
    }

    /// `{ input -> name[exprs] }`, optionally restricted to `domain`.
    pub fn from_map(
        input: Tuple,
        params: &[String],
        output_name: &str,
        exprs: &[AffineExpr],
        domain: Option<&IntSet>,
    ) -> Result<Self, SetError> {
        let out_dims: Vec<String> = (0..exprs.len())
            .map(|d| {
                let mut n = format!("o{d}");
                while input.dims.contains(&n) || params.contains(&n) {
                    n.push('\'');
                }
                n
            })
            .collect();
        let output = Tuple { name: output_name.to_string(), dims: out_dims };
        let cs: Vec<Constraint> = output
            .dims
            .iter()
            .zip(exprs)
            .map(|(o, e)| Constraint::eq(AffineExpr::var(o), e.clone()))
            .collect();
        let rel = Self::from_constraints(input, output, params, &cs)?;
        match domain {
            Some(d) => rel.intersect_domain(d),
            None => Ok(rel),
        }
    }

    pub fn identity(tuple: Tuple, params: &[String]) -> Result<Self, SetError> {
        let exprs: Vec<AffineExpr> = tuple.dims.iter().map(|d| AffineExpr::var(d)).collect();
        let name = tuple.name.clone();
        Self::from_map(tuple, params, &name, &exprs, None)
    }

    pub fn parse(text: &str) -> Result<Self, SetError> {
        parse::parse_relation(text)
    }

    pub fn input(&self) -> &Tuple {
        &self.input
    }

    pub fn output(&self) -> &Tuple {
        &self.output
    }

    pub fn params(&self) -> &[String] {
        self.wrapped.params()
    }

    /// The relation viewed as a set over `input ++ output`.
    pub fn wrap(&self) -> &IntSet {
        &self.wrapped
    }

    pub(crate) fn from_wrapped(input: Tuple, output: Tuple, wrapped: IntSet) -> Self {
        Self { input, output, wrapped }
    }

    fn with_wrapped(&self, wrapped: IntSet) -> Self {
        Self { input: self.input.clone(), output: self.output.clone(), wrapped }
    }

    /// Lifts a set on the input (or output) side to the wrapped space.
    fn lift(&self, s: &IntSet, on_input: bool) -> Result<IntSet, SetError> {
        let side = if on_input { &self.input } else { &self.output };
        if s.tuple.name != side.name || s.arity() != side.arity() {
            return Err(SetError::SpaceMismatch(format!("{} vs {}", s.tuple, side)));
        }
        let n_in = self.input.arity();
        let n_out = self.output.arity();
        let mut disjuncts = Vec::new();
        for d in &s.disjuncts {
            let mut c = d.clone();
            if on_input {
                c.insert_cols(n_in, n_out);
            } else {
                c.insert_cols(0, n_in);
            }
            disjuncts.push(c);
        }
        Ok(IntSet { tuple: self.wrapped.tuple.clone(), params: s.params.clone(), disjuncts })
    }

    pub fn intersect_domain(&self, s: &IntSet) -> Result<IntRelation, SetError> {
        Ok(self.with_wrapped(self.wrapped.intersect(&self.lift(s, true)?)?))
    }

    pub fn intersect_range(&self, s: &IntSet) -> Result<IntRelation, SetError> {
        Ok(self.with_wrapped(self.wrapped.intersect(&self.lift(s, false)?)?))
    }

    pub fn intersect(&self, other: &IntRelation) -> Result<IntRelation, SetError> {
        Ok(self.with_wrapped(self.wrapped.intersect(&other.wrapped)?))
    }

    pub fn union(&self, other: &IntRelation) -> Result<IntRelation, SetError> {
        Ok(self.with_wrapped(self.wrapped.union(&other.wrapped)?))
    }

    /// Adds constraints over input dims, output dims and parameters.
    pub fn add_constraints(&self, constraints: &[Constraint]) -> Result<IntRelation, SetError> {
        Ok(self.with_wrapped(self.wrapped.add_constraints(constraints)?))
    }

    /// Projects the wrapped set onto a contiguous block of dims.
    fn project_block(&self, keep_input: bool) -> IntSet {
        let n_in = self.input.arity();
        let n_out = self.output.arity();
        let p = self.wrapped.params.len();
        let (keep, drop) = if keep_input { (0..n_in, n_in..n_in + n_out) } else { (n_in..n_in + n_out, 0..n_in) };
        let n_keep = keep.len();
        let n_drop = drop.len();
        let tuple = if keep_input { self.input.clone() } else { self.output.clone() };
        let disjuncts = self
            .wrapped
            .disjuncts
            .iter()
            .filter_map(|d| {
                let fixed = n_in + n_out + p;
                let perm: Vec<usize> = keep
                    .clone()
                    .chain(n_in + n_out..fixed)
                    .chain(drop.clone())
                    .chain(fixed..fixed + d.n_locals)
                    .collect();
                let mut c = d.permute(&perm);
                c.n_locals += n_drop;
                c.eliminate_locals(n_keep + p)
            })
            .collect();
        IntSet { tuple, params: self.wrapped.params.clone(), disjuncts }
    }

    /// `dom r`
    pub fn domain(&self) -> IntSet {
        self.project_block(true)
    }

    /// `ran r`
    pub fn range(&self) -> IntSet {
        self.project_block(false)
    }

    /// Image of `s` under the relation.
    pub fn apply(&self, s: &IntSet) -> Result<IntSet, SetError> {
        Ok(self.intersect_domain(s)?.range())
    }

    pub fn n_disjuncts(&self) -> usize {
        self.wrapped.n_disjuncts()
    }

    pub fn is_empty(&self, binding: &ParamBinding) -> Result<bool, SetError> {
        self.wrapped.is_empty(binding)
    }

    /// All `(input, output)` pairs under `binding`.
    pub fn pairs(&self, binding: &ParamBinding) -> Result<Vec<(Point, Point)>, SetError> {
        let n_in = self.input.arity();
        Ok(self
            .wrapped
            .points(binding)?
            .into_iter()
            .map(|mut p| {
                let out = p.split_off(n_in);
                (p, out)
            })
            .collect())
    }

    pub fn cardinality(&self, binding: &ParamBinding) -> Result<u64, SetError> {
        self.wrapped.cardinality(binding)
    }

    pub fn prune(&self) -> IntRelation {
        self.with_wrapped(self.wrapped.prune())
    }
}

impl fmt::Display for IntRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params = self.wrapped.params();
        if !params.is_empty() {
            write!(f, "[{}] -> ", params.join(", "))?;
        }
        write!(f, "{{ {} -> {}", self.input, self.output)?;
        write_disjuncts(f, &self.wrapped.disjuncts, |n| self.wrapped.column_names(n))?;
        write!(f, " }}")
    }
}

/// `r(s)`
pub fn apply(r: &IntRelation, s: &IntSet) -> Result<IntSet, SetError> {
    r.apply(s)
}

#[cfg(test)]
mod tests;
