//! Conjunctions of affine constraints over positional columns.
//!
//! Column layout of every row: `[tuple dims | params | locals]`. Locals are
//! existentially quantified and always sit at the end so that binding the
//! parameters leaves `[dims | locals]`.

use std::collections::HashMap;

use super::affine::{floor_div, gcd};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Row {
    pub coeffs: Vec<i64>,
    pub constant: i64,
}

impl Row {
    pub fn new(coeffs: Vec<i64>, constant: i64) -> Self {
        Self { coeffs, constant }
    }

    pub fn zero(n: usize) -> Self {
        Self { coeffs: vec![0; n], constant: 0 }
    }

    pub fn negate(&self) -> Row {
        Row {
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
            constant: -self.constant,
        }
    }

    /// `self * a + other * b`
    pub fn combine(&self, a: i64, other: &Row, b: i64) -> Row {
        Row {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| x * a + y * b)
                .collect(),
            constant: self.constant * a + other.constant * b,
        }
    }

    #[cfg(test)]
    pub fn eval(&self, point: &[i64]) -> i64 {
        self.coeffs
            .iter()
            .zip(point)
            .map(|(c, x)| c * x)
            .sum::<i64>()
            + self.constant
    }

    pub fn remove_col(&mut self, col: usize) {
        self.coeffs.remove(col);
    }

    pub fn insert_cols(&mut self, at: usize, count: usize) {
        for _ in 0..count {
            self.coeffs.insert(at, 0);
        }
    }

    /// Reorders columns: new column `j` takes old column `perm[j]`.
    pub fn permute(&self, perm: &[usize]) -> Row {
        Row {
            coeffs: perm.iter().map(|&p| self.coeffs[p]).collect(),
            constant: self.constant,
        }
    }

    /// Substitutes column `col` using `eq` (an equality with `eq.coeffs[col] != 0`).
    /// Rational elimination: the row is scaled by `|a|` first.
    pub fn eliminate_with(&self, col: usize, eq: &Row) -> Row {
        let b = self.coeffs[col];
        if b == 0 {
            return self.clone();
        }
        let a = eq.coeffs[col];
        let mut r = self.combine(a.abs(), eq, -a.signum() * b);
        r.coeffs[col] = 0;
        r
    }
}

/// Outcome of normalizing a single constraint.
enum Norm {
    Trivial,
    Infeasible,
    Row(Row),
}

fn normalize_ineq(mut r: Row) -> Norm {
    let g = r.coeffs.iter().fold(0, |g, &c| gcd(g, c));
    if g == 0 {
        return if r.constant >= 0 { Norm::Trivial } else { Norm::Infeasible };
    }
    if g > 1 {
        for c in &mut r.coeffs {
            *c /= g;
        }
        r.constant = floor_div(r.constant, g);
    }
    Norm::Row(r)
}

fn normalize_eq(mut r: Row) -> Norm {
    let g = r.coeffs.iter().fold(0, |g, &c| gcd(g, c));
    if g == 0 {
        return if r.constant == 0 { Norm::Trivial } else { Norm::Infeasible };
    }
    if r.constant % g != 0 {
        return Norm::Infeasible;
    }
    let lead = r.coeffs.iter().find(|&&c| c != 0).copied().unwrap_or(1);
    let g = if lead < 0 { -g } else { g };
    for c in &mut r.coeffs {
        *c /= g;
    }
    r.constant /= g;
    Norm::Row(r)
}

/// A conjunction of equalities (`row == 0`) and inequalities (`row >= 0`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Conj {
    pub n_locals: usize,
    pub eqs: Vec<Row>,
    pub ineqs: Vec<Row>,
}

impl Conj {
    pub fn universe() -> Self {
        Self { n_locals: 0, eqs: Vec::new(), ineqs: Vec::new() }
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.eqs.iter().chain(self.ineqs.iter())
    }

    pub fn mentions(&self, col: usize) -> bool {
        self.rows().any(|r| r.coeffs[col] != 0)
    }

    #[cfg(test)]
    pub fn satisfied_by(&self, point: &[i64]) -> bool {
        self.eqs.iter().all(|r| r.eval(point) == 0) && self.ineqs.iter().all(|r| r.eval(point) >= 0)
    }

    pub fn remove_col(&mut self, col: usize) {
        for r in self.eqs.iter_mut().chain(self.ineqs.iter_mut()) {
            r.remove_col(col);
        }
    }

    pub fn insert_cols(&mut self, at: usize, count: usize) {
        for r in self.eqs.iter_mut().chain(self.ineqs.iter_mut()) {
            r.insert_cols(at, count);
        }
    }

    pub fn permute(&self, perm: &[usize]) -> Conj {
        Conj {
            n_locals: self.n_locals,
            eqs: self.eqs.iter().map(|r| r.permute(perm)).collect(),
            ineqs: self.ineqs.iter().map(|r| r.permute(perm)).collect(),
        }
    }

    /// Conjunction of two constraint systems over the same columns.
    pub fn and(&self, other: &Conj) -> Conj {
        let mut out = self.clone();
        out.eqs.extend(other.eqs.iter().cloned());
        out.ineqs.extend(other.ineqs.iter().cloned());
        out
    }

    /// Normalizes rows (gcd tightening), removes duplicates, merges opposite
    /// inequalities into equalities. Returns `None` when a contradiction is
    /// visible syntactically.
    pub fn simplify(mut self) -> Option<Conj> {
        let mut eqs: Vec<Row> = Vec::with_capacity(self.eqs.len());
        for r in self.eqs.drain(..) {
            match normalize_eq(r) {
                Norm::Trivial => {}
                Norm::Infeasible => return None,
                Norm::Row(r) => {
                    if !eqs.contains(&r) {
                        eqs.push(r);
                    }
                }
            }
        }
        // tightest constant per coefficient vector
        let mut best: HashMap<Vec<i64>, i64> = HashMap::new();
        let mut order: Vec<Vec<i64>> = Vec::new();
        for r in self.ineqs.drain(..) {
            match normalize_ineq(r) {
                Norm::Trivial => {}
                Norm::Infeasible => return None,
                Norm::Row(r) => match best.get_mut(&r.coeffs) {
                    Some(c) => *c = (*c).min(r.constant),
                    None => {
                        order.push(r.coeffs.clone());
                        best.insert(r.coeffs, r.constant);
                    }
                },
            }
        }
        let mut ineqs = Vec::with_capacity(order.len());
        let mut consumed = vec![false; order.len()];
        for (idx, coeffs) in order.iter().enumerate() {
            if consumed[idx] {
                continue;
            }
            let c = best[coeffs];
            let neg: Vec<i64> = coeffs.iter().map(|x| -x).collect();
            if let Some(&nc) = best.get(&neg) {
                // e + c >= 0 and -e + nc >= 0  =>  -c <= e <= nc
                if c + nc < 0 {
                    return None;
                }
                if c + nc == 0 {
                    let pos = order.iter().position(|o| *o == neg).unwrap();
                    consumed[pos] = true;
                    let row = Row::new(coeffs.clone(), c);
                    match normalize_eq(row) {
                        Norm::Infeasible => return None,
                        Norm::Trivial => {}
                        Norm::Row(r) => {
                            if !eqs.contains(&r) {
                                eqs.push(r);
                            }
                        }
                    }
                    continue;
                }
            }
            ineqs.push(Row::new(coeffs.clone(), c));
        }
        // drop inequalities implied by an equality with the same direction
        ineqs.retain(|r| {
            !eqs.iter().any(|e| {
                (e.coeffs == r.coeffs && e.constant <= r.constant)
                    || (e.coeffs.iter().zip(&r.coeffs).all(|(a, b)| *a == -b) && -e.constant <= r.constant)
            })
        });
        eqs.sort();
        ineqs.sort();
        Some(Conj { n_locals: self.n_locals, eqs, ineqs })
    }

    /// Rational projection of column `col` (the column stays, with zero
    /// coefficients). Exact over the rationals.
    pub fn project_rational(&self, col: usize) -> Conj {
        if let Some(pivot) = self
            .eqs
            .iter()
            .filter(|r| r.coeffs[col] != 0)
            .min_by_key(|r| r.coeffs[col].abs())
            .cloned()
        {
            let eqs = self
                .eqs
                .iter()
                .filter(|r| **r != pivot)
                .map(|r| r.eliminate_with(col, &pivot))
                .collect();
            let ineqs = self.ineqs.iter().map(|r| r.eliminate_with(col, &pivot)).collect();
            return Conj { n_locals: self.n_locals, eqs, ineqs };
        }
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut rest = Vec::new();
        for r in &self.ineqs {
            match r.coeffs[col].signum() {
                1 => lower.push(r),
                -1 => upper.push(r),
                _ => rest.push(r.clone()),
            }
        }
        for l in &lower {
            for u in &upper {
                let a = l.coeffs[col];
                let b = -u.coeffs[col];
                let mut r = l.combine(b, u, a);
                r.coeffs[col] = 0;
                rest.push(r);
            }
        }
        Conj { n_locals: self.n_locals, eqs: self.eqs.clone(), ineqs: rest }
    }

    /// Whether eliminating `col` by Fourier-Motzkin yields exactly the integer
    /// projection: every lower bound or every upper bound has unit coefficient.
    fn fm_exact(&self, col: usize) -> bool {
        if self.eqs.iter().any(|r| r.coeffs[col] != 0) {
            return false;
        }
        let lows: Vec<i64> = self.ineqs.iter().map(|r| r.coeffs[col]).filter(|c| *c > 0).collect();
        let ups: Vec<i64> = self.ineqs.iter().map(|r| r.coeffs[col]).filter(|c| *c < 0).collect();
        lows.iter().all(|c| *c == 1) || ups.iter().all(|c| *c == -1)
    }

    /// Attempts to remove local columns exactly. `first_local` is the index of
    /// the first local column. Locals that cannot be removed exactly remain.
    pub fn eliminate_locals(self, first_local: usize) -> Option<Conj> {
        let mut cur = self.simplify()?;
        let mut l = first_local;
        while l < first_local + cur.n_locals {
            let unit_eq = cur.eqs.iter().position(|r| r.coeffs[l].abs() == 1);
            let removed = if let Some(p) = unit_eq {
                let pivot = cur.eqs.remove(p);
                cur.eqs = cur.eqs.iter().map(|r| r.eliminate_with(l, &pivot)).collect();
                cur.ineqs = cur.ineqs.iter().map(|r| r.eliminate_with(l, &pivot)).collect();
                true
            } else if !cur.mentions(l) {
                true
            } else if cur.fm_exact(l) {
                cur = cur.project_rational(l);
                true
            } else {
                false
            };
            if removed {
                cur.remove_col(l);
                cur.n_locals -= 1;
                cur = cur.simplify()?;
            } else {
                l += 1;
            }
        }
        Some(cur)
    }

    /// Rational feasibility over all columns (a `false` result proves emptiness).
    pub fn rationally_feasible(&self) -> bool {
        let Some(mut cur) = self.clone().simplify() else {
            return false;
        };
        let n = cur.rows().next().map(|r| r.coeffs.len()).unwrap_or(0);
        for col in 0..n {
            cur = match cur.project_rational(col).simplify() {
                Some(c) => c,
                None => return false,
            };
            if cur.ineqs.len() > 4000 {
                // give up proving emptiness
                return true;
            }
        }
        true
    }

    /// Substitutes concrete values for the columns `[start, start + values.len())`
    /// and removes them.
    pub fn fix_cols(&self, start: usize, values: &[i64]) -> Conj {
        let fix = |r: &Row| {
            let mut r = r.clone();
            for (k, v) in values.iter().enumerate() {
                r.constant += r.coeffs[start + k] * v;
            }
            r.coeffs.drain(start..start + values.len());
            r
        };
        Conj {
            n_locals: self.n_locals,
            eqs: self.eqs.iter().map(fix).collect(),
            ineqs: self.ineqs.iter().map(fix).collect(),
        }
    }
}
