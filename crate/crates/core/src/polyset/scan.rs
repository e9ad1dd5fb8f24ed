//! Scanning of parameter-free constraint systems: per-level bounds obtained
//! from successive rational projections, used for lexmin/lexmax, exact
//! counting and enumeration. Leaves always re-check the full system, so the
//! rational shadows only prune; they never decide membership.

use super::affine::{ceil_div, floor_div};
use super::conj::{Conj, Row};
use super::SetError;

/// Constraint rows that bound one column, expressed over columns `0..=level`.
#[derive(Clone, Debug)]
struct Level {
    eqs: Vec<Row>,
    ineqs: Vec<Row>,
}

/// A bound (parameter-free) conjunction compiled for scanning.
#[derive(Clone, Debug)]
pub(crate) struct Compiled {
    n_visible: usize,
    n_cols: usize,
    levels: Vec<Level>,
    feasible: bool,
    is_box: bool,
    names: Vec<String>,
}

pub(crate) enum Bounds {
    Empty,
    Range(i64, i64),
}

impl Compiled {
    pub fn new(conj: &Conj, n_visible: usize, names: &[String]) -> Compiled {
        let n_cols = n_visible + conj.n_locals;
        let mut names: Vec<String> = names.to_vec();
        for l in 0..conj.n_locals {
            names.push(format!("_e{l}"));
        }
        let Some(mut cur) = conj.clone().simplify() else {
            return Compiled::empty(n_visible, n_cols, names);
        };
        let mut levels = vec![Level { eqs: vec![], ineqs: vec![] }; n_cols];
        for col in (0..n_cols).rev() {
            levels[col] = Level {
                eqs: cur.eqs.iter().filter(|r| r.coeffs[col] != 0).cloned().collect(),
                ineqs: cur.ineqs.iter().filter(|r| r.coeffs[col] != 0).cloned().collect(),
            };
            cur = match cur.project_rational(col).simplify() {
                Some(c) => c,
                None => return Compiled::empty(n_visible, n_cols, names),
            };
        }
        let is_box = conj.n_locals == 0
            && levels.iter().enumerate().all(|(col, lv)| {
                lv.eqs.iter().chain(&lv.ineqs).all(|r| {
                    r.coeffs.iter().enumerate().all(|(j, c)| j == col || *c == 0)
                })
            });
        Compiled { n_visible, n_cols, levels, feasible: true, is_box, names }
    }

    fn empty(n_visible: usize, n_cols: usize, names: Vec<String>) -> Compiled {
        Compiled {
            n_visible,
            n_cols,
            levels: Vec::new(),
            feasible: false,
            is_box: false,
            names,
        }
    }

    pub fn has_locals(&self) -> bool {
        self.n_cols > self.n_visible
    }

    /// Bounds of column `prefix.len()` given the values of earlier columns.
    pub fn bounds(&self, prefix: &[i64]) -> Result<Bounds, SetError> {
        let col = prefix.len();
        let lv = &self.levels[col];
        let partial = |r: &Row| -> i64 {
            r.constant + r.coeffs[..col].iter().zip(prefix).map(|(c, x)| c * x).sum::<i64>()
        };
        let mut lo: Option<i64> = None;
        let mut hi: Option<i64> = None;
        for r in &lv.eqs {
            let a = r.coeffs[col];
            let v = partial(r);
            if v % a != 0 {
                return Ok(Bounds::Empty);
            }
            let x = -v / a;
            lo = Some(lo.map_or(x, |l| l.max(x)));
            hi = Some(hi.map_or(x, |h| h.min(x)));
        }
        for r in &lv.ineqs {
            let a = r.coeffs[col];
            let v = partial(r);
            if a > 0 {
                let x = ceil_div(-v, a);
                lo = Some(lo.map_or(x, |l| l.max(x)));
            } else {
                let x = floor_div(v, -a);
                hi = Some(hi.map_or(x, |h| h.min(x)));
            }
        }
        match (lo, hi) {
            (Some(l), Some(h)) if l <= h => Ok(Bounds::Range(l, h)),
            (Some(_), Some(_)) => Ok(Bounds::Empty),
            _ => Err(SetError::Unbounded(self.names[col].clone())),
        }
    }

    /// Whether some completion of `prefix` (all remaining columns) exists.
    pub fn exists(&self, prefix: &mut Vec<i64>) -> Result<bool, SetError> {
        if !self.feasible {
            return Ok(false);
        }
        if prefix.len() == self.n_cols {
            return Ok(true);
        }
        if let Bounds::Range(lo, hi) = self.bounds(prefix)? {
            for v in lo..=hi {
                prefix.push(v);
                let found = self.exists(prefix)?;
                prefix.pop();
                if found {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Lexicographic extreme over the visible columns.
    pub fn extreme(&self, maximize: bool) -> Result<Option<Vec<i64>>, SetError> {
        if !self.feasible {
            return Ok(None);
        }
        let mut prefix = Vec::with_capacity(self.n_cols);
        if self.extreme_rec(&mut prefix, maximize)? {
            prefix.truncate(self.n_visible);
            Ok(Some(prefix))
        } else {
            Ok(None)
        }
    }

    fn extreme_rec(&self, prefix: &mut Vec<i64>, maximize: bool) -> Result<bool, SetError> {
        if prefix.len() == self.n_cols {
            return Ok(true);
        }
        let Bounds::Range(lo, hi) = self.bounds(prefix)? else {
            return Ok(false);
        };
        if prefix.len() >= self.n_visible {
            // any completion of the locals will do
            return self.exists(prefix);
        }
        let mut v = if maximize { hi } else { lo };
        loop {
            prefix.push(v);
            if self.extreme_rec(prefix, maximize)? {
                return Ok(true);
            }
            prefix.pop();
            if maximize {
                if v == lo {
                    break;
                }
                v -= 1;
            } else {
                if v == hi {
                    break;
                }
                v += 1;
            }
        }
        Ok(false)
    }

    /// Product of extents; only valid when `is_box`.
    fn box_count(&self) -> Result<u64, SetError> {
        let mut total: u64 = 1;
        let mut prefix = Vec::new();
        for _ in 0..self.n_cols {
            match self.bounds(&prefix)? {
                Bounds::Empty => return Ok(0),
                Bounds::Range(lo, hi) => {
                    total *= (hi - lo + 1) as u64;
                    prefix.push(lo);
                }
            }
        }
        Ok(total)
    }
}

/// Exact union counting / enumeration over several compiled disjuncts that
/// share the visible columns.
pub(crate) struct UnionScan<'a> {
    parts: &'a [Compiled],
    n_visible: usize,
}

impl<'a> UnionScan<'a> {
    pub fn new(parts: &'a [Compiled], n_visible: usize) -> Self {
        Self { parts, n_visible }
    }

    pub fn count(&self) -> Result<u64, SetError> {
        let active: Vec<usize> = (0..self.parts.len()).filter(|&i| self.parts[i].feasible).collect();
        if active.is_empty() {
            return Ok(0);
        }
        if self.n_visible == 0 {
            for &i in &active {
                if self.parts[i].exists(&mut Vec::new())? {
                    return Ok(1);
                }
            }
            return Ok(0);
        }
        if active.len() == 1 && self.parts[active[0]].is_box {
            return self.parts[active[0]].box_count();
        }
        let mut prefix = Vec::with_capacity(self.n_visible);
        self.count_rec(&active, &mut prefix)
    }

    fn ranges(&self, active: &[usize], prefix: &[i64]) -> Result<Vec<(usize, i64, i64)>, SetError> {
        let mut out = Vec::with_capacity(active.len());
        for &i in active {
            if let Bounds::Range(lo, hi) = self.parts[i].bounds(prefix)? {
                out.push((i, lo, hi));
            }
        }
        Ok(out)
    }

    fn count_rec(&self, active: &[usize], prefix: &mut Vec<i64>) -> Result<u64, SetError> {
        let ranges = self.ranges(active, prefix)?;
        if ranges.is_empty() {
            return Ok(0);
        }
        let last = prefix.len() + 1 == self.n_visible;
        if last && ranges.iter().all(|(i, _, _)| !self.parts[*i].has_locals()) {
            return Ok(merged_length(ranges.iter().map(|(_, l, h)| (*l, *h)).collect()));
        }
        let mut total = 0u64;
        for (lo, hi) in merge(ranges.iter().map(|(_, l, h)| (*l, *h)).collect()) {
            for v in lo..=hi {
                let sub: Vec<usize> = ranges
                    .iter()
                    .filter(|(_, l, h)| *l <= v && v <= *h)
                    .map(|(i, _, _)| *i)
                    .collect();
                prefix.push(v);
                if last {
                    for &i in &sub {
                        let part = &self.parts[i];
                        if !part.has_locals() || part.exists(prefix)? {
                            total += 1;
                            break;
                        }
                    }
                } else {
                    total += self.count_rec(&sub, prefix)?;
                }
                prefix.pop();
            }
        }
        Ok(total)
    }

    /// All points in lexicographic order, without duplicates.
    pub fn points(&self) -> Result<Vec<Vec<i64>>, SetError> {
        let active: Vec<usize> = (0..self.parts.len()).filter(|&i| self.parts[i].feasible).collect();
        let mut out = Vec::new();
        if active.is_empty() {
            return Ok(out);
        }
        if self.n_visible == 0 {
            for &i in &active {
                if self.parts[i].exists(&mut Vec::new())? {
                    out.push(Vec::new());
                    break;
                }
            }
            return Ok(out);
        }
        let mut prefix = Vec::with_capacity(self.n_visible);
        self.points_rec(&active, &mut prefix, &mut out)?;
        Ok(out)
    }

    fn points_rec(
        &self,
        active: &[usize],
        prefix: &mut Vec<i64>,
        out: &mut Vec<Vec<i64>>,
    ) -> Result<(), SetError> {
        let ranges = self.ranges(active, prefix)?;
        let last = prefix.len() + 1 == self.n_visible;
        for (lo, hi) in merge(ranges.iter().map(|(_, l, h)| (*l, *h)).collect()) {
            for v in lo..=hi {
                let sub: Vec<usize> = ranges
                    .iter()
                    .filter(|(_, l, h)| *l <= v && v <= *h)
                    .map(|(i, _, _)| *i)
                    .collect();
                prefix.push(v);
                if last {
                    for &i in &sub {
                        let part = &self.parts[i];
                        if !part.has_locals() || part.exists(prefix)? {
                            out.push(prefix.clone());
                            break;
                        }
                    }
                } else {
                    self.points_rec(&sub, prefix, out)?;
                }
                prefix.pop();
            }
        }
        Ok(())
    }
}

fn merge(mut ranges: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    ranges.sort_unstable();
    let mut out: Vec<(i64, i64)> = Vec::with_capacity(ranges.len());
    for (lo, hi) in ranges {
        match out.last_mut() {
            Some(last) if lo <= last.1 + 1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

fn merged_length(ranges: Vec<(i64, i64)>) -> u64 {
    merge(ranges).iter().map(|(l, h)| (h - l + 1) as u64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_touching_intervals() {
        assert_eq!(merge(vec![(5, 7), (0, 2), (3, 3)]), vec![(0, 3), (5, 7)]);
        assert_eq!(merged_length(vec![(0, 4), (2, 6)]), 7);
    }
}
