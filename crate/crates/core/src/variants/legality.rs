use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::build::{Band, TileChoice};
use super::VariantError;
use crate::loopdsl::{extract_polyhedral, AccessKind, AssignOp, Layout, LoopNest};
use crate::polyset::ParamBinding;
use crate::simcache::{execute, run, Arrays, Observer, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegalityOptions {
    /// Inputs are seeded with `0..seeds`.
    pub seeds: u64,
    /// Accumulations of one `+=` statement may be reordered.
    pub reassociate: bool,
    /// Relative tolerance per unit of reduction length, used only when the
    /// accumulation order changed.
    pub rtol: f64,
    /// Parameters outside tiled loop bounds are clamped to this while checking.
    pub check_limit: i64,
    /// Parameters of tiled loops are reduced towards this, keeping their
    /// residue modulo the tile sizes.
    pub tiled_limit: i64,
}

impl Default for LegalityOptions {
    fn default() -> Self {
        LegalityOptions { seeds: 1, reassociate: true, rtol: 1e-5, check_limit: 4, tiled_limit: 128 }
    }
}

/// Outcome of the instance-order comparison of two nests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderCheck {
    /// Both nests run the same statement instances, each once.
    pub matched: bool,
    /// Every pair of same-element accesses with a write keeps its order.
    pub strict: bool,
    /// As `strict`, except accumulations of one `+=` statement into the same
    /// element may be reordered among themselves.
    pub relaxed: bool,
}

/// Each statement's original iterators as affine functions of a layout's
/// schedule dims, with the parameters folded in.
struct InstanceKeys {
    rows: Vec<Vec<(i64, Vec<(usize, i64)>)>>,
}

impl InstanceKeys {
    fn new(layout: &Layout, iters: &[Vec<String>], b: &ParamBinding) -> Option<Self> {
        let mut rows = Vec::with_capacity(iters.len());
        for (s, names) in iters.iter().enumerate() {
            let st = layout.stmts.get(s)?;
            let mut row = Vec::with_capacity(names.len());
            for n in names {
                let (_, e) = st.iter_values.iter().rev().find(|(v, _)| v == n)?;
                let mut c = e.constant_term();
                let mut coeffs = Vec::new();
                for (var, k) in e.terms() {
                    match layout.dims.iter().position(|d| d == var) {
                        Some(d) => coeffs.push((d, k)),
                        None => c += k * b.get(var)?,
                    }
                }
                row.push((c, coeffs));
            }
            rows.push(row);
        }
        Some(InstanceKeys { rows })
    }

    fn key(&self, layout: &Layout, stmt: usize, counters: &[i64]) -> Vec<i64> {
        let p = layout.point(stmt, counters);
        let mut k = Vec::with_capacity(self.rows[stmt].len() + 1);
        k.push(stmt as i64);
        k.extend(self.rows[stmt].iter().map(|(c, co)| c + co.iter().map(|&(d, x)| x * p[d]).sum::<i64>()));
        k
    }
}

fn elem_key(array: usize, element: usize) -> u64 {
    ((array as u64) << 48) | element as u64
}

struct Original<'a> {
    layout: &'a Layout,
    keys: &'a InstanceKeys,
    times: HashMap<Vec<i64>, i64>,
    written: HashSet<u64>,
    duplicate: bool,
}

impl Observer for Original<'_> {
    fn instance(&mut self, stmt: usize, counters: &[i64]) {
        let t = self.times.len() as i64;
        if self.times.insert(self.keys.key(self.layout, stmt, counters), t).is_some() {
            self.duplicate = true;
        }
    }

    fn access(&mut self, array: usize, element: usize, kind: AccessKind, _reference: usize) {
        if kind == AccessKind::Write {
            self.written.insert(elem_key(array, element));
        }
    }
}

/// Latest original times seen so far for one element.
#[derive(Clone, Copy)]
struct Seen {
    all: i64,
    write: i64,
    other_all: i64,
    other_write: i64,
    /// Accumulating statement, `-1` before any, `-2` once two differ.
    acc_stmt: i64,
    acc_all: i64,
    acc_write: i64,
}

const FRESH: Seen =
    Seen { all: -1, write: -1, other_all: -1, other_write: -1, acc_stmt: -1, acc_all: -1, acc_write: -1 };

struct Reordered<'a> {
    layout: &'a Layout,
    keys: &'a InstanceKeys,
    times: &'a HashMap<Vec<i64>, i64>,
    /// Reference id -> statement, for target accesses of `+=` statements.
    acc: HashMap<usize, usize>,
    visited: HashSet<i64>,
    now: i64,
    seen: HashMap<u64, Seen>,
    check: OrderCheck,
}

impl Observer for Reordered<'_> {
    fn instance(&mut self, stmt: usize, counters: &[i64]) {
        match self.times.get(&self.keys.key(self.layout, stmt, counters)) {
            Some(&t) if self.visited.insert(t) => self.now = t,
            _ => {
                self.check.matched = false;
                self.now = -1;
            }
        }
    }

    fn access(&mut self, array: usize, element: usize, kind: AccessKind, reference: usize) {
        let t = self.now;
        let w = kind == AccessKind::Write;
        let s = self.seen.entry(elem_key(array, element)).or_insert(FRESH);
        if t < if w { s.all } else { s.write } {
            self.check.strict = false;
        }
        s.all = s.all.max(t);
        if w {
            s.write = s.write.max(t);
        }
        match self.acc.get(&reference) {
            None => {
                let bound = if w { s.other_all.max(s.acc_all) } else { s.other_write.max(s.acc_write) };
                if t < bound {
                    self.check.relaxed = false;
                }
                s.other_all = s.other_all.max(t);
                if w {
                    s.other_write = s.other_write.max(t);
                }
            }
            Some(&st) => {
                let mut bound = if w { s.other_all } else { s.other_write };
                if s.acc_stmt != -1 && s.acc_stmt != st as i64 {
                    bound = bound.max(if w { s.acc_all } else { s.acc_write });
                }
                if t < bound {
                    self.check.relaxed = false;
                }
                s.acc_stmt = if s.acc_stmt == -1 || s.acc_stmt == st as i64 { st as i64 } else { -2 };
                s.acc_all = s.acc_all.max(t);
                if w {
                    s.acc_write = s.acc_write.max(t);
                }
            }
        }
    }
}

fn stmt_iters(nest: &LoopNest) -> Vec<Vec<String>> {
    nest.statements().iter().map(|c| c.loops.iter().map(|l| l.iter.clone()).collect()).collect()
}

fn accumulation_refs(nest: &LoopNest) -> HashMap<usize, usize> {
    let mut out = HashMap::new();
    let mut next = 0;
    for ctx in nest.statements() {
        let n = ctx.stmt.refs().len();
        if ctx.stmt.op == AssignOp::AddAssign {
            out.insert(next, ctx.index);
            out.insert(next + n - 1, ctx.index);
        }
        next += n;
    }
    out
}

struct OriginalRun {
    times: HashMap<Vec<i64>, i64>,
    written: usize,
}

fn run_original(original: &LoopNest, b: &ParamBinding) -> Result<Option<OriginalRun>, SimError> {
    let layout = extract_polyhedral(original)?.layout;
    let Some(keys) = InstanceKeys::new(&layout, &stmt_iters(original), b) else {
        return Err(SimError::Unbound("iterator values of the original nest".into()));
    };
    let mut obs =
        Original { layout: &layout, keys: &keys, times: HashMap::new(), written: HashSet::new(), duplicate: false };
    run(original, b, &mut Arrays::zeros(original, b)?, &mut obs)?;
    Ok((!obs.duplicate).then_some(OriginalRun { times: obs.times, written: obs.written.len() }))
}

fn compare_order(v: &LoopNest, original: &LoopNest, orig: &OriginalRun, b: &ParamBinding) -> Result<OrderCheck, SimError> {
    let unmatched = OrderCheck { matched: false, strict: false, relaxed: false };
    let labels = |n: &LoopNest| n.statements().iter().map(|c| c.stmt.label.clone()).collect::<Vec<_>>();
    if labels(v) != labels(original) {
        return Ok(unmatched);
    }
    let layout = extract_polyhedral(v)?.layout;
    let Some(keys) = InstanceKeys::new(&layout, &stmt_iters(original), b) else {
        return Ok(unmatched);
    };
    let mut obs = Reordered {
        layout: &layout,
        keys: &keys,
        times: &orig.times,
        acc: accumulation_refs(v),
        visited: HashSet::new(),
        now: -1,
        seen: HashMap::new(),
        check: OrderCheck { matched: true, strict: true, relaxed: true },
    };
    run(v, b, &mut Arrays::zeros(v, b)?, &mut obs)?;
    let mut check = obs.check;
    check.matched &= obs.visited.len() == orig.times.len();
    if !check.matched {
        return Ok(unmatched);
    }
    Ok(check)
}

/// Compares the instance order of `v` against `original` under `b`. The
/// nests must have the same statements; instances are identified by the
/// values of the original iterators.
pub fn structural_order(v: &LoopNest, original: &LoopNest, b: &ParamBinding) -> Result<OrderCheck, SimError> {
    let unmatched = OrderCheck { matched: false, strict: false, relaxed: false };
    match run_original(original, b)? {
        Some(orig) => compare_order(v, original, &orig, b).or(Ok(unmatched)),
        None => Ok(unmatched),
    }
}

/// Whether `v` computes what `original` computes: same statement instances,
/// every dependence kept in order (accumulations reassociable when enabled)
/// and equal outputs on seeded inputs, exactly unless accumulations were
/// reordered. Execution failures of `v` make it illegal.
pub fn legality_check(
    v: &LoopNest,
    original: &LoopNest,
    b: &ParamBinding,
    opts: &LegalityOptions,
) -> Result<bool, SimError> {
    let Some(orig) = run_original(original, b)? else {
        return Ok(false);
    };
    let check = match compare_order(v, original, &orig, b) {
        Ok(c) => c,
        Err(_) => return Ok(false),
    };
    if !check.matched || !(check.strict || (opts.reassociate && check.relaxed)) {
        return Ok(false);
    }
    let factor = (orig.times.len() / orig.written.max(1)).max(1) as f64;
    for seed in 0..opts.seeds.max(1) {
        let want = execute(original, b, seed)?;
        let Ok(got) = execute(v, b, seed) else {
            return Ok(false);
        };
        if want.names != got.names || want.extents != got.extents {
            return Ok(false);
        }
        let pairs = want.data.iter().flatten().zip(got.data.iter().flatten());
        let same = if check.strict {
            pairs.into_iter().all(|(x, y)| x.to_bits() == y.to_bits())
        } else {
            pairs.into_iter().all(|(x, y)| (x - y).abs() <= opts.rtol * factor * x.abs().max(1.0))
        };
        if !same {
            return Ok(false);
        }
    }
    Ok(true)
}

struct Race<'a> {
    layout: &'a Layout,
    /// Schedule dim of the parallel loop per statement, if it encloses it.
    pdim: Vec<Option<usize>>,
    cur: Option<(Vec<i64>, i64)>,
    /// Per element: (prefix, first parallel value, several values, any write).
    seen: HashMap<u64, (Vec<i64>, i64, bool, bool)>,
    conflict: bool,
}

impl Observer for Race<'_> {
    fn instance(&mut self, stmt: usize, counters: &[i64]) {
        self.cur = self.pdim[stmt].map(|d| {
            let p = self.layout.point(stmt, counters);
            (p[..d].to_vec(), p[d])
        });
    }

    fn access(&mut self, array: usize, element: usize, kind: AccessKind, _reference: usize) {
        let Some((prefix, val)) = &self.cur else { return };
        let w = kind == AccessKind::Write;
        let e = self.seen.entry(elem_key(array, element)).or_insert_with(|| (prefix.clone(), *val, false, false));
        if &e.0 != prefix {
            *e = (prefix.clone(), *val, false, false);
        }
        e.2 |= e.1 != *val;
        e.3 |= w;
        self.conflict |= e.2 && e.3;
    }
}

/// Whether two iterations of loop `par` with equal outer iterators touch a
/// common element, at least one of them writing it.
pub fn parallel_conflict(v: &LoopNest, par: &str, b: &ParamBinding) -> Result<bool, VariantError> {
    let err = |e: SimError| VariantError::Check(e.to_string());
    let layout = extract_polyhedral(v).map_err(|e| err(e.into()))?.layout;
    let pdim = v
        .statements()
        .iter()
        .map(|c| c.loops.iter().position(|l| l.iter == par).map(|lv| layout.stmts[c.index].level_dims[lv]))
        .collect();
    let mut obs = Race { layout: &layout, pdim, cur: None, seen: HashMap::new(), conflict: false };
    run(v, b, &mut Arrays::zeros(v, b).map_err(err)?, &mut obs).map_err(err)?;
    Ok(obs.conflict)
}

/// A smaller binding for checking candidates: parameters bounding tiled
/// loops shrink towards `tiled_limit` by multiples of the tile sizes, all
/// others are clamped to `check_limit`.
pub fn check_binding(
    band: &Band,
    menus: &[Vec<TileChoice>],
    b: &ParamBinding,
    opts: &LegalityOptions,
) -> ParamBinding {
    let mut period: HashMap<&str, i64> = HashMap::new();
    for (l, menu) in band.loops.iter().zip(menus) {
        let sizes: Vec<i64> = menu.iter().flatten().flatten().copied().collect();
        if sizes.is_empty() {
            continue;
        }
        for e in l.lower.iter().chain(&l.upper) {
            for p in e.vars() {
                let cur = period.entry(p).or_insert(1);
                for &s in &sizes {
                    *cur = lcm(*cur, s).min(1 << 20);
                }
            }
        }
    }
    let mut out = ParamBinding::new();
    for (p, v) in b.iter() {
        let nv = match period.get(p) {
            Some(&l) => {
                let target = opts.tiled_limit.max(l);
                if v > target {
                    v - (v - target + l - 1) / l * l
                } else {
                    v
                }
            }
            None => v.min(opts.check_limit.max(1)),
        };
        out.set(p, nv);
    }
    out
}

fn lcm(a: i64, b: i64) -> i64 {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}
