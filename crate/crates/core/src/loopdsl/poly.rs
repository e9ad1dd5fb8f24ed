use serde::Serialize;

use super::{AccessKind, LoopNest};
use crate::polyset::{AffineExpr, Constraint, IntRelation, IntSet, SetError, Tuple};

/// Name of the unified schedule-space tuple.
pub const SPACE: &str = "S";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
enum Slot {
    /// Textual position among siblings at a nesting level.
    Position(usize),
    /// Loop counter at a nesting level: the iterator itself for unit-step
    /// loops, the zero-based trip index otherwise.
    Counter(usize),
}

/// Placement of statements in the unified `2d+1` schedule space. Position
/// slots that are equal for every statement are dropped.
#[derive(Clone, Debug, Serialize)]
pub struct Layout {
    pub dims: Vec<String>,
    slots: Vec<Slot>,
    pub stmts: Vec<StmtLayout>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StmtLayout {
    pub label: String,
    /// Enclosing loop iterators, outermost first.
    pub iters: Vec<String>,
    /// Each iterator as an affine function of schedule dims and parameters.
    pub iter_values: Vec<(String, AffineExpr)>,
    pub positions: Vec<usize>,
    /// Schedule dim index of each enclosing loop level.
    pub level_dims: Vec<usize>,
    pub parallel: Vec<bool>,
}

impl Layout {
    pub fn tuple(&self) -> Tuple {
        Tuple { name: SPACE.to_string(), dims: self.dims.clone() }
    }

    /// Schedule point of statement `stmt` whose enclosing loop counters
    /// (iterator values for unit steps, trip indices otherwise) are `counters`.
    pub fn point(&self, stmt: usize, counters: &[i64]) -> Vec<i64> {
        let s = &self.stmts[stmt];
        self.slots
            .iter()
            .map(|slot| match *slot {
                Slot::Position(l) => s.positions.get(l).map_or(0, |&p| p as i64),
                Slot::Counter(l) => counters.get(l).copied().unwrap_or(0),
            })
            .collect()
    }

    /// Dim index of the loop counter at nesting level `level`.
    pub fn counter_dim(&self, level: usize) -> Option<usize> {
        self.slots.iter().position(|s| *s == Slot::Counter(level))
    }
}

/// One textual array reference as an access relation from the schedule space.
#[derive(Clone, Debug)]
pub struct RefInfo {
    pub id: usize,
    pub stmt: usize,
    pub array: String,
    pub kind: AccessKind,
    /// Index functions over schedule dims and parameters.
    pub index: Vec<AffineExpr>,
    pub relation: IntRelation,
}

#[derive(Clone, Debug)]
pub struct Polyhedral {
    pub params: Vec<String>,
    pub layout: Layout,
    /// Iteration space: union of all statement domains in the schedule space.
    pub domain: IntSet,
    pub stmt_domains: Vec<IntSet>,
    pub refs: Vec<RefInfo>,
}

impl Polyhedral {
    pub fn space(&self) -> Tuple {
        self.layout.tuple()
    }

    pub fn reads(&self) -> Vec<&RefInfo> {
        self.refs.iter().filter(|r| r.kind == AccessKind::Read).collect()
    }

    pub fn writes(&self) -> Vec<&RefInfo> {
        self.refs.iter().filter(|r| r.kind == AccessKind::Write).collect()
    }

    /// Arrays referenced, in first-reference order.
    pub fn arrays(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.refs {
            if !out.contains(&r.array) {
                out.push(r.array.clone());
            }
        }
        out
    }
}

/// Simultaneous substitution of iterator values.
fn subst_all(e: &AffineExpr, vals: &[(String, AffineExpr)]) -> AffineExpr {
    let mut out = AffineExpr::constant(e.constant_term());
    for (n, c) in e.terms() {
        match vals.iter().rev().find(|(v, _)| v == n) {
            Some((_, v)) => out = out.add(&v.scale(c)),
            None => out.add_term(n, c),
        }
    }
    out
}

fn fresh(name: String, taken: &[String]) -> String {
    let mut n = name;
    while taken.contains(&n) {
        n.push('\'');
    }
    n
}

/// Iteration space, access relations (one per textual reference) and the
/// schedule layout of a nest.
pub fn extract_polyhedral(nest: &LoopNest) -> Result<Polyhedral, SetError> {
    let ctxs = nest.statements();
    let depth = ctxs.iter().map(|c| c.loops.len()).max().unwrap_or(0);
    let pos_at = |c: &super::StmtCtx, l: usize| c.positions.get(l).copied().unwrap_or(0);

    let mut slots = Vec::new();
    for l in 0..=depth {
        let first = ctxs.first().map_or(0, |c| pos_at(c, l));
        if ctxs.iter().any(|c| pos_at(c, l) != first) {
            slots.push(Slot::Position(l));
        }
        if l < depth {
            slots.push(Slot::Counter(l));
        }
    }

    let iterators: Vec<String> = ctxs.iter().flat_map(|c| c.loops.iter().map(|l| l.iter.clone())).collect();
    let mut taken: Vec<String> = nest.params.clone();
    let mut dims = Vec::with_capacity(slots.len());
    for slot in &slots {
        let synthetic = |n: String, taken: &[String]| {
            let mut all = taken.to_vec();
            all.extend(iterators.iter().cloned());
            fresh(n, &all)
        };
        let name = match *slot {
            Slot::Position(l) => synthetic(format!("p{l}"), &taken),
            Slot::Counter(l) => {
                let mut names = ctxs.iter().filter_map(|c| c.loops.get(l)).map(|lp| {
                    if lp.step == 1 {
                        lp.iter.clone()
                    } else {
                        format!("{}_t", lp.iter)
                    }
                });
                let first = names.next().unwrap_or_else(|| format!("c{l}"));
                let same = names.all(|n| n == first);
                let unit = ctxs.iter().filter_map(|c| c.loops.get(l)).all(|lp| lp.step == 1);
                if same && unit && !taken.contains(&first) {
                    first
                } else if same {
                    synthetic(first, &taken)
                } else {
                    synthetic(format!("c{l}"), &taken)
                }
            }
        };
        taken.push(name.clone());
        dims.push(name);
    }
    let tuple = Tuple { name: SPACE.to_string(), dims: dims.clone() };

    let mut stmts = Vec::new();
    let mut stmt_domains = Vec::new();
    for c in &ctxs {
        let mut cs: Vec<Constraint> = Vec::new();
        let mut iter_values: Vec<(String, AffineExpr)> = Vec::new();
        let mut level_dims = Vec::new();
        for (l, lp) in c.loops.iter().enumerate() {
            let d = slots.iter().position(|s| *s == Slot::Counter(l)).expect("counter slot");
            level_dims.push(d);
            let x = AffineExpr::var(&dims[d]);
            let value = if lp.step == 1 {
                for lb in &lp.lower {
                    cs.push(Constraint::ge(x.clone(), subst_all(lb, &iter_values)));
                }
                x.clone()
            } else {
                if lp.lower.len() != 1 {
                    return Err(SetError::Unsupported(format!(
                        "loop `{}` has step {} and several lower bounds",
                        lp.iter, lp.step
                    )));
                }
                cs.push(Constraint::ge(x.clone(), AffineExpr::constant(0)));
                subst_all(&lp.lower[0], &iter_values).add(&x.scale(lp.step))
            };
            for ub in &lp.upper {
                cs.push(Constraint::lt(value.clone(), subst_all(ub, &iter_values)));
            }
            iter_values.push((lp.iter.clone(), value));
        }
        for (d, slot) in slots.iter().enumerate() {
            let fixed = match *slot {
                Slot::Position(l) => Some(pos_at(c, l) as i64),
                Slot::Counter(l) if l >= c.loops.len() => Some(0),
                Slot::Counter(_) => None,
            };
            if let Some(v) = fixed {
                cs.push(Constraint::eq(AffineExpr::var(&dims[d]), AffineExpr::constant(v)));
            }
        }
        stmt_domains.push(IntSet::from_constraints(tuple.clone(), &nest.params, &cs)?);
        stmts.push(StmtLayout {
            label: c.stmt.label.clone(),
            iters: c.loops.iter().map(|l| l.iter.clone()).collect(),
            iter_values,
            positions: c.positions.clone(),
            level_dims,
            parallel: c.loops.iter().map(|l| l.parallel).collect(),
        });
    }

    let mut domain = IntSet::empty(tuple.clone(), &nest.params);
    for d in &stmt_domains {
        domain = domain.union(d)?;
    }

    let mut refs = Vec::new();
    for r in nest.refs() {
        let vals = &stmts[r.stmt].iter_values;
        let index: Vec<AffineExpr> =
            r.index.iter().map(|e| subst_all(e, vals)).collect();
        let relation =
            IntRelation::from_map(tuple.clone(), &nest.params, &r.array, &index, Some(&stmt_domains[r.stmt]))?;
        refs.push(RefInfo { id: r.id, stmt: r.stmt, array: r.array, kind: r.kind, index, relation });
    }

    Ok(Polyhedral {
        params: nest.params.clone(),
        layout: Layout { dims, slots, stmts },
        domain,
        stmt_domains,
        refs,
    })
}
