//! Exact dependences between statement instances that touch the same array
//! element, one relation per ordered pair of textual references.

use serde::Serialize;

use crate::loopdsl::{extract_polyhedral, AccessKind, LoopNest, Polyhedral};
use crate::polyset::{AffineExpr, Constraint, IntRelation, ParamBinding, SetError, Tuple};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DepKind {
    RAR,
    RAW,
    WAR,
    WAW,
}

impl DepKind {
    pub fn of(source: AccessKind, target: AccessKind) -> DepKind {
        let w = |k: AccessKind| k != AccessKind::Read;
        match (w(source), w(target)) {
            (false, false) => DepKind::RAR,
            (true, false) => DepKind::RAW,
            (false, true) => DepKind::WAR,
            (true, true) => DepKind::WAW,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dependence {
    pub id: usize,
    pub kind: DepKind,
    pub array: String,
    pub source: usize,
    pub target: usize,
    /// Source schedule points to target schedule points; every pair is
    /// lexicographically increasing.
    pub relation: IntRelation,
    pub spans_parallel: bool,
    pub parallel_iterator: Option<String>,
}

fn primed(dims: &[String], avoid: &[String]) -> Vec<String> {
    dims.iter()
        .map(|d| {
            let mut n = format!("{d}'");
            while dims.contains(&n) || avoid.contains(&n) {
                n.push('\'');
            }
            n
        })
        .collect()
}

/// `s_j = t_j` for `j < level` and `s_level < t_level`.
fn lex_piece(src: &[String], tgt: &[String], level: usize) -> Vec<Constraint> {
    let mut cs: Vec<Constraint> =
        (0..level).map(|j| Constraint::eq(AffineExpr::var(&src[j]), AffineExpr::var(&tgt[j]))).collect();
    cs.push(Constraint::lt(AffineExpr::var(&src[level]), AffineExpr::var(&tgt[level])));
    cs
}

/// Dependences of `nest`; symbolically empty relations are dropped.
pub fn compute_dependences(nest: &LoopNest) -> Result<Vec<Dependence>, SetError> {
    dependences_of(&extract_polyhedral(nest)?)
}

pub fn dependences_of(p: &Polyhedral) -> Result<Vec<Dependence>, SetError> {
    let space = p.space();
    let out_dims = primed(&space.dims, &p.params);
    let out = Tuple { name: space.name.clone(), dims: out_dims.clone() };
    let mut deps = Vec::new();
    for a in &p.refs {
        for b in p.refs.iter().filter(|b| b.array == a.array) {
            let mut same: Vec<Constraint> = Vec::with_capacity(a.index.len());
            for (ea, eb) in a.index.iter().zip(&b.index) {
                let mut eb = eb.clone();
                for (d, o) in space.dims.iter().zip(&out_dims) {
                    eb = eb.rename(d, o);
                }
                same.push(Constraint::eq(ea.clone(), eb));
            }
            let mut rel: Option<IntRelation> = None;
            for level in 0..space.dims.len() {
                let mut cs = same.clone();
                cs.extend(lex_piece(&space.dims, &out_dims, level));
                let piece = IntRelation::from_constraints(space.clone(), out.clone(), &p.params, &cs)?
                    .intersect_domain(&p.stmt_domains[a.stmt])?
                    .intersect_range(&p.stmt_domains[b.stmt])?
                    .prune();
                if piece.wrap().is_trivially_empty() {
                    continue;
                }
                rel = Some(match rel {
                    Some(r) => r.union(&piece)?,
                    None => piece,
                });
            }
            if let Some(relation) = rel {
                deps.push(Dependence {
                    id: deps.len(),
                    kind: DepKind::of(a.kind, b.kind),
                    array: a.array.clone(),
                    source: a.id,
                    target: b.id,
                    relation,
                    spans_parallel: false,
                    parallel_iterator: None,
                });
            }
        }
    }
    Ok(deps)
}

/// Parallel loop levels enclosing both the source and target statements of
/// `dep`, outermost first, with the schedule dim of each.
pub(crate) fn shared_parallel_levels(dep: &Dependence, p: &Polyhedral) -> Vec<(usize, usize, String)> {
    let s = &p.layout.stmts[p.refs[dep.source].stmt];
    let t = &p.layout.stmts[p.refs[dep.target].stmt];
    (0..s.iters.len())
        .filter(|&l| {
            s.parallel[l]
                && l < t.iters.len()
                && s.positions.get(..=l).is_some()
                && s.positions.get(..=l) == t.positions.get(..=l)
        })
        .map(|l| (l, s.level_dims[l], s.iters[l].clone()))
        .collect()
}

/// Flags `dep` when a source and a target instance under `binding` differ in
/// an enclosing parallel loop's counter; records the outermost such loop.
pub fn classify_parallel_span(dep: &Dependence, p: &Polyhedral, binding: &ParamBinding) -> Result<Dependence, SetError> {
    let mut out = dep.clone();
    out.spans_parallel = false;
    out.parallel_iterator = None;
    let dims = &dep.relation.input().dims;
    let tdims = &dep.relation.output().dims;
    for (_, d, iter) in shared_parallel_levels(dep, p) {
        let (s, t) = (AffineExpr::var(&dims[d]), AffineExpr::var(&tdims[d]));
        let lt = dep.relation.add_constraints(&[Constraint::lt(s.clone(), t.clone())])?;
        let gt = dep.relation.add_constraints(&[Constraint::gt(s, t)])?;
        if !lt.is_empty(binding)? || !gt.is_empty(binding)? {
            out.spans_parallel = true;
            out.parallel_iterator = Some(iter);
            break;
        }
    }
    Ok(out)
}

/// Dependences that are nonempty under `binding`, classified, renumbered
/// densely in enumeration order.
pub fn bound_dependences(p: &Polyhedral, binding: &ParamBinding) -> Result<Vec<Dependence>, SetError> {
    let mut out = Vec::new();
    for d in dependences_of(p)? {
        if d.relation.is_empty(binding)? {
            continue;
        }
        let mut d = classify_parallel_span(&d, p, binding)?;
        d.id = out.len();
        out.push(d);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DependenceRecord {
    pub id: usize,
    pub kind: DepKind,
    pub array: String,
    pub source_ref: usize,
    pub target_ref: usize,
    pub relation: String,
    pub spans_parallel: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel_iterator: Option<String>,
}

impl From<&Dependence> for DependenceRecord {
    fn from(d: &Dependence) -> Self {
        DependenceRecord {
            id: d.id,
            kind: d.kind,
            array: d.array.clone(),
            source_ref: d.source,
            target_ref: d.target,
            relation: d.relation.to_string(),
            spans_parallel: d.spans_parallel,
            parallel_iterator: d.parallel_iterator.clone(),
        }
    }
}
