//! Working-set sizes per dependence: the collective footprint of parallel
//! iterations for dependences spanning a parallel loop, otherwise the
//! footprints between the first source and its first and last targets.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::depend::{bound_dependences, shared_parallel_levels, DepKind, Dependence};
use crate::loopdsl::{extract_polyhedral, LoopNest, Polyhedral};
use crate::polyset::{AffineExpr, Constraint, IntRelation, IntSet, ParamBinding, Point, SetError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WsVariant {
    Par,
    Min,
    Max,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WorkingSetEntry {
    pub dependence: usize,
    pub variant: WsVariant,
    pub elements: u64,
    pub bytes: u64,
}

/// Analysis details of one retained dependence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DependenceWs {
    pub id: usize,
    pub kind: DepKind,
    pub array: String,
    pub source_ref: usize,
    pub target_ref: usize,
    pub spans_parallel: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel_iterator: Option<String>,
    /// Representative source; for parallel dependences, the fixed outer prefix.
    pub source: Point,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_target: Option<Point>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_target: Option<Point>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub entries: usize,
    pub total_elements: u64,
    pub min_elements: u64,
    pub max_elements: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WorkingSetReport {
    pub nest: String,
    pub binding: BTreeMap<String, i64>,
    pub datatype_size: u64,
    pub dependences: Vec<DependenceWs>,
    pub entries: Vec<WorkingSetEntry>,
    pub summary: Summary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WsOptions {
    pub datatype_size: u64,
    /// For parallel dependences, also fix the outer iterators at the
    /// lexmax and midpoint of the source domain and keep the largest
    /// footprint.
    pub sample_outer: bool,
}

impl Default for WsOptions {
    fn default() -> Self {
        WsOptions { datatype_size: 4, sample_outer: false }
    }
}

/// Distinct elements in the images of `s` under `relations`: images are
/// unioned per array and the per-array counts summed.
pub fn footprint(relations: &[&IntRelation], s: &IntSet, binding: &ParamBinding) -> Result<u64, SetError> {
    let mut per_array: BTreeMap<(String, usize), IntSet> = BTreeMap::new();
    for r in relations {
        let img = r.apply(s)?;
        let key = (r.output().name.clone(), r.output().arity());
        let merged = match per_array.remove(&key) {
            Some(acc) => acc.union(&img)?,
            None => img,
        };
        per_array.insert(key, merged);
    }
    per_array.values().map(|img| img.cardinality(binding)).sum()
}

fn fix_prefix(s: &IntSet, dims: &[String], prefix: &[i64]) -> Result<IntSet, SetError> {
    let cs: Vec<Constraint> = prefix
        .iter()
        .zip(dims)
        .map(|(&v, d)| Constraint::eq(AffineExpr::var(d), AffineExpr::constant(v)))
        .collect();
    s.add_constraints(&cs)
}

struct Ctx<'a> {
    p: &'a Polyhedral,
    bound: IntSet,
    relations: Vec<&'a IntRelation>,
    binding: &'a ParamBinding,
    opts: WsOptions,
}

impl Ctx<'_> {
    fn footprint(&self, s: &IntSet) -> Result<u64, SetError> {
        footprint(&self.relations, s, self.binding)
    }

    fn parallel(&self, d: &Dependence, record: &mut DependenceWs) -> Result<u64, SetError> {
        let levels = shared_parallel_levels(d, self.p);
        let dim = levels
            .iter()
            .find(|(_, _, it)| Some(it) == d.parallel_iterator.as_ref())
            .map(|(_, dim, _)| *dim)
            .expect("parallel level of a spanning dependence");
        let dom = d.relation.domain();
        let lo = dom.lexmin(self.binding)?.expect("nonempty dependence");
        let mut samples = vec![lo[..dim].to_vec()];
        if self.opts.sample_outer {
            let hi = dom.lexmax(self.binding)?.expect("nonempty dependence");
            let mid: Vec<i64> = lo[..dim].iter().zip(&hi[..dim]).map(|(a, b)| a + (b - a) / 2).collect();
            samples.push(mid);
            samples.push(hi[..dim].to_vec());
        }
        let dims = &self.p.layout.dims;
        let mut best = 0;
        for (k, prefix) in samples.iter().enumerate() {
            let ws = self.footprint(&fix_prefix(&self.bound, dims, prefix)?)?;
            if k == 0 || ws > best {
                best = ws;
                record.source = prefix.clone();
            }
        }
        Ok(best)
    }

    fn segment(&self, src: &[i64], tgt: &[i64]) -> Result<IntSet, SetError> {
        self.bound.lex_le_point(tgt)?.lex_ge_point(src)
    }

    fn sequential(&self, d: &Dependence, record: &mut DependenceWs) -> Result<(u64, u64), SetError> {
        let src = d.relation.domain().lexmin(self.binding)?.expect("nonempty dependence");
        let n = src.len();
        let pin: Vec<Constraint> = src
            .iter()
            .zip(&d.relation.input().dims)
            .map(|(&v, dim)| Constraint::eq(AffineExpr::var(dim), AffineExpr::constant(v)))
            .collect();
        let targets = d.relation.add_constraints(&pin)?.range();
        let tmin = targets.lexmin(self.binding)?.expect("source has a target");
        let tmax = targets.lexmax(self.binding)?.expect("source has a target");
        debug_assert_eq!(tmin.len(), n);
        let ws_min = self.footprint(&self.segment(&src, &tmin)?)?;
        let ws_max = if tmax == tmin { ws_min } else { self.footprint(&self.segment(&src, &tmax)?)? };
        record.source = src;
        record.min_target = Some(tmin);
        record.max_target = Some(tmax);
        Ok((ws_min, ws_max))
    }
}

/// Working sets of every dependence of `nest` that is nonempty under
/// `binding`.
pub fn working_sets(nest: &LoopNest, binding: &ParamBinding, opts: WsOptions) -> Result<WorkingSetReport, SetError> {
    let p = extract_polyhedral(nest)?;
    working_sets_of(&p, &nest.name, binding, opts)
}

pub fn working_sets_of(
    p: &Polyhedral,
    name: &str,
    binding: &ParamBinding,
    opts: WsOptions,
) -> Result<WorkingSetReport, SetError> {
    let deps = bound_dependences(p, binding)?;
    let ctx = Ctx {
        p,
        bound: p.domain.clone(),
        relations: p.refs.iter().map(|r| &r.relation).collect(),
        binding,
        opts,
    };
    let mut entries = Vec::new();
    let mut records = Vec::new();
    let bytes = |e: u64| e * opts.datatype_size;
    for d in &deps {
        let mut rec = DependenceWs {
            id: d.id,
            kind: d.kind,
            array: d.array.clone(),
            source_ref: d.source,
            target_ref: d.target,
            spans_parallel: d.spans_parallel,
            parallel_iterator: d.parallel_iterator.clone(),
            source: vec![],
            min_target: None,
            max_target: None,
        };
        if d.spans_parallel {
            let ws = ctx.parallel(d, &mut rec)?;
            entries.push(WorkingSetEntry { dependence: d.id, variant: WsVariant::Par, elements: ws, bytes: bytes(ws) });
        } else {
            let (lo, hi) = ctx.sequential(d, &mut rec)?;
            entries.push(WorkingSetEntry { dependence: d.id, variant: WsVariant::Min, elements: lo, bytes: bytes(lo) });
            entries.push(WorkingSetEntry { dependence: d.id, variant: WsVariant::Max, elements: hi, bytes: bytes(hi) });
        }
        records.push(rec);
    }
    let summary = Summary {
        entries: entries.len(),
        total_elements: entries.iter().map(|e| e.elements).sum(),
        min_elements: entries.iter().map(|e| e.elements).min().unwrap_or(0),
        max_elements: entries.iter().map(|e| e.elements).max().unwrap_or(0),
    };
    Ok(WorkingSetReport {
        nest: name.to_string(),
        binding: binding.as_map().clone(),
        datatype_size: opts.datatype_size,
        dependences: records,
        entries,
        summary,
    })
}

#[cfg(test)]
mod tests;
