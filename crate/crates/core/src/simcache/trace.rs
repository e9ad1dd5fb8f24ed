use std::collections::HashSet;
use std::io::{BufRead, Write};

use super::interp::{run, Arrays, Observer};
use super::SimError;
use crate::loopdsl::{extract_polyhedral, AccessKind, Layout, LoopNest};
use crate::polyset::ParamBinding;

const HEADER: &str = "# nestrank trace v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Record {
    pub instance: u32,
    pub array: u32,
    /// Row-major element offset within the array.
    pub element: u64,
    pub kind: AccessKind,
    pub reference: u32,
}

impl Record {
    /// Key identifying the element across arrays.
    pub fn key(&self) -> u64 {
        (u64::from(self.array) << 48) | self.element
    }
}

/// Ordered access trace with the schedule point of every statement instance.
/// Instance points are strictly increasing in trace order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub arrays: Vec<String>,
    pub dims: Vec<String>,
    stmts: Vec<u32>,
    /// Row-major, `dims.len()` entries per instance.
    points: Vec<i64>,
    records: Vec<Record>,
}

struct Recorder<'a> {
    layout: &'a Layout,
    trace: Trace,
}

impl Observer for Recorder<'_> {
    fn instance(&mut self, stmt: usize, counters: &[i64]) {
        self.trace.stmts.push(stmt as u32);
        self.trace.points.extend(self.layout.point(stmt, counters));
    }

    fn access(&mut self, array: usize, element: usize, kind: AccessKind, reference: usize) {
        let instance = self.trace.stmts.len() as u32 - 1;
        self.trace.records.push(Record {
            instance,
            array: array as u32,
            element: element as u64,
            kind,
            reference: reference as u32,
        });
    }
}

impl Trace {
    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_instances(&self) -> usize {
        self.stmts.len()
    }

    pub fn point(&self, instance: usize) -> &[i64] {
        let d = self.dims.len();
        &self.points[instance * d..(instance + 1) * d]
    }

    pub fn stmt(&self, instance: usize) -> usize {
        self.stmts[instance] as usize
    }

    /// Instances whose point lies in `[src, tgt]` lexicographically.
    pub fn instance_range(&self, src: &[i64], tgt: &[i64]) -> std::ops::Range<usize> {
        let lo = partition(self.n_instances(), |i| self.point(i) < src);
        let hi = partition(self.n_instances(), |i| self.point(i) <= tgt);
        lo..hi.max(lo)
    }

    fn record_range(&self, instances: std::ops::Range<usize>) -> std::ops::Range<usize> {
        let lo = self.records.partition_point(|r| (r.instance as usize) < instances.start);
        let hi = self.records.partition_point(|r| (r.instance as usize) < instances.end);
        lo..hi
    }

    /// Distinct elements touched by instances in `[src, tgt]`.
    pub fn working_set(&self, src: &[i64], tgt: &[i64]) -> u64 {
        let range = self.record_range(self.instance_range(src, tgt));
        let set: HashSet<u64> = self.records[range].iter().map(Record::key).collect();
        set.len() as u64
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{HEADER}")?;
        writeln!(w, "arrays {}", self.arrays.join(" "))?;
        writeln!(w, "dims {}", self.dims.join(" "))?;
        let mut inst = usize::MAX;
        for r in &self.records {
            if r.instance as usize != inst {
                inst = r.instance as usize;
                let p: Vec<String> = self.point(inst).iter().map(i64::to_string).collect();
                writeln!(w, "i {} {}", self.stmt(inst), p.join(" "))?;
            }
            let k = match r.kind {
                AccessKind::Read => 'r',
                _ => 'w',
            };
            writeln!(w, "{k} {} {} {}", r.array, r.element, r.reference)?;
        }
        Ok(())
    }

    /// Parses the text written by [`Trace::write_to`]. Instances without
    /// accesses are not part of the dump.
    pub fn read_from(r: impl BufRead) -> Result<Trace, SimError> {
        let bad = |n: usize, m: &str| SimError::Format(format!("line {}: {m}", n + 1));
        let mut t = Trace { arrays: vec![], dims: vec![], stmts: vec![], points: vec![], records: vec![] };
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SimError::Format(e.to_string()))?;
            if n == 0 {
                if line.trim() != HEADER {
                    return Err(bad(n, "unsupported trace header"));
                }
                continue;
            }
            let mut f = line.split_whitespace();
            let tag = f.next().unwrap_or("");
            let rest: Vec<&str> = f.collect();
            let ints = || rest.iter().map(|s| s.parse::<i64>()).collect::<Result<Vec<_>, _>>();
            match tag {
                "arrays" => t.arrays = rest.iter().map(|s| s.to_string()).collect(),
                "dims" => t.dims = rest.iter().map(|s| s.to_string()).collect(),
                "i" => {
                    let v = ints().map_err(|_| bad(n, "bad instance"))?;
                    if v.len() != t.dims.len() + 1 || v[0] < 0 {
                        return Err(bad(n, "bad instance"));
                    }
                    t.stmts.push(v[0] as u32);
                    t.points.extend(&v[1..]);
                }
                "r" | "w" => {
                    let v = ints().map_err(|_| bad(n, "bad access"))?;
                    if v.len() != 3 || v.iter().any(|x| *x < 0) || t.stmts.is_empty() {
                        return Err(bad(n, "bad access"));
                    }
                    t.records.push(Record {
                        instance: t.stmts.len() as u32 - 1,
                        array: v[0] as u32,
                        element: v[1] as u64,
                        kind: if tag == "r" { AccessKind::Read } else { AccessKind::Write },
                        reference: v[2] as u32,
                    });
                }
                "" => {}
                _ => return Err(bad(n, "unknown record")),
            }
        }
        Ok(t)
    }
}

fn partition(n: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Executes `nest` on zero-filled arrays and records its access trace.
pub fn trace(nest: &LoopNest, binding: &ParamBinding) -> Result<Trace, SimError> {
    let layout = extract_polyhedral(nest)?.layout;
    let mut arrays = Arrays::zeros(nest, binding)?;
    let mut rec = Recorder {
        layout: &layout,
        trace: Trace {
            arrays: arrays.names.clone(),
            dims: layout.dims.clone(),
            stmts: vec![],
            points: vec![],
            records: vec![],
        },
    };
    run(nest, binding, &mut arrays, &mut rec)?;
    Ok(rec.trace)
}

/// Distinct elements accessed between schedule points `src` and `tgt`.
pub fn trace_working_set(trace: &Trace, src: &[i64], tgt: &[i64]) -> u64 {
    trace.working_set(src, tgt)
}
