//! Fusion of a reduction-carrying operator with an adjacent element-wise
//! operator: the element-wise statements move into a peeled copy of the
//! last (or first) reduction iteration, so each element is transformed right
//! after its final (or before its first) update.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::loopdsl::{extract_polyhedral, AccessKind, Loop, LoopNest, Node, Statement, StmtCtx};
use crate::polyset::{AffineExpr, ParamBinding, SetError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("a fusion program needs at least two top-level operators, found {0}")]
    Shape(usize),
    #[error("not fusable: {0}")]
    NotFusable(FusionDecision),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("{0}")]
    Unsupported(String),
}

/// Elements per array, under a concrete binding.
pub type ElementSet = BTreeMap<String, BTreeSet<Vec<i64>>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Order {
    HeavyFirst,
    ElementwiseFirst,
}

/// Two operators of one program and the top-level nodes between them.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorPair {
    /// Declarations shared by both operators; its body is ignored.
    pub program: LoopNest,
    pub heavy: Node,
    pub elementwise: Node,
    pub intervening: Vec<Node>,
    pub order: Order,
}

impl OperatorPair {
    /// The first and last top-level nodes of `program`. The heavy operator is
    /// the one with a reduction loop, the first one when neither or both have.
    pub fn from_program(program: &LoopNest) -> Result<Self, FusionError> {
        let n = program.body.len();
        if n < 2 {
            return Err(FusionError::Shape(n));
        }
        let (first, last) = (&program.body[0], &program.body[n - 1]);
        let order = if !has_reduction(first) && has_reduction(last) {
            Order::ElementwiseFirst
        } else {
            Order::HeavyFirst
        };
        let (heavy, elementwise) = match order {
            Order::HeavyFirst => (first.clone(), last.clone()),
            Order::ElementwiseFirst => (last.clone(), first.clone()),
        };
        Ok(OperatorPair {
            program: LoopNest { body: Vec::new(), ..program.clone() },
            heavy,
            elementwise,
            intervening: program.body[1..n - 1].to_vec(),
            order,
        })
    }

    fn sub(&self, nodes: Vec<Node>) -> LoopNest {
        LoopNest { body: nodes, ..self.program.clone() }
    }

    /// The pair as one unfused program, in its original order.
    pub fn unfused(&self) -> LoopNest {
        let (first, last) = match self.order {
            Order::HeavyFirst => (&self.heavy, &self.elementwise),
            Order::ElementwiseFirst => (&self.elementwise, &self.heavy),
        };
        let mut body = vec![first.clone()];
        body.extend(self.intervening.iter().cloned());
        body.push(last.clone());
        self.sub(body)
    }
}

/// Whether some statement below `node` has an enclosing loop absent from
/// its write index.
fn has_reduction(node: &Node) -> bool {
    fn walk(n: &Node, loops: &mut Vec<String>) -> bool {
        match n {
            Node::Stmt(s) => loops.iter().any(|it| s.target.index.iter().all(|e| !e.mentions(it))),
            Node::Loop(l) => {
                loops.push(l.iter.clone());
                let r = l.body.iter().any(|c| walk(c, loops));
                loops.pop();
                r
            }
            Node::Microkernel(m) => m.body.iter().any(|c| walk(c, loops)),
        }
    }
    walk(node, &mut Vec::new())
}

fn format_element(array: &str, idx: &[i64]) -> String {
    let dims: String = idx.iter().map(|v| format!("[{v}]")).collect();
    format!("{array}{dims}")
}

/// Elements touched by the references of `nest` of the given kinds.
fn touched(nest: &LoopNest, b: &ParamBinding, kinds: &[AccessKind]) -> Result<Vec<(String, ElementSet)>, FusionError> {
    let p = extract_polyhedral(nest).map_err(|e| FusionError::Unsupported(e.to_string()))?;
    let labels: Vec<String> = nest.statements().iter().map(|c| c.stmt.label.clone()).collect();
    let mut out: Vec<(String, ElementSet)> = Vec::new();
    for r in p.refs.iter().filter(|r| kinds.contains(&r.kind)) {
        let img = r.relation.apply(&p.stmt_domains[r.stmt])?;
        let label = &labels[r.stmt];
        let set = match out.iter_mut().find(|(l, _)| l == label) {
            Some((_, s)) => s,
            None => {
                out.push((label.clone(), ElementSet::new()));
                &mut out.last_mut().unwrap().1
            }
        };
        set.entry(r.array.clone()).or_default().extend(img.points(b)?);
    }
    Ok(out)
}

fn merge(parts: Vec<(String, ElementSet)>) -> ElementSet {
    let mut out = ElementSet::new();
    for (_, s) in parts {
        for (a, e) in s {
            out.entry(a).or_default().extend(e);
        }
    }
    out
}

/// Union of the images of every write reference over the iteration space.
pub fn write_set(nest: &LoopNest, b: &ParamBinding) -> Result<ElementSet, FusionError> {
    Ok(merge(touched(nest, b, &[AccessKind::Write])?))
}

pub fn cardinality(s: &ElementSet) -> u64 {
    s.values().map(|e| e.len() as u64).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailedCondition {
    WriteSetsDiffer,
    NotElementwise,
    InterveningAccess,
    /// The element-wise iterators cannot be recovered from the heavy
    /// operator's write index functions.
    NonInvertible,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FusionDecision {
    pub fusable: bool,
    pub failed: Option<FailedCondition>,
    pub witness: Option<String>,
}

impl std::fmt::Display for FusionDecision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.failed, &self.witness) {
            (None, _) => f.write_str("fusable"),
            (Some(c), Some(w)) => write!(f, "{c:?} ({w})"),
            (Some(c), None) => write!(f, "{c:?}"),
        }
    }
}

impl FusionDecision {
    fn fail(c: FailedCondition, witness: String) -> Self {
        FusionDecision { fusable: false, failed: Some(c), witness: Some(witness) }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FusionOptions {
    /// Also reject intervening writes to elements the element-wise operator
    /// reads outside the heavy write set.
    pub strict_inputs: bool,
}

pub fn can_fuse(pair: &OperatorPair, b: &ParamBinding) -> Result<FusionDecision, FusionError> {
    can_fuse_with(pair, b, FusionOptions::default())
}

/// Checks, in order: equal write sets, one element-wise iteration per
/// written element, no intervening access to the heavy write set, and an
/// invertible correspondence between the two write accesses.
pub fn can_fuse_with(pair: &OperatorPair, b: &ParamBinding, opts: FusionOptions) -> Result<FusionDecision, FusionError> {
    let heavy = pair.sub(vec![pair.heavy.clone()]);
    let ew = pair.sub(vec![pair.elementwise.clone()]);
    let (wh, we) = (write_set(&heavy, b)?, write_set(&ew, b)?);
    if wh != we {
        let arrays: BTreeSet<&String> = wh.keys().chain(we.keys()).collect();
        for a in arrays {
            let (x, y) = (wh.get(a).cloned().unwrap_or_default(), we.get(a).cloned().unwrap_or_default());
            if let Some(e) = x.symmetric_difference(&y).next() {
                let side = if x.contains(e) { "heavy" } else { "element-wise" };
                return Ok(FusionDecision::fail(
                    FailedCondition::WriteSetsDiffer,
                    format!("{} written only by the {side} operator", format_element(a, e)),
                ));
            }
        }
    }
    let p = extract_polyhedral(&ew).map_err(|e| FusionError::Unsupported(e.to_string()))?;
    let ctxs = ew.statements();
    let Some(first) = ctxs.first() else {
        return Ok(FusionDecision::fail(FailedCondition::NotElementwise, "no element-wise statements".into()));
    };
    let iters = |c: &StmtCtx| c.loops.iter().map(|l| l.iter.clone()).collect::<Vec<_>>();
    if ctxs.iter().any(|c| iters(c) != iters(first)) {
        return Ok(FusionDecision::fail(
            FailedCondition::NotElementwise,
            "statements of the element-wise operator sit in different loops".into(),
        ));
    }
    let n_iter = p.stmt_domains[0].cardinality(b)?;
    let n_w = cardinality(&we);
    if n_iter != n_w {
        return Ok(FusionDecision::fail(FailedCondition::NotElementwise, format!("|I| = {n_iter}, |W| = {n_w}")));
    }
    let kinds = [AccessKind::Read, AccessKind::Write];
    for node in &pair.intervening {
        let sub = pair.sub(vec![node.clone()]);
        for (label, set) in touched(&sub, b, &kinds)? {
            for (a, elems) in &set {
                if let Some(e) = wh.get(a).and_then(|w| elems.iter().find(|e| w.contains(*e))) {
                    return Ok(FusionDecision::fail(
                        FailedCondition::InterveningAccess,
                        format!("{label} accesses {}", format_element(a, e)),
                    ));
                }
            }
        }
        if opts.strict_inputs {
            let reads = merge(touched(&ew, b, &[AccessKind::Read])?);
            for (label, set) in touched(&sub, b, &[AccessKind::Write])? {
                for (a, elems) in &set {
                    if let Some(e) = reads.get(a).and_then(|r| elems.iter().find(|e| r.contains(*e))) {
                        return Ok(FusionDecision::fail(
                            FailedCondition::InterveningAccess,
                            format!("{label} writes {}, an input of the element-wise operator", format_element(a, e)),
                        ));
                    }
                }
            }
        }
    }
    if let Err(why) = Plan::new(pair) {
        return Ok(FusionDecision::fail(FailedCondition::NonInvertible, why));
    }
    Ok(FusionDecision { fusable: true, failed: None, witness: None })
}

/// Everything `fuse` needs, derived from the pair's structure alone.
struct Plan {
    /// The heavy statement writing the shared elements.
    label: String,
    /// Reduction loops enclosing it outside microkernels, outermost first.
    reductions: Vec<String>,
    /// Element-wise statements rewritten over the heavy iterators.
    ew: Vec<Statement>,
    /// Heavy write index functions.
    index: Vec<AffineExpr>,
}

fn find_path<'a>(nodes: &'a [Node], label: &str, loops: &mut Vec<&'a Loop>, in_kernel: bool) -> Option<bool> {
    for n in nodes {
        match n {
            Node::Stmt(s) if s.label == label => return Some(in_kernel),
            Node::Stmt(_) => {}
            Node::Loop(l) => {
                if !in_kernel {
                    loops.push(l);
                }
                if let Some(k) = find_path(&l.body, label, loops, in_kernel) {
                    return Some(k);
                }
                if !in_kernel {
                    loops.pop();
                }
            }
            Node::Microkernel(m) => {
                if let Some(k) = find_path(&m.body, label, loops, true) {
                    return Some(k);
                }
            }
        }
    }
    None
}

impl Plan {
    fn new(pair: &OperatorPair) -> Result<Plan, String> {
        let heavy = pair.sub(vec![pair.heavy.clone()]);
        let ew = pair.sub(vec![pair.elementwise.clone()]);
        let ew_ctx = ew.statements();
        let ew_arrays: BTreeSet<&str> = ew_ctx.iter().map(|c| c.stmt.target.array.as_str()).collect();
        let writers: Vec<&Statement> = heavy
            .statements()
            .iter()
            .map(|c| c.stmt)
            .filter(|s| ew_arrays.contains(s.target.array.as_str()))
            .collect();
        let [hs] = writers.as_slice() else {
            return Err(format!("{} heavy statements write the shared elements; exactly one is supported", writers.len()));
        };
        let mut path = Vec::new();
        find_path(&heavy.body, &hs.label, &mut path, false).expect("statement is present");
        let index = hs.target.index.clone();
        let reductions: Vec<String> =
            path.iter().filter(|l| index.iter().all(|e| !e.mentions(&l.iter))).map(|l| l.iter.clone()).collect();
        for l in path.iter().filter(|l| reductions.contains(&l.iter)) {
            if l.lower.len() != 1 || l.upper.len() != 1 || l.step != 1 {
                return Err(format!("reduction loop `{}` needs single bounds and unit step", l.iter));
            }
        }
        // solve ew_index(ew iters) = heavy index for each ew iterator
        let ew_iters: Vec<String> = ew_ctx[0].loops.iter().map(|l| l.iter.clone()).collect();
        let target = ew_ctx
            .iter()
            .find(|c| c.stmt.target.array == hs.target.array)
            .map(|c| &c.stmt.target)
            .expect("shared array written");
        let mut values: Vec<(String, AffineExpr)> = Vec::new();
        for it in &ew_iters {
            let dims: Vec<usize> = (0..target.index.len()).filter(|&d| target.index[d].mentions(it)).collect();
            let solved = dims.iter().find_map(|&d| {
                let e = &target.index[d];
                let c = e.coeff(it);
                let others = e.vars().any(|v| v != it && ew_iters.iter().any(|x| x == v));
                if others || c.abs() != 1 {
                    return None;
                }
                // e = c * it + rest  =>  it = c * (h - rest)
                let rest = e.sub(&AffineExpr::term(it, c));
                Some(index[d].sub(&rest).scale(c))
            });
            match solved {
                Some(v) => values.push((it.clone(), v)),
                None => return Err(format!("element-wise iterator `{it}` is not recoverable from the write index")),
            }
        }
        let fresh: Vec<String> = (0..ew_iters.len()).map(|k| format!("__fuse{k}")).collect();
        let ew_stmts = ew_ctx
            .iter()
            .map(|c| {
                let mut s = c.stmt.clone();
                for (it, f) in ew_iters.iter().zip(&fresh) {
                    s = s.substitute(it, &AffineExpr::var(f));
                }
                for (f, (_, v)) in fresh.iter().zip(&values) {
                    s = s.substitute(f, v);
                }
                s
            })
            .collect();
        Ok(Plan { label: hs.label.clone(), reductions, ew: ew_stmts, index })
    }
}

fn contains_label(n: &Node, label: &str) -> bool {
    match n {
        Node::Stmt(s) => s.label == label,
        _ => n.children().iter().any(|c| contains_label(c, label)),
    }
}

fn relabel(n: &Node, suffix: &str) -> Node {
    if suffix.is_empty() {
        return n.clone();
    }
    match n {
        Node::Stmt(s) => Node::Stmt(Statement { label: format!("{}{suffix}", s.label), ..s.clone() }),
        Node::Loop(l) => Node::Loop(Loop { body: l.body.iter().map(|c| relabel(c, suffix)).collect(), ..l.clone() }),
        Node::Microkernel(m) => {
            let mut m = m.clone();
            m.body = m.body.iter().map(|c| relabel(c, suffix)).collect();
            Node::Microkernel(m)
        }
    }
}

struct Fuser<'a> {
    plan: &'a Plan,
    order: Order,
    binding: &'a ParamBinding,
}

impl Fuser<'_> {
    fn suffix(depth: usize, last: bool) -> String {
        match (depth, last) {
            (0, _) => String::new(),
            (_, true) => "_peel".into(),
            (d, false) => format!("_p{d}"),
        }
    }

    fn ew_nodes(&self) -> Vec<Node> {
        self.plan.ew.iter().cloned().map(Node::Stmt).collect()
    }

    /// Loops of a microkernel body enclosing the heavy statement whose
    /// iterators index the written element, wrapped around the element-wise
    /// statements.
    fn wrap_for_kernel(&self, body: &[Node]) -> Vec<Node> {
        fn headers<'b>(nodes: &'b [Node], label: &str, index: &[AffineExpr], out: &mut Vec<&'b Loop>) -> bool {
            for n in nodes {
                match n {
                    Node::Stmt(s) if s.label == label => return true,
                    Node::Loop(l) => {
                        let keep = index.iter().any(|e| e.mentions(&l.iter));
                        if keep {
                            out.push(l);
                        }
                        if headers(&l.body, label, index, out) {
                            return true;
                        }
                        if keep {
                            out.pop();
                        }
                    }
                    _ => {}
                }
            }
            false
        }
        let mut hs = Vec::new();
        headers(body, &self.plan.label, &self.plan.index, &mut hs);
        let mut nodes = self.ew_nodes();
        for h in hs.into_iter().rev() {
            nodes = vec![Node::Loop(Loop { body: nodes, band: None, parallel: false, ..h.clone() })];
        }
        nodes
    }

    fn rewrite(&self, nodes: &[Node], reds: &[String], depth: usize) -> Result<Vec<Node>, FusionError> {
        let suffix = Self::suffix(depth, reds.is_empty());
        let mut out = Vec::new();
        for n in nodes {
            if !contains_label(n, &self.plan.label) {
                out.push(relabel(n, &suffix));
                continue;
            }
            match n {
                Node::Loop(l) if reds.first() == Some(&l.iter) => out.extend(self.split(l, reds, depth)?),
                Node::Loop(l) => {
                    let body = self.rewrite(&l.body, reds, depth)?;
                    out.push(Node::Loop(Loop { body, ..l.clone() }));
                }
                Node::Microkernel(m) => {
                    if !reds.is_empty() {
                        return Err(FusionError::Unsupported("reduction loops outside a microkernel must enclose it".into()));
                    }
                    let ew = self.wrap_for_kernel(&m.body);
                    let call = relabel(n, &suffix);
                    match self.order {
                        Order::HeavyFirst => {
                            out.push(call);
                            out.extend(ew);
                        }
                        Order::ElementwiseFirst => {
                            out.extend(ew);
                            out.push(call);
                        }
                    }
                }
                Node::Stmt(_) => {
                    let s = relabel(n, &suffix);
                    if reds.is_empty() {
                        match self.order {
                            Order::HeavyFirst => {
                                out.push(s);
                                out.extend(self.ew_nodes());
                            }
                            Order::ElementwiseFirst => {
                                out.extend(self.ew_nodes());
                                out.push(s);
                            }
                        }
                    } else {
                        out.push(s);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Index-set splitting of reduction loop `l` into the main range and the
    /// peeled boundary iteration, which recurses on the remaining loops.
    fn split(&self, l: &Loop, reds: &[String], depth: usize) -> Result<Vec<Node>, FusionError> {
        let (lo, hi) = (&l.lower[0], &l.upper[0]);
        let extent = match (lo.eval(self.binding.as_map()), hi.eval(self.binding.as_map())) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        };
        if extent.is_some_and(|e| e < 1) {
            return Err(FusionError::Unsupported(format!("reduction loop `{}` is empty", l.iter)));
        }
        let (peel_at, main) = match self.order {
            Order::HeavyFirst => (hi.offset(-1), Loop { upper: vec![hi.offset(-1)], ..l.clone() }),
            Order::ElementwiseFirst => (lo.clone(), Loop { lower: vec![lo.offset(1)], ..l.clone() }),
        };
        let main = (extent != Some(1)).then(|| relabel(&Node::Loop(main), &Self::suffix(depth, false)));
        let peeled: Vec<Node> = l.body.iter().map(|c| c.substitute(&l.iter, &peel_at)).collect();
        let peel = self.rewrite(&peeled, &reds[1..], depth + 1)?;
        let mut out = Vec::new();
        match self.order {
            Order::HeavyFirst => {
                out.extend(main);
                out.extend(peel);
            }
            Order::ElementwiseFirst => {
                out.extend(peel);
                out.extend(main);
            }
        }
        Ok(out)
    }
}

/// The fused program: the heavy operator with the element-wise statements in
/// its peeled boundary reduction iteration, and the intervening nodes kept on
/// the side they were on relative to the heavy operator.
pub fn fuse(pair: &OperatorPair, b: &ParamBinding) -> Result<LoopNest, FusionError> {
    let d = can_fuse(pair, b)?;
    if !d.fusable {
        return Err(FusionError::NotFusable(d));
    }
    let plan = Plan::new(pair).map_err(FusionError::Unsupported)?;
    let f = Fuser { plan: &plan, order: pair.order, binding: b };
    let fused = f.rewrite(std::slice::from_ref(&pair.heavy), &plan.reductions, 0)?;
    let mut body = Vec::new();
    match pair.order {
        Order::HeavyFirst => {
            body.extend(fused);
            body.extend(pair.intervening.iter().cloned());
        }
        Order::ElementwiseFirst => {
            body.extend(pair.intervening.iter().cloned());
            body.extend(fused);
        }
    }
    Ok(pair.sub(body))
}

/// Fuses when legal, otherwise returns the program unchanged with the
/// failed decision.
pub fn fuse_or_keep(program: &LoopNest, b: &ParamBinding) -> Result<(LoopNest, FusionDecision), FusionError> {
    let pair = OperatorPair::from_program(program)?;
    let d = can_fuse(&pair, b)?;
    if !d.fusable {
        return Ok((program.clone(), d));
    }
    Ok((fuse(&pair, b)?, d))
}

#[cfg(test)]
mod tests;
