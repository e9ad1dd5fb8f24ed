//! A small C-like language for affine loop nests, its IR and the extraction
//! of the polyhedral representation (iteration space, access relations and
//! schedule).

mod dump;
mod lexer;
mod microkernel;
mod parser;
mod poly;
mod printer;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::polyset::AffineExpr;

pub use dump::{dump_json, NestDump};
pub use microkernel::{reinstate_microkernel, substitute_microkernel};
pub use parser::{parse, parse_named};
pub use poly::{extract_polyhedral, Layout, Polyhedral, RefInfo};
pub use printer::print_nest;
pub(crate) use printer::{print_body, Style};

/// A source position (1-based line and column).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DslError {
    #[error("{pos}: syntax error: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("{pos}: non-affine expression: {msg}")]
    NonAffine { pos: Pos, msg: String },
    #[error("{pos}: undeclared identifier `{name}`")]
    Undeclared { pos: Pos, name: String },
    #[error("{pos}: malformed pragma: {msg}")]
    MalformedPragma { pos: Pos, msg: String },
    #[error("{pos}: unsupported construct: {msg}")]
    Unsupported { pos: Pos, msg: String },
    #[error("microkernel: {0}")]
    Microkernel(String),
}

impl DslError {
    pub fn pos(&self) -> Option<Pos> {
        match self {
            DslError::Syntax { pos, .. }
            | DslError::NonAffine { pos, .. }
            | DslError::Undeclared { pos, .. }
            | DslError::MalformedPragma { pos, .. }
            | DslError::Unsupported { pos, .. } => Some(*pos),
            DslError::Microkernel(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayDecl {
    pub name: String,
    /// Extent per dimension, affine in the parameters.
    pub extents: Vec<AffineExpr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopNest {
    pub name: String,
    pub params: Vec<String>,
    /// Integer constants; already folded into every expression of the nest.
    pub consts: Vec<(String, i64)>,
    /// Floating-point scalars usable in statement expressions.
    pub scalars: Vec<(String, f64)>,
    pub arrays: Vec<ArrayDecl>,
    pub body: Vec<Node>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Loop(Loop),
    Stmt(Statement),
    /// An opaque microkernel call; `body` is its loop-based equivalent.
    Microkernel(MicrokernelSpec),
}

/// Marks a loop as part of a substituted microkernel band.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandMark {
    pub name: String,
    pub args: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loop {
    pub iter: String,
    /// The iterator starts at the maximum of these.
    pub lower: Vec<AffineExpr>,
    /// Exclusive; the loop runs while below every one of these.
    pub upper: Vec<AffineExpr>,
    pub step: i64,
    pub parallel: bool,
    pub band: Option<BandMark>,
    pub body: Vec<Node>,
}

impl Loop {
    pub fn new(iter: &str, lower: AffineExpr, upper: AffineExpr) -> Self {
        Loop {
            iter: iter.to_string(),
            lower: vec![lower],
            upper: vec![upper],
            step: 1,
            parallel: false,
            band: None,
            body: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicrokernelSpec {
    pub name: String,
    /// Argument text as written in the pragma.
    pub args: Vec<String>,
    /// Exactly one loop.
    pub body: Vec<Node>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignOp {
    Assign,
    AddAssign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub label: String,
    pub target: Access,
    pub op: AssignOp,
    pub rhs: Expr,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Access {
    pub array: String,
    pub index: Vec<AffineExpr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
    ReadWrite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Func {
    Max,
    Min,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Max => "max",
            Func::Min => "min",
            Func::Abs => "abs",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Abs => 1,
            _ => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Scalar(String),
    Read(Access),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    /// Array reads in evaluation order (left to right).
    pub fn reads(&self) -> Vec<&Access> {
        let mut out = Vec::new();
        self.collect_reads(&mut out);
        out
    }

    fn collect_reads<'a>(&'a self, out: &mut Vec<&'a Access>) {
        match self {
            Expr::Num(_) | Expr::Scalar(_) => {}
            Expr::Read(a) => out.push(a),
            Expr::Neg(e) => e.collect_reads(out),
            Expr::Bin(_, a, b) => {
                a.collect_reads(out);
                b.collect_reads(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_reads(out)),
        }
    }

    pub fn map_accesses(&self, f: &mut impl FnMut(&Access) -> Access) -> Expr {
        match self {
            Expr::Num(_) | Expr::Scalar(_) => self.clone(),
            Expr::Read(a) => Expr::Read(f(a)),
            Expr::Neg(e) => Expr::Neg(Box::new(e.map_accesses(f))),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.map_accesses(f)), Box::new(b.map_accesses(f))),
            Expr::Call(func, args) => Expr::Call(*func, args.iter().map(|a| a.map_accesses(f)).collect()),
        }
    }
}

impl Access {
    pub fn substitute(&self, name: &str, value: &AffineExpr) -> Access {
        Access { array: self.array.clone(), index: self.index.iter().map(|e| e.substitute(name, value)).collect() }
    }
}

impl Statement {
    /// References in canonical order: target read (for `+=`), right-hand
    /// side reads left to right, then the target write.
    pub fn refs(&self) -> Vec<(&Access, AccessKind)> {
        let mut out = Vec::new();
        if self.op == AssignOp::AddAssign {
            out.push((&self.target, AccessKind::Read));
        }
        out.extend(self.rhs.reads().into_iter().map(|a| (a, AccessKind::Read)));
        out.push((&self.target, AccessKind::Write));
        out
    }

    /// Distinct accesses with their combined kind.
    pub fn accesses(&self) -> Vec<(Access, AccessKind)> {
        let mut out: Vec<(Access, AccessKind)> = Vec::new();
        for (a, k) in self.refs() {
            match out.iter_mut().find(|(b, _)| b == a) {
                Some((_, kind)) if *kind != k => *kind = AccessKind::ReadWrite,
                Some(_) => {}
                None => out.push((a.clone(), k)),
            }
        }
        out
    }

    pub fn substitute(&self, name: &str, value: &AffineExpr) -> Statement {
        Statement {
            label: self.label.clone(),
            target: self.target.substitute(name, value),
            op: self.op,
            rhs: self.rhs.map_accesses(&mut |a| a.substitute(name, value)),
        }
    }
}

impl Node {
    pub fn substitute(&self, name: &str, value: &AffineExpr) -> Node {
        match self {
            Node::Stmt(s) => Node::Stmt(s.substitute(name, value)),
            Node::Loop(l) => {
                let mut l2 = l.clone();
                l2.lower = l.lower.iter().map(|e| e.substitute(name, value)).collect();
                l2.upper = l.upper.iter().map(|e| e.substitute(name, value)).collect();
                if l.iter != name {
                    l2.body = l.body.iter().map(|n| n.substitute(name, value)).collect();
                }
                Node::Loop(l2)
            }
            Node::Microkernel(m) => Node::Microkernel(MicrokernelSpec {
                name: m.name.clone(),
                args: m.args.clone(),
                body: m.body.iter().map(|n| n.substitute(name, value)).collect(),
            }),
        }
    }

    /// Children as seen by analyses: a microkernel call is transparent.
    pub fn children(&self) -> &[Node] {
        match self {
            Node::Loop(l) => &l.body,
            Node::Microkernel(m) => &m.body,
            Node::Stmt(_) => &[],
        }
    }
}

/// A statement together with its enclosing loops and sibling positions.
#[derive(Clone, Debug)]
pub struct StmtCtx<'a> {
    pub index: usize,
    pub stmt: &'a Statement,
    pub loops: Vec<&'a Loop>,
    /// `positions[l]` is the index of the level-`l` ancestor (or the statement
    /// itself at `l == loops.len()`) within its parent body.
    pub positions: Vec<usize>,
}

/// One textual array reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefDesc {
    pub id: usize,
    pub stmt: usize,
    pub array: String,
    pub index: Vec<AffineExpr>,
    pub kind: AccessKind,
}

impl LoopNest {
    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Statements in textual order.
    pub fn statements(&self) -> Vec<StmtCtx<'_>> {
        fn walk<'a>(
            nodes: &'a [Node],
            loops: &mut Vec<&'a Loop>,
            positions: &mut Vec<usize>,
            out: &mut Vec<StmtCtx<'a>>,
        ) {
            for (p, n) in nodes.iter().enumerate() {
                positions.push(p);
                match n {
                    Node::Stmt(s) => out.push(StmtCtx {
                        index: out.len(),
                        stmt: s,
                        loops: loops.clone(),
                        positions: positions.clone(),
                    }),
                    Node::Loop(l) => {
                        loops.push(l);
                        walk(&l.body, loops, positions, out);
                        loops.pop();
                    }
                    Node::Microkernel(m) => {
                        // the single body loop takes the call's position
                        for inner in &m.body {
                            if let Node::Loop(l) = inner {
                                loops.push(l);
                                walk(&l.body, loops, positions, out);
                                loops.pop();
                            }
                        }
                    }
                }
                positions.pop();
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut Vec::new(), &mut Vec::new(), &mut out);
        out
    }

    /// Textual references in canonical order (see [`Statement::refs`]).
    pub fn refs(&self) -> Vec<RefDesc> {
        let mut out = Vec::new();
        for ctx in self.statements() {
            for (a, k) in ctx.stmt.refs() {
                out.push(RefDesc {
                    id: out.len(),
                    stmt: ctx.index,
                    array: a.array.clone(),
                    index: a.index.clone(),
                    kind: k,
                });
            }
        }
        out
    }

    /// All loops in preorder.
    pub fn loops(&self) -> Vec<&Loop> {
        fn walk<'a>(nodes: &'a [Node], out: &mut Vec<&'a Loop>) {
            for n in nodes {
                if let Node::Loop(l) = n {
                    out.push(l);
                }
                walk(n.children(), out);
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }

    pub fn find_loop(&self, iter: &str) -> Option<&Loop> {
        self.loops().into_iter().find(|l| l.iter == iter)
    }

    /// Whether the nest still holds an opaque microkernel call.
    pub fn has_microkernel_call(&self) -> bool {
        fn walk(nodes: &[Node]) -> bool {
            nodes.iter().any(|n| matches!(n, Node::Microkernel(_)) || walk(n.children()))
        }
        walk(&self.body)
    }

    /// Loops belonging to a substituted microkernel band.
    pub fn band_loops(&self) -> Vec<&Loop> {
        self.loops().into_iter().filter(|l| l.band.is_some()).collect()
    }

    /// Evaluates array extents under `binding`.
    pub fn extents(&self, array: &str, binding: &BTreeMap<String, i64>) -> Option<Vec<i64>> {
        self.array(array)?.extents.iter().map(|e| e.eval(binding)).collect()
    }
}

impl fmt::Display for LoopNest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_nest(self))
    }
}
