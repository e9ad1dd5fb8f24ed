use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::loopdsl::{AccessKind, AssignOp, BinOp, Expr, Func, LoopNest, Node, Statement};
use crate::polyset::{AffineExpr, ParamBinding};

/// Receives the dynamic events of an execution in program order.
pub trait Observer {
    /// A statement instance starts; `counters` are its enclosing loop
    /// counters (iterator values for unit steps, trip indices otherwise).
    fn instance(&mut self, _stmt: usize, _counters: &[i64]) {}
    fn access(&mut self, _array: usize, _element: usize, _kind: AccessKind, _reference: usize) {}
}

/// Discards all events.
pub struct NullObserver;

impl Observer for NullObserver {}

/// Dense row-major storage for every declared array.
#[derive(Clone, Debug, PartialEq)]
pub struct Arrays {
    pub names: Vec<String>,
    pub extents: Vec<Vec<i64>>,
    pub data: Vec<Vec<f64>>,
}

impl Arrays {
    pub fn zeros(nest: &LoopNest, binding: &ParamBinding) -> Result<Self, SimError> {
        let mut names = Vec::new();
        let mut extents = Vec::new();
        let mut data = Vec::new();
        for a in &nest.arrays {
            let ext = nest
                .extents(&a.name, binding.as_map())
                .ok_or_else(|| SimError::Unbound(format!("extent of `{}`", a.name)))?;
            let mut len: usize = 1;
            for &e in &ext {
                if e < 0 {
                    return Err(SimError::BadExtent { array: a.name.clone(), extents: ext.clone() });
                }
                len = len
                    .checked_mul(e as usize)
                    .ok_or_else(|| SimError::BadExtent { array: a.name.clone(), extents: ext.clone() })?;
            }
            names.push(a.name.clone());
            extents.push(ext);
            data.push(vec![0.0; len]);
        }
        Ok(Arrays { names, extents, data })
    }

    /// Arrays filled with uniform values in `[-1, 1)`, deterministic in `seed`.
    pub fn seeded(nest: &LoopNest, binding: &ParamBinding, seed: u64) -> Result<Self, SimError> {
        let mut a = Self::zeros(nest, binding)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in &mut a.data {
            for x in d.iter_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
        }
        Ok(a)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.data[i].as_slice())
    }

    /// Largest absolute element-wise difference over all arrays; `None` when
    /// the shapes differ.
    pub fn max_abs_diff(&self, other: &Arrays) -> Option<f64> {
        if self.names != other.names || self.extents != other.extents {
            return None;
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            for (x, y) in a.iter().zip(b) {
                if x.is_nan() != y.is_nan() {
                    return Some(f64::INFINITY);
                }
                if !x.is_nan() {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        Some(worst)
    }
}

/// Affine form over interpreter slots.
#[derive(Debug)]
struct Lin {
    terms: Vec<(usize, i64)>,
    constant: i64,
}

impl Lin {
    #[inline]
    fn eval(&self, env: &[i64]) -> i64 {
        self.terms.iter().fold(self.constant, |acc, &(s, c)| acc + c * env[s])
    }
}

#[derive(Debug)]
struct CAccess {
    array: usize,
    index: Vec<Lin>,
    reference: usize,
}

#[derive(Debug)]
enum CExpr {
    Num(f64),
    Read(CAccess),
    Neg(Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Call(Func, Vec<CExpr>),
}

#[derive(Debug)]
struct CStmt {
    index: usize,
    label: String,
    depth: usize,
    target: CAccess,
    target_read: Option<usize>,
    op: AssignOp,
    rhs: CExpr,
}

#[derive(Debug)]
enum Op {
    Loop { slot: usize, level: usize, lower: Vec<Lin>, upper: Vec<Lin>, step: i64, body: Vec<Op> },
    Stmt(CStmt),
}

struct Compiler<'a> {
    nest: &'a LoopNest,
    arrays: &'a Arrays,
    scope: Vec<(String, usize)>,
    n_params: usize,
    stmt: usize,
    reference: usize,
}

impl Compiler<'_> {
    fn lin(&self, e: &AffineExpr) -> Result<Lin, SimError> {
        let mut terms = Vec::new();
        for (n, c) in e.terms() {
            let slot = self
                .scope
                .iter()
                .rev()
                .find(|(v, _)| v == n)
                .map(|(_, s)| *s)
                .ok_or_else(|| SimError::Unbound(n.to_string()))?;
            terms.push((slot, c));
        }
        Ok(Lin { terms, constant: e.constant_term() })
    }

    fn access(&mut self, a: &crate::loopdsl::Access) -> Result<CAccess, SimError> {
        let array = self.arrays.index_of(&a.array).ok_or_else(|| SimError::Unbound(a.array.clone()))?;
        if a.index.len() != self.arrays.extents[array].len() {
            return Err(SimError::Rank { array: a.array.clone() });
        }
        let index = a.index.iter().map(|e| self.lin(e)).collect::<Result<_, _>>()?;
        let reference = self.reference;
        self.reference += 1;
        Ok(CAccess { array, index, reference })
    }

    fn expr(&mut self, e: &Expr) -> Result<CExpr, SimError> {
        Ok(match e {
            Expr::Num(v) => CExpr::Num(*v),
            Expr::Scalar(s) => {
                CExpr::Num(self.nest.scalar(s).ok_or_else(|| SimError::Unbound(s.clone()))?)
            }
            Expr::Read(a) => CExpr::Read(self.access(a)?),
            Expr::Neg(x) => CExpr::Neg(Box::new(self.expr(x)?)),
            Expr::Bin(op, a, b) => {
                let a = self.expr(a)?;
                CExpr::Bin(*op, Box::new(a), Box::new(self.expr(b)?))
            }
            Expr::Call(f, args) => CExpr::Call(*f, args.iter().map(|a| self.expr(a)).collect::<Result<_, _>>()?),
        })
    }

    fn stmt(&mut self, s: &Statement, depth: usize) -> Result<CStmt, SimError> {
        // reference ids follow the canonical order: target read, rhs, write
        let target_read = if s.op == AssignOp::AddAssign {
            self.reference += 1;
            Some(self.reference - 1)
        } else {
            None
        };
        let rhs = self.expr(&s.rhs)?;
        let target = self.access(&s.target)?;
        let index = self.stmt;
        self.stmt += 1;
        Ok(CStmt { index, label: s.label.clone(), depth, target, target_read, op: s.op, rhs })
    }

    fn nodes(&mut self, nodes: &[Node], depth: usize) -> Result<Vec<Op>, SimError> {
        let mut out = Vec::new();
        for n in nodes {
            match n {
                Node::Stmt(s) => out.push(Op::Stmt(self.stmt(s, depth)?)),
                Node::Loop(l) => {
                    let lower = l.lower.iter().map(|e| self.lin(e)).collect::<Result<_, _>>()?;
                    let upper = l.upper.iter().map(|e| self.lin(e)).collect::<Result<_, _>>()?;
                    let slot = self.n_params + depth;
                    self.scope.push((l.iter.clone(), slot));
                    let body = self.nodes(&l.body, depth + 1)?;
                    self.scope.pop();
                    out.push(Op::Loop { slot, level: depth, lower, upper, step: l.step, body });
                }
                Node::Microkernel(m) => out.extend(self.nodes(&m.body, depth)?),
            }
        }
        Ok(out)
    }
}

fn max_depth(nodes: &[Node]) -> usize {
    nodes
        .iter()
        .map(|n| match n {
            Node::Loop(l) => 1 + max_depth(&l.body),
            Node::Microkernel(m) => max_depth(&m.body),
            Node::Stmt(_) => 0,
        })
        .max()
        .unwrap_or(0)
}

struct Machine<'a, O: Observer> {
    env: Vec<i64>,
    counters: Vec<i64>,
    arrays: &'a mut Arrays,
    obs: &'a mut O,
}

impl<O: Observer> Machine<'_, O> {
    #[inline]
    fn flat(&self, a: &CAccess, label: &str) -> Result<usize, SimError> {
        let ext = &self.arrays.extents[a.array];
        let mut flat = 0usize;
        for (k, e) in a.index.iter().enumerate() {
            let v = e.eval(&self.env);
            if v < 0 || v >= ext[k] {
                let index = a.index.iter().map(|e| e.eval(&self.env)).collect();
                return Err(SimError::OutOfBounds {
                    stmt: label.to_string(),
                    array: self.arrays.names[a.array].clone(),
                    index,
                });
            }
            flat = flat * ext[k] as usize + v as usize;
        }
        Ok(flat)
    }

    fn eval(&mut self, e: &CExpr, label: &str) -> Result<f64, SimError> {
        Ok(match e {
            CExpr::Num(v) => *v,
            CExpr::Read(a) => {
                let f = self.flat(a, label)?;
                self.obs.access(a.array, f, AccessKind::Read, a.reference);
                self.arrays.data[a.array][f]
            }
            CExpr::Neg(x) => -self.eval(x, label)?,
            CExpr::Bin(op, a, b) => {
                let x = self.eval(a, label)?;
                let y = self.eval(b, label)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                }
            }
            CExpr::Call(f, args) => {
                let x = self.eval(&args[0], label)?;
                match f {
                    Func::Abs => x.abs(),
                    Func::Max => x.max(self.eval(&args[1], label)?),
                    Func::Min => x.min(self.eval(&args[1], label)?),
                }
            }
        })
    }

    fn run(&mut self, ops: &[Op]) -> Result<(), SimError> {
        for op in ops {
            match op {
                Op::Loop { slot, level, lower, upper, step, body } => {
                    let lb = lower.iter().map(|l| l.eval(&self.env)).max().unwrap_or(0);
                    let ub = upper.iter().map(|l| l.eval(&self.env)).min().unwrap_or(0);
                    let (mut v, mut t) = (lb, 0i64);
                    while v < ub {
                        self.env[*slot] = v;
                        self.counters[*level] = if *step == 1 { v } else { t };
                        self.run(body)?;
                        v += step;
                        t += 1;
                    }
                }
                Op::Stmt(s) => {
                    self.obs.instance(s.index, &self.counters[..s.depth]);
                    let f = self.flat(&s.target, &s.label)?;
                    let old = match s.target_read {
                        Some(r) => {
                            self.obs.access(s.target.array, f, AccessKind::Read, r);
                            self.arrays.data[s.target.array][f]
                        }
                        None => 0.0,
                    };
                    let rhs = self.eval(&s.rhs, &s.label)?;
                    self.obs.access(s.target.array, f, AccessKind::Write, s.target.reference);
                    self.arrays.data[s.target.array][f] = match s.op {
                        AssignOp::Assign => rhs,
                        AssignOp::AddAssign => old + rhs,
                    };
                }
            }
        }
        Ok(())
    }
}

/// Executes `nest` on `arrays` in program order, reporting every statement
/// instance and array access to `obs`. Parallel loops run sequentially.
pub fn run<O: Observer>(
    nest: &LoopNest,
    binding: &ParamBinding,
    arrays: &mut Arrays,
    obs: &mut O,
) -> Result<(), SimError> {
    let mut env = Vec::new();
    let mut scope = Vec::new();
    for (k, p) in nest.params.iter().enumerate() {
        env.push(binding.get(p).ok_or_else(|| SimError::Unbound(p.clone()))?);
        scope.push((p.clone(), k));
    }
    let n_params = env.len();
    let mut c = Compiler { nest, arrays, scope, n_params, stmt: 0, reference: 0 };
    let program = c.nodes(&nest.body, 0)?;
    let depth = max_depth(&nest.body);
    env.resize(n_params + depth, 0);
    let mut m = Machine { env, counters: vec![0; depth], arrays, obs };
    m.run(&program)
}

/// Runs `nest` on seeded inputs and returns the final array contents.
pub fn execute(nest: &LoopNest, binding: &ParamBinding, seed: u64) -> Result<Arrays, SimError> {
    let mut a = Arrays::seeded(nest, binding, seed)?;
    run(nest, binding, &mut a, &mut NullObserver)?;
    Ok(a)
}
