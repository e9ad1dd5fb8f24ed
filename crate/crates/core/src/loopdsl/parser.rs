use std::collections::BTreeSet;

use super::lexer::{lex, Tok, Token};
use super::{
    Access, ArrayDecl, AssignOp, BinOp, DslError, Expr, Func, Loop, LoopNest, MicrokernelSpec, Node, Pos,
    Statement,
};
use crate::polyset::AffineExpr;

/// Parses a nest named `nest`.
pub fn parse(source: &str) -> Result<LoopNest, DslError> {
    parse_named(source, "nest")
}

/// Parses a nest; a C function wrapper overrides `name`.
pub fn parse_named(source: &str, name: &str) -> Result<LoopNest, DslError> {
    let mut p = Parser {
        src: source,
        toks: lex(source)?,
        i: 0,
        nest: LoopNest {
            name: name.to_string(),
            params: Vec::new(),
            consts: Vec::new(),
            scalars: Vec::new(),
            arrays: Vec::new(),
            body: Vec::new(),
        },
        scopes: vec![Scope::default()],
        labels: BTreeSet::new(),
    };
    let body = p.program()?;
    if p.labels.is_empty() {
        return p.err("statement required");
    }
    p.nest.body = body;
    Ok(p.nest)
}

/// Untyped expression tree; converted to affine or value form by context.
#[derive(Clone, Debug)]
enum PExpr {
    Int(i64),
    Float(f64),
    Ident(String, Pos),
    Index(String, Vec<PExpr>, Pos),
    Call(String, Vec<PExpr>, Pos),
    Neg(Box<PExpr>),
    Bin(BinOp, Box<PExpr>, Box<PExpr>, Pos),
}

impl PExpr {
    fn pos(&self) -> Option<Pos> {
        match self {
            PExpr::Ident(_, p) | PExpr::Index(_, _, p) | PExpr::Call(_, _, p) | PExpr::Bin(_, _, _, p) => Some(*p),
            PExpr::Neg(e) => e.pos(),
            _ => None,
        }
    }
}

#[derive(Default)]
struct Scope {
    iters: Vec<String>,
    aliases: Vec<(String, AffineExpr)>,
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token>,
    i: usize,
    nest: LoopNest,
    scopes: Vec<Scope>,
    labels: BTreeSet<String>,
}

type PResult<T> = Result<T, DslError>;

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.i + k).min(self.toks.len() - 1)].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(DslError::Syntax { pos: self.pos(), msg: msg.into() })
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected identifier, found {}", describe(&t))),
        }
    }

    // ---- declarations ----------------------------------------------------

    fn program(&mut self) -> PResult<Vec<Node>> {
        let mut body = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Eof => return Ok(body),
                Tok::Define(name, v) => {
                    self.bump();
                    self.declare_const(&name, v)?;
                }
                Tok::Ident(k) if k == "param" => {
                    self.bump();
                    loop {
                        let n = self.ident()?;
                        self.declare_param(&n)?;
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                    self.expect_punct(";")?;
                }
                Tok::Ident(k) if k == "const" && matches!(self.peek_at(2), Tok::Punct("=")) => {
                    self.bump();
                    let n = self.ident()?;
                    self.expect_punct("=")?;
                    let e = self.expr()?;
                    let v = self.const_eval(&e)?;
                    self.declare_const(&n, v)?;
                    self.expect_punct(";")?;
                }
                Tok::Ident(k) if k == "scalar" => {
                    self.bump();
                    let n = self.ident()?;
                    let v = if self.eat_punct("=") { self.number()? } else { 1.0 };
                    self.expect_punct(";")?;
                    self.nest.scalars.push((n, v));
                }
                Tok::Ident(k) if k == "array" => {
                    self.bump();
                    self.array_decl()?;
                    self.expect_punct(";")?;
                }
                Tok::Ident(k) if k == "extern" || k == "typedef" => {
                    while !self.is_punct(";") && *self.peek() != Tok::Eof {
                        self.bump();
                    }
                    self.expect_punct(";")?;
                }
                Tok::Ident(k)
                    if (k == "void" || k == "static" || k == "inline")
                        && self.function_ahead() =>
                {
                    body.extend(self.function()?);
                }
                _ => {
                    if let Some(n) = self.node()? {
                        body.push(n);
                    }
                }
            }
        }
    }

    fn function_ahead(&self) -> bool {
        let mut k = 0;
        while matches!(self.peek_at(k), Tok::Ident(s) if s == "static" || s == "inline" || s == "void") {
            k += 1;
        }
        matches!(self.peek_at(k), Tok::Ident(_)) && matches!(self.peek_at(k + 1), Tok::Punct("("))
    }

    fn function(&mut self) -> PResult<Vec<Node>> {
        while self.eat_kw("static") || self.eat_kw("inline") || self.eat_kw("void") {}
        self.nest.name = self.ident()?;
        self.expect_punct("(")?;
        if !self.is_punct(")") {
            loop {
                self.eat_kw("const");
                let ty = self.ident()?;
                let name = self.ident()?;
                match ty.as_str() {
                    "int" | "long" => self.declare_param(&name)?,
                    "float" | "double" if self.is_punct("[") => {
                        self.i -= 1;
                        self.array_decl()?;
                    }
                    "float" | "double" => self.nest.scalars.push((name, 1.0)),
                    _ => return self.err(format!("unsupported parameter type `{ty}`")),
                }
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        self.expect_punct("{")?;
        let mut body = Vec::new();
        while !self.eat_punct("}") {
            if *self.peek() == Tok::Eof {
                return self.err("unterminated function body");
            }
            if let Some(n) = self.node()? {
                body.push(n);
            }
        }
        Ok(body)
    }

    fn array_decl(&mut self) -> PResult<()> {
        let pos = self.pos();
        let name = self.ident()?;
        if self.nest.array(&name).is_some() {
            return Err(DslError::Syntax { pos, msg: format!("array `{name}` declared twice") });
        }
        let mut extents = Vec::new();
        while self.eat_punct("[") {
            let e = self.expr()?;
            extents.push(self.affine(&e)?);
            self.expect_punct("]")?;
        }
        if extents.is_empty() {
            return Err(DslError::Syntax { pos, msg: format!("array `{name}` needs at least one dimension") });
        }
        self.nest.arrays.push(ArrayDecl { name, extents });
        Ok(())
    }

    fn declare_param(&mut self, name: &str) -> PResult<()> {
        if self.is_declared(name) {
            return self.err(format!("`{name}` declared twice"));
        }
        self.nest.params.push(name.to_string());
        Ok(())
    }

    fn declare_const(&mut self, name: &str, v: i64) -> PResult<()> {
        if self.is_declared(name) {
            return self.err(format!("`{name}` declared twice"));
        }
        self.nest.consts.push((name.to_string(), v));
        Ok(())
    }

    fn is_declared(&self, name: &str) -> bool {
        self.nest.params.iter().any(|p| p == name)
            || self.nest.consts.iter().any(|(c, _)| c == name)
            || self.nest.array(name).is_some()
    }

    fn number(&mut self) -> PResult<f64> {
        let neg = self.eat_punct("-");
        let v = match self.bump().tok {
            Tok::Int(v) => v as f64,
            Tok::Float(v) => v,
            t => return self.err(format!("expected number, found {}", describe(&t))),
        };
        Ok(if neg { -v } else { v })
    }

    // ---- nodes -------------------------------------------------------------

    /// One loop, statement or microkernel region; `None` for declarations
    /// and derived-iterator definitions.
    fn node(&mut self) -> PResult<Option<Node>> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::OmpParallelFor => {
                self.bump();
                if !self.is_kw("for") {
                    return self.err("`#pragma omp parallel for` must precede a for loop");
                }
                Ok(Some(Node::Loop(self.for_loop(true)?)))
            }
            Tok::PragmaMicrokernel => Ok(Some(self.microkernel()?)),
            Tok::Ident(k) if k == "parallel" => {
                self.bump();
                if !self.is_kw("for") {
                    return self.err("`parallel` must precede a for loop");
                }
                Ok(Some(Node::Loop(self.for_loop(true)?)))
            }
            Tok::Ident(k) if k == "for" => Ok(Some(Node::Loop(self.for_loop(false)?))),
            Tok::Ident(k) if k == "if" || k == "while" || k == "do" || k == "else" => {
                Err(DslError::Unsupported { pos, msg: format!("`{k}` statements are not supported") })
            }
            Tok::Ident(k) if k == "const" && matches!(self.peek_at(1), Tok::Ident(t) if t == "float" || t == "double") => {
                self.bump();
                self.bump();
                let n = self.ident()?;
                self.expect_punct("=")?;
                let v = self.number()?;
                self.expect_punct(";")?;
                self.nest.scalars.push((n, v));
                Ok(None)
            }
            Tok::Ident(k) if k == "int" || k == "long" => {
                self.bump();
                let n = self.ident()?;
                if self.eat_punct("=") {
                    self.alias_rest(&n, pos)?;
                } else {
                    while self.eat_punct(",") {
                        self.ident()?;
                    }
                    self.expect_punct(";")?;
                }
                Ok(None)
            }
            Tok::Ident(n) if matches!(self.peek_at(1), Tok::Punct("=")) && self.nest.array(&n).is_none() => {
                self.bump();
                self.bump();
                self.alias_rest(&n, pos)?;
                Ok(None)
            }
            Tok::Ident(_) => Ok(Some(Node::Stmt(self.statement()?))),
            Tok::Punct(";") => {
                self.bump();
                Ok(None)
            }
            t => self.err(format!("unexpected {}", describe(&t))),
        }
    }

    fn alias_rest(&mut self, name: &str, pos: Pos) -> PResult<()> {
        let e = self.expr()?;
        let a = self.affine(&e)?;
        self.expect_punct(";")?;
        if self.nest.array(name).is_some() || self.nest.params.iter().any(|p| p == name) {
            return Err(DslError::Syntax { pos, msg: format!("cannot redefine `{name}`") });
        }
        self.scopes.last_mut().expect("scope").aliases.push((name.to_string(), a));
        Ok(())
    }

    fn block(&mut self) -> PResult<Vec<Node>> {
        self.scopes.push(Scope::default());
        let mut body = Vec::new();
        if self.eat_punct("{") {
            while !self.eat_punct("}") {
                if *self.peek() == Tok::Eof {
                    return self.err("unterminated block");
                }
                if let Some(n) = self.node()? {
                    body.push(n);
                }
            }
        } else {
            // a single node, possibly preceded by derived-iterator definitions
            loop {
                if let Some(n) = self.node()? {
                    body.push(n);
                    break;
                }
                if *self.peek() == Tok::Eof {
                    break;
                }
            }
        }
        self.scopes.pop();
        Ok(body)
    }

    fn for_loop(&mut self, parallel: bool) -> PResult<Loop> {
        let pos = self.pos();
        self.bump(); // for
        self.expect_punct("(")?;
        self.eat_kw("int");
        let iter = self.ident()?;
        if self.is_declared(&iter) || self.lookup_iter(&iter) {
            return Err(DslError::Syntax { pos, msg: format!("iterator `{iter}` shadows a declaration") });
        }
        self.expect_punct("=")?;
        let lo = self.expr()?;
        let lower = self.bound_list(&lo, "max")?;
        self.expect_punct(";")?;
        let it2 = self.ident()?;
        if it2 != iter {
            return self.err(format!("loop condition must test `{iter}`"));
        }
        let inclusive = if self.eat_punct("<=") {
            true
        } else if self.eat_punct("<") {
            false
        } else {
            return self.err("loop condition must be `<` or `<=`");
        };
        let hi = self.expr()?;
        let mut upper = self.bound_list(&hi, "min")?;
        if inclusive {
            upper = upper.into_iter().map(|e| e.offset(1)).collect();
        }
        self.expect_punct(";")?;
        let step = self.increment(&iter)?;
        if step > 1 && lower.len() > 1 {
            return Err(DslError::Unsupported { pos, msg: "a strided loop needs a single lower bound".into() });
        }
        self.expect_punct(")")?;
        self.scopes.push(Scope { iters: vec![iter.clone()], aliases: Vec::new() });
        let body = self.block();
        self.scopes.pop();
        let body = body?;
        if body.is_empty() {
            return Err(DslError::Syntax { pos, msg: "statement required".into() });
        }
        Ok(Loop { iter, lower, upper, step, parallel, band: None, body })
    }

    fn increment(&mut self, iter: &str) -> PResult<i64> {
        if self.eat_punct("++") {
            let n = self.ident()?;
            return if n == iter { Ok(1) } else { self.err("increment must update the loop iterator") };
        }
        let n = self.ident()?;
        if n != iter {
            return self.err("increment must update the loop iterator");
        }
        let step = if self.eat_punct("++") {
            1
        } else if self.eat_punct("+=") {
            let e = self.expr()?;
            self.const_eval(&e)?
        } else if self.eat_punct("=") {
            let e = self.expr()?;
            let a = self.affine(&e)?;
            if a.coeff(iter) != 1 || a.vars().count() != 1 {
                return self.err("increment must have the form `i = i + c`");
            }
            a.constant_term()
        } else {
            return self.err("expected loop increment");
        };
        if step < 1 {
            return self.err("loop step must be positive");
        }
        Ok(step)
    }

    /// `max(a, b)` (or `min`) flattened; a plain expression otherwise.
    fn bound_list(&self, e: &PExpr, func: &str) -> PResult<Vec<AffineExpr>> {
        match e {
            PExpr::Call(name, args, _) if name.eq_ignore_ascii_case(func) => {
                let mut out = Vec::new();
                for a in args {
                    out.extend(self.bound_list(a, func)?);
                }
                Ok(out)
            }
            _ => Ok(vec![self.affine(e)?]),
        }
    }

    fn microkernel(&mut self) -> PResult<Node> {
        let pos = self.pos();
        self.bump();
        let malformed = |msg: &str| DslError::MalformedPragma { pos, msg: msg.to_string() };
        let name = match self.peek().clone() {
            Tok::Ident(n) => {
                self.bump();
                n
            }
            _ => return Err(malformed("expected microkernel name")),
        };
        if !self.is_punct("(") {
            return Err(malformed("expected `(` after microkernel name"));
        }
        let open = self.bump();
        let mut depth = 1;
        let mut args = Vec::new();
        let mut arg_start = open.end;
        loop {
            let t = self.bump();
            match t.tok {
                Tok::Punct("(") | Tok::Punct("[") => depth += 1,
                Tok::Punct(")") | Tok::Punct("]") => {
                    depth -= 1;
                    if depth == 0 {
                        let a = self.src[arg_start..t.start].trim();
                        if !a.is_empty() {
                            args.push(a.to_string());
                        }
                        break;
                    }
                }
                Tok::Punct(",") if depth == 1 => {
                    args.push(self.src[arg_start..t.start].trim().to_string());
                    arg_start = t.end;
                }
                Tok::Eof => return Err(malformed("unterminated argument list")),
                _ => {}
            }
        }
        let braced = self.eat_punct("{");
        let body = match self.node() {
            Ok(Some(Node::Loop(l))) => l,
            Ok(_) => return Err(malformed("the loop-based body must be a single for loop")),
            Err(e) => return Err(e),
        };
        if braced && !self.eat_punct("}") {
            return Err(malformed("the loop-based body must be a single for loop"));
        }
        Ok(Node::Microkernel(MicrokernelSpec { name, args, body: vec![Node::Loop(body)] }))
    }

    fn statement(&mut self) -> PResult<Statement> {
        let pos = self.pos();
        let mut label = None;
        if matches!(self.peek_at(1), Tok::Punct(":")) {
            label = Some(self.ident()?);
            self.bump();
        }
        let target = match self.postfix()? {
            PExpr::Index(name, idx, p) => self.access(&name, &idx, p)?,
            PExpr::Ident(name, p) => {
                return Err(DslError::Syntax { pos: p, msg: format!("`{name}` is not an array reference") })
            }
            _ => return Err(DslError::Syntax { pos, msg: "expected array reference".into() }),
        };
        let op = if self.eat_punct("+=") {
            AssignOp::AddAssign
        } else if self.eat_punct("=") {
            AssignOp::Assign
        } else {
            return self.err("expected `=` or `+=`");
        };
        let e = self.expr()?;
        let rhs = self.value(&e)?;
        self.expect_punct(";")?;
        let label = label.unwrap_or_else(|| format!("S{}", self.labels.len()));
        if !self.labels.insert(label.clone()) {
            return Err(DslError::Syntax { pos, msg: format!("duplicate statement label `{label}`") });
        }
        Ok(Statement { label, target, op, rhs })
    }

    // ---- expressions -------------------------------------------------------

    fn expr(&mut self) -> PResult<PExpr> {
        let mut acc = self.term()?;
        loop {
            let pos = self.pos();
            let op = if self.eat_punct("+") {
                BinOp::Add
            } else if self.eat_punct("-") {
                BinOp::Sub
            } else {
                return Ok(acc);
            };
            let rhs = self.term()?;
            acc = PExpr::Bin(op, Box::new(acc), Box::new(rhs), pos);
        }
    }

    fn term(&mut self) -> PResult<PExpr> {
        let mut acc = self.unary()?;
        loop {
            let pos = self.pos();
            let op = if self.eat_punct("*") {
                BinOp::Mul
            } else if self.eat_punct("/") {
                BinOp::Div
            } else {
                return Ok(acc);
            };
            let rhs = self.unary()?;
            acc = PExpr::Bin(op, Box::new(acc), Box::new(rhs), pos);
        }
    }

    fn unary(&mut self) -> PResult<PExpr> {
        if self.eat_punct("-") {
            return Ok(PExpr::Neg(Box::new(self.unary()?)));
        }
        if self.eat_punct("+") {
            return self.unary();
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<PExpr> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(PExpr::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(PExpr::Float(v))
            }
            Tok::Punct("(") => {
                self.bump();
                if matches!(self.peek(), Tok::Ident(t) if t == "float" || t == "double")
                    && matches!(self.peek_at(1), Tok::Punct(")"))
                {
                    self.bump();
                    self.bump();
                    return self.unary();
                }
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.eat_punct("(") {
                    let mut args = Vec::new();
                    if !self.is_punct(")") {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat_punct(",") {
                                break;
                            }
                        }
                    }
                    self.expect_punct(")")?;
                    return Ok(PExpr::Call(name, args, pos));
                }
                if self.is_punct("[") {
                    let mut idx = Vec::new();
                    while self.eat_punct("[") {
                        idx.push(self.expr()?);
                        self.expect_punct("]")?;
                    }
                    return Ok(PExpr::Index(name, idx, pos));
                }
                Ok(PExpr::Ident(name, pos))
            }
            t => self.err(format!("expected expression, found {}", describe(&t))),
        }
    }

    fn lookup_iter(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.iters.iter().any(|i| i == name))
    }

    fn lookup_alias(&self, name: &str) -> Option<AffineExpr> {
        for s in self.scopes.iter().rev() {
            if let Some((_, e)) = s.aliases.iter().rev().find(|(n, _)| n == name) {
                return Some(e.clone());
            }
        }
        None
    }

    fn const_value(&self, name: &str) -> Option<i64> {
        self.nest.consts.iter().find(|(c, _)| c == name).map(|(_, v)| *v)
    }

    fn const_eval(&self, e: &PExpr) -> PResult<i64> {
        let a = self.affine(e)?;
        if !a.is_constant() {
            return Err(DslError::NonAffine {
                pos: e.pos().unwrap_or_else(|| self.pos()),
                msg: "expected a constant".into(),
            });
        }
        Ok(a.constant_term())
    }

    fn affine(&self, e: &PExpr) -> PResult<AffineExpr> {
        let here = || e.pos().unwrap_or_else(|| self.pos());
        match e {
            PExpr::Int(v) => Ok(AffineExpr::constant(*v)),
            PExpr::Float(_) => Err(DslError::NonAffine { pos: here(), msg: "floating-point literal".into() }),
            PExpr::Ident(n, pos) => {
                if self.lookup_iter(n) {
                    // an alias defined in a deeper scope shadows nothing: iterators win
                    return Ok(AffineExpr::var(n));
                }
                if let Some(a) = self.lookup_alias(n) {
                    return Ok(a);
                }
                if self.nest.params.iter().any(|p| p == n) {
                    return Ok(AffineExpr::var(n));
                }
                if let Some(v) = self.const_value(n) {
                    return Ok(AffineExpr::constant(v));
                }
                if self.nest.scalar(n).is_some() || self.nest.array(n).is_some() {
                    return Err(DslError::NonAffine { pos: *pos, msg: format!("`{n}` in an index or bound") });
                }
                Err(DslError::Undeclared { pos: *pos, name: n.clone() })
            }
            PExpr::Neg(x) => Ok(self.affine(x)?.scale(-1)),
            PExpr::Bin(op, a, b, pos) => {
                let (a, b) = (self.affine(a)?, self.affine(b)?);
                match op {
                    BinOp::Add => Ok(a.add(&b)),
                    BinOp::Sub => Ok(a.sub(&b)),
                    BinOp::Mul if a.is_constant() => Ok(b.scale(a.constant_term())),
                    BinOp::Mul if b.is_constant() => Ok(a.scale(b.constant_term())),
                    BinOp::Mul => Err(DslError::NonAffine { pos: *pos, msg: format!("product `({a}) * ({b})`") }),
                    BinOp::Div => {
                        if a.is_constant() && b.is_constant() && b.constant_term() != 0 {
                            let (x, y) = (a.constant_term(), b.constant_term());
                            if x % y == 0 {
                                return Ok(AffineExpr::constant(x / y));
                            }
                        }
                        Err(DslError::NonAffine { pos: *pos, msg: format!("division `({a}) / ({b})`") })
                    }
                }
            }
            PExpr::Index(n, _, pos) => {
                Err(DslError::NonAffine { pos: *pos, msg: format!("array reference `{n}[..]` in an index or bound") })
            }
            PExpr::Call(n, _, pos) => {
                Err(DslError::NonAffine { pos: *pos, msg: format!("call to `{n}` in an index or bound") })
            }
        }
    }

    fn access(&self, name: &str, idx: &[PExpr], pos: Pos) -> PResult<Access> {
        let decl = self.nest.array(name).ok_or_else(|| DslError::Undeclared { pos, name: name.to_string() })?;
        if decl.extents.len() != idx.len() {
            return Err(DslError::Syntax {
                pos,
                msg: format!("`{name}` has {} dimensions, indexed with {}", decl.extents.len(), idx.len()),
            });
        }
        let index = idx.iter().map(|e| self.affine(e)).collect::<PResult<Vec<_>>>()?;
        Ok(Access { array: name.to_string(), index })
    }

    fn value(&self, e: &PExpr) -> PResult<Expr> {
        match e {
            PExpr::Int(v) => Ok(Expr::Num(*v as f64)),
            PExpr::Float(v) => Ok(Expr::Num(*v)),
            PExpr::Ident(n, pos) => {
                if self.nest.scalar(n).is_some() {
                    Ok(Expr::Scalar(n.clone()))
                } else if let Some(v) = self.const_value(n) {
                    Ok(Expr::Num(v as f64))
                } else if self.lookup_iter(n) || self.nest.params.iter().any(|p| p == n) || self.lookup_alias(n).is_some()
                {
                    Err(DslError::Unsupported { pos: *pos, msg: format!("integer variable `{n}` used as a value") })
                } else {
                    Err(DslError::Undeclared { pos: *pos, name: n.clone() })
                }
            }
            PExpr::Index(n, idx, pos) => Ok(Expr::Read(self.access(n, idx, *pos)?)),
            PExpr::Neg(x) => Ok(Expr::Neg(Box::new(self.value(x)?))),
            PExpr::Bin(op, a, b, _) => Ok(Expr::Bin(*op, Box::new(self.value(a)?), Box::new(self.value(b)?))),
            PExpr::Call(n, args, pos) => {
                let func = match n.as_str() {
                    "max" | "fmax" | "fmaxf" | "MAX" => Func::Max,
                    "min" | "fmin" | "fminf" | "MIN" => Func::Min,
                    "abs" | "fabs" | "fabsf" => Func::Abs,
                    _ => {
                        return Err(DslError::Unsupported { pos: *pos, msg: format!("function `{n}`") });
                    }
                };
                if args.len() != func.arity() {
                    return Err(DslError::Syntax {
                        pos: *pos,
                        msg: format!("`{n}` takes {} argument(s)", func.arity()),
                    });
                }
                Ok(Expr::Call(func, args.iter().map(|a| self.value(a)).collect::<PResult<_>>()?))
            }
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Float(v) => format!("`{v}`"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Other(c) => format!("`{c}`"),
        Tok::OmpParallelFor => "`#pragma omp`".into(),
        Tok::PragmaMicrokernel => "`#pragma microkernel`".into(),
        Tok::Define(n, _) => format!("`#define {n}`"),
        Tok::Eof => "end of input".into(),
    }
}
