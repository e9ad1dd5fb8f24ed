//! Textual syntax: `[M, N] -> { S[i, j] : 0 <= i < M and 0 <= j < N or ... }`,
//! relations `{ S[i, j] -> A[i + 1, j] : ... }`, and
//! `exists (e : ...)` for existentially quantified variables.

use super::conj::{Conj, Row};
use super::{row_from_expr, AffineExpr, Constraint, ConstraintKind, IntRelation, IntSet, SetError, Tuple};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
}

const SYMBOLS: &[&str] = &[
    "->", "<=", ">=", "==", "{", "}", "[", "]", "(", ")", ",", ":", "+", "-", "*", "<", ">", "=",
];

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, SetError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let v = text[start..i].parse().map_err(|_| SetError::Parse {
                pos: start,
                msg: "integer literal out of range".into(),
            })?;
            out.push((start, Tok::Int(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'\'') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
            continue;
        }
        if text[i..].starts_with("&&") {
            out.push((i, Tok::Ident("and".into())));
            i += 2;
            continue;
        }
        if text[i..].starts_with("||") {
            out.push((i, Tok::Ident("or".into())));
            i += 2;
            continue;
        }
        for s in SYMBOLS {
            if text[i..].starts_with(s) {
                out.push((i, Tok::Sym(s)));
                i += s.len();
                continue 'outer;
            }
        }
        return Err(SetError::Parse { pos: i, msg: format!("unexpected character `{c}`") });
    }
    Ok(out)
}

/// One conjunction of constraints with its own existential variables.
#[derive(Clone, Debug, Default)]
struct Conjunct {
    locals: Vec<String>,
    cons: Vec<Constraint>,
}

fn cross(a: Vec<Conjunct>, b: Vec<Conjunct>) -> Vec<Conjunct> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in &a {
        for y in &b {
            let mut c = x.clone();
            c.locals.extend(y.locals.iter().cloned());
            c.cons.extend(y.cons.iter().cloned());
            out.push(c);
        }
    }
    out
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

type PResult<T> = Result<T, SetError>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(SetError::Parse { pos: self.offset(), msg: msg.into() })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(t)) if *t == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(t)) if t == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek() {
            Some(Tok::Ident(s)) if !is_keyword(s) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn ident_list(&mut self, close: &str) -> PResult<Vec<String>> {
        let mut out = Vec::new();
        if self.is_sym(close) {
            return Ok(out);
        }
        loop {
            out.push(self.ident()?);
            if !self.eat_sym(",") {
                return Ok(out);
            }
        }
    }

    /// `Name[e0, e1, ...]`
    fn tuple(&mut self) -> PResult<(String, Vec<AffineExpr>)> {
        let name = match self.peek() {
            Some(Tok::Ident(s)) if !is_keyword(s) => self.ident()?,
            _ => String::new(),
        };
        self.expect_sym("[")?;
        let mut elems = Vec::new();
        if !self.is_sym("]") {
            loop {
                elems.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym("]")?;
        Ok((name, elems))
    }

    fn expr(&mut self) -> PResult<AffineExpr> {
        let mut acc = if self.eat_sym("-") { self.term()?.scale(-1) } else { self.term()? };
        loop {
            if self.eat_sym("+") {
                acc = acc.add(&self.term()?);
            } else if self.eat_sym("-") {
                acc = acc.sub(&self.term()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> PResult<AffineExpr> {
        let mut acc = self.factor()?;
        loop {
            let implicit = matches!(self.peek(), Some(Tok::Ident(s)) if !is_keyword(s))
                && acc.is_constant();
            if !(self.eat_sym("*") || implicit) {
                return Ok(acc);
            }
            let rhs = self.factor()?;
            acc = if acc.is_constant() {
                rhs.scale(acc.constant_term())
            } else if rhs.is_constant() {
                acc.scale(rhs.constant_term())
            } else {
                return self.err("non-affine product");
            };
        }
    }

    fn factor(&mut self) -> PResult<AffineExpr> {
        match self.peek().cloned() {
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(AffineExpr::constant(v))
            }
            Some(Tok::Ident(s)) if !is_keyword(&s) => {
                self.pos += 1;
                Ok(AffineExpr::var(&s))
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Some(Tok::Sym("-")) => {
                self.pos += 1;
                Ok(self.factor()?.scale(-1))
            }
            _ => self.err("expected affine expression"),
        }
    }

    fn disjunction(&mut self) -> PResult<Vec<Conjunct>> {
        let mut out = self.conjunction()?;
        while self.eat_kw("or") {
            out.extend(self.conjunction()?);
        }
        Ok(out)
    }

    fn conjunction(&mut self) -> PResult<Vec<Conjunct>> {
        let mut acc = self.atom()?;
        while self.eat_kw("and") {
            let rhs = self.atom()?;
            acc = cross(acc, rhs);
        }
        Ok(acc)
    }

    fn atom(&mut self) -> PResult<Vec<Conjunct>> {
        if self.eat_kw("true") {
            return Ok(vec![Conjunct::default()]);
        }
        if self.eat_kw("false") {
            return Ok(Vec::new());
        }
        if self.eat_kw("exists") {
            self.expect_sym("(")?;
            let locals = self.ident_list(":")?;
            self.expect_sym(":")?;
            let mut body = self.disjunction()?;
            self.expect_sym(")")?;
            for c in &mut body {
                c.locals.extend(locals.iter().cloned());
            }
            return Ok(body);
        }
        if self.is_sym("(") {
            let save = self.pos;
            self.pos += 1;
            if let Ok(inner) = self.disjunction() {
                if self.eat_sym(")") && !self.at_expr_continuation() {
                    return Ok(inner);
                }
            }
            self.pos = save;
        }
        self.chain()
    }

    fn at_expr_continuation(&self) -> bool {
        ["<", "<=", ">", ">=", "=", "==", "+", "-", "*"].iter().any(|s| self.is_sym(s))
    }

    /// `e0 op e1 op e2 ...`
    fn chain(&mut self) -> PResult<Vec<Conjunct>> {
        let mut lhs = self.expr()?;
        let mut cons = Vec::new();
        loop {
            let op = match self.peek() {
                Some(Tok::Sym(s)) if ["<", "<=", ">", ">=", "=", "=="].contains(s) => *s,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.expr()?;
            cons.push(match op {
                "<" => Constraint::lt(lhs.clone(), rhs.clone()),
                "<=" => Constraint::le(lhs.clone(), rhs.clone()),
                ">" => Constraint::gt(lhs.clone(), rhs.clone()),
                ">=" => Constraint::ge(lhs.clone(), rhs.clone()),
                _ => Constraint::eq(lhs.clone(), rhs.clone()),
            });
            lhs = rhs;
        }
        if cons.is_empty() {
            return self.err("expected comparison");
        }
        Ok(vec![Conjunct { locals: Vec::new(), cons }])
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "and" | "or" | "exists" | "true" | "false")
}

struct Parsed {
    params: Option<Vec<String>>,
    input: (String, Vec<AffineExpr>),
    output: Option<(String, Vec<AffineExpr>)>,
    body: Vec<Conjunct>,
}

fn parse_text(text: &str) -> PResult<Parsed> {
    let mut p = Parser { toks: lex(text)?, pos: 0, end: text.len() };
    let mut params = None;
    if p.eat_sym("[") {
        let list = p.ident_list("]")?;
        p.expect_sym("]")?;
        p.expect_sym("->")?;
        params = Some(list);
    }
    p.expect_sym("{")?;
    let input = p.tuple()?;
    let output = if p.eat_sym("->") { Some(p.tuple()?) } else { None };
    let body = if p.eat_sym(":") { p.disjunction()? } else { vec![Conjunct::default()] };
    p.expect_sym("}")?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(Parsed { params, input, output, body })
}

/// Turns tuple elements into dim names; non-variable elements (or repeated
/// names) get a fresh dim tied by an equality.
fn tuple_dims(
    elems: &[AffineExpr],
    taken: &mut Vec<String>,
    extra: &mut Vec<Constraint>,
    prefix: &str,
) -> Vec<String> {
    let mut dims = Vec::new();
    for (d, e) in elems.iter().enumerate() {
        let plain = (e.constant_term() == 0)
            .then(|| e.terms().collect::<Vec<_>>())
            .filter(|t| t.len() == 1 && t[0].1 == 1)
            .map(|t| t[0].0.to_string());
        match plain {
            Some(n) if !taken.contains(&n) => {
                taken.push(n.clone());
                dims.push(n);
            }
            _ => {
                let mut n = format!("{prefix}{d}");
                while taken.contains(&n) {
                    n.push('\'');
                }
                taken.push(n.clone());
                extra.push(Constraint::eq(AffineExpr::var(&n), e.clone()));
                dims.push(n);
            }
        }
    }
    dims
}

fn build(parsed: Parsed) -> PResult<(Tuple, Option<Tuple>, IntSet)> {
    let mut taken = Vec::new();
    let mut extra = Vec::new();
    let in_dims = tuple_dims(&parsed.input.1, &mut taken, &mut extra, "i");
    let out_dims = parsed.output.as_ref().map(|o| tuple_dims(&o.1, &mut taken, &mut extra, "o"));
    let input = Tuple { name: parsed.input.0.clone(), dims: in_dims };
    let output = parsed.output.as_ref().zip(out_dims).map(|(o, dims)| Tuple { name: o.0.clone(), dims });
    let mut all_dims = input.dims.clone();
    if let Some(o) = &output {
        all_dims.extend(o.dims.iter().cloned());
    }
    let params = match parsed.params {
        Some(p) => p,
        None => {
            let mut ps: Vec<String> = Vec::new();
            let exprs = extra.iter().chain(parsed.body.iter().flat_map(|c| c.cons.iter()));
            for c in exprs {
                for v in c.expr.vars() {
                    let local = parsed.body.iter().any(|cj| cj.locals.iter().any(|l| l == v));
                    if !all_dims.iter().any(|d| d == v) && !local && !ps.iter().any(|p| p == v) {
                        ps.push(v.to_string());
                    }
                }
            }
            ps
        }
    };
    let tuple = match &output {
        Some(o) => IntRelation::wrap_tuple(&input, o),
        None => input.clone(),
    };
    let n_fixed = all_dims.len() + params.len();
    let mut disjuncts = Vec::new();
    for cj in &parsed.body {
        let mut cols = all_dims.clone();
        cols.extend(params.iter().cloned());
        cols.extend(cj.locals.iter().cloned());
        let mut conj = Conj { n_locals: cj.locals.len(), eqs: Vec::new(), ineqs: Vec::new() };
        for c in extra.iter().chain(&cj.cons) {
            let row: Row = row_from_expr(&c.expr, &cols)?;
            match c.kind {
                ConstraintKind::Zero => conj.eqs.push(row),
                ConstraintKind::NonNegative => conj.ineqs.push(row),
            }
        }
        if let Some(c) = conj.eliminate_locals(n_fixed) {
            disjuncts.push(c);
        }
    }
    Ok((input, output, IntSet::from_parts(tuple, params, disjuncts)))
}

pub(crate) fn parse_set(text: &str) -> PResult<IntSet> {
    let parsed = parse_text(text)?;
    if parsed.output.is_some() {
        return Err(SetError::Parse { pos: 0, msg: "expected a set, found a relation".into() });
    }
    Ok(build(parsed)?.2)
}

pub(crate) fn parse_relation(text: &str) -> PResult<IntRelation> {
    let parsed = parse_text(text)?;
    if parsed.output.is_none() {
        return Err(SetError::Parse { pos: 0, msg: "expected a relation, found a set".into() });
    }
    let (input, output, set) = build(parsed)?;
    Ok(IntRelation::from_wrapped(input, output.expect("relation output"), set))
}
