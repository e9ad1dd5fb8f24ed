use std::fmt::Write;

use super::{AssignOp, BinOp, Expr, Loop, LoopNest, Node};
use crate::polyset::AffineExpr;

/// Output flavour shared by the `.pdl` printer and the C emitter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Style {
    Pdl,
    /// `inline_kernels`: print microkernel bodies (under the pragma) rather
    /// than opaque calls.
    C { inline_kernels: bool },
}

/// Canonical `.pdl` text of a nest.
pub fn print_nest(nest: &LoopNest) -> String {
    let mut out = String::new();
    if !nest.params.is_empty() {
        let _ = writeln!(out, "param {};", nest.params.join(", "));
    }
    for (n, v) in &nest.consts {
        let _ = writeln!(out, "const {n} = {v};");
    }
    for (n, v) in &nest.scalars {
        let _ = writeln!(out, "scalar {n} = {v:?};");
    }
    for a in &nest.arrays {
        let dims: String = a.extents.iter().map(|e| format!("[{e}]")).collect();
        let _ = writeln!(out, "array {}{dims};", a.name);
    }
    out.push('\n');
    print_body(&mut out, &nest.body, 0, Style::Pdl);
    out
}

pub(crate) fn print_body(out: &mut String, nodes: &[Node], depth: usize, style: Style) {
    for n in nodes {
        print_node(out, n, depth, style);
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn print_node(out: &mut String, node: &Node, depth: usize, style: Style) {
    match node {
        Node::Stmt(s) => {
            indent(out, depth);
            let op = if s.op == AssignOp::AddAssign { "+=" } else { "=" };
            let idx: String = s.target.index.iter().map(|e| format!("[{e}]")).collect();
            let _ = writeln!(out, "{}: {}{idx} {op} {};", s.label, s.target.array, expr(&s.rhs, style));
        }
        Node::Loop(l) => match (&l.band, style) {
            (Some(mark), _) => {
                let mut inner = l.clone();
                let call = format!("{}({})", mark.name, mark.args.join(", "));
                strip_band(&mut inner);
                print_kernel(out, &call, &Node::Loop(inner), depth, style);
            }
            _ => print_loop(out, l, depth, style),
        },
        Node::Microkernel(m) => {
            let call = format!("{}({})", m.name, m.args.join(", "));
            for b in &m.body {
                print_kernel(out, &call, b, depth, style);
            }
        }
    }
}

fn strip_band(l: &mut Loop) {
    l.band = None;
    for n in &mut l.body {
        if let Node::Loop(c) = n {
            strip_band(c);
        }
    }
}

fn print_kernel(out: &mut String, call: &str, body: &Node, depth: usize, style: Style) {
    match style {
        Style::Pdl => {
            indent(out, depth);
            let _ = writeln!(out, "#pragma microkernel {call} {{");
            print_node(out, body, depth + 1, style);
            indent(out, depth);
            out.push_str("}\n");
        }
        Style::C { inline_kernels: true } => {
            indent(out, depth);
            let _ = writeln!(out, "#pragma microkernel {call}");
            print_node(out, body, depth, style);
        }
        Style::C { inline_kernels: false } => {
            indent(out, depth);
            let _ = writeln!(out, "{call};");
        }
    }
}

fn print_loop(out: &mut String, l: &Loop, depth: usize, style: Style) {
    indent(out, depth);
    let c = matches!(style, Style::C { .. });
    if l.parallel {
        if c {
            out.push_str("#pragma omp parallel for\n");
            indent(out, depth);
        } else {
            out.push_str("parallel ");
        }
    }
    let lower = bound(&l.lower, if c { "MAX" } else { "max" });
    let upper = bound(&l.upper, if c { "MIN" } else { "min" });
    let step = if l.step == 1 { format!("{}++", l.iter) } else { format!("{} += {}", l.iter, l.step) };
    let decl = if c { "int " } else { "" };
    let _ = writeln!(out, "for ({decl}{it} = {lower}; {it} < {upper}; {step}) {{", it = l.iter);
    print_body(out, &l.body, depth + 1, style);
    indent(out, depth);
    out.push_str("}\n");
}

fn bound(es: &[AffineExpr], func: &str) -> String {
    match es {
        [one] => one.to_string(),
        _ => {
            // nested binary calls keep the C macros two-argument
            let mut acc = es[es.len() - 1].to_string();
            for e in es[..es.len() - 1].iter().rev() {
                acc = format!("{func}({e}, {acc})");
            }
            acc
        }
    }
}

pub(crate) fn number(v: f64) -> String {
    let s = format!("{v:?}");
    if v < 0.0 {
        format!("({s})")
    } else {
        s
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, _, _) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, _, _) => 2,
        Expr::Neg(_) => 3,
        _ => 4,
    }
}

pub(crate) fn expr(e: &Expr, style: Style) -> String {
    match e {
        Expr::Num(v) => number(*v),
        Expr::Scalar(s) => s.clone(),
        Expr::Read(a) => {
            let idx: String = a.index.iter().map(|e| format!("[{e}]")).collect();
            format!("{}{idx}", a.array)
        }
        Expr::Neg(x) => {
            let inner = expr(x, style);
            if prec(x) < 3 {
                format!("-({inner})")
            } else {
                format!("-{inner}")
            }
        }
        Expr::Bin(op, a, b) => {
            let p = prec(e);
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
            };
            let l = expr(a, style);
            let r = expr(b, style);
            let l = if prec(a) < p { format!("({l})") } else { l };
            // floating-point operators do not reassociate
            let r = if prec(b) <= p { format!("({r})") } else { r };
            format!("{l} {sym} {r}")
        }
        Expr::Call(f, args) => {
            let name = match style {
                Style::Pdl => f.name().to_string(),
                Style::C { .. } => format!("f{}", f.name()),
            };
            let args: Vec<String> = args.iter().map(|a| expr(a, style)).collect();
            format!("{name}({})", args.join(", "))
        }
    }
}
