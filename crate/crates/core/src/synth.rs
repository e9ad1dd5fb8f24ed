//! Random small affine nests for oracle comparisons. Every generated nest
//! stays in bounds for the binding it is returned with.

use std::fmt::Write;

use rand::Rng;

use crate::polyset::ParamBinding;

const EXTENT: i64 = 24;

struct Gen<'a, R: Rng> {
    rng: &'a mut R,
    loops_left: usize,
    n_arrays: usize,
    dims: Vec<usize>,
    label: usize,
    out: String,
}

impl<R: Rng> Gen<'_, R> {
    fn index(&mut self, iters: &[String]) -> String {
        let mut parts: Vec<String> = Vec::new();
        if !iters.is_empty() {
            let n_terms = self.rng.gen_range(0..=iters.len().min(2));
            let mut pool = iters.to_vec();
            for _ in 0..n_terms {
                let k = self.rng.gen_range(0..pool.len());
                parts.push(pool.remove(k));
            }
        }
        let c = self.rng.gen_range(0..3);
        if parts.is_empty() || c > 0 {
            parts.push(c.to_string());
        }
        parts.join(" + ")
    }

    fn access(&mut self, iters: &[String]) -> String {
        let a = self.rng.gen_range(0..self.n_arrays);
        let idx: String = (0..self.dims[a]).map(|_| format!("[{}]", self.index(iters))).collect();
        format!("A{a}{idx}")
    }

    fn stmt(&mut self, iters: &[String], depth: usize) {
        let target = self.access(iters);
        let op = if self.rng.gen_bool(0.5) { "+=" } else { "=" };
        let mut rhs = self.access(iters);
        if self.rng.gen_bool(0.5) {
            rhs = format!("{rhs} * {}", self.access(iters));
        }
        let pad = "  ".repeat(depth);
        let _ = writeln!(self.out, "{pad}S{}: {target} {op} {rhs} + 1.0;", self.label);
        self.label += 1;
    }

    fn lower(&mut self, iters: &[String]) -> String {
        match (iters.last(), self.rng.gen_range(0..4)) {
            (Some(outer), 0) => outer.clone(),
            (_, 1) => "1".into(),
            _ => "0".into(),
        }
    }

    fn upper(&mut self, iters: &[String]) -> String {
        match (iters.last(), self.rng.gen_range(0..5)) {
            (Some(outer), 0) => format!("{outer} + 2"),
            (_, 1) => "N".into(),
            _ => self.rng.gen_range(1..=6).to_string(),
        }
    }

    fn body(&mut self, iters: &mut Vec<String>, depth: usize) {
        let n_items = if depth == 0 { 1 } else { self.rng.gen_range(1..=2) };
        for _ in 0..n_items {
            if self.loops_left > 0 && (depth == 0 || self.rng.gen_bool(0.6)) {
                self.loops_left -= 1;
                let it = format!("x{}", iters.len());
                let lb = self.lower(iters);
                let ub = self.upper(iters);
                let step = if self.rng.gen_ratio(1, 6) { 2 } else { 1 };
                let inc = if step == 1 { format!("{it}++") } else { format!("{it} += {step}") };
                let pad = "  ".repeat(depth);
                let _ = writeln!(self.out, "{pad}for ({it} = {lb}; {it} < {ub}; {inc}) {{");
                iters.push(it);
                self.body(iters, depth + 1);
                iters.pop();
                let _ = writeln!(self.out, "{pad}}}");
            } else {
                self.stmt(iters, depth);
            }
        }
    }
}

/// A random nest of at most `max_loops` loops over at most three arrays,
/// with its binding for the single parameter `N`.
pub fn random_nest(rng: &mut impl Rng, max_loops: usize) -> (String, ParamBinding) {
    let n_arrays = rng.gen_range(1..=3);
    let dims: Vec<usize> = (0..n_arrays).map(|_| rng.gen_range(1..=2)).collect();
    let mut g = Gen {
        loops_left: rng.gen_range(1..=max_loops.max(1)),
        rng,
        n_arrays,
        dims: dims.clone(),
        label: 0,
        out: String::new(),
    };
    let _ = writeln!(g.out, "param N;");
    for (a, d) in dims.iter().enumerate() {
        let _ = writeln!(g.out, "array A{a}{};", format!("[{EXTENT}]").repeat(*d));
    }
    g.body(&mut Vec::new(), 0);
    let n = g.rng.gen_range(1..=6);
    (g.out, ParamBinding::new().with("N", n))
}
