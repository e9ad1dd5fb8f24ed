use serde::Serialize;

use super::printer::{expr, Style};
use super::{AccessKind, AssignOp, LoopNest, Node};

/// Flat, stable JSON view of a nest.
#[derive(Clone, Debug, Serialize)]
pub struct NestDump {
    pub name: String,
    pub params: Vec<String>,
    pub consts: Vec<(String, i64)>,
    pub arrays: Vec<ArrayDump>,
    pub loops: Vec<LoopDump>,
    pub statements: Vec<StatementDump>,
    pub accesses: Vec<AccessDump>,
    pub microkernel: Vec<MicrokernelDump>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArrayDump {
    pub name: String,
    pub extents: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LoopDump {
    pub iter: String,
    pub depth: usize,
    pub parent: Option<String>,
    pub lower: Vec<String>,
    pub upper: Vec<String>,
    pub step: i64,
    pub parallel: bool,
    pub band: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StatementDump {
    pub label: String,
    pub loops: Vec<String>,
    pub position: Vec<usize>,
    pub op: String,
    pub text: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AccessDump {
    pub id: usize,
    pub statement: String,
    pub array: String,
    pub index: Vec<String>,
    pub kind: AccessKind,
}

#[derive(Clone, Debug, Serialize)]
pub struct MicrokernelDump {
    pub name: String,
    pub args: Vec<String>,
    /// `call` for an opaque call, `band` for substituted loops.
    pub form: String,
    pub loops: Vec<String>,
}

pub fn dump_json(nest: &LoopNest) -> serde_json::Value {
    let mut loops = Vec::new();
    let mut kernels = Vec::new();
    fn walk(
        nodes: &[Node],
        depth: usize,
        parent: Option<&str>,
        in_band: bool,
        loops: &mut Vec<LoopDump>,
        k: &mut Vec<MicrokernelDump>,
    ) {
        for n in nodes {
            match n {
                Node::Loop(l) => {
                    loops.push(LoopDump {
                        iter: l.iter.clone(),
                        depth,
                        parent: parent.map(str::to_string),
                        lower: l.lower.iter().map(|e| e.to_string()).collect(),
                        upper: l.upper.iter().map(|e| e.to_string()).collect(),
                        step: l.step,
                        parallel: l.parallel,
                        band: l.band.as_ref().map(|b| b.name.clone()),
                    });
                    match &l.band {
                        Some(b) if !in_band => k.push(MicrokernelDump {
                            name: b.name.clone(),
                            args: b.args.clone(),
                            form: "band".into(),
                            loops: band_iters(l),
                        }),
                        _ => {}
                    }
                    walk(&l.body, depth + 1, Some(&l.iter), l.band.is_some(), loops, k);
                }
                Node::Microkernel(m) => {
                    let iters = m
                        .body
                        .iter()
                        .filter_map(|b| if let Node::Loop(l) = b { Some(band_iters(l)) } else { None })
                        .flatten()
                        .collect();
                    k.push(MicrokernelDump { name: m.name.clone(), args: m.args.clone(), form: "call".into(), loops: iters });
                    walk(&m.body, depth, parent, true, loops, k);
                }
                Node::Stmt(_) => {}
            }
        }
    }
    fn band_iters(l: &super::Loop) -> Vec<String> {
        let mut out = vec![l.iter.clone()];
        for n in &l.body {
            if let Node::Loop(c) = n {
                out.extend(band_iters(c));
            }
        }
        out
    }
    walk(&nest.body, 0, None, false, &mut loops, &mut kernels);
    let ctxs = nest.statements();
    let statements = ctxs
        .iter()
        .map(|c| {
            let s = c.stmt;
            let idx: String = s.target.index.iter().map(|e| format!("[{e}]")).collect();
            let op = if s.op == AssignOp::AddAssign { "+=" } else { "=" };
            StatementDump {
                label: s.label.clone(),
                loops: c.loops.iter().map(|l| l.iter.clone()).collect(),
                position: c.positions.clone(),
                op: op.into(),
                text: format!("{}{idx} {op} {}", s.target.array, expr(&s.rhs, Style::Pdl)),
            }
        })
        .collect();
    let accesses = nest
        .refs()
        .into_iter()
        .map(|r| AccessDump {
            id: r.id,
            statement: ctxs[r.stmt].stmt.label.clone(),
            array: r.array,
            index: r.index.iter().map(|e| e.to_string()).collect(),
            kind: r.kind,
        })
        .collect();
    let dump = NestDump {
        name: nest.name.clone(),
        params: nest.params.clone(),
        consts: nest.consts.clone(),
        arrays: nest
            .arrays
            .iter()
            .map(|a| ArrayDump { name: a.name.clone(), extents: a.extents.iter().map(|e| e.to_string()).collect() })
            .collect(),
        loops,
        statements,
        accesses,
        microkernel: kernels,
    };
    serde_json::to_value(dump).expect("dump serializes")
}
