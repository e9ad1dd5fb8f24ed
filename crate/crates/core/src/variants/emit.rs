use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Provenance, Variant};
use crate::loopdsl::{print_body, LoopNest, Node, Style};
use crate::polyset::ParamBinding;

pub const MANIFEST_VERSION: u32 = 1;

/// `name` with every character outside `[A-Za-z0-9_]` replaced by `_`,
/// never starting with a digit.
pub fn c_identifier(name: &str) -> String {
    let mut s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        s.insert(0, '_');
    }
    s
}

/// Identifier-safe `<nest>_<id>`.
fn unit_name(nest: &str, id: usize) -> String {
    format!("{}_{id}", c_identifier(nest))
}

fn kernel_names(nodes: &[Node], out: &mut BTreeSet<String>) {
    for n in nodes {
        match n {
            Node::Microkernel(m) => {
                out.insert(m.name.clone());
            }
            Node::Loop(l) => {
                if let Some(b) = &l.band {
                    out.insert(b.name.clone());
                }
                kernel_names(&l.body, out);
            }
            Node::Stmt(_) => {}
        }
    }
}

/// A C99 translation unit with one function `<nest>_<id>` taking the
/// parameters and arrays. Microkernels are inlined under their pragma or
/// called through an `extern` declaration.
pub fn emit_c(v: &Variant, inline_kernels: bool) -> String {
    emit_nest(&v.nest, &unit_name(&v.nest.name, v.id), inline_kernels)
}

/// A translation unit with one function `fname` computing `nest`.
pub fn emit_nest(nest: &LoopNest, fname: &str, inline_kernels: bool) -> String {
    let mut out = String::from("#include <math.h>\n\n");
    out.push_str("#define MIN(a, b) ((a) < (b) ? (a) : (b))\n");
    out.push_str("#define MAX(a, b) ((a) > (b) ? (a) : (b))\n\n");
    let mut kernels = BTreeSet::new();
    kernel_names(&nest.body, &mut kernels);
    if !inline_kernels && !kernels.is_empty() {
        for k in &kernels {
            let _ = writeln!(out, "extern void {k}();");
        }
        out.push('\n');
    }
    let mut args: Vec<String> = nest.params.iter().map(|p| format!("int {p}")).collect();
    for a in &nest.arrays {
        let dims: String = a.extents.iter().map(|e| format!("[{e}]")).collect();
        args.push(format!("float {}{dims}", a.name));
    }
    let _ = writeln!(out, "void {fname}({}) {{", args.join(", "));
    for (n, v) in &nest.scalars {
        let _ = writeln!(out, "  const double {n} = {v:?};");
    }
    print_body(&mut out, &nest.body, 1, Style::C { inline_kernels });
    out.push_str("}\n");
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub file: String,
    #[serde(flatten)]
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub nest: String,
    pub binding: BTreeMap<String, i64>,
    pub variants: Vec<ManifestEntry>,
}

pub fn manifest(nest: &str, variants: &[Variant], b: &ParamBinding) -> Manifest {
    Manifest {
        version: MANIFEST_VERSION,
        nest: nest.to_string(),
        binding: b.as_map().clone(),
        variants: variants
            .iter()
            .map(|v| ManifestEntry {
                id: v.id,
                file: format!("{}.c", unit_name(nest, v.id)),
                provenance: v.provenance.clone(),
            })
            .collect(),
    }
}

/// Writes `<nest>_<id>.c` for each variant into `dir`.
pub fn write_variants(dir: &Path, variants: &[Variant], inline_kernels: bool) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(variants.len());
    for v in variants {
        let path = dir.join(format!("{}.c", unit_name(&v.nest.name, v.id)));
        std::fs::write(&path, emit_c(v, inline_kernels))?;
        paths.push(path);
    }
    Ok(paths)
}
