//! The commands as pure functions from inputs to a set of output files, so
//! nothing is written unless the whole command succeeded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use super::CliError;
use crate::cachemap::{assign_to_caches, CacheAssignment, MachineModel};
use crate::depend::{bound_dependences, DependenceRecord};
use crate::fusion::{fuse_or_keep, FusionDecision};
use crate::loopdsl::{extract_polyhedral, print_nest, LoopNest};
use crate::polyset::ParamBinding;
use crate::rank::{
    rank_by_cost, stats_cost, synthetic_pairs, train_ranker, tournament_rank, LabeledPair, Method, RankedEntry,
    RankedList, RankerModel, TrainConfig, TrainOutcome, VariantStats,
};
use crate::simcache::{execute, simulate, SimOptions, SimStats};
use crate::variants::{
    c_identifier, emit_c, emit_nest, generate_variants, manifest, outer_band, Manifest, Provenance, Variant, VariantConfig,
};
use crate::wset::{working_sets_of, WorkingSetReport, WsOptions};

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Cost,
    Dnn,
    Both,
}

/// Files relative to the output directory, plus the human summary.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: BTreeMap<PathBuf, Vec<u8>>,
    pub summary: String,
    pub warnings: Vec<String>,
}

impl Outputs {
    fn json(&mut self, path: impl Into<PathBuf>, v: &impl Serialize) {
        let mut text = serde_json::to_vec_pretty(v).expect("reports serialize");
        text.push(b'\n');
        self.files.insert(path.into(), text);
    }

    fn text(&mut self, path: impl Into<PathBuf>, text: String) {
        self.files.insert(path.into(), text.into_bytes());
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub machine: MachineModel,
    pub binding: ParamBinding,
    pub variants: VariantConfig,
    pub method: MethodChoice,
    pub model: Option<RankerModel>,
    pub top_k: usize,
    pub seed: u64,
}

fn analysis(e: impl std::fmt::Display) -> CliError {
    CliError::Analysis(e.to_string())
}

/// Every parameter of the nest must be bound.
pub fn check_binding(nest: &LoopNest, b: &ParamBinding) -> Result<(), CliError> {
    let missing: Vec<&str> = nest.params.iter().filter(|p| b.get(p).is_none()).map(String::as_str).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--bind is missing {}", missing.join(", "))))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantAnalysis {
    pub id: usize,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub working_sets: WorkingSetReport,
    pub assignment: CacheAssignment,
    pub stats: VariantStats,
    /// Exact cost as `num/den`.
    pub cost: String,
}

pub fn analyze_variant(v: &Variant, b: &ParamBinding, m: &MachineModel) -> Result<VariantAnalysis, CliError> {
    let p = extract_polyhedral(&v.nest).map_err(analysis)?;
    let opts = WsOptions { datatype_size: m.datatype_size, ..WsOptions::default() };
    let ws = working_sets_of(&p, &v.nest.name, b, opts).map_err(analysis)?;
    let assignment = assign_to_caches(&ws, m);
    let stats = VariantStats::from_assignment(v.id, &assignment);
    let cost = stats_cost(&stats, m).map_err(analysis)?;
    Ok(VariantAnalysis {
        id: v.id,
        provenance: v.provenance.clone(),
        working_sets: ws,
        assignment,
        stats,
        cost: cost.to_string(),
    })
}

/// Analyses in variant order; the fan-out is collected back in input order.
pub fn analyze_all(vs: &[Variant], b: &ParamBinding, m: &MachineModel) -> Result<Vec<VariantAnalysis>, CliError> {
    vs.par_iter().map(|v| analyze_variant(v, b, m)).collect()
}

#[derive(Serialize)]
struct RankReport<'a> {
    version: u32,
    nest: &'a str,
    binding: &'a BTreeMap<String, i64>,
    machine: &'a MachineModel,
    method: MethodChoice,
    seed: u64,
    top_k: usize,
    variants: Vec<VariantRow<'a>>,
    rankings: BTreeMap<&'static str, &'a [RankedEntry]>,
    selected: &'a [usize],
    warnings: &'a [String],
}

#[derive(Serialize)]
struct VariantRow<'a> {
    id: usize,
    file: String,
    #[serde(flatten)]
    provenance: &'a Provenance,
    stats: VariantStats,
    cost: &'a str,
}

#[derive(Serialize)]
struct VariantFile<'a> {
    version: u32,
    nest: &'a str,
    #[serde(flatten)]
    analysis: &'a VariantAnalysis,
}

fn tiles_text(p: &Provenance) -> String {
    p.tiles
        .iter()
        .map(|(k, v)| format!("{k}={}", v.iter().map(i64::to_string).collect::<Vec<_>>().join("x")))
        .collect::<Vec<_>>()
        .join(";")
}

fn cost_csv(analyses: &[VariantAnalysis], cost_rank: &[usize], m: &MachineModel) -> Result<String, CliError> {
    let mut pos = vec![0; analyses.len()];
    for (r, &id) in cost_rank.iter().enumerate() {
        pos[id] = r + 1;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["id", "permutation", "tiles", "parallel", "l1_bytes", "l2_bytes", "l3_bytes", "mem_bytes", "cost", "cost_rank"];
    let csv_err = |e: csv::Error| CliError::Analysis(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for a in analyses {
        let c = stats_cost(&a.stats, m).map_err(analysis)?;
        let row = [
            a.id.to_string(),
            a.provenance.permutation.join(" "),
            tiles_text(&a.provenance),
            a.provenance.parallel.clone().unwrap_or_default(),
            a.stats.l1.to_string(),
            a.stats.l2.to_string(),
            a.stats.l3.to_string(),
            a.stats.mem.to_string(),
            format!("{:.6}", num_traits::ToPrimitive::to_f64(&c).unwrap_or(f64::INFINITY)),
            pos[a.id].to_string(),
        ];
        w.write_record(&row).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| CliError::Analysis(e.to_string()))?).map_err(analysis)
}

fn dnn_ranking(model: &RankerModel, stats: &[VariantStats]) -> Result<RankedList, CliError> {
    if stats.len() < 2 {
        let entries = stats.iter().map(|s| RankedEntry { id: s.id, score: 0.0, exact: None }).collect();
        return Ok(RankedList { method: Method::Dnn, entries });
    }
    tournament_rank(model, stats, true).map_err(analysis)
}

/// Generates, analyzes and ranks the variants of `nest`, and emits the top
/// `top_k` of the primary ranking (cost unless only the learned judge runs).
pub fn rank(nest: &LoopNest, cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    check_binding(nest, &cfg.binding)?;
    if cfg.top_k == 0 {
        return Err(CliError::Usage("--top-k must be at least 1".into()));
    }
    let model = match (cfg.method, &cfg.model) {
        (MethodChoice::Cost, _) => None,
        (_, Some(m)) => Some(m),
        (_, None) => return Err(CliError::Usage("--method dnn and both need --model".into())),
    };
    let b = &cfg.binding;
    let vs = generate_variants(nest, &cfg.variants, b).map_err(analysis)?;
    let analyses = analyze_all(&vs, b, &cfg.machine)?;
    let stats: Vec<VariantStats> = analyses.iter().map(|a| a.stats).collect();

    let mut out = Outputs::default();
    let cost = rank_by_cost(&stats, &cfg.machine).map_err(analysis)?;
    let dnn = model.map(|m| dnn_ranking(m, &stats)).transpose()?;
    let primary = match cfg.method {
        MethodChoice::Dnn => dnn.as_ref().expect("model present"),
        _ => &cost,
    };
    if cfg.top_k > vs.len() {
        out.warn(format!("--top-k {} exceeds the {} variants; emitting all of them", cfg.top_k, vs.len()));
    }
    let selected: Vec<usize> = primary.order().into_iter().take(cfg.top_k).collect();

    let mut rankings: BTreeMap<&'static str, &[RankedEntry]> = BTreeMap::new();
    if cfg.method != MethodChoice::Dnn {
        rankings.insert("cost", &cost.entries);
    }
    if let Some(d) = &dnn {
        rankings.insert("dnn", &d.entries);
    }

    let man = manifest(&nest.name, &vs, b);
    let file_of = |id: usize| man.variants[id].file.trim_end_matches(".c").to_string();
    for a in &analyses {
        out.json(format!("variants/{}.json", file_of(a.id)), &VariantFile { version: REPORT_VERSION, nest: &nest.name, analysis: a });
    }
    let picked = Manifest {
        variants: selected.iter().map(|&id| man.variants[id].clone()).collect(),
        ..man.clone()
    };
    for &id in &selected {
        let v = &vs[id];
        out.text(format!("selected/{}.c", file_of(id)), emit_c(v, false));
        out.text(format!("selected/{}.pdl", file_of(id)), print_nest(&v.nest));
    }
    out.json("selected/manifest.json", &picked);
    out.text("costs.csv", cost_csv(&analyses, &cost.order(), &cfg.machine)?);

    let warnings = out.warnings.clone();
    let report = RankReport {
        version: REPORT_VERSION,
        nest: &nest.name,
        binding: b.as_map(),
        machine: &cfg.machine,
        method: cfg.method,
        seed: cfg.seed,
        top_k: cfg.top_k,
        variants: analyses
            .iter()
            .map(|a| VariantRow {
                id: a.id,
                file: format!("variants/{}.json", file_of(a.id)),
                provenance: &a.provenance,
                stats: a.stats,
                cost: &a.cost,
            })
            .collect(),
        rankings,
        selected: &selected,
        warnings: &warnings,
    };
    out.json("report.json", &report);

    let mut s = String::new();
    let _ = writeln!(s, "{}: {} variants under {}", nest.name, vs.len(), b);
    let describe = |id: usize| {
        let p = &vs[id].provenance;
        let tiles = tiles_text(p);
        format!("order {}{}", p.permutation.join(" "), if tiles.is_empty() { String::new() } else { format!(", tiles {tiles}") })
    };
    for (name, list) in [("cost", Some(&cost)), ("dnn", dnn.as_ref())] {
        let Some(list) = list.filter(|_| name != "cost" || cfg.method != MethodChoice::Dnn) else { continue };
        let _ = writeln!(s, "{name} ranking:");
        for (r, e) in list.entries.iter().take(cfg.top_k.max(3)).enumerate() {
            let score = match name {
                "cost" => format!("cost {}", e.score),
                _ => format!("wins {}", e.score),
            };
            let _ = writeln!(s, "  {:>3}. variant {:>3}  {score}  {}", r + 1, e.id, describe(e.id));
        }
    }
    let _ = writeln!(s, "selected: {:?}", selected);
    out.summary = s;
    Ok(out)
}

#[derive(Serialize)]
struct AnalysisReport<'a> {
    version: u32,
    nest: &'a str,
    binding: &'a BTreeMap<String, i64>,
    dependences: Vec<DependenceRecord>,
    working_sets: WorkingSetReport,
    assignment: CacheAssignment,
    stats: VariantStats,
    cost: String,
}

/// Dependences, working sets and the cache placement of `nest` as given.
pub fn analyze(nest: &LoopNest, b: &ParamBinding, m: &MachineModel) -> Result<Outputs, CliError> {
    check_binding(nest, b)?;
    let p = extract_polyhedral(nest).map_err(analysis)?;
    let deps = bound_dependences(&p, b).map_err(analysis)?;
    let a = analyze_variant(&original(nest), b, m)?;
    let mut out = Outputs::default();
    out.summary = format!(
        "{}: {} dependences, {} working-set entries; L1 {} B, L2 {} B, L3 {} B, memory {} B; cost {}\n",
        nest.name,
        deps.len(),
        a.working_sets.entries.len(),
        a.stats.l1,
        a.stats.l2,
        a.stats.l3,
        a.stats.mem,
        a.cost
    );
    out.json(
        "analysis.json",
        &AnalysisReport {
            version: REPORT_VERSION,
            nest: &nest.name,
            binding: b.as_map(),
            dependences: deps.iter().map(DependenceRecord::from).collect(),
            stats: a.stats,
            cost: a.cost,
            working_sets: a.working_sets,
            assignment: a.assignment,
        },
    );
    Ok(out)
}

fn original(nest: &LoopNest) -> Variant {
    let permutation = outer_band(nest).loops.into_iter().map(|l| l.iter).collect();
    Variant {
        id: 0,
        nest: nest.clone(),
        provenance: Provenance { permutation, tiles: BTreeMap::new(), parallel: None },
    }
}

#[derive(Serialize)]
struct FuseReport<'a> {
    version: u32,
    nest: &'a str,
    binding: &'a BTreeMap<String, i64>,
    #[serde(flatten)]
    decision: &'a FusionDecision,
    output: String,
}

/// The fused program, or the program unchanged when fusion is illegal.
pub fn fuse(nest: &LoopNest, b: &ParamBinding, emit: bool) -> Result<Outputs, CliError> {
    check_binding(nest, b)?;
    let (result, decision) = fuse_or_keep(nest, b).map_err(analysis)?;
    let mut out = Outputs::default();
    let stem = nest.name.clone();
    let pdl = format!("{stem}.fused.pdl");
    out.text(&pdl, print_nest(&result));
    if emit {
        out.text(format!("{stem}.fused.c"), emit_nest(&result, &format!("{}_fused", c_identifier(&stem)), false));
    }
    if decision.fusable {
        out.summary = format!("{stem}: fused\n");
    } else {
        out.warn(format!("{stem}: not fused, {decision}; the program is kept unchanged"));
        out.summary = format!("{stem}: kept unchanged ({decision})\n");
    }
    out.json("fusion.json", &FuseReport { version: REPORT_VERSION, nest: &stem, binding: b.as_map(), decision: &decision, output: pdl });
    Ok(out)
}

#[derive(Clone, Debug)]
pub enum TrainSource {
    Dataset(Vec<LabeledPair>),
    Synthetic(usize),
}

#[derive(Serialize)]
struct TrainReport<'a> {
    version: u32,
    seed: u64,
    pairs: usize,
    config: &'a TrainConfig,
    #[serde(flatten)]
    outcome: &'a TrainOutcome,
}

/// Trains the pairwise judge; writes `model.json` and `training.json`.
pub fn train(source: TrainSource, m: &MachineModel, cfg: &TrainConfig) -> Result<Outputs, CliError> {
    let pairs = match source {
        TrainSource::Dataset(p) => p,
        TrainSource::Synthetic(n) => synthetic_pairs(n, cfg.seed, m).map_err(analysis)?,
    };
    let outcome = train_ranker(&pairs, cfg).map_err(analysis)?;
    let mut out = Outputs::default();
    out.text("model.json", outcome.model.to_json());
    out.json("training.json", &TrainReport { version: REPORT_VERSION, seed: cfg.seed, pairs: pairs.len(), config: cfg, outcome: &outcome });
    out.summary = format!(
        "{} pairs: train accuracy {:.4}, held-out accuracy {:.4}, final loss {:.6}\n",
        pairs.len(),
        outcome.train_accuracy,
        outcome.validation_accuracy,
        outcome.final_loss
    );
    Ok(out)
}

#[derive(Serialize)]
struct SimReport<'a> {
    version: u32,
    nest: &'a str,
    binding: &'a BTreeMap<String, i64>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    variant: Option<&'a Provenance>,
    /// Sum of every array's elements after execution.
    checksums: BTreeMap<String, f64>,
    stats: SimStats,
}

/// Interprets one nest on seeded inputs and runs its accesses through the
/// cache hierarchy.
pub fn simulate_one(nest: &LoopNest, variant: Option<&Variant>, b: &ParamBinding, m: &MachineModel, seed: u64) -> Result<Outputs, CliError> {
    check_binding(nest, b)?;
    let target = variant.map_or(nest, |v| &v.nest);
    let arrays = execute(target, b, seed).map_err(analysis)?;
    let checksums = arrays.names.iter().zip(&arrays.data).map(|(n, d)| (n.clone(), d.iter().sum())).collect();
    let stats = simulate(target, b, m, SimOptions::default()).map_err(analysis)?;
    let mut out = Outputs::default();
    let mut s = format!("{}: {} accesses", nest.name, stats.accesses);
    for l in &stats.levels {
        let _ = write!(s, ", {} {} hits {} misses", l.name, l.hits, l.misses);
    }
    let _ = writeln!(s, ", memory {}; cost {}", stats.memory, stats.cost);
    out.summary = s;
    out.json(
        "simulation.json",
        &SimReport {
            version: REPORT_VERSION,
            nest: &nest.name,
            binding: b.as_map(),
            seed,
            variant: variant.map(|v| &v.provenance),
            checksums,
            stats,
        },
    );
    Ok(out)
}

pub fn variants_of(nest: &LoopNest, cfg: &VariantConfig, b: &ParamBinding) -> Result<Vec<Variant>, CliError> {
    check_binding(nest, b)?;
    generate_variants(nest, cfg, b).map_err(analysis)
}

/// C for every variant and the manifest.
pub fn emit(nest: &LoopNest, cfg: &VariantConfig, b: &ParamBinding, inline: bool) -> Result<Outputs, CliError> {
    let vs = variants_of(nest, cfg, b)?;
    let man = manifest(&nest.name, &vs, b);
    let mut out = Outputs::default();
    for (v, e) in vs.iter().zip(&man.variants) {
        out.text(&e.file, emit_c(v, inline));
    }
    out.json("manifest.json", &man);
    out.summary = format!("{}: {} variants emitted\n", nest.name, vs.len());
    Ok(out)
}
