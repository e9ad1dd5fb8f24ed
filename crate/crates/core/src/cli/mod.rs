//! Command-line driver. Every command computes its outputs in memory and
//! writes them only on success.

pub mod pipeline;

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use pipeline::{MethodChoice, Outputs, PipelineConfig, TrainSource, REPORT_VERSION};

use crate::cachemap::MachineModel;
use crate::loopdsl::{parse_named, LoopNest};
use crate::polyset::ParamBinding;
use crate::rank::{read_dataset, RankerModel, TrainConfig};
use crate::variants::VariantConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Analysis(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Analysis(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "nestrank", version, about = "Working-set analysis, variant generation and ranking of loop nests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate, analyze and rank variants; emit the best ones.
    Rank(RankArgs),
    /// Dependences, working sets and cache placement of one nest.
    Analyze(AnalyzeArgs),
    /// Fuse a heavy operator with the element-wise operator after (or before) it.
    Fuse(FuseArgs),
    /// Train the pairwise ranking network.
    Train(TrainArgs),
    /// Interpret a nest or one of its variants and simulate its cache behavior.
    Simulate(SimulateArgs),
    /// Write C for every variant.
    Emit(EmitArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Loop nest in the `.pdl` language.
    pub input: PathBuf,
    /// Parameter values, e.g. `M=64,N=64,K=64`.
    #[arg(long, default_value = "")]
    pub bind: String,
    /// Machine model (TOML); a 28-core server default otherwise.
    #[arg(long)]
    pub machine: Option<PathBuf>,
    /// Output directory; without it, the main report is printed to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value_t = MethodChoice::Cost)]
    pub method: MethodChoice,
    /// Trained ranking network (JSON), for `--method dnn|both`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Variant generation settings (TOML).
    #[arg(long)]
    pub variants_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    #[command(flatten)]
    pub common: Common,
    /// Also write the fused program as C.
    #[arg(long)]
    pub emit_c: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Labeled pairs (CSV); synthetic pairs are drawn when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of synthetic pairs.
    #[arg(long, default_value_t = 2000)]
    pub pairs: usize,
    #[arg(long)]
    pub machine: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seed of the random input arrays.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Simulate this variant instead of the nest as written.
    #[arg(long)]
    pub variant: Option<usize>,
    #[arg(long)]
    pub variants_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EmitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub variants_config: Option<PathBuf>,
    /// Inline microkernel bodies instead of calling them.
    #[arg(long)]
    pub inline_kernels: bool,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Parses a nest, named after its file stem; diagnostics carry `file:line:col`.
pub fn load_nest(path: &Path) -> Result<LoopNest, CliError> {
    let src = read(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("nest");
    parse_named(&src, name).map_err(|e| CliError::Parse(format!("{}:{e}", path.display())))
}

pub fn load_machine(path: Option<&Path>) -> Result<MachineModel, CliError> {
    match path {
        None => Ok(MachineModel::default()),
        Some(p) => MachineModel::from_toml(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
    }
}

pub fn load_variant_config(path: Option<&Path>) -> Result<VariantConfig, CliError> {
    match path {
        None => Ok(VariantConfig::default()),
        Some(p) => VariantConfig::from_toml(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
    }
}

fn binding(text: &str) -> Result<ParamBinding, CliError> {
    ParamBinding::parse(text).map_err(|e| CliError::Usage(format!("--bind: {e}")))
}

/// Writes every output file under `dir`, or prints the reports when `dir`
/// is absent.
pub fn write_outputs(out: &Outputs, dir: Option<&Path>) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Usage(format!("cannot write {}: {e}", p.display()));
    match dir {
        Some(dir) => {
            for (rel, bytes) in &out.files {
                let path = dir.join(rel);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
                }
                fs::write(&path, bytes).map_err(|e| io(&path, e))?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            // top-level reports only; per-variant files need --out
            let top = |p: &Path| p.parent().is_some_and(|d| d.as_os_str().is_empty());
            let report = |p: &Path| p.extension().is_some_and(|e| e == "json" || e == "pdl");
            for (rel, bytes) in out.files.iter().filter(|(p, _)| top(p) && report(p)) {
                let _ = writeln!(stdout, "== {}", rel.display());
                let _ = stdout.write_all(bytes);
            }
        }
    }
    Ok(())
}

pub fn execute(cmd: Command) -> Result<(Outputs, Option<PathBuf>), CliError> {
    match cmd {
        Command::Rank(a) => {
            let nest = load_nest(&a.common.input)?;
            let model = match &a.model {
                Some(p) => Some(RankerModel::from_json(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?),
                None => None,
            };
            let cfg = PipelineConfig {
                machine: load_machine(a.common.machine.as_deref())?,
                binding: binding(&a.common.bind)?,
                variants: load_variant_config(a.variants_config.as_deref())?,
                method: a.method,
                model,
                top_k: a.top_k,
                seed: a.seed,
            };
            Ok((pipeline::rank(&nest, &cfg)?, a.common.out))
        }
        Command::Analyze(a) => {
            let nest = load_nest(&a.common.input)?;
            let m = load_machine(a.common.machine.as_deref())?;
            Ok((pipeline::analyze(&nest, &binding(&a.common.bind)?, &m)?, a.common.out))
        }
        Command::Fuse(a) => {
            let nest = load_nest(&a.common.input)?;
            Ok((pipeline::fuse(&nest, &binding(&a.common.bind)?, a.emit_c)?, a.common.out))
        }
        Command::Train(a) => {
            let m = load_machine(a.machine.as_deref())?;
            let source = match &a.dataset {
                Some(p) => {
                    let f = fs::File::open(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
                    TrainSource::Dataset(read_dataset(f).map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?)
                }
                None => TrainSource::Synthetic(a.pairs),
            };
            let cfg = TrainConfig { seed: a.seed, epochs: a.epochs, ..TrainConfig::default() };
            Ok((pipeline::train(source, &m, &cfg)?, a.out))
        }
        Command::Simulate(a) => {
            let nest = load_nest(&a.common.input)?;
            let m = load_machine(a.common.machine.as_deref())?;
            let b = binding(&a.common.bind)?;
            let variant = match a.variant {
                Some(id) => {
                    let vs = pipeline::variants_of(&nest, &load_variant_config(a.variants_config.as_deref())?, &b)?;
                    let n = vs.len();
                    Some(vs.into_iter().nth(id).ok_or_else(|| CliError::Usage(format!("--variant {id}: only {n} variants")))?)
                }
                None => None,
            };
            Ok((pipeline::simulate_one(&nest, variant.as_ref(), &b, &m, a.seed)?, a.common.out))
        }
        Command::Emit(a) => {
            let nest = load_nest(&a.common.input)?;
            let cfg = load_variant_config(a.variants_config.as_deref())?;
            let out = pipeline::emit(&nest, &cfg, &binding(&a.common.bind)?, a.inline_kernels)?;
            Ok((out, a.common.out))
        }
    }
}

/// Runs the command line `args` (program name first) and returns the exit
/// code: 0 success, 1 usage, 2 parse error, 3 analysis error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = execute(cli.command).and_then(|(out, dir)| {
        write_outputs(&out, dir.as_deref())?;
        Ok(out)
    });
    match result {
        Ok(out) => {
            print!("{}", out.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests;
