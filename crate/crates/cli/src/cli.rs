//! The `fier` command line.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for data errors.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fier_core::harness::{generate_trial, token_position_map, Generator, Instance, SweepConfig, WorkloadSpec};
use fier_core::quant1bit::counted_load_ratio;
use fier_core::{dequantize, load_ratio_fier, quantize_with, GroupSpec, LoadRatio, ParamPrecision, PolicyKind};

use crate::dump::{CacheDump, Dtype};
use crate::policy::parse_policy;
use crate::report;
use crate::run::{parallel_sweep, thread_count, write_atomic};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// An error caused by the arguments rather than by input data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "fier", version, about = "Token-level KV-cache retrieval with 1-bit quantized keys")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cache dump.
    Gen(GenArgs),
    /// Build a packed 1-bit key index from a cache dump.
    Quantize(QuantizeArgs),
    /// Run a policy × budget × trial recall sweep.
    Bench(BenchArgs),
    /// Emit per-policy maps of selected token positions.
    Posmap(PosmapArgs),
    /// Validate a cache dump or packed index and print its header.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    #[value(name = "gaussian")]
    Gaussian,
    #[value(name = "planted_spikes")]
    PlantedSpikes,
    #[value(name = "outlier_channels")]
    OutlierChannels,
}

#[derive(Debug, Clone, Args)]
pub struct WorkloadArgs {
    /// Synthetic generator.
    #[arg(long, value_enum, default_value = "gaussian")]
    pub generator: GeneratorArg,
    /// Cached tokens.
    #[arg(long = "len", default_value_t = 4096)]
    pub len: usize,
    /// Head dimension.
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    /// Decode-step queries per instance.
    #[arg(long, default_value_t = 1)]
    pub queries: usize,
    #[arg(long, default_value_t = 64)]
    pub spike_count: usize,
    #[arg(long, default_value_t = 8.0)]
    pub spike_gain: f64,
    /// Leading positions never used for spikes.
    #[arg(long, default_value_t = 0)]
    pub avoid_head: usize,
    /// Trailing positions never used for spikes.
    #[arg(long, default_value_t = 0)]
    pub avoid_tail: usize,
    #[arg(long, default_value_t = 4)]
    pub outlier_count: usize,
    #[arg(long, default_value_t = 8.0)]
    pub outlier_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl WorkloadArgs {
    pub fn spec(&self) -> WorkloadSpec {
        let generator = match self.generator {
            GeneratorArg::Gaussian => Generator::Gaussian,
            GeneratorArg::PlantedSpikes => Generator::PlantedSpikes {
                count: self.spike_count,
                gain: self.spike_gain,
                avoid_head: self.avoid_head,
                avoid_tail: self.avoid_tail,
            },
            GeneratorArg::OutlierChannels => Generator::OutlierChannels { count: self.outlier_count, scale: self.outlier_scale },
        };
        WorkloadSpec::new(self.len, self.dim, generator, self.seed).with_queries(self.queries)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Replay a cache dump instead of generating instances.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[command(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F16,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    /// Trial whose instance is written.
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
    #[arg(long, value_enum, default_value = "f16")]
    pub dtype: DtypeArg,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Cache dump to index.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Tokens per quantization group.
    #[arg(long = "group-size", short = 'g', default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub group_size: u64,
    /// Packed index to write.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Policy, repeatable: `fier:g=32`, `quest:L=16[,variant=max]`, `quest_quant:p=16,g=32`,
    /// `streaming_llm:sink=4`, `h2o:recent=0`, `oracle`, `full`.
    #[arg(long = "policy", required = true, value_parser = parse_policy)]
    pub policies: Vec<PolicyKind>,
    /// Comma-separated cache budgets.
    #[arg(long, required = true, value_delimiter = ',', value_parser = clap::value_parser!(u64).range(1..))]
    pub budgets: Vec<u64>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: ReportFormat,
    /// Report path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Disable the 1/sqrt(d) logit scaling of attention outputs.
    #[arg(long)]
    pub unscaled: bool,
}

#[derive(Debug, Args)]
pub struct PosmapArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Policy, repeatable; same syntax as `bench`.
    #[arg(long = "policy", visible_alias = "policies", required = true, value_parser = parse_policy)]
    pub policies: Vec<PolicyKind>,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub budget: u64,
    /// Query index within the instance.
    #[arg(long, default_value_t = 0)]
    pub query: usize,
    /// Map CSV path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub unscaled: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_DATA
            }
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Quantize(a) => cmd_quantize(a, &mut std::io::stdout().lock()),
        Command::Bench(a) => cmd_bench(a),
        Command::Posmap(a) => cmd_posmap(a),
        Command::Inspect(a) => cmd_inspect(a, &mut std::io::stdout().lock()),
    }
}

pub fn read_dump(path: &Path) -> Result<CacheDump> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    CacheDump::decode(&bytes).with_context(|| format!("{}", path.display()))
}

fn synthetic(spec: &WorkloadSpec, trial: u64) -> Result<Instance> {
    generate_trial(spec, trial).map_err(|e| usage(format!("workload: {e}")))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            Ok(stdout.flush()?)
        }
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let inst = synthetic(&a.workload.spec(), a.trial)?;
    let dtype = match a.dtype {
        DtypeArg::F16 => Dtype::F16,
        DtypeArg::F32 => Dtype::F32,
    };
    let bytes = CacheDump::from_instance(&inst, dtype)?.encode()?;
    write_atomic(&a.output, &bytes).with_context(|| format!("writing {}", a.output.display()))
}

pub fn format_ratio(r: &LoadRatio) -> String {
    let (n, d) = r.rational();
    format!("{n}/{d} = {}", r.value())
}

/// Quantizes the keys of a dump, writes the packed index and reports costs.
pub fn cmd_quantize(a: &QuantizeArgs, out: &mut impl Write) -> Result<()> {
    let dump = read_dump(&a.input)?;
    let keys = &dump.instance.keys;
    let g = a.group_size as usize;
    let pk = quantize_with(keys, GroupSpec::new(g)?, ParamPrecision::F16)?;
    let bytes = crate::packed::encode(&pk)?;
    let decoded = crate::packed::decode(&bytes)?;
    if decoded != pk {
        anyhow::bail!("packed index does not decode to the index it was written from");
    }
    write_atomic(&a.output, &bytes).with_context(|| format!("writing {}", a.output.display()))?;

    let counted = counted_load_ratio(&pk);
    let formula = load_ratio_fier(pk.len(), g)?;
    let max_err = dequantize(&pk)
        .as_slice()
        .iter()
        .zip(keys.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    writeln!(out, "tokens {} dim {} group {}", pk.len(), pk.dim(), g)?;
    writeln!(out, "index bytes {} (payload {}, keys {})", bytes.len(), pk.payload_bytes(), pk.len() * pk.dim() * 2)?;
    writeln!(out, "counted load ratio {}", format_ratio(&counted))?;
    let kind = if formula.from_formula { "formula" } else { "exact-count" };
    writeln!(out, "{kind} load ratio {}", format_ratio(&formula))?;
    writeln!(out, "ratios agree {}", if counted.rational() == formula.rational() { "yes" } else { "no" })?;
    if max_err == 0.0 {
        writeln!(out, "round trip lossless")?;
    } else {
        writeln!(out, "round trip max abs error {max_err}")?;
    }
    Ok(())
}

/// Either a replayed dump or the workload spec.
pub enum Source {
    Dump(Instance),
    Synthetic(WorkloadSpec),
}

impl Source {
    pub fn open(args: &SourceArgs) -> Result<Self> {
        match &args.dump {
            Some(p) => Ok(Source::Dump(read_dump(p)?.instance)),
            None => {
                let spec = args.workload.spec();
                synthetic(&spec, 0)?;
                Ok(Source::Synthetic(spec))
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Source::Dump(i) => i.len(),
            Source::Synthetic(s) => s.len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_budgets(budgets: &[usize], len: usize) -> Result<()> {
    match budgets.iter().find(|&&n| n > len) {
        Some(n) => Err(usage(format!("budget {n} exceeds the cache length {len}"))),
        None => Ok(()),
    }
}

pub fn bench_config(a: &BenchArgs) -> SweepConfig {
    let mut cfg = SweepConfig::new(a.policies.clone(), a.budgets.iter().map(|&n| n as usize).collect()).with_trials(a.trials as usize);
    cfg.scaled = !a.unscaled;
    cfg
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let source = Source::open(&a.source)?;
    let cfg = bench_config(a);
    check_budgets(&cfg.budgets, source.len())?;
    let threads = thread_count();
    let report = match &source {
        Source::Dump(inst) => parallel_sweep(inst, &cfg, threads)?,
        Source::Synthetic(spec) => parallel_sweep(spec, &cfg, threads)?,
    };
    let rows = report::rows(&report.rows);
    let bytes = match a.format {
        ReportFormat::Csv => report::to_csv(&rows)?,
        ReportFormat::Json => report::to_json(&rows)?,
    };
    emit(a.out.as_deref(), &bytes)
}

fn cmd_posmap(a: &PosmapArgs) -> Result<()> {
    let inst = match Source::open(&a.source)? {
        Source::Dump(inst) => inst,
        Source::Synthetic(spec) => synthetic(&spec, 0)?,
    };
    let budget = a.budget as usize;
    check_budgets(&[budget], inst.len())?;
    if a.query >= inst.queries.len() {
        return Err(usage(format!("query {} out of range; the instance has {}", a.query, inst.queries.len())));
    }
    let maps = token_position_map(&inst, a.query, &a.policies, budget, !a.unscaled)?;
    let bytes = report::position_maps_csv(&maps)?;
    emit(a.out.as_deref(), &bytes)?;
    if a.out.is_some() {
        report::write_summary(&mut std::io::stdout().lock(), &maps)?;
    } else {
        report::write_summary(&mut std::io::stderr().lock(), &maps)?;
    }
    Ok(())
}

pub fn cmd_inspect(a: &InspectArgs, out: &mut impl Write) -> Result<()> {
    let bytes = std::fs::read(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
    let ctx = || format!("{}", a.path.display());
    if bytes.starts_with(crate::packed::MAGIC) {
        let pk = crate::packed::decode(&bytes).with_context(ctx)?;
        writeln!(out, "packed index: l {} d {} g {}", pk.len(), pk.dim(), pk.group_size())?;
        writeln!(out, "load ratio {}", format_ratio(&crate::packed::file_load_ratio(&bytes, &pk)))?;
    } else {
        let dump = CacheDump::decode(&bytes).with_context(ctx)?;
        let dtype = match dump.dtype {
            Dtype::F16 => "f16",
            Dtype::F32 => "f32",
        };
        let inst = &dump.instance;
        writeln!(out, "cache dump: l {} d {} dtype {} queries {}", inst.len(), inst.dim(), dtype, inst.queries.len())?;
    }
    Ok(())
}
