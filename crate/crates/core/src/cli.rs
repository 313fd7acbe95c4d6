//! `tenergy` command-line front end.
//!
//! Each subcommand consumes and produces the file formats in [`crate::io`],
//! so footprints can be reused between stages. Human-readable output goes
//! to stderr; artifacts go to `--out` or, with `--stdout`, to stdout.
//!
//! Exit codes: 0 success, 1 input or parse error, 2 structural or
//! semantic error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use thiserror::Error;

use crate::accountant::{
    account_devices, aggregate, ensure_flattenable, gen_footprint_naive_by_device, split_passes,
    AccountError, AccountingDiagnostics, AccountingOptions, Footprint, SessionWindow,
};
use crate::footprint::{
    compute_stpf, to_edd, top_k_runs, FootprintError, Summarizer, DEFAULT_LAYER_PATTERN,
};
use crate::io::{self, fmt_real, IoError, ReadOptions};
use crate::model::{DeviceId, DevicePowerTrace, Duration, EventTrace, ModelError};
use crate::similarity::{self, ComparisonResult, SimilarityError};
use crate::synth::{self, SynthError, SynthSpec};

/// Environment variable holding the log filter (`info`, `debug`, ...).
pub const LOG_ENV: &str = "TENERGY_LOG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Structural(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Structural(_) => 2,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Unsupported { .. } => CliError::Structural(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<AccountError> for CliError {
    fn from(e: AccountError) -> Self {
        CliError::Structural(e.to_string())
    }
}

impl From<FootprintError> for CliError {
    fn from(e: FootprintError) -> Self {
        match e {
            FootprintError::BadPattern { .. } => CliError::Input(e.to_string()),
            _ => CliError::Structural(e.to_string()),
        }
    }
}

impl From<SimilarityError> for CliError {
    fn from(e: SimilarityError) -> Self {
        CliError::Structural(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "tenergy", version, about = "Tensor-aware energy accounting for DL traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attribute device energy to tensors (events + power -> tef.json).
    Account(AccountArgs),
    /// Collapse self-similar layers into `transformer` keys.
    Summarize(SummarizeArgs),
    /// Build an energy distribution diagram from a footprint.
    Edd(EddArgs),
    /// Compare two footprints, or every footprint in a directory.
    Compare(CompareArgs),
    /// Sampling-precision curves (asss / assw).
    Precision(PrecisionArgs),
    /// Generate a seeded synthetic trace pair and its expected footprint.
    Synth(SynthArgs),
    /// Summarized power footprint (watts per key).
    Stpf(StpfArgs),
    /// Highest-valued keys across one or more footprints.
    Top(TopArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Write the artifact to stdout instead of a file.
    #[arg(long, conflicts_with = "out")]
    pub stdout: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub power: PathBuf,
    /// Tick length in µs; trace timestamps count ticks.
    #[arg(long, default_value_t = 1)]
    pub tick_us: u64,
    /// Skip malformed records instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// First tick of the session window (inclusive).
    #[arg(long, requires = "window_end")]
    pub window_start: Option<u64>,
    /// Last tick of the session window (inclusive).
    #[arg(long, requires = "window_start")]
    pub window_end: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FootprintFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EddFormat {
    Dot,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Pcc,
    Med,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionMode {
    Asss,
    Assw,
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    #[command(flatten)]
    pub trace: TraceArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_enum, default_value_t = FootprintFormat::Json)]
    pub format: FootprintFormat,
    /// Use the flattening reference accountant.
    #[arg(long)]
    pub naive: bool,
    /// Largest flattened tick count accepted by --naive.
    #[arg(long, default_value_t = 10_000_000)]
    pub naive_limit: u64,
    /// Also write the forward-pass footprint here.
    #[arg(long)]
    pub forward_out: Option<PathBuf>,
    /// Also write the backward-pass footprint here.
    #[arg(long)]
    pub backward_out: Option<PathBuf>,
    /// First path segment marking backward-pass tensors.
    #[arg(long, default_value = "gradients")]
    pub backward_prefix: String,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub tef: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Segment pattern collapsed to `transformer` (whole-segment match).
    #[arg(long, default_value = DEFAULT_LAYER_PATTERN)]
    pub pattern: String,
    #[arg(long, value_enum, default_value_t = FootprintFormat::Json)]
    pub format: FootprintFormat,
}

#[derive(Debug, Args)]
pub struct EddArgs {
    #[arg(long)]
    pub tef: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_enum, default_value_t = EddFormat::Dot)]
    pub format: EddFormat,
    /// Dataflow edges (jsonl of {"parent","from","to"}).
    #[arg(long)]
    pub topology: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Footprints to compare (exactly two unless --matrix is given).
    pub files: Vec<PathBuf>,
    /// Compare every *.json footprint in this directory.
    #[arg(long, conflicts_with = "files")]
    pub matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::Pcc)]
    pub metric: MetricArg,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PrecisionArgs {
    #[arg(long, value_enum)]
    pub mode: PrecisionMode,
    /// Event traces (asss: one; assw: one per run, paired with --power).
    #[arg(long)]
    pub events: Vec<PathBuf>,
    #[arg(long)]
    pub power: Vec<PathBuf>,
    /// Summarized footprints of individual runs (assw).
    #[arg(long, num_args = 1..)]
    pub stefs: Vec<PathBuf>,
    /// Baseline footprint for assw; defaults to the mean of all runs.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Sampling period of the recorded power trace in µs (asss).
    #[arg(long)]
    pub base_period: Option<u64>,
    /// Comma-separated sampling periods in µs (asss).
    #[arg(long, value_delimiter = ',')]
    pub periods: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub tick_us: u64,
    #[arg(long, default_value = DEFAULT_LAYER_PATTERN)]
    pub pattern: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON spec file.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory for events.jsonl, power.csv and expected_tef.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StpfArgs {
    #[command(flatten)]
    pub trace: TraceArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value = DEFAULT_LAYER_PATTERN)]
    pub pattern: String,
}

#[derive(Debug, Args)]
pub struct TopArgs {
    /// One footprint per run.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Account(a) => cmd_account(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Edd(a) => cmd_edd(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Precision(a) => cmd_precision(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Stpf(a) => cmd_stpf(a),
        Command::Top(a) => cmd_top(a),
    }
}

fn emit(output: &OutputArgs, text: &str) -> Result<(), CliError> {
    if output.stdout {
        std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Input(format!("stdout: {e}")))?;
        return Ok(());
    }
    let path = output
        .out
        .as_ref()
        .ok_or_else(|| CliError::Input("either --out or --stdout is required".into()))?;
    io::write_file(path, text)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn tick_len(us: u64) -> Result<Duration, CliError> {
    Duration::from_micros(us).map_err(|_| CliError::Input("--tick-us must be at least 1".into()))
}

fn options(trace: &TraceArgs) -> Result<AccountingOptions, CliError> {
    let window = match (trace.window_start, trace.window_end) {
        (Some(s), Some(e)) => {
            Some(SessionWindow::new(s, e).map_err(|e| CliError::Input(e.to_string()))?)
        }
        _ => None,
    };
    Ok(AccountingOptions {
        tick_len: tick_len(trace.tick_us)?,
        window,
    })
}

fn load_traces(trace: &TraceArgs) -> Result<(EventTrace, DevicePowerTrace), CliError> {
    let read = ReadOptions {
        lenient: trace.lenient,
    };
    let events = io::read_events(&trace.events, read)?;
    let power = io::read_power(&trace.power, read)?;
    for (path, skipped) in [(&trace.events, events.skipped), (&trace.power, power.skipped)] {
        if skipped > 0 {
            eprintln!("skipped {skipped} malformed record(s) in {}", path.display());
        }
    }
    Ok((events.value, power.value))
}

fn footprint_text(f: &Footprint, format: FootprintFormat) -> String {
    match format {
        FootprintFormat::Json => io::footprint_json(f),
        FootprintFormat::Csv => io::footprint_csv(f),
    }
}

fn report_diagnostics(totals: &BTreeMap<DeviceId, f64>, diag: &AccountingDiagnostics) {
    let mut all = 0.0;
    for (device, joules) in totals {
        eprintln!("{device}: {} J", fmt_real(*joules));
        all += joules;
    }
    eprintln!("total: {} J", fmt_real(all));
    eprintln!(
        "pre_sample_ticks={} uncovered_ticks={} clipped_events={}",
        diag.pre_sample_ticks, diag.uncovered_ticks, diag.clipped_events
    );
    for device in &diag.uncovered_devices {
        warn!("device {device} has events but no power trace; its ticks were not attributed");
        eprintln!("warning: no power trace for {device}");
    }
}

fn cmd_account(args: AccountArgs) -> Result<(), CliError> {
    let opts = options(&args.trace)?;
    let (trace, power) = load_traces(&args.trace)?;

    let (per_device, diag): (BTreeMap<DeviceId, Footprint>, _) = if args.naive {
        ensure_flattenable(&trace, args.naive_limit)?;
        let (ticks, diag) = gen_footprint_naive_by_device(&trace, &power, opts)?;
        (
            ticks.iter().map(|(d, t)| (*d, aggregate(t))).collect(),
            diag,
        )
    } else {
        let (accounts, diag) = account_devices(&trace, &power, opts)?;
        (
            accounts.into_iter().map(|(d, a)| (d, a.energy)).collect(),
            diag,
        )
    };
    let mut tef = Footprint::new();
    for f in per_device.values() {
        tef.merge(f);
    }
    let totals: BTreeMap<DeviceId, f64> =
        per_device.iter().map(|(d, f)| (*d, f.total())).collect();

    emit(&args.output, &footprint_text(&tef, args.format))?;
    if args.forward_out.is_some() || args.backward_out.is_some() {
        let (forward, backward) = split_passes(&tef, &args.backward_prefix);
        if let Some(p) = &args.forward_out {
            io::write_file(p, &footprint_text(&forward, args.format))?;
        }
        if let Some(p) = &args.backward_out {
            io::write_file(p, &footprint_text(&backward, args.format))?;
        }
        eprintln!(
            "forward: {} J, backward: {} J",
            fmt_real(forward.total()),
            fmt_real(backward.total())
        );
    }
    report_diagnostics(&totals, &diag);
    Ok(())
}

fn cmd_summarize(args: SummarizeArgs) -> Result<(), CliError> {
    let summarizer = Summarizer::new(&args.pattern)?;
    let tef = io::read_footprint(&args.tef)?;
    let stef = summarizer.summarize(&tef);
    eprintln!("{} keys -> {} keys", tef.len(), stef.len());
    emit(&args.output, &footprint_text(&stef, args.format))
}

fn cmd_edd(args: EddArgs) -> Result<(), CliError> {
    let tef = io::read_footprint(&args.tef)?;
    let topology = args.topology.as_deref().map(io::read_topology).transpose()?;
    let edd = to_edd(&tef, topology.as_deref())?;
    if edd.unresolved_edges > 0 {
        eprintln!(
            "warning: {} topology edge(s) did not match the diagram",
            edd.unresolved_edges
        );
    }
    let text = match args.format {
        EddFormat::Dot => io::edd_dot(&edd),
        EddFormat::Json => io::edd_json(&edd),
    };
    emit(&args.output, &text)
}

fn describe(r: &ComparisonResult) -> String {
    match r.value {
        Some(v) => format!("{} = {} ({} keys)", r.metric.as_str(), fmt_real(v), r.n_keys),
        None => format!(
            "{} undefined: zero variance ({} keys)",
            r.metric.as_str(),
            r.n_keys
        ),
    }
}

fn comparison_json(r: &ComparisonResult) -> String {
    format!(
        "{{\"metric\": \"{}\", \"value\": {}, \"n_keys\": {}, \"degenerate\": {}}}\n",
        r.metric.as_str(),
        r.value.map(fmt_real).unwrap_or_else(|| "null".into()),
        r.n_keys,
        r.degenerate()
    )
}

fn footprints_in(dir: &Path) -> Result<Vec<(String, Footprint)>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((label, io::read_footprint(&p)?))
        })
        .collect()
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    if let Some(dir) = &args.matrix {
        let footprints = footprints_in(dir)?;
        let m = match args.metric {
            MetricArg::Pcc => similarity::stability_matrix(&footprints)?,
            MetricArg::Med => similarity::med_matrix(&footprints)?,
        };
        eprintln!("{}x{} {} matrix", m.labels.len(), m.labels.len(), m.metric.as_str());
        return emit(&args.output, &io::matrix_csv(&m));
    }
    let [a, b] = args.files.as_slice() else {
        return Err(CliError::Input(format!(
            "compare takes exactly two footprints or --matrix, got {} file(s)",
            args.files.len()
        )));
    };
    let (fa, fb) = (io::read_footprint(a)?, io::read_footprint(b)?);
    let r = match args.metric {
        MetricArg::Pcc => similarity::pcc(&fa, &fb)?,
        MetricArg::Med => similarity::med(&fa, &fb),
    };
    eprintln!("{}", describe(&r));
    if args.output.out.is_some() || args.output.stdout {
        emit(&args.output, &comparison_json(&r))?;
    }
    Ok(())
}

fn curve_csv<T: std::fmt::Display>(header: &str, points: &[(T, ComparisonResult)]) -> String {
    let mut out = format!("{header},pcc\n");
    for (x, r) in points {
        out.push_str(&format!(
            "{x},{}\n",
            r.value.map(fmt_real).unwrap_or_default()
        ));
    }
    out
}

fn cmd_precision(args: PrecisionArgs) -> Result<(), CliError> {
    let summarizer = Summarizer::new(&args.pattern)?;
    let opts = AccountingOptions::with_tick_len(tick_len(args.tick_us)?);
    let read = ReadOptions::default();
    match args.mode {
        PrecisionMode::Asss => {
            let (Some(events), Some(power)) = (args.events.first(), args.power.first()) else {
                return Err(CliError::Input("asss needs --events and --power".into()));
            };
            if args.events.len() != 1 || args.power.len() != 1 {
                return Err(CliError::Input("asss takes one --events and one --power".into()));
            }
            let base = args
                .base_period
                .ok_or_else(|| CliError::Input("asss needs --base-period".into()))?;
            let base = Duration::from_micros(base)?;
            let periods = args
                .periods
                .iter()
                .map(|&p| Duration::from_micros(p))
                .collect::<Result<Vec<_>, _>>()?;
            let trace = io::read_events(events, read)?.value;
            let power = io::read_power(power, read)?.value;
            let curve = similarity::asss(&trace, &power, &periods, base, opts, &summarizer)?;
            for (p, r) in &curve {
                eprintln!("period {p} µs: {}", describe(r));
            }
            emit(&args.output, &curve_csv("period_us", &curve))
        }
        PrecisionMode::Assw => {
            let mut stefs = Vec::new();
            if args.events.len() != args.power.len() {
                return Err(CliError::Input(format!(
                    "assw pairs --events with --power; got {} and {}",
                    args.events.len(),
                    args.power.len()
                )));
            }
            for (events, power) in args.events.iter().zip(&args.power) {
                let trace = io::read_events(events, read)?.value;
                let power = io::read_power(power, read)?.value;
                let (accounts, _) = account_devices(&trace, &power, opts)?;
                let mut tef = Footprint::new();
                for a in accounts.values() {
                    tef.merge(&a.energy);
                }
                stefs.push(summarizer.summarize(&tef));
            }
            for path in &args.stefs {
                stefs.push(io::read_footprint(path)?);
            }
            let base = match &args.base {
                Some(p) => io::read_footprint(p)?,
                None => similarity::mean_footprint(&stefs),
            };
            let curve = similarity::assw(&stefs, &base)?;
            for (n, r) in &curve {
                eprintln!("{n} run(s): {}", describe(r));
            }
            emit(&args.output, &curve_csv("runs", &curve))
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.spec.display())))?;
    let spec = SynthSpec::from_json(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.spec.display())))?;
    let out = synth::generate(&spec)?;
    io::write_file(&args.out.join("events.jsonl"), &io::write_events(&out.events))?;
    io::write_file(&args.out.join("power.csv"), &io::write_power(&out.power))?;
    io::write_file(
        &args.out.join("expected_tef.json"),
        &io::footprint_json(&out.expected),
    )?;
    eprintln!(
        "{} events, {} power samples, {} J expected",
        out.events.len(),
        out.power.sample_count(),
        fmt_real(out.expected.total())
    );
    Ok(())
}

fn cmd_stpf(args: StpfArgs) -> Result<(), CliError> {
    let summarizer = Summarizer::new(&args.pattern)?;
    let opts = options(&args.trace)?;
    let (trace, power) = load_traces(&args.trace)?;
    let stpf = compute_stpf(&trace, &power, opts, &summarizer)?;
    emit(&args.output, &io::stpf_json(&stpf))
}

fn cmd_top(args: TopArgs) -> Result<(), CliError> {
    let runs = args
        .inputs
        .iter()
        .map(|p| io::read_footprint(p))
        .collect::<Result<Vec<_>, _>>()?;
    let top = top_k_runs(&runs, args.k)?;
    let mut out = String::from("name,value,dispersion\n");
    for e in &top {
        out.push_str(&format!(
            "{},{},{}\n",
            e.key,
            fmt_real(e.value),
            fmt_real(e.dispersion)
        ));
    }
    emit(&args.output, &out)
}
