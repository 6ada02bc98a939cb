//! Command-line front end: coefficient dumps, logit-scale tables, entropy
//! profiling runs, and side-by-side method comparisons.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 validation error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use ropelab::config::{ConfigError, RunConfig};
use ropelab::model::init_weights;
use ropelab::profiler::{self, DocumentSet, EntropyReport, ProfilerError};
use ropelab::rope::{self, RopeConfig, RopeMethod};
use ropelab::scaling::ScalingPolicy;

#[derive(Parser)]
#[command(name = "ropelab", version, about = "Position-encoding laboratory")]
struct Cli {
    /// Run configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Override the model seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Emit per-document entropy dumps alongside the report.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the trigonometric coefficient table for the configured method.
    DumpCoeffs {
        /// Positions to sample, comma-separated. Defaults to 0 plus the
        /// profiler position grid.
        #[arg(long, value_delimiter = ',')]
        positions: Option<Vec<usize>>,
    },
    /// Run the entropy profiling experiment and write the report CSV.
    Profile {
        /// Token-id document file, one space-separated document per line.
        #[arg(long)]
        documents: Option<PathBuf>,
        /// Maximum number of documents to load.
        #[arg(long)]
        limit: Option<usize>,
        /// Zero out every query projection, forcing uniform attention.
        #[arg(long)]
        zero_q: bool,
    },
    /// Print the logit-scale multiplier grid t(layer, position).
    ScaleTable {
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        positions: Option<Vec<usize>>,
    },
    /// Profile several methods on identical inputs and concatenate reports.
    Compare {
        /// Comma-separated method labels, e.g. rope,pi,yarn,abf.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long)]
        documents: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        zero_q: bool,
    },
}

enum CliError {
    Usage(String),
    Io(String),
    Validation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Validation(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ProfilerError> for CliError {
    fn from(e: ProfilerError) -> Self {
        match e {
            ProfilerError::Io(_) | ProfilerError::NoValidDocuments(_) => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
    }
    let output = cli.output.clone().or_else(|| cfg.output.clone());
    let verbose = cli.verbose || cfg.verbose;

    match cli.command {
        Command::DumpCoeffs { positions } => {
            let positions = positions.unwrap_or_else(|| {
                let mut p = vec![0];
                p.extend(&cfg.positions);
                p
            });
            with_writer(output.as_deref(), |out| {
                rope::write_coefficient_dump(&cfg.rope, &positions, out).map_err(CliError::from)
            })
        }
        Command::Profile {
            documents,
            limit,
            zero_q,
        } => {
            let docs = load_docs(&cfg, documents, limit)?;
            let report = run_profile(&cfg, &docs, zero_q, verbose, &cfg.rope.method.to_string())?;
            emit_reports(&[report], output.as_deref(), verbose)
        }
        Command::ScaleTable { layers, positions } => {
            let layers = layers.unwrap_or_else(|| (0..cfg.model.n_layers).collect());
            let positions = positions.unwrap_or_else(|| cfg.positions.clone());
            with_writer(output.as_deref(), |out| {
                write_scale_table(&cfg.scaling, &layers, &positions, out).map_err(CliError::from)
            })
        }
        Command::Compare {
            methods,
            documents,
            limit,
            zero_q,
        } => {
            if methods.is_empty() {
                return Err(CliError::Usage(
                    "compare requires --methods with at least one entry".into(),
                ));
            }
            let docs = load_docs(&cfg, documents, limit)?;
            let mut configs = Vec::new();
            for name in &methods {
                let method = RopeMethod::parse(name)
                    .ok_or_else(|| CliError::Usage(format!("unknown method {name:?}")))?;
                let mut rope_config = cfg.rope.clone();
                rope_config.method = method;
                let policy = method_policy(method, &rope_config, &cfg.scaling);
                configs.push((method.to_string(), rope_config, policy));
            }
            let spec = &cfg.model;
            let weights = make_weights(&cfg, zero_q)?;
            let reports = profiler::compare_methods(
                spec,
                &weights,
                &configs,
                &docs,
                &cfg.positions,
                verbose,
            )?;
            emit_reports(&reports, output.as_deref(), verbose)
        }
    }
}

/// Canonical policy for a method in a comparison run: YaRN and entropy-aware
/// ABF carry their own logit scale; everything else uses the configured one.
fn method_policy(
    method: RopeMethod,
    rope_config: &RopeConfig<f64>,
    configured: &ScalingPolicy<f64>,
) -> ScalingPolicy<f64> {
    match method {
        RopeMethod::Yarn => ScalingPolicy::Yarn {
            s: rope_config.scale(),
        },
        RopeMethod::EntropyAwareAbf => ScalingPolicy::entropy_aware(rope_config.c),
        _ => configured.clone(),
    }
}

fn load_docs(
    cfg: &RunConfig,
    flag_path: Option<PathBuf>,
    flag_limit: Option<usize>,
) -> Result<DocumentSet, CliError> {
    let path = flag_path
        .or_else(|| cfg.documents.clone())
        .ok_or_else(|| {
            CliError::Usage("no document file: pass --documents or set profiler.documents".into())
        })?;
    let limit = flag_limit.unwrap_or(cfg.limit);
    let docs = load_with_path_context(&path, limit)?;
    for warning in &docs.warnings {
        eprintln!("warning: {}: {}", path.display(), warning);
    }
    Ok(docs)
}

fn load_with_path_context(path: &Path, limit: usize) -> Result<DocumentSet, CliError> {
    profiler::load_documents(path, limit).map_err(|e| match e {
        ProfilerError::Io(io_err) => {
            CliError::Io(format!("cannot read {}: {io_err}", path.display()))
        }
        other => other.into(),
    })
}

fn make_weights(cfg: &RunConfig, zero_q: bool) -> Result<ropelab::ModelWeights64, CliError> {
    let mut weights =
        init_weights::<f64>(&cfg.model).map_err(|e| CliError::Validation(e.to_string()))?;
    if zero_q {
        weights.zero_query_projections();
    }
    Ok(weights)
}

fn run_profile(
    cfg: &RunConfig,
    docs: &DocumentSet,
    zero_q: bool,
    verbose: bool,
    label: &str,
) -> Result<EntropyReport<f64>, CliError> {
    let weights = make_weights(cfg, zero_q)?;
    Ok(profiler::profile(
        &cfg.model,
        &weights,
        &cfg.rope,
        &cfg.scaling,
        docs,
        &cfg.positions,
        label,
        verbose,
    )?)
}

fn emit_reports(
    reports: &[EntropyReport<f64>],
    output: Option<&Path>,
    verbose: bool,
) -> Result<(), CliError> {
    match output {
        Some(path) => {
            let mut out = BufWriter::new(File::create(path)?);
            write_concatenated(reports, &mut out)?;
            out.flush()?;
            if verbose {
                let doc_path = verbose_path(path);
                let mut out = BufWriter::new(File::create(&doc_path)?);
                writeln!(out, "label,doc,layer,position,entropy")?;
                for report in reports {
                    if let Some(rows) = &report.per_document {
                        for row in rows {
                            writeln!(
                                out,
                                "{},{},{},{},{}",
                                report.label, row.doc, row.layer, row.position, row.entropy
                            )?;
                        }
                    }
                }
                out.flush()?;
            }
            for report in reports {
                print_summary(report, &mut io::stdout().lock())?;
            }
        }
        None => {
            let mut out = io::stdout().lock();
            write_concatenated(reports, &mut out)?;
            if verbose {
                eprintln!("note: per-document dumps require --output");
            }
            for report in reports {
                print_summary(report, &mut io::stderr().lock())?;
            }
        }
    }
    Ok(())
}

fn verbose_path(report_path: &Path) -> PathBuf {
    let mut name = report_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    name.push_str("_docs.csv");
    report_path.with_file_name(name)
}

fn write_concatenated<W: Write>(reports: &[EntropyReport<f64>], out: &mut W) -> io::Result<()> {
    writeln!(
        out,
        "label,layer,position,mean_entropy,std_entropy,uniform_baseline,n_docs"
    )?;
    for report in reports {
        for row in &report.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                report.label,
                row.layer,
                row.position,
                row.mean_entropy,
                row.std_entropy,
                row.uniform_baseline,
                row.n_docs
            )?;
        }
    }
    Ok(())
}

fn print_summary<W: Write>(report: &EntropyReport<f64>, out: &mut W) -> io::Result<()> {
    let positions: Vec<usize> = {
        let mut p: Vec<usize> = report.rows.iter().map(|r| r.position).collect();
        p.sort_unstable();
        p.dedup();
        p
    };
    let (Some(&first), Some(&last)) = (positions.first(), positions.last()) else {
        return writeln!(out, "[{}] empty report", report.label);
    };
    writeln!(out, "[{}] entropy summary", report.label)?;
    for &position in &[first, last] {
        let baseline = ((position + 1) as f64).ln();
        write!(out, "  position {position:>6} (uniform {baseline:.6}):")?;
        for row in report.rows.iter().filter(|r| r.position == position) {
            write!(out, " L{}={:.6}", row.layer, row.mean_entropy)?;
        }
        writeln!(out)?;
        if first == last {
            break;
        }
    }
    Ok(())
}

fn write_scale_table<W: Write + ?Sized>(
    policy: &ScalingPolicy<f64>,
    layers: &[usize],
    positions: &[usize],
    out: &mut W,
) -> io::Result<()> {
    writeln!(out, "layer,position,t")?;
    for &layer in layers {
        for &position in positions {
            let t: f64 = policy.logit_scale(layer, position);
            writeln!(out, "{layer},{position},{t}")?;
        }
    }
    Ok(())
}

fn with_writer<F>(output: Option<&Path>, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    match output {
        Some(path) => {
            let mut out = BufWriter::new(File::create(path)?);
            body(&mut out)?;
            out.flush()?;
            Ok(())
        }
        None => body(&mut io::stdout().lock()),
    }
}
