//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (files, formats,
//! dimension chains), 3 numerical failure (factorization or solve).
//! `THANOS_THREADS` caps worker threads; 0 or unset picks automatically.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use thanos_core::PruneError;

use crate::generate::{generate_model, GenError, GenSpec};
use crate::manifest::{LoadedModel, ManifestError};
use crate::pipeline::{prune_model, Method, Pattern, PipelineError, RunConfig};
use crate::report::Report;
use crate::tensor::{load_tensor, TensorError};
use crate::verify::{verify_pruned_model, VerifyError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser)]
#[command(
    name = "thanos",
    about = "Calibration-aware weight pruning for toy multi-block models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prune every linear layer of a model, block by block.
    Prune(PruneArgs),
    /// Generate a random toy model plus calibration tensor.
    Gen(GenArgs),
    /// Re-verify a pruned model against the original by direct evaluation.
    Verify(VerifyArgs),
    /// Pretty-print a report (optionally as CSV).
    Report(ReportArgs),
}

#[derive(Args)]
struct PruneArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Calibration tensor (rank-3 .thns).
    #[arg(long)]
    calib: PathBuf,
    /// magnitude | wanda | sparsegpt | thanos
    #[arg(long)]
    method: String,
    /// Target sparsity ratio in [0,1). Defaults to n/m for n:m patterns.
    #[arg(long)]
    sparsity: Option<f64>,
    /// unstructured | structured | n:m (e.g. 2:4)
    #[arg(long, default_value = "unstructured")]
    pattern: String,
    /// Block size B; defaults to 128 (unstructured) or 512 (otherwise).
    #[arg(long)]
    blocksize: Option<usize>,
    /// Mask re-selection interval for sparsegpt; defaults to B.
    #[arg(long = "mask-blocksize")]
    mask_blocksize: Option<usize>,
    /// Fraction of outlier rows exempt from structured/n:m pruning.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Hessian damping as a fraction of the mean diagonal.
    #[arg(long, default_value_t = 0.01)]
    damp: f64,
    /// Seed echoed into the report (pruning itself is deterministic).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rows per batched-solve chunk.
    #[arg(long = "row-chunk", default_value_t = 256)]
    row_chunk: usize,
    /// Output directory for pruned tensors and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Report path; defaults to <out>/report.json.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    /// Layers per block.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Width of every (square) layer.
    #[arg(long, default_value_t = 64)]
    dims: usize,
    /// Calibration sample count.
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Original model manifest.
    #[arg(long)]
    model: PathBuf,
    /// Pruned model manifest.
    #[arg(long)]
    pruned: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Report to cross-check (optional).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Relative tolerance for loss comparison.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
    /// Emit a CSV flattening instead of the human-readable summary.
    #[arg(long, default_value_t = false)]
    csv: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

fn classify_prune_error(e: &PruneError) -> CliError {
    match e {
        PruneError::NotPositiveDefinite { .. }
        | PruneError::NotSymmetric { .. }
        | PruneError::SingularSystem { .. }
        | PruneError::HessianNotInvertible { .. }
        | PruneError::NonPositiveDiagonal { .. }
        | PruneError::NotFinite { .. } => CliError::Numerical(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

impl From<PruneError> for CliError {
    fn from(e: PruneError) -> Self {
        classify_prune_error(&e)
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Layer { source, .. } => match classify_prune_error(source) {
                CliError::Numerical(_) => CliError::Numerical(e.to_string()),
                _ => CliError::Data(e.to_string()),
            },
            PipelineError::Prune(source) => match classify_prune_error(source) {
                CliError::Numerical(_) => CliError::Numerical(e.to_string()),
                _ => CliError::Data(e.to_string()),
            },
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match &e {
            VerifyError::Prune(source) => classify_prune_error(source),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Entry point used by `main` and by tests; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    configure_threads();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Prune(args) => cmd_prune(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("THANOS_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                // a second call in the same process is fine; keep the pool
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn parse_method(text: &str) -> Result<Method, CliError> {
    match text {
        "magnitude" => Ok(Method::Magnitude),
        "wanda" => Ok(Method::Wanda),
        "sparsegpt" => Ok(Method::Sparsegpt),
        "thanos" => Ok(Method::Thanos),
        other => Err(CliError::Usage(format!(
            "unknown method {other:?}; expected magnitude, wanda, sparsegpt, or thanos"
        ))),
    }
}

fn resolve_config(args: &PruneArgs) -> Result<RunConfig, CliError> {
    let method = parse_method(&args.method)?;
    let pattern = Pattern::parse(&args.pattern).map_err(CliError::Usage)?;

    let sparsity = match (args.sparsity, pattern) {
        (Some(p), _) => p,
        (None, Pattern::Nm { n, m }) => n as f64 / m as f64,
        (None, _) => {
            return Err(CliError::Usage(
                "--sparsity is required unless the pattern is n:m".into(),
            ))
        }
    };
    if !(0.0..1.0).contains(&sparsity) {
        return Err(CliError::Usage(format!(
            "sparsity {sparsity} outside [0, 1)"
        )));
    }
    if !(0.0..1.0).contains(&args.alpha) {
        return Err(CliError::Usage(format!(
            "alpha {} outside [0, 1)",
            args.alpha
        )));
    }
    if args.damp < 0.0 {
        return Err(CliError::Usage(format!(
            "damp {} must be nonnegative",
            args.damp
        )));
    }

    match (method, pattern) {
        (Method::Magnitude | Method::Wanda, Pattern::Nm { .. } | Pattern::Structured) => {
            return Err(CliError::Usage(format!(
                "{} supports only the unstructured pattern",
                method.name()
            )));
        }
        (Method::Sparsegpt, Pattern::Structured) => {
            return Err(CliError::Usage(
                "structured pattern requires the thanos method".into(),
            ));
        }
        _ => {}
    }
    if args.alpha > 0.0 {
        let alpha_ok =
            method == Method::Thanos && matches!(pattern, Pattern::Nm { .. } | Pattern::Structured);
        if !alpha_ok {
            return Err(CliError::Usage(
                "--alpha only applies to thanos with an n:m or structured pattern".into(),
            ));
        }
    }

    let block_size = args.blocksize.unwrap_or(match pattern {
        Pattern::Unstructured => 128,
        _ => 512,
    });
    if block_size == 0 {
        return Err(CliError::Usage("blocksize must be >= 1".into()));
    }

    Ok(RunConfig {
        method,
        sparsity,
        pattern,
        block_size,
        mask_block: args.mask_blocksize.unwrap_or(0),
        alpha: args.alpha,
        lambda_rel: args.damp,
        seed: args.seed,
        row_chunk: args.row_chunk.max(1),
    })
}

fn cmd_prune(args: PruneArgs) -> Result<i32, CliError> {
    let cfg = resolve_config(&args)?;
    let model = LoadedModel::load(&args.model)?;
    let calib = load_tensor(&args.calib)?.calibration()?;
    let report = prune_model(&model, &calib, &cfg, &args.out)?;

    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| args.out.join("report.json"));
    report.save(&report_path)?;

    println!(
        "pruned {} layers with {}: sparsity {:.4}, loss {:.6e} -> report {}",
        report.layers.len(),
        cfg.method.name(),
        report.totals.global_sparsity,
        report.totals.loss_after,
        report_path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_gen(args: GenArgs) -> Result<i32, CliError> {
    let spec = GenSpec {
        blocks: args.blocks,
        layers_per_block: args.layers,
        dims: args.dims,
        samples: args.samples,
        seed: args.seed,
    };
    generate_model(&spec, &args.out)?;
    println!(
        "generated {} blocks x {} layers of {}x{} weights (+{} calibration samples) in {}",
        spec.blocks,
        spec.layers_per_block,
        spec.dims,
        spec.dims,
        spec.samples,
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_verify(args: VerifyArgs) -> Result<i32, CliError> {
    let calib = load_tensor(&args.calib)?.calibration()?;
    let report = match &args.report {
        Some(path) => Some(Report::load(path)?),
        None => None,
    };
    let summary =
        verify_pruned_model(&args.model, &args.pruned, &calib, report.as_ref(), args.tol)?;
    for line in &summary.lines {
        println!("{line}");
    }
    if summary.ok() {
        Ok(EXIT_OK)
    } else {
        Err(CliError::Data(format!(
            "{} verification failures",
            summary.failures
        )))
    }
}

fn cmd_report(args: ReportArgs) -> Result<i32, CliError> {
    let report = Report::load(&args.report)?;
    if args.csv {
        print!("{}", report.to_csv());
        return Ok(EXIT_OK);
    }
    println!(
        "method {} | pattern {} | sparsity {} | B {} | alpha {} | damp {} | seed {}",
        report.config.method.name(),
        report.config.pattern,
        report.config.sparsity,
        report.config.block_size,
        report.config.alpha,
        report.config.lambda_rel,
        report.config.seed
    );
    for l in &report.layers {
        println!(
            "  block {} layer {} [{}]: {}x{}, zeros {}/{} ({:.4}), loss {:.6e} -> {:.6e}, {:.3}s",
            l.block,
            l.layer,
            l.method,
            l.rows,
            l.cols,
            l.zeros,
            l.cells,
            l.sparsity,
            l.loss_before,
            l.loss_after,
            l.seconds
        );
    }
    let t = &report.totals;
    println!(
        "totals: zeros {}/{} (global sparsity {:.4}), loss {:.6e} -> {:.6e}, {:.3}s",
        t.zeros, t.cells, t.global_sparsity, t.loss_before, t.loss_after, t.seconds
    );
    Ok(EXIT_OK)
}
