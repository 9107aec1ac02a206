//! `distrank` command-line front end.
//!
//! Every CSV-producing command writes the CSV to `--out` and a JSON provenance
//! sidecar next to it (same path, `.json` extension). Without `--out` the CSV
//! goes to stdout and the provenance to stderr.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::error::Error;
use crate::experiments::{self, linear_fit};
use crate::families::FamilySpec;
use crate::hmatrix::{read_container, write_container, Builder, HMatrix};
use crate::partition::{Domain, PartitionScheme};
use crate::separated::RankConvention;

pub const EXIT_IO: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "distrank", version, about = "Hierarchical low-rank compression of distribution matrices")]
pub struct Cli {
    /// Worker threads for per-block work (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-block SVD and ACA ranks of the off-diagonal blocks.
    RankMap(RankMapArgs),
    /// Maximum block rank for a list of eps values.
    EpsSweep(EpsSweepArgs),
    /// Threshold points and E(p_M||q_M)/M over a log grid of M.
    RatioScan(RatioScanArgs),
    /// Build the hierarchical matrix and write it as an HLRD1 container.
    Compress(CompressArgs),
    /// Compressed vs dense matvec for a list of sizes.
    MatvecBench(BenchArgs),
    /// Sampled coverage/overlap check of a partition.
    VerifyTiling(TilingArgs),
    /// Load an HLRD1 container and report storage and sampled accuracy.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Binomial,
    Poisson,
    Chisq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionFlag {
    Rel,
    Abs,
}

impl From<ConventionFlag> for RankConvention {
    fn from(c: ConventionFlag) -> Self {
        match c {
            ConventionFlag::Rel => RankConvention::RelativeToSigma1,
            ConventionFlag::Abs => RankConvention::Absolute,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BuilderFlag {
    Constructive,
    Aca,
}

impl From<BuilderFlag> for Builder {
    fn from(b: BuilderFlag) -> Self {
        match b {
            BuilderFlag::Constructive => Builder::Constructive,
            BuilderFlag::Aca => Builder::Aca,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FamilyArgs {
    #[arg(long, value_enum, default_value = "binomial")]
    pub family: FamilyName,
    /// Binomial trial count.
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    /// Poisson: largest k (rows). Chi-squared: largest degrees of freedom (columns).
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long, default_value_t = 1024.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 1024.0)]
    pub xmax: f64,
    /// Column count (binomial q, Poisson lambda) or row count (chi-squared x).
    #[arg(long)]
    pub grid: Option<usize>,
}

impl FamilyArgs {
    pub fn spec(&self) -> FamilySpec {
        match self.family {
            FamilyName::Binomial => FamilySpec::Binomial {
                n: self.n,
                q_grid: self.grid.unwrap_or(self.n),
            },
            FamilyName::Poisson => FamilySpec::Poisson {
                k_max: self.kmax.unwrap_or(1023),
                lambda_max: self.lambda_max,
                lambda_grid: self.grid.unwrap_or(1024),
            },
            FamilyName::Chisq => FamilySpec::ChiSquared {
                x_max: self.xmax,
                x_grid: self.grid.unwrap_or(1024),
                k_max: self.kmax.unwrap_or(1024),
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RankMapArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, default_value_t = 1e-9)]
    pub eps: f64,
    #[arg(long, value_enum, default_value = "rel")]
    pub rank_convention: ConventionFlag,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Recorded in the provenance; the rank map itself is not sampled.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EpsSweepArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Repeatable; defaults to 1e-3, 1e-4, ..., 1e-12.
    #[arg(long)]
    pub eps: Vec<f64>,
    #[arg(long, value_enum, default_value = "rel")]
    pub rank_convention: ConventionFlag,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct RatioScanArgs {
    #[arg(long, default_value_t = 1e-8)]
    pub m_min: f64,
    #[arg(long, default_value_t = 1e8)]
    pub m_max: f64,
    #[arg(long, default_value_t = 33)]
    pub m_points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, default_value_t = 1e-9)]
    pub eps: f64,
    #[arg(long, value_enum, default_value = "aca")]
    pub builder: BuilderFlag,
    /// HLRD1 output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Random entries checked against the exact matrix after the build.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "binomial")]
    pub family: FamilyName,
    /// Matrix size; repeatable. Defaults to 256, 512, 1024, 2048.
    #[arg(long)]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, value_enum, default_value = "aca")]
    pub builder: BuilderFlag,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainFlag {
    Unit,
    Quarter,
}

#[derive(Debug, Clone, Args)]
pub struct TilingArgs {
    #[arg(long, value_enum, default_value = "unit")]
    pub domain: DomainFlag,
    #[arg(long, default_value_t = 8)]
    pub level_max: i32,
    /// Quarter-plane extent (a power of two).
    #[arg(long, default_value_t = 16.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// JSON report path (printed to stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => CliError::Usage(m),
            Error::ExtentNotPowerOfTwo(_) | Error::GridMismatch(_) | Error::DimensionMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            Error::Container(m) => CliError::Io(m),
            other => CliError::Numerical(other),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn provenance(command: &str, params: Value, seed: u64, summary: Value) -> Value {
    json!({
        "command": command,
        "params": params,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "summary": summary,
    })
}

fn family_json(spec: &FamilySpec) -> Value {
    serde_json::to_value(spec).unwrap_or(Value::Null)
}

/// Write CSV rows and the provenance sidecar.
fn emit_csv(out: Option<&Path>, header: &[&str], rows: &[Vec<String>], meta: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| CliError::Io(e.to_string()))?;
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_err(path, e))?;
            write_rows(csv::Writer::from_writer(BufWriter::new(file)), header, rows).map_err(|e| io_err(path, e))?;
            let side = path.with_extension("json");
            std::fs::write(&side, text + "\n").map_err(|e| io_err(&side, e))
        }
        None => {
            write_rows(csv::Writer::from_writer(io::stdout().lock()), header, rows)
                .map_err(|e| CliError::Io(e.to_string()))?;
            eprintln!("{text}");
            Ok(())
        }
    }
}

fn write_rows<W: Write>(mut w: csv::Writer<W>, header: &[&str], rows: &[Vec<String>]) -> csv::Result<()> {
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const RANK_MAP_HEADER: [&str; 8] = ["level", "index", "row_lo", "row_hi", "col_lo", "col_hi", "svd_rank", "aca_rank"];
pub const EPS_SWEEP_HEADER: [&str; 2] = ["eps", "max_rank"];
pub const RATIO_SCAN_HEADER: [&str; 5] = ["regime", "M", "p_M", "q_M", "ratio"];
pub const BENCH_HEADER: [&str; 6] = ["n", "rows", "cols", "stored_entries", "max_rank", "relative_error"];

fn rank_map_cmd(a: &RankMapArgs) -> Result<(), CliError> {
    let spec = a.family.spec();
    let rows = experiments::rank_map(&spec, a.eps, a.rank_convention.into())?;
    let max_svd = rows.iter().map(|r| r.svd_rank).max().unwrap_or(0);
    let max_aca = rows.iter().map(|r| r.aca_rank).max().unwrap_or(0);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                r.index.to_string(),
                r.row_lo.to_string(),
                r.row_hi.to_string(),
                r.col_lo.to_string(),
                r.col_hi.to_string(),
                r.svd_rank.to_string(),
                r.aca_rank.to_string(),
            ]
        })
        .collect();
    let meta = provenance(
        "rank-map",
        json!({"family": family_json(&spec), "eps": a.eps, "rank_convention": format!("{:?}", a.rank_convention).to_lowercase()}),
        a.seed,
        json!({"blocks": rows.len(), "max_svd_rank": max_svd, "max_aca_rank": max_aca}),
    );
    emit_csv(a.out.as_deref(), &RANK_MAP_HEADER, &body, &meta)
}

pub fn default_eps_list() -> Vec<f64> {
    (3..=12).map(|t| format!("1e-{t}").parse().unwrap()).collect()
}

fn eps_sweep_cmd(a: &EpsSweepArgs) -> Result<(), CliError> {
    let spec = a.family.spec();
    let eps = if a.eps.is_empty() { default_eps_list() } else { a.eps.clone() };
    let rows = experiments::eps_sweep(&spec, &eps, a.rank_convention.into())?;
    let body: Vec<Vec<String>> = rows.iter().map(|(e, r)| vec![fmt_f64(*e), r.to_string()]).collect();
    let x: Vec<f64> = rows.iter().map(|(e, _)| (1.0 / e).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|(_, r)| *r as f64).collect();
    let (slope, intercept, r2) = linear_fit(&x, &y);
    let meta = provenance(
        "eps-sweep",
        json!({"family": family_json(&spec), "eps": eps, "rank_convention": format!("{:?}", a.rank_convention).to_lowercase()}),
        a.seed,
        json!({"fit_vs_ln_inv_eps": {"slope": slope, "intercept": intercept, "r_squared": r2}}),
    );
    emit_csv(a.out.as_deref(), &EPS_SWEEP_HEADER, &body, &meta)
}

fn ratio_scan_cmd(a: &RatioScanArgs) -> Result<(), CliError> {
    let rows = experiments::ratio_scan(a.m_min, a.m_max, a.m_points)?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "nan".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.regime.as_str().into(), fmt_f64(r.m), opt(r.p_m), opt(r.q_m), opt(r.ratio)])
        .collect();
    let failures: Vec<Value> = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| json!({"regime": r.regime.as_str(), "M": r.m, "error": e})))
        .collect();
    let max_ratio = rows.iter().filter_map(|r| r.ratio).fold(0.0, f64::max);
    let meta = provenance(
        "ratio-scan",
        json!({"m_min": a.m_min, "m_max": a.m_max, "m_points": a.m_points}),
        a.seed,
        json!({"max_ratio": max_ratio, "failures": failures}),
    );
    emit_csv(a.out.as_deref(), &RATIO_SCAN_HEADER, &body, &meta)
}

fn hmatrix_summary(h: &HMatrix, samples: usize, seed: u64) -> Result<Value, CliError> {
    let storage = h.storage_report();
    let verify = h.verify(samples.max(1), seed)?;
    Ok(json!({
        "rows": h.rows(),
        "cols": h.cols(),
        "eps": h.eps,
        "builder": h.builder.as_str(),
        "lowrank_blocks": h.lowrank.len(),
        "dense_blocks": h.dense.len(),
        "max_rank": h.max_rank(),
        "storage": storage,
        "verify": verify,
    }))
}

fn compress_cmd(a: &CompressArgs) -> Result<(), CliError> {
    let spec = a.family.spec();
    let h = HMatrix::compress(spec, a.eps, a.builder.into())?;
    let file = File::create(&a.out).map_err(|e| io_err(&a.out, e))?;
    write_container(&h, BufWriter::new(file))?;
    let summary = hmatrix_summary(&h, a.samples, a.seed)?;
    let meta = provenance(
        "compress",
        json!({"family": family_json(&spec), "eps": a.eps, "builder": h.builder.as_str(), "samples": a.samples}),
        a.seed,
        summary.clone(),
    );
    let side = a.out.with_extension("json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(&side, text + "\n").map_err(|e| io_err(&side, e))?;
    println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
    Ok(())
}

fn inspect_cmd(a: &InspectArgs) -> Result<(), CliError> {
    let file = File::open(&a.path).map_err(|e| io_err(&a.path, e))?;
    let h = read_container(io::BufReader::new(file)).map_err(|e| match e {
        Error::Container(m) => io_err(&a.path, m),
        other => other.into(),
    })?;
    let summary = hmatrix_summary(&h, a.samples, a.seed)?;
    println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
    Ok(())
}

fn bench_cmd(a: &BenchArgs) -> Result<(), CliError> {
    let sizes = if a.n.is_empty() { vec![256, 512, 1024, 2048] } else { a.n.clone() };
    let template = FamilyArgs {
        family: a.family,
        n: 8,
        kmax: None,
        lambda_max: 8.0,
        xmax: 8.0,
        grid: Some(8),
    }
    .spec();
    let rows = experiments::matvec_bench(&template, &sizes, a.eps, a.builder.into(), a.seed, a.reps)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.size.to_string(),
                r.rows.to_string(),
                r.cols.to_string(),
                r.stored_entries.to_string(),
                r.max_rank.to_string(),
                fmt_f64(r.relative_error),
            ]
        })
        .collect();
    let timings: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "n": r.size,
                "compress_seconds": r.compress_seconds,
                "compressed_matvec_seconds": r.compressed_matvec_seconds,
                "dense_matvec_seconds": r.dense_matvec_seconds,
            })
        })
        .collect();
    let meta = provenance(
        "matvec-bench",
        json!({"family": a.family, "n": sizes, "eps": a.eps, "builder": Builder::from(a.builder).as_str(), "reps": a.reps}),
        a.seed,
        json!({"timings": timings}),
    );
    emit_csv(a.out.as_deref(), &BENCH_HEADER, &body, &meta)
}

fn tiling_cmd(a: &TilingArgs) -> Result<(), CliError> {
    let domain = match a.domain {
        DomainFlag::Unit => Domain::UnitSquare { level_max: a.level_max },
        DomainFlag::Quarter => Domain::QuarterPlane {
            extent: a.extent,
            level_max: a.level_max,
        },
    };
    let scheme = PartitionScheme::build(domain)?;
    let report = scheme.verify_tiling(a.samples, a.seed);
    let meta = provenance(
        "verify-tiling",
        json!({"domain": domain, "samples": a.samples}),
        a.seed,
        json!({
            "blocks": scheme.blocks.len(),
            "dense_cells": scheme.dense_remainder.len(),
            "level_min": scheme.level_min(),
            "level_max": scheme.level_max(),
            "report": report,
        }),
    );
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Io(e.to_string()))?;
    println!(
        "samples={} covered={} overlaps={}",
        report.samples, report.covered, report.overlaps
    );
    match &a.out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| io_err(path, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        // ignore the error if a pool was already installed (repeated calls in one process)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::RankMap(a) => rank_map_cmd(a),
        Command::EpsSweep(a) => eps_sweep_cmd(a),
        Command::RatioScan(a) => ratio_scan_cmd(a),
        Command::Compress(a) => compress_cmd(a),
        Command::MatvecBench(a) => bench_cmd(a),
        Command::VerifyTiling(a) => tiling_cmd(a),
        Command::Inspect(a) => inspect_cmd(a),
    }
}

/// Parse arguments, run, and map failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("distrank: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
