//! Command-line interface. Exit status: 0 on success, 1 for usage errors,
//! 2 for data or numerical errors. Observation, cluster and feature numbers
//! are one-based on the command line and in every output.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Error;
use crate::inference::{bh_adjust, estimate_covariance, test_fitted, SigmaSource, TestReport};
use crate::io::{read_covariance, read_data_matrix, read_table_path, write_table};
use crate::oracle::{check_instance, random_instance, write_scan_csv, OracleInstance};
use crate::preprocess::preprocess_counts;
use crate::sim::{run_power, run_type1, summarize_type1, write_rows_csv, Design, MethodKind, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "clustertest", version, about = "Selective tests for differences in feature means between estimated clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster a data CSV and test features for one pair of clusters.
    Test(TestArgs),
    /// Type I error campaign under two true clusters.
    SimulateNull(SimArgs),
    /// Conditional power and detection probability with three true clusters.
    SimulatePower(SimArgs),
    /// Benjamini-Hochberg adjustment of a p-value column.
    Adjust(AdjustArgs),
    /// Compare analytic truncation sets with grid re-clustering.
    OracleCheck(OracleArgs),
    /// Normalize and log-transform a counts CSV and keep the most variable features.
    Preprocess(PreprocessArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Kmeans,
    Single,
    Average,
    Centroid,
    Ward,
}

impl From<MethodArg> for MethodKind {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Kmeans => MethodKind::Kmeans,
            MethodArg::Single => MethodKind::Single,
            MethodArg::Average => MethodKind::Average,
            MethodArg::Centroid => MethodKind::Centroid,
            MethodArg::Ward => MethodKind::Ward,
        }
    }
}

#[derive(Debug, Args)]
struct TestArgs {
    /// Data CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    k: usize,
    /// Two cluster numbers, e.g. `1,2`.
    #[arg(long)]
    pair: String,
    /// Feature numbers (`4`, `1,3,5`) or `all`.
    #[arg(long, default_value = "all")]
    feature: String,
    /// A q x q covariance CSV, or `estimate` for the pooled within-cluster
    /// covariance of the fit.
    #[arg(long, default_value = "estimate")]
    sigma: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    tmax: usize,
    /// JSON array of reports; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write `feature,statistic,p_selective,p_naive` as CSV.
    #[arg(long)]
    pvalues_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// JSON configuration; flags below are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "kmeans")]
    method: MethodArg,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 10)]
    q: usize,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 6.0)]
    delta: f64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 30)]
    tmax: usize,
    #[arg(long, default_value_t = 800)]
    replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Per-replicate CSV; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Summary JSON; stderr when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AdjustArgs {
    #[arg(long)]
    input: PathBuf,
    /// Column holding p-values; the first column when omitted.
    #[arg(long)]
    column: Option<String>,
    /// Input columns plus `<column>_bh`; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Instance JSON (data, covariance, method, zero-based pair and feature).
    /// Random instances are generated when omitted.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    count: u64,
    #[arg(long, default_value_t = 4001)]
    points: usize,
    /// Per-point CSV for a single instance.
    #[arg(long)]
    scan_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    min_total: f64,
    #[arg(long, default_value_t = 500)]
    top_k: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parse `argv` (including the program name) and run; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::SimulateNull(a) => cmd_simulate(a, Design::NullTwoCluster),
        Command::SimulatePower(a) => cmd_simulate(a, Design::ThreeClusterPower),
        Command::Adjust(a) => cmd_adjust(a),
        Command::OracleCheck(a) => cmd_oracle(a),
        Command::Preprocess(a) => cmd_preprocess(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn sink(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn parse_list(text: &str, what: &str) -> CliResult<Vec<usize>> {
    text.split(',')
        .map(|s| match s.trim().parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v - 1),
            _ => Err(Failure::Usage(format!("{what} must be one-based numbers separated by commas, got '{text}'"))),
        })
        .collect()
}

fn cmd_test(a: TestArgs) -> CliResult<()> {
    let pair = parse_list(&a.pair, "--pair")?;
    if pair.len() != 2 {
        return Err(Failure::Usage("--pair needs exactly two cluster numbers".into()));
    }
    let listed = if a.feature.eq_ignore_ascii_case("all") { None } else { Some(parse_list(&a.feature, "--feature")?) };
    let x = read_data_matrix(&a.input)?;
    let features = listed.unwrap_or_else(|| (0..x.q()).collect());
    let method = MethodKind::from(a.method).with(a.k, a.tmax, a.seed);
    let fit = method.fit(&x)?;
    let (sigma, source) = if a.sigma.eq_ignore_ascii_case("estimate") {
        (estimate_covariance(&x, &fit.labels())?, SigmaSource::Estimated)
    } else {
        (read_covariance(Path::new(&a.sigma))?, SigmaSource::Supplied)
    };
    let reports = features
        .par_iter()
        .map(|&j| test_fitted(&x, &sigma, &fit, &method, (pair[0], pair[1]), j, source))
        .collect::<crate::Result<Vec<TestReport>>>()?;

    let mut out = sink(&a.output)?;
    serde_json::to_writer_pretty(&mut out, &reports)?;
    writeln!(out)?;
    if let Some(path) = &a.pvalues_csv {
        #[derive(Serialize)]
        struct Row {
            feature: usize,
            statistic: f64,
            p_selective: f64,
            p_naive: f64,
        }
        let rows: Vec<Row> = reports
            .iter()
            .map(|r| Row { feature: r.feature, statistic: r.statistic, p_selective: r.p_selective, p_naive: r.p_naive })
            .collect();
        write_rows_csv(File::create(path)?, &rows)?;
    }
    Ok(())
}

fn cmd_simulate(a: SimArgs, design: Design) -> CliResult<()> {
    let cfg = match &a.config {
        Some(path) => {
            let cfg: SimConfig = serde_json::from_reader(File::open(path)?)?;
            if cfg.design != design {
                return Err(Failure::Usage("the configuration's design does not match the subcommand".into()));
            }
            cfg
        }
        None => {
            let base = match design {
                Design::NullTwoCluster => SimConfig::null(a.method.into(), a.rho, a.replicates, a.seed),
                Design::ThreeClusterPower => SimConfig::power(a.method.into(), a.rho, a.delta, a.replicates, a.seed),
            };
            SimConfig { n: a.n.unwrap_or(base.n), q: a.q, k: a.k, t_max: a.tmax, alpha: a.alpha, ..base }
        }
    };
    cfg.validate()?;
    let summary = match design {
        Design::NullTwoCluster => {
            let rows = run_type1(&cfg)?;
            write_rows_csv(sink(&a.output)?, &rows)?;
            serde_json::to_value(summarize_type1(&rows, cfg.alpha))?
        }
        Design::ThreeClusterPower => {
            let (summary, rows) = run_power(&cfg)?;
            write_rows_csv(sink(&a.output)?, &rows)?;
            serde_json::to_value(summary)?
        }
    };
    let text = serde_json::to_string_pretty(&serde_json::json!({ "config": cfg, "summary": summary }))?;
    match &a.summary {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => eprintln!("{text}"),
    }
    Ok(())
}

fn cmd_adjust(a: AdjustArgs) -> CliResult<()> {
    let table = read_table_path(&a.input)?;
    let col = match &a.column {
        Some(name) => table
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::Usage(format!("no column named '{name}'")))?,
        None => 0,
    };
    if table.header.is_empty() {
        return Err(Failure::Data(Error::InvalidInput("p-value file has no columns".into())));
    }
    let p: Vec<f64> = table.rows.iter().map(|r| r[col]).collect();
    let adjusted = bh_adjust(&p)?;
    let mut header = table.header.clone();
    header.push(format!("{}_bh", table.header[col]));
    let rows: Vec<Vec<f64>> =
        table.rows.iter().zip(&adjusted).map(|(r, &q)| r.iter().copied().chain([q]).collect()).collect();
    write_table(sink(&a.output)?, &header, &rows)?;
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> CliResult<()> {
    let instances: Vec<OracleInstance> = match &a.instance {
        Some(path) => vec![serde_json::from_reader(File::open(path)?)?],
        None => (0..a.count).map(|i| random_instance(a.seed, i)).collect::<crate::Result<_>>()?,
    };
    if a.scan_csv.is_some() && instances.len() != 1 {
        return Err(Failure::Usage("--scan-csv needs a single instance (--instance or --count 1)".into()));
    }
    let mut failed = 0;
    let mut out = io::stdout().lock();
    for (i, inst) in instances.iter().enumerate() {
        let check = check_instance(inst, a.points)?;
        if let Some(path) = &a.scan_csv {
            write_scan_csv(File::create(path)?, &check.analytic, &check.scan)?;
        }
        failed += usize::from(!check.passes());
        let line = serde_json::json!({
            "instance": i,
            "passes": check.passes(),
            "agreement_fraction": check.agreement.fraction(),
            "check": check,
        });
        writeln!(out, "{line}")?;
    }
    if failed > 0 {
        return Err(Failure::Data(Error::InvalidInput(format!("{failed} of {} instances disagree with the grid", instances.len()))));
    }
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> CliResult<()> {
    let table = read_table_path(&a.input)?;
    let out = preprocess_counts(&table.rows, a.min_total, a.top_k)?;
    let header: Vec<String> = out.kept_columns.iter().map(|&j| table.header[j].clone()).collect();
    write_table(sink(&a.output)?, &header, &out.rows)?;
    Ok(())
}
