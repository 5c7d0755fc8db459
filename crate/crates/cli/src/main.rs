//! `profilik`: runs the Monte Carlo studies from flat config files and
//! evaluates quadratic-form deviation bounds.
//!
//! Exit codes: 0 when every verdict passes, 1 on a failed verdict or a
//! numerical/domain error, 2 on usage or configuration errors.

mod flat;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use profilik_core::deviation::{critical_quantities, quantile_from_report, quantile_table};
use profilik_core::experiments::{self, summary_json, write_rows_csv, write_tables_csv, ExperimentKind};
use profilik_core::{Error, SymMatrix};
use serde_json::json;

#[derive(Parser)]
#[command(name = "profilik", version, about = "Profile quasi-likelihood studies and deviation bounds")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Distribution of the profile likelihood ratio against chi-square.
    Wilks(RunArgs),
    /// Fisher expansion residual against its predicted rate.
    Fisher(RunArgs),
    /// Coverage of likelihood-based confidence sets.
    Coverage(RunArgs),
    /// Normality of the standardized efficient score.
    Normality(RunArgs),
    /// Profile MLE deviation in the critical-dimension model.
    Critdim(RunArgs),
    /// Smoothness estimates, spread and concentration frequency.
    Scan(RunArgs),
    /// Critical quantities and quantiles of a Gaussian quadratic form.
    Bounds(BoundsArgs),
    /// Prints every config key of a study with its default.
    Schema {
        /// One of wilks, fisher, coverage, normality, critdim, scan.
        study: String,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides `thread_hint`. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "profilik-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
    /// Extra `key=value` override, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct BoundsArgs {
    /// Matrix as `diag:a,b,...` or `file:path.csv`.
    #[arg(long = "B", value_name = "SPEC")]
    b: String,
    /// Exponential-moment range g.
    #[arg(long)]
    g: f64,
    /// Single confidence level x to evaluate.
    #[arg(long)]
    x: Option<f64>,
    /// Comma-separated x grid for the quantile table.
    #[arg(long = "x-grid", default_value = "0.5,1,2,4")]
    x_grid: String,
    /// Slope for the x > x_c branch; without it those rows are gated.
    #[arg(long = "tail-slope")]
    tail_slope: Option<f64>,
    /// Also write the JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
struct Fail {
    code: u8,
    msg: String,
}

impl Fail {
    fn usage(msg: impl Into<String>) -> Self {
        Fail { code: 2, msg: msg.into() }
    }

    fn from_core(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse(_) => 2,
            _ => 1,
        };
        Fail { code, msg: e.to_string() }
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Fail {
    Fail { code: 1, msg: format!("{}: {e}", path.display()) }
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for k in ExperimentKind::ALL {
        let keys = flat::render_schema(k);
        cmd = cmd.mut_subcommand(k.name(), |s| s.after_help(format!("Config keys and defaults:\n{keys}")));
    }
    cmd
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Fail> {
    fs::write(path, contents).map_err(|e| io_fail(path, e))
}

fn run_study(kind: ExperimentKind, a: &RunArgs) -> Result<bool, Fail> {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| Fail::usage(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut pairs = flat::parse_pairs(&text).map_err(|e| Fail::usage(e.to_string()))?;
    for s in &a.set {
        pairs.push(flat::parse_override(s).map_err(|e| Fail::usage(e.to_string()))?);
    }
    if let Some(seed) = a.seed {
        pairs.push(("master_seed".into(), seed.to_string()));
    }
    if let Some(t) = a.threads {
        pairs.push(("thread_hint".into(), t.to_string()));
    }
    let cfg = flat::resolve(kind, &pairs).map_err(|e| Fail::usage(e.to_string()))?;
    cfg.validate(kind).map_err(Fail::from_core)?;
    fs::create_dir_all(&a.out).map_err(|e| io_fail(&a.out, e))?;
    write_file(&a.out.join("config.resolved"), flat::render_config(&cfg).as_bytes())?;
    let report = experiments::run(kind, &cfg).map_err(Fail::from_core)?;
    if matches!(a.format, Format::Csv | Format::Both) {
        let mut buf = Vec::new();
        write_rows_csv(&report.columns, &report.rows, &mut buf).map_err(Fail::from_core)?;
        write_file(&a.out.join("rows.csv"), &buf)?;
        if kind == ExperimentKind::Scan {
            let mut buf = Vec::new();
            write_tables_csv(&report.tables, &mut buf).map_err(Fail::from_core)?;
            write_file(&a.out.join("tables.csv"), &buf)?;
        }
    }
    if matches!(a.format, Format::Json | Format::Both) {
        let s = summary_json(&report).map_err(Fail::from_core)?;
        write_file(&a.out.join("summary.json"), s.as_bytes())?;
    }
    let mut out = std::io::stdout().lock();
    for v in &report.summary.verdicts {
        let _ = writeln!(out, "{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    for n in &report.summary.notes {
        let _ = writeln!(out, "note: {n}");
    }
    Ok(report.summary.pass)
}

/// `diag:a,b,...` or `file:path.csv` (square, no header).
fn parse_matrix(spec: &str) -> Result<SymMatrix, Fail> {
    if let Some(rest) = spec.strip_prefix("diag:") {
        let d: Vec<f64> = rest
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Fail::usage(format!("cannot parse diagonal `{rest}`")))?;
        return Ok(SymMatrix::from_diagonal(&d));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Fail::usage(format!("{path}: {e}")))?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Fail::usage(format!("{path}: {e}")))?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Fail::usage(format!("{path}: non-numeric entry")))?;
            rows.push(row);
        }
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Fail::usage(format!("{path}: matrix must be square")));
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        return SymMatrix::new(m).map_err(|e| Fail::usage(format!("{path}: {e}")));
    }
    Err(Fail::usage(format!("matrix spec `{spec}` must start with diag: or file:")))
}

fn run_bounds(a: &BoundsArgs) -> Result<(), Fail> {
    let b = parse_matrix(&a.b)?;
    let grid: Vec<f64> = a
        .x_grid
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Fail::usage(format!("cannot parse x grid `{}`", a.x_grid)))?;
    let report = critical_quantities(&b, a.g).map_err(|e| Fail { code: 1, msg: e.to_string() })?;
    let table = quantile_table(&report, &grid, a.tail_slope).map_err(Fail::from_core)?;
    let mut doc = json!({ "report": report, "quantiles": table });
    if let Some(x) = a.x {
        let (zz, branch) = quantile_from_report(&report, x, a.tail_slope).map_err(Fail::from_core)?;
        doc["z"] = json!({ "x": x, "value": zz, "branch": branch });
    }
    let mut s = serde_json::to_string_pretty(&doc).expect("bounds serialize");
    s.push('\n');
    if let Some(p) = &a.out {
        write_file(p, s.as_bytes())?;
    }
    print!("{s}");
    Ok(())
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match &cli.cmd {
        Cmd::Wilks(a) => run_study(ExperimentKind::Wilks, a),
        Cmd::Fisher(a) => run_study(ExperimentKind::Fisher, a),
        Cmd::Coverage(a) => run_study(ExperimentKind::Coverage, a),
        Cmd::Normality(a) => run_study(ExperimentKind::Normality, a),
        Cmd::Critdim(a) => run_study(ExperimentKind::Critdim, a),
        Cmd::Scan(a) => run_study(ExperimentKind::Scan, a),
        Cmd::Bounds(a) => run_bounds(a).map(|_| true),
        Cmd::Schema { study } => match ExperimentKind::from_name(study) {
            Some(k) => {
                print!("{}", flat::render_schema(k));
                Ok(true)
            }
            None => Err(Fail::usage(format!("unknown study `{study}`"))),
        },
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            if f.code == 2 {
                eprintln!("{}", command().render_usage());
            }
            ExitCode::from(f.code)
        }
    }
}
