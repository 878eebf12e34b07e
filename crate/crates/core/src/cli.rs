//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error (including bad flags),
//! 2 data error, 3 numeric error. Flags override keys of the optional
//! `--config` file, a flat `key = value` text file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use crate::basis::SizeRule;
use crate::error::{Error, ErrorClass, Result};
use crate::estimator::{estimate_matrix, Dataset, EstimatorConfig, MIN_SAMPLE};
use crate::pilot::BandwidthRule;
use crate::simulate::{
    coverage_study, generate, hoeffding_diagnostic, oracle, rate_study, write_atomic, ModelKind, ModelSpec,
    ORACLE_ORDER,
};

#[derive(Debug, Parser)]
#[command(name = "condcov", version, about = "Efficient estimation of Cov(E[X|Y])")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate Cov(E[X|Y]) from a CSV file.
    Estimate(EstimateArgs),
    /// Monte Carlo MSE over a grid of sample sizes.
    Rate(StudyArgs),
    /// Monte Carlo interval coverage at one sample size.
    Coverage(StudyArgs),
    /// Covariance between the U-statistic and linear parts of the quadratic term.
    Hoeffding(StudyArgs),
    /// Draw a synthetic dataset and its exact target.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct TuningArgs {
    /// Seed of all randomness; drawn from the OS and recorded when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nominal interval level, for example 0.95.
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Fixed basis size instead of ceil(sqrt(n2)).
    #[arg(long = "basis-m")]
    pub basis_m: Option<usize>,
    /// Gauss-Legendre nodes per axis.
    #[arg(long = "quad-order")]
    pub quad_order: Option<usize>,
    /// Lower clip of the pilot density on the unit cube.
    #[arg(long = "clip-lo")]
    pub clip_lo: Option<f64>,
    /// Upper clip of the pilot density on the unit cube.
    #[arg(long = "clip-hi")]
    pub clip_hi: Option<f64>,
    /// Flat key = value file with defaults for these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated X column names.
    #[arg(long)]
    pub x: Option<String>,
    /// Y column name.
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// independent, linear or nonlinear.
    #[arg(long)]
    pub model: String,
    /// Number of X coordinates.
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    /// Comma-separated sample sizes (a single value for coverage and hoeffding).
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    /// Replications: at least 100 for rate, 200 for coverage and hoeffding.
    #[arg(long)]
    pub reps: usize,
    /// Entry "i,j" (0-based) to study.
    #[arg(long, default_value = "0,1")]
    pub pair: String,
    /// CSV of replications (rate, coverage) or JSON summary (hoeffding).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary path; defaults to the CSV path with a .json extension.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset CSV with columns x1..xp, y.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON file for the exact target of the model.
    #[arg(long = "oracle-out")]
    pub oracle_out: Option<PathBuf>,
}

/// Runs the CLI on `args` and returns the process exit code.
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
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate(a) => run_estimate(a),
        Command::Rate(a) => run_rate(a),
        Command::Coverage(a) => run_coverage(a),
        Command::Hoeffding(a) => run_hoeffding(a),
        Command::Simulate(a) => run_simulate(a),
    }
}

/// Keys accepted in a `--config` file.
const CONFIG_KEYS: &[&str] = &[
    "input",
    "x",
    "y",
    "out",
    "seed",
    "confidence",
    "basis_m",
    "quad_order",
    "clip_lo",
    "clip_hi",
    "margin",
    "bandwidth",
];

/// Parses a flat `key = value` file; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("config line {}: expected key = value", lineno + 1)))?;
        let key = key.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::config(format!("config line {}: unknown key '{key}'", lineno + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("cannot parse {key} = '{value}'")))
}

/// Merged estimator settings plus the file-only keys of the estimate command.
struct Resolved {
    cfg: EstimatorConfig,
    file: BTreeMap<String, String>,
}

fn resolve(t: &TuningArgs) -> Result<Resolved> {
    let file = match &t.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
            parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    let get = |key: &str| file.get(key).map(String::as_str);
    let mut cfg = EstimatorConfig::default();

    let seed = match (t.seed, get("seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => parse_value("seed", v)?,
        (None, None) => rand::rng().random(),
    };
    cfg.seed = seed;
    let level = match (t.confidence, get("confidence")) {
        (Some(c), _) => Some(c),
        (None, Some(v)) => Some(parse_value("confidence", v)?),
        _ => None,
    };
    if let Some(level) = level {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::config(format!("confidence must lie in (0, 1), got {level}")));
        }
        cfg.delta = 1.0 - level;
    }
    let basis_m = match (t.basis_m, get("basis_m")) {
        (Some(m), _) => Some(m),
        (None, Some(v)) => Some(parse_value("basis_m", v)?),
        _ => None,
    };
    if let Some(m) = basis_m {
        cfg.size_rule = SizeRule::Fixed(m);
    }
    if let Some(q) = t.quad_order.or(get("quad_order").map(|v| parse_value("quad_order", v)).transpose()?) {
        cfg.quad_order = q;
    }
    if let Some(v) = t.clip_lo.or(get("clip_lo").map(|v| parse_value("clip_lo", v)).transpose()?) {
        cfg.clip.lo = v;
    }
    if let Some(v) = t.clip_hi.or(get("clip_hi").map(|v| parse_value("clip_hi", v)).transpose()?) {
        cfg.clip.hi = v;
    }
    if let Some(v) = get("margin") {
        cfg.margin = parse_value("margin", v)?;
    }
    if let Some(v) = get("bandwidth") {
        cfg.bandwidth = if v.eq_ignore_ascii_case("silverman") {
            BandwidthRule::Silverman
        } else {
            BandwidthRule::Fixed(
                v.split(',')
                    .map(|h| parse_value("bandwidth", h.trim()))
                    .collect::<Result<Vec<f64>>>()?,
            )
        };
    }
    cfg.validate()?;
    Ok(Resolved { cfg, file })
}

/// A CSV dataset restricted to the requested columns.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub x_names: Vec<String>,
    pub y_name: String,
}

/// Reads `path` (comma-separated, header row) and selects columns.
pub fn ingest(path: &Path, x_columns: &[String], y_column: &str) -> Result<Ingested> {
    if x_columns.is_empty() {
        return Err(Error::config("no X columns requested"));
    }
    if x_columns.iter().any(|c| c == y_column) {
        return Err(Error::config(format!("column '{y_column}' requested as both X and Y")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in {}", path.display())))
    };
    let x_idx = x_columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let y_idx = find(y_column)?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {}: {e}", row + 1)))?;
        let cell = |col: usize, name: &str| -> Result<f64> {
            let text = record.get(col).unwrap_or("");
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Data(format!("row {}, column '{name}': '{text}' is not a number", row + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Data(format!("row {}, column '{name}': non-finite value", row + 1)))
            }
        };
        for (k, &c) in x_idx.iter().enumerate() {
            x.push(cell(c, &x_columns[k])?);
        }
        y.push(cell(y_idx, y_column)?);
    }
    if y.len() < MIN_SAMPLE {
        return Err(Error::SampleTooSmall {
            got: y.len(),
            min: MIN_SAMPLE,
        });
    }
    Ok(Ingested {
        dataset: Dataset::new(x_columns.len(), x, y)?,
        x_names: x_columns.to_vec(),
        y_name: y_column.to_string(),
    })
}

fn require<T>(flag: Option<T>, file: Option<&String>, name: &str) -> Result<String>
where
    T: Into<String>,
{
    flag.map(Into::into)
        .or_else(|| file.cloned())
        .ok_or_else(|| Error::config(format!("missing --{name}")))
}

fn run_estimate(a: EstimateArgs) -> Result<()> {
    let Resolved { cfg, file } = resolve(&a.tuning)?;
    let input = require(a.input.map(|p| p.to_string_lossy().into_owned()), file.get("input"), "input")?;
    let x = require(a.x, file.get("x"), "x")?;
    let y = require(a.y, file.get("y"), "y")?;
    let out = require(a.out.map(|p| p.to_string_lossy().into_owned()), file.get("out"), "out")?;
    let x_cols: Vec<String> = x.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    let data = ingest(Path::new(&input), &x_cols, &y)?;
    let est = estimate_matrix(&data.dataset, &cfg)?;
    write_atomic(Path::new(&out), est.to_json(&cfg)?.as_bytes())?;
    println!("{out}");
    Ok(())
}

fn model_from(args: &StudyArgs) -> Result<ModelSpec> {
    let kind: ModelKind = args.model.parse()?;
    let m = ModelSpec::default_for(kind, args.p);
    m.validate()?;
    Ok(m)
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| Error::config(format!("pair must be 'i,j', got '{s}'")))?;
    Ok((parse_value("pair", a.trim())?, parse_value("pair", b.trim())?))
}

fn study_paths(args: &StudyArgs, default_stem: &str) -> (PathBuf, PathBuf) {
    let csv = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("{default_stem}.csv")));
    let json = args.summary.clone().unwrap_or_else(|| csv.with_extension("json"));
    (csv, json)
}

fn single_n(args: &StudyArgs) -> Result<usize> {
    match args.n.as_slice() {
        [n] => Ok(*n),
        _ => Err(Error::config("this command takes a single --n")),
    }
}

fn run_rate(a: StudyArgs) -> Result<()> {
    let Resolved { cfg, .. } = resolve(&a.tuning)?;
    let model = model_from(&a)?;
    let result = rate_study(&model, parse_pair(&a.pair)?, &a.n, a.reps, &cfg, cfg.seed)?;
    let (csv, json) = study_paths(&a, "rate");
    write_atomic(&csv, &result.to_csv()?)?;
    write_atomic(&json, result.summary_json()?.as_bytes())?;
    println!("{}\n{}", csv.display(), json.display());
    Ok(())
}

fn run_coverage(a: StudyArgs) -> Result<()> {
    let Resolved { cfg, .. } = resolve(&a.tuning)?;
    let model = model_from(&a)?;
    let result = coverage_study(&model, parse_pair(&a.pair)?, single_n(&a)?, a.reps, &cfg, cfg.seed)?;
    let (csv, json) = study_paths(&a, "coverage");
    write_atomic(&csv, &result.to_csv()?)?;
    write_atomic(&json, result.summary_json()?.as_bytes())?;
    println!("{}\n{}", csv.display(), json.display());
    Ok(())
}

fn run_hoeffding(a: StudyArgs) -> Result<()> {
    let Resolved { cfg, .. } = resolve(&a.tuning)?;
    let model = model_from(&a)?;
    let result = hoeffding_diagnostic(&model, single_n(&a)?, a.reps, &cfg, cfg.seed)?;
    let json = a
        .summary
        .clone()
        .or_else(|| a.out.clone())
        .unwrap_or_else(|| PathBuf::from("hoeffding.json"));
    let text = serde_json::to_string_pretty(&result).map_err(|e| Error::Numeric(e.to_string()))?;
    write_atomic(&json, text.as_bytes())?;
    println!("{}", json.display());
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let kind: ModelKind = a.model.parse()?;
    let model = ModelSpec::default_for(kind, a.p);
    let seed = a.seed.unwrap_or_else(|| rand::rng().random());
    let data = generate(&model, a.n, seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=a.p).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for r in 0..data.n() {
        let mut row: Vec<String> = (0..a.p).map(|c| data.x(r, c).to_string()).collect();
        row.push(data.y()[r].to_string());
        w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(&a.out, &bytes)?;
    println!("{} (seed {seed})", a.out.display());
    if let Some(path) = a.oracle_out {
        let truth = oracle(&model, ORACLE_ORDER)?;
        let doc = serde_json::json!({ "model": model, "seed": seed, "oracle": truth });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Numeric(e.to_string()))?;
        write_atomic(&path, text.as_bytes())?;
        println!("{}", path.display());
    }
    Ok(())
}
