//! Command-line front end and CSV dataset persistence.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::diag::{diagnose, DEFAULT_LEVEL};
use crate::dist::ConditionalFamily;
use crate::dpd::DpdConfig;
use crate::error::{Error, Result};
use crate::fit::{fit, fit_knot, FitOptions, FitResult};
use crate::mc::{knot_mc, run_mc, McScenario};
use crate::meanproc::{CovariateTransform, Dataset, LambdaInit, MeanModel};
use crate::simgen::{contaminate, presets, simulate, ContamSpec, OutlierLaw, SimSpec};
use crate::tune::{tune, DEFAULT_GRID};

pub const SEED_ENV: &str = "COUNTDPD_SEED";

/// Reads a dataset with header `y,x1,...,xd`. Line numbers count the header as 1.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.get(0) != Some("y") {
        return Err(Error::Parse { line: 1, msg: "first column must be `y`".into() });
    }
    let d_x = headers.len() - 1;
    let mut y = Vec::new();
    let mut x = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let count = &rec[0];
        let v: i128 = count.parse().map_err(|_| Error::Parse { line, msg: format!("invalid count `{count}`") })?;
        if v < 0 {
            return Err(Error::NegativeCount { line });
        }
        y.push(u64::try_from(v).map_err(|_| Error::Parse { line, msg: format!("count `{count}` too large") })?);
        for field in rec.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse { line, msg: format!("invalid covariate `{field}`") })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteCovariate { line });
            }
            x.push(v);
        }
    }
    let mut data = Dataset::from_flat(y, x, d_x)?;
    data.name = path.file_name().map(|s| s.to_string_lossy().into_owned());
    Ok(data)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, msg: format!("{other:?}") },
    }
}

pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = String::from("y");
    for k in 1..=data.covariate_dim() {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for t in 0..data.len() {
        out.push_str(&data.y[t].to_string());
        for v in data.x(t) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_csv(data))?;
    Ok(())
}

/// `poisson`, `nb:<r>` or `bernoulli`.
pub fn parse_family(s: &str) -> Result<ConditionalFamily> {
    match s.split_once(':') {
        None if s == "poisson" => Ok(ConditionalFamily::poisson()),
        None if s == "bernoulli" => Ok(ConditionalFamily::bernoulli()),
        Some(("nb", r)) => {
            let r: f64 = r.parse().map_err(|_| Error::InvalidSpec(format!("invalid dispersion `{r}`")))?;
            ConditionalFamily::negative_binomial(r)
        }
        _ => Err(Error::InvalidSpec(format!("unknown family `{s}` (poisson, nb:<r>, bernoulli)"))),
    }
}

/// `ingarch:<q>,<p>[:<transform>,...]` or `knot:<xi>`.
pub fn parse_model(s: &str) -> Result<MeanModel> {
    let bad = || Error::InvalidSpec(format!("invalid model `{s}` (ingarch:q,p[:t1,t2,...] or knot:xi)"));
    let mut parts = s.split(':');
    match parts.next() {
        Some("ingarch") => {
            let (q, p) = parts.next().and_then(|qp| qp.split_once(',')).ok_or_else(bad)?;
            let q: usize = q.trim().parse().map_err(|_| bad())?;
            let p: usize = p.trim().parse().map_err(|_| bad())?;
            let transforms = match parts.next() {
                Some(list) if !list.is_empty() => {
                    list.split(',').map(|t| CovariateTransform::parse(t.trim()).ok_or_else(bad)).collect::<Result<Vec<_>>>()?
                }
                _ => Vec::new(),
            };
            if parts.next().is_some() {
                return Err(bad());
            }
            let model = MeanModel::LinearIngarchX { q, p, transforms };
            model.validate()?;
            Ok(model)
        }
        Some("knot") => {
            let knot: u64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            Ok(MeanModel::OneKnot { knot })
        }
        _ => Err(bad()),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidSpec(format!("invalid number `{v}` in list"))))
        .collect()
}

fn parse_init(s: &str) -> Result<LambdaInit> {
    LambdaInit::parse(s).ok_or_else(|| Error::InvalidSpec(format!("invalid init mode `{s}` (alpha0, empirical-mean or a number)")))
}

/// `poisson:<mu>` or `nb:<r>,<p>`.
fn parse_outlier(s: &str) -> Result<OutlierLaw> {
    let bad = || Error::InvalidSpec(format!("invalid outlier law `{s}` (poisson:mu or nb:r,p)"));
    match s.split_once(':') {
        Some(("poisson", mu)) => Ok(OutlierLaw::Poisson { mu: mu.parse().map_err(|_| bad())? }),
        Some(("nb", rp)) => {
            let v = parse_list(rp)?;
            match v[..] {
                [r, p_nb] => Ok(OutlierLaw::NegBinomial { r, p_nb }),
                _ => Err(bad()),
            }
        }
        _ => Err(bad()),
    }
}

#[derive(Debug, Parser)]
#[command(name = "countdpd", version, about = "Robust divergence-based estimation for count time series")]
pub struct Cli {
    /// Random seed (defaults to $COUNTDPD_SEED, else 0).
    #[arg(long, global = true, env = SEED_ENV)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset to CSV.
    Simulate(SimulateArgs),
    /// Add outliers to a CSV dataset.
    Contaminate(ContaminateArgs),
    /// Fit at one tuning parameter; writes JSON.
    Fit(FitArgs),
    /// Select the tuning parameter over a grid; writes JSON.
    Tune(TuneArgs),
    /// Monte Carlo table for a preset scenario.
    Mc(McArgs),
    /// Profile the knot of a one-knot model; writes JSON.
    Knot(KnotArgs),
    /// Residuals and prediction intervals from a fit; writes CSV.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// CSV dataset with header y,x1,...,xd.
    #[arg(long)]
    pub data: PathBuf,
    /// Mean model, e.g. ingarch:1,1:abs or knot:4.
    #[arg(long, default_value = "ingarch:1,1")]
    pub model: String,
    /// poisson, nb:<r> or bernoulli.
    #[arg(long, default_value = "poisson")]
    pub family: String,
    /// alpha0, empirical-mean or a fixed positive value.
    #[arg(long, default_value = "alpha0")]
    pub init_mode: String,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// poisson-arch, nb-ar or one-knot.
    #[arg(long, default_value = "poisson-arch", conflicts_with = "spec")]
    pub preset: String,
    /// SimSpec JSON file instead of a preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContaminateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    pub p: f64,
    /// poisson:<mu> or nb:<r>,<p>.
    #[arg(long, default_value = "poisson:10")]
    pub outlier: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated grid; must contain 1.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct KnotArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// poisson-arch, nb-ar or one-knot.
    #[arg(long, default_value = "poisson-arch")]
    pub preset: String,
    /// Apply the preset's outlier scheme.
    #[arg(long)]
    pub contaminate: bool,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Comma-separated tuning parameters.
    #[arg(long, alias = "alphas")]
    pub grid: Option<String>,
    #[arg(long, default_value = "empirical-mean")]
    pub init_mode: String,
    /// For one-knot presets: estimate the knot by profiling; knot statistics are reported with --knot-stats.
    #[arg(long)]
    pub profile_knot: bool,
    /// Report knot statistics instead of parameter means.
    #[arg(long)]
    pub knot_stats: bool,
    /// text, csv or json.
    #[arg(long, default_value = "text")]
    pub format: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    #[arg(long, default_value = "empirical-mean")]
    pub init_mode: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Echo of how a result was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub data: Option<String>,
    pub model: Option<String>,
    pub family: Option<String>,
    pub alpha: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub seed: u64,
    pub init_mode: Option<LambdaInit>,
    pub out: Option<String>,
    pub fit_options: Option<FitOptions>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunOutput<T> {
    pub run: RunConfig,
    pub result: T,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_json<T: Serialize>(run: RunConfig, out: Option<&Path>, result: T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&RunOutput { run, result })?;
    text.push('\n');
    emit(out, &text)
}

fn preset(name: &str, n: usize, seed: u64) -> Result<(SimSpec, ContamSpec)> {
    match name {
        "poisson-arch" => Ok((presets::poisson_arch(n, seed), presets::poisson_arch_outliers(seed))),
        "nb-ar" => Ok((presets::nb_ar(n, seed), presets::nb_ar_outliers(seed))),
        "one-knot" => Ok((presets::one_knot(n, seed), presets::one_knot_outliers(seed))),
        _ => Err(Error::InvalidSpec(format!("unknown preset `{name}` (poisson-arch, nb-ar, one-knot)"))),
    }
}

struct Prepared {
    cfg: DpdConfig,
    data: Dataset,
    opts: FitOptions,
    run: RunConfig,
}

fn prepare(sub: &str, a: &ModelArgs, alpha: f64, seed: u64) -> Result<Prepared> {
    let data = read_dataset(&a.data)?;
    let family = parse_family(&a.family)?;
    let model = parse_model(&a.model)?;
    let init = parse_init(&a.init_mode)?;
    let cfg = DpdConfig::for_data(alpha, family, model, &data)?.with_init(init);
    let mut opts = FitOptions { jitter_seed: seed, ..FitOptions::default() };
    if let Some(s) = a.starts {
        opts.n_starts = s;
    }
    if let Some(m) = a.max_iter {
        opts.max_iter = m;
    }
    let run = RunConfig {
        subcommand: sub.into(),
        data: Some(a.data.display().to_string()),
        model: Some(a.model.clone()),
        family: Some(a.family.clone()),
        alpha: Some(alpha),
        grid: None,
        seed,
        init_mode: Some(init),
        out: a.out.as_ref().map(|p| p.display().to_string()),
        fit_options: Some(opts.clone()),
    };
    Ok(Prepared { cfg, data, opts, run })
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Simulate(a) => {
            let spec = match &a.spec {
                Some(p) => serde_json::from_str::<SimSpec>(&std::fs::read_to_string(p)?)?,
                None => preset(&a.preset, a.n, seed)?.0,
            };
            let spec = if a.spec.is_some() && cli.seed.is_some() { spec.with_seed(seed, spec.stream) } else { spec };
            emit(a.out.as_deref(), &dataset_to_csv(&simulate(&spec)?))
        }
        Command::Contaminate(a) => {
            let data = read_dataset(&a.data)?;
            let c = ContamSpec { p: a.p, outlier: parse_outlier(&a.outlier)?, seed, stream: 0 };
            emit(a.out.as_deref(), &dataset_to_csv(&contaminate(&data, &c)?))
        }
        Command::Fit(a) => {
            let p = prepare("fit", &a.model, a.alpha, seed)?;
            let res = fit(&p.cfg, &p.data, None, &p.opts)?;
            emit_json(p.run, a.model.out.as_deref(), res)
        }
        Command::Tune(a) => {
            let grid = match &a.grid {
                Some(g) => parse_list(g)?,
                None => DEFAULT_GRID.to_vec(),
            };
            let mut p = prepare("tune", &a.model, 1.0, seed)?;
            p.run.alpha = None;
            p.run.grid = Some(grid.clone());
            let report = tune(&p.cfg, &p.data, Some(&grid), &p.opts)?;
            emit_json(p.run, a.model.out.as_deref(), report)
        }
        Command::Knot(a) => {
            let p = prepare("knot", &a.model, a.alpha, seed)?;
            let res = fit_knot(&p.cfg, &p.data, &p.opts)?;
            emit_json(p.run, a.model.out.as_deref(), res)
        }
        Command::Mc(a) => {
            let (sim, contam) = preset(&a.preset, a.n, seed)?;
            let alphas = match &a.grid {
                Some(g) => parse_list(g)?,
                None => DEFAULT_GRID.to_vec(),
            };
            let mut sc = McScenario::new(sim, a.contaminate.then_some(contam), alphas.clone(), a.reps, seed);
            sc.init = parse_init(&a.init_mode)?;
            sc.profile_knot = a.profile_knot;
            sc.fit.jitter_seed = seed;
            let run = RunConfig {
                subcommand: "mc".into(),
                data: None,
                model: None,
                family: None,
                alpha: None,
                grid: Some(alphas),
                seed,
                init_mode: Some(sc.init),
                out: a.out.as_ref().map(|p| p.display().to_string()),
                fit_options: Some(sc.fit.clone()),
            };
            if a.knot_stats {
                let report = knot_mc(&sc)?;
                return match a.format.as_str() {
                    "json" => emit_json(run, a.out.as_deref(), report),
                    "text" | "csv" => emit(a.out.as_deref(), &report.to_text()),
                    f => Err(Error::InvalidSpec(format!("unknown format `{f}`"))),
                };
            }
            let report = run_mc(&sc)?;
            match a.format.as_str() {
                "text" => emit(a.out.as_deref(), &report.to_text()),
                "csv" => emit(a.out.as_deref(), &report.to_csv()),
                "json" => emit_json(run, a.out.as_deref(), report),
                f => Err(Error::InvalidSpec(format!("unknown format `{f}`"))),
            }
        }
        Command::Diagnose(a) => {
            let data = read_dataset(&a.data)?;
            let text = std::fs::read_to_string(&a.fit)?;
            let fit: FitResult = match serde_json::from_str::<RunOutput<FitResult>>(&text) {
                Ok(o) => o.result,
                Err(_) => serde_json::from_str(&text)?,
            };
            let report = diagnose(&fit.config, &fit.theta, &data, parse_init(&a.init_mode)?, a.level)?;
            emit(a.out.as_deref(), &report.to_csv())
        }
    }
}

/// Exit status for an error: 1 for input and usage problems, 2 for numeric failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidSpec(_)
        | Error::Parse { .. }
        | Error::NegativeCount { .. }
        | Error::NonFiniteCovariate { .. }
        | Error::Io(_)
        | Error::Json(_) => 1,
        _ => 2,
    }
}

/// Parses `argv` (including the program name), runs the command and returns the
/// process exit status.
pub fn parse_and_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            if matches!(e.kind(), clap::error::ErrorKind::InvalidSubcommand | clap::error::ErrorKind::MissingSubcommand) {
                let _ = Cli::command().print_help();
            }
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", e.kind_name());
            exit_code(&e)
        }
    }
}
