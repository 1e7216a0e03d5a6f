//! Command-line front end: `fit`, `predict`, `validate`, `variogram` and
//! `simulate`.
//!
//! Every output file starts with `#` lines recording the tool version, the
//! configuration hash and the hyperparameters. Exit codes: 0 on success, 1
//! on internal errors, 2 on user or data errors.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::artifact::{format_artifact, load_artifact, FitArtifact};
use crate::covariance::Hyperparameters;
use crate::dataio::{
    format_sig6, load_grid, load_stations, pair_and_threshold, save_grid, write_atomic, EventId, StationSet,
};
use crate::diagnostics::{semivariogram, split_holdout, validate, VariogramVariable, DEFAULT_VARIOGRAM_SIMULATIONS};
use crate::error::{Error, Result};
use crate::inference::{fit_model, FitOptions};
use crate::parallel;
use crate::prediction::{posterior_field, predict_grid, sample_field, IntervalLaw, Target};

pub use config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "fieldcal", version, about = "Calibrate simulated spatial fields against station measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to the events listed in a configuration file.
    Fit(FitArgs),
    /// Posterior of the actual field on a grid or at points.
    Predict(PredictArgs),
    /// Hold-out validation diagnostics.
    Validate(ValidateArgs),
    /// Binned semivariogram with model-based bounds.
    Variogram(VariogramArgs),
    /// Conditional simulation of field realizations at points.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a configuration entry, e.g. `--set threshold_u=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IntervalArg {
    Gauss,
    T,
    Auto,
}

impl From<IntervalArg> for IntervalLaw {
    fn from(a: IntervalArg) -> Self {
        match a {
            IntervalArg::Gauss => IntervalLaw::Gaussian,
            IntervalArg::T => IntervalLaw::StudentT,
            IntervalArg::Auto => IntervalLaw::Auto,
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(short = 'f', long = "fit")]
    pub fit: PathBuf,
    #[arg(short, long)]
    pub event: String,
    #[arg(long, required_unless_present = "points")]
    pub grid: Option<PathBuf>,
    /// CSV with columns `s1,s2,x`.
    #[arg(long, conflicts_with = "grid")]
    pub points: Option<PathBuf>,
    /// Compute the full posterior covariance rather than the diagonal.
    #[arg(long)]
    pub full_cov: bool,
    #[arg(long, value_enum, default_value = "auto")]
    pub interval: IntervalArg,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(short = 'f', long = "fit")]
    pub fit: PathBuf,
    #[arg(short, long)]
    pub config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariableArg {
    H1,
    H2,
    Intensity,
}

impl From<VariableArg> for VariogramVariable {
    fn from(a: VariableArg) -> Self {
        match a {
            VariableArg::H1 => Self::H1,
            VariableArg::H2 => Self::H2,
            VariableArg::Intensity => Self::DeltaIntensity,
        }
    }
}

#[derive(Debug, Args)]
pub struct VariogramArgs {
    #[arg(short = 'f', long = "fit")]
    pub fit: PathBuf,
    #[arg(short, long)]
    pub event: String,
    #[arg(long = "var", value_enum, default_value = "h1")]
    pub variable: VariableArg,
    #[arg(long, default_value_t = 15)]
    pub bins: usize,
    /// Number of simulated residual fields behind the bounds.
    #[arg(long, default_value_t = DEFAULT_VARIOGRAM_SIMULATIONS)]
    pub sims: usize,
    /// Seed for the bounds; defaults to the fit's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(short = 'f', long = "fit")]
    pub fit: PathBuf,
    #[arg(short, long)]
    pub event: String,
    /// CSV with columns `s1,s2,x`.
    #[arg(long)]
    pub points: PathBuf,
    #[arg(short, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_user_error() {
        2
    } else {
        1
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Variogram(a) => cmd_variogram(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn theta_line(t: &Hyperparameters) -> String {
    format!(
        "theta omega={} lambda2={} phi1={} phi2={} nu1={} nu2={} phi_x={}",
        format_sig6(t.omega),
        format_sig6(t.lambda2),
        format_sig6(t.phi1),
        format_sig6(t.phi2),
        format_sig6(t.nu1),
        format_sig6(t.nu2),
        format_sig6(t.phi_x)
    )
}

/// Comment lines (without the leading `# `) shared by all outputs.
fn header_lines(hash: &str, theta: &Hyperparameters, extra: &[String]) -> Vec<String> {
    let mut lines = vec![format!("fieldcal {VERSION}"), format!("config_hash {hash}"), theta_line(theta)];
    lines.extend_from_slice(extra);
    lines
}

fn with_header(lines: &[String], body: &str) -> String {
    let mut out = String::new();
    for l in lines {
        let _ = writeln!(out, "# {l}");
    }
    out.push_str(body);
    out
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn output_dir(explicit: &Option<PathBuf>, fit_path: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        fit_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

/// Reads prediction targets from CSV with columns `s1,s2,x` (or `x_sim`).
pub fn load_targets(path: &Path) -> Result<Vec<Target>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let bad = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let headers = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    let col = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.contains(&h))
            .ok_or_else(|| bad(1, format!("missing column '{}'", names[0])))
    };
    let (c1, c2, cx) = (col(&["s1"])?, col(&["s2"])?, col(&["x", "x_sim"])?);
    let mut targets = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let get = |c: usize| -> Result<f64> {
            let raw = row.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(line, format!("'{raw}' is not a finite number")))
        };
        targets.push(Target::new(get(c1)?, get(c2)?, get(cx)?));
    }
    if targets.is_empty() {
        return Err(bad(1, "no targets".into()));
    }
    Ok(targets)
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let overrides = config::parse_overrides(&args.set)?;
    let cfg = RunConfig::load(&args.config, &overrides)?;
    let out_dir = args.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let stations = StationSet::merge(
        cfg.station_paths
            .iter()
            .map(load_stations)
            .collect::<Result<Vec<_>>>()?,
    )?;

    let q = cfg.prior.q();
    let mut datasets = Vec::new();
    let mut holdout = std::collections::BTreeMap::new();
    let mut empty = Vec::new();
    for (j, path) in cfg.grid_paths.iter().enumerate() {
        let grid = load_grid(path)?;
        let data = match pair_and_threshold(&stations, &grid, cfg.threshold_u) {
            Ok(d) => d,
            Err(Error::EmptyDataset(ev)) => {
                log::warn!("event {ev}: no stations above threshold {}; skipped", cfg.threshold_u);
                empty.push(ev);
                continue;
            }
            Err(e) => return Err(e),
        };
        let k = data.len();
        let data = if cfg.validation_holdout > 0 && k > cfg.validation_holdout + q {
            let (train, valid) = split_holdout(&data, cfg.validation_holdout, q, parallel::derive_seed(cfg.seed, j as u64))?;
            holdout.insert(data.event.clone(), valid.pairs);
            train
        } else {
            if cfg.validation_holdout > 0 {
                log::warn!(
                    "event {}: {k} stations are too few to hold out {}; using all for fitting",
                    data.event,
                    cfg.validation_holdout
                );
            }
            data
        };
        if data.len() <= q {
            log::warn!("event {}: {} stations, need more than {q}; skipped", data.event, data.len());
            holdout.remove(&data.event);
            continue;
        }
        datasets.push(data);
    }
    if datasets.is_empty() {
        return Err(if empty.len() == cfg.grid_paths.len() {
            Error::EmptyDataset(empty.join(", "))
        } else {
            Error::InsufficientStations("no event has enough stations to fit".into())
        });
    }

    log::info!("fitting {} events", datasets.len());
    let fit = fit_model(
        &datasets,
        &cfg.prior,
        &FitOptions {
            theta0: cfg.theta0,
            optimizer: cfg.optimizer.clone(),
        },
    )?;
    for (ev, lambda) in fit.nugget_warnings() {
        log::warn!(
            "event {ev}: lambda2 * sigma2 = {} is below sigma_y^2; the nugget cannot cover measurement error",
            format_sig6(lambda)
        );
    }
    let artifact = FitArtifact {
        config_hash: cfg.hash.clone(),
        seed: cfg.seed,
        fit,
        holdout,
    };

    ensure_dir(&out_dir)?;
    let header = header_lines(&cfg.hash, &artifact.fit.theta, &[]);
    let body = format_artifact(&artifact)?;
    write_atomic(out_dir.join("fit.out"), &with_header(&header, &body))?;
    write_atomic(out_dir.join("fit_summary.csv"), &with_header(&header, &fit_summary(&artifact)))?;
    log::info!("log-posterior {}", artifact.fit.log_posterior);
    println!(
        "fitted {} events; {}; log-posterior {}",
        artifact.fit.events.len(),
        theta_line(&artifact.fit.theta),
        format_sig6(artifact.fit.log_posterior)
    );
    Ok(())
}

fn fit_summary(a: &FitArtifact) -> String {
    let fit = &a.fit;
    let sy2 = fit.prior.sigma_y * fit.prior.sigma_y;
    let mut out = String::from("event,K,beta_hat,sigma_hat,nugget_covers_measurement_error\n");
    for ev in &fit.events {
        let beta: Vec<String> = ev.beta_hat.iter().map(|b| format_sig6(*b)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            ev.event,
            ev.k,
            beta.join(" "),
            format_sig6(ev.sigma_hat2.sqrt()),
            fit.theta.lambda2 * ev.sigma_hat2 >= sy2
        );
    }
    out
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let art = load_artifact(&args.fit)?;
    let event = EventId::new(args.event.clone());
    let out_dir = output_dir(&args.output, &args.fit);
    ensure_dir(&out_dir)?;
    let law = IntervalLaw::from(args.interval);
    let header = header_lines(&art.config_hash, &art.fit.theta, &[format!("event {event}")]);

    if let Some(grid_path) = &args.grid {
        let grid = load_grid(grid_path)?;
        let pred = predict_grid(&art.fit, &event, &grid, args.full_cov)?;
        let outputs = [
            ("mean", pred.mean_grid()?),
            ("sd", pred.sd_grid()?),
            ("diff", pred.difference_grid()?),
            ("ratio", pred.ratio_grid()?),
            ("mask", pred.mask_grid()?),
        ];
        for (name, g) in outputs {
            let path = out_dir.join(format!("{event}_{name}.fg"));
            let mut lines = header.clone();
            lines.push(format!("quantity {name}"));
            save_grid(&g, &path, &lines)?;
        }
        let n_extra = pred.extrapolated.iter().filter(|e| **e).count();
        println!(
            "predicted {} cells for event {event}; {n_extra} at or below threshold {}",
            pred.cells.len(),
            format_sig6(pred.threshold)
        );
    }
    if let Some(points) = &args.points {
        let targets = load_targets(points)?;
        let post = posterior_field(&art.fit, &event, &targets, args.full_cov)?;
        write_atomic(out_dir.join(format!("{event}_predict.csv")), &with_header(&header, &post.to_csv(law)?))?;
        println!("predicted {} points for event {event}", targets.len());
    }
    Ok(())
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let overrides = config::parse_overrides(&args.set)?;
    let cfg = RunConfig::load(&args.config, &overrides)?;
    if cfg.validation_holdout == 0 {
        return Err(Error::InsufficientStations("validation_holdout is 0".into()));
    }
    let art = load_artifact(&args.fit)?;
    if art.config_hash != cfg.hash {
        log::warn!("configuration differs from the one used for the fit");
    }
    let out_dir = args.output.clone().unwrap_or_else(|| output_dir(&None, &args.fit));
    ensure_dir(&out_dir)?;
    let header = header_lines(&art.config_hash, &art.fit.theta, &[]);
    let mut summary = String::from("event,n_validation,df_denominator,mahalanobis,p_value,raw_sum_squares\n");
    let mut any = false;
    for ev in &art.fit.events {
        let held = art.holdout(&ev.event);
        if held.is_empty() {
            log::warn!("event {}: no held-out stations", ev.event);
            continue;
        }
        any = true;
        let report = validate(&art.fit, &ev.event, held)?;
        let name = |s: &str| out_dir.join(format!("{}_{s}.csv", ev.event));
        write_atomic(name("validation"), &with_header(&header, &report.errors_csv()))?;
        write_atomic(name("qq"), &with_header(&header, &report.qq_csv()))?;
        summary.push_str(report.summary_csv().lines().nth(1).unwrap_or_default());
        summary.push('\n');
        println!(
            "event {}: D_MH {} (F({}, {}) p = {})",
            ev.event,
            format_sig6(report.mahalanobis),
            report.df_pair.0,
            report.df_pair.1,
            format_sig6(report.mahalanobis_pvalue)
        );
    }
    if !any {
        return Err(Error::InsufficientStations("the fit holds out no validation stations".into()));
    }
    write_atomic(out_dir.join("validation_summary.csv"), &with_header(&header, &summary))
}

pub fn cmd_variogram(args: &VariogramArgs) -> Result<()> {
    let art = load_artifact(&args.fit)?;
    let event = EventId::new(args.event.clone());
    let variable = VariogramVariable::from(args.variable);
    let seed = args.seed.unwrap_or(art.seed);
    let table = semivariogram(&art.fit, &event, variable, args.bins, args.sims, seed)?;
    let out_dir = output_dir(&args.output, &args.fit);
    ensure_dir(&out_dir)?;
    let header = header_lines(
        &art.config_hash,
        &art.fit.theta,
        &[format!("event {event}"), format!("simulations {} seed {seed}", args.sims)],
    );
    let stem = format!("{event}_variogram_{}", variable.name());
    write_atomic(out_dir.join(format!("{stem}.csv")), &with_header(&header, &table.to_csv()))?;
    write_atomic(out_dir.join(format!("{stem}_long.csv")), &with_header(&header, &table.to_long_csv()))?;
    println!(
        "event {event}, {}: {} of {} bins inside the 95% bounds ({})",
        variable.name(),
        (table.fraction_inside() * table.bins() as f64).round() as usize,
        table.bins(),
        format_sig6(table.fraction_inside())
    );
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.n == 0 {
        return Err(Error::Domain("-n must be at least 1".into()));
    }
    let art = load_artifact(&args.fit)?;
    let event = EventId::new(args.event.clone());
    let targets = load_targets(&args.points)?;
    let post = posterior_field(&art.fit, &event, &targets, true)?;
    let draws = sample_field(&post, args.n, args.seed)?;
    let out_dir = output_dir(&args.output, &args.fit);
    ensure_dir(&out_dir)?;
    let header = header_lines(
        &art.config_hash,
        &art.fit.theta,
        &[format!("event {event}"), format!("seed {} realizations {}", args.seed, args.n)],
    );
    let mut body = String::from("s1,s2,x");
    for r in 1..=args.n {
        let _ = write!(body, ",r{r:04}");
    }
    body.push('\n');
    for (i, t) in targets.iter().enumerate() {
        let _ = write!(body, "{:?},{:?},{:?}", t.location.0, t.location.1, t.intensity);
        for d in &draws {
            let _ = write!(body, ",{:?}", d.values[i]);
        }
        body.push('\n');
    }
    let path = out_dir.join(format!("{event}_realizations.csv"));
    write_atomic(&path, &with_header(&header, &body))?;
    println!("wrote {} realizations to {}", args.n, path.display());
    Ok(())
}
