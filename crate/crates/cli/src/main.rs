use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use windemos::config::{RunConfig, ScopeKind, DATA_DIR_ENV};
use windemos::dataset::{load_dataset, Dataset, LoadOptions};
use windemos::params_io::{load_correlation, load_params, save_params};
use windemos::pipeline::{self, ForecastValue, ELLIPSE_POINTS};
use windemos::references::{EccSampling, Method};
use windemos::simulate::{simulate, SimulationSpec};

/// Bivariate EMOS for ensemble wind vector forecasts.
#[derive(Parser)]
#[command(name = "windemos", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Directory that relative paths are resolved against.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = ".")]
    data_dir: PathBuf,
    /// Input wind components are in knots and are converted to m/s.
    #[arg(long, global = true)]
    knots: bool,
    /// Random seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Clone)]
struct Training {
    /// Training scope.
    #[arg(long, value_enum, default_value_t = ScopeArg::Regional)]
    scope: ScopeArg,
    /// Training period in days (default 30 regional, 40 local).
    #[arg(long)]
    n_train: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Regional,
    Local,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum MethodArg {
    Emos,
    Independent,
    Ecc,
    ErrorDress,
    SpeedEmos,
    Raw,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Emos => Method::Emos,
            MethodArg::Independent => Method::Independent,
            MethodArg::Ecc => Method::Ecc,
            MethodArg::ErrorDress => Method::ErrorDress,
            MethodArg::SpeedEmos => Method::SpeedEmos,
            MethodArg::Raw => Method::Raw,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a TOML spec (defaults when omitted).
    Simulate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Print the effective spec as TOML instead of simulating.
        #[arg(long)]
        print_spec: bool,
    },
    /// Sector statistics and the direction dependent correlation model.
    FitCorrelation {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Force the harmonic k instead of the lowest-RSS choice.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        k: Option<u8>,
    },
    /// Rolling-window EMOS training for every issue date.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        correlation: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        training: Training,
        /// Use the candidate fit with this k from the correlation file.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        k: Option<u8>,
        /// Member-wise mean model instead of the ensemble mean.
        #[arg(long)]
        member_means: bool,
    },
    /// Predictive distributions and reference forecasts.
    Forecast {
        #[arg(long)]
        params: PathBuf,
        /// Ensembles to forecast.
        #[arg(long)]
        data: PathBuf,
        /// Past forecasts and observations for error dressing (defaults to --data).
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        training: Training,
        /// Methods to produce (repeatable; default all).
        #[arg(long, value_enum)]
        method: Vec<MethodArg>,
        /// ECC with equidistant quantiles instead of random draws.
        #[arg(long)]
        ecc_quantiles: bool,
    },
    /// Scores, rank histograms and marginal calibration data.
    Verify {
        #[arg(long)]
        forecasts: PathBuf,
        /// Observations (the dataset file).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Monte Carlo sample size for the energy score of densities.
        #[arg(long, default_value_t = 10_000)]
        es_samples: usize,
        /// Size of the speed ensemble drawn from densities.
        #[arg(long, default_value_t = 100)]
        speed_ensemble_size: usize,
    },
    /// Figure-ready CSV files.
    PlotData {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Forecast file for ellipses, rank histograms and marginal calibration.
        #[arg(long)]
        forecasts: Option<PathBuf>,
        /// Index of the verified case whose ellipses are drawn.
        #[arg(long, default_value_t = 0)]
        case: usize,
        /// Polyline points per ellipse.
        #[arg(long, default_value_t = ELLIPSE_POINTS)]
        points: usize,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        k: Option<u8>,
        #[arg(long, default_value_t = 10_000)]
        es_samples: usize,
        #[arg(long, default_value_t = 100)]
        speed_ensemble_size: usize,
    },
}

fn config(g: &Global, t: Option<&Training>) -> RunConfig {
    let mut cfg = RunConfig { seed: g.seed, knots: g.knots, data_dir: g.data_dir.clone(), ..RunConfig::default() };
    if let Some(t) = t {
        cfg.scope = match t.scope {
            ScopeArg::Regional => ScopeKind::Regional,
            ScopeArg::Local => ScopeKind::Local,
        };
        cfg.n_train = t.n_train;
    }
    cfg
}

fn load(cfg: &RunConfig, path: &Path, require_observations: bool) -> Result<Dataset> {
    let d = load_dataset(cfg.resolve(path), LoadOptions { require_observations, knots: cfg.knots })?;
    log::info!(
        "{}: {} cases, {} members, {} rows dropped",
        path.display(),
        d.cases.len(),
        d.ensemble_size(),
        d.qc.rows_dropped
    );
    if d.cases.is_empty() {
        bail!("{}: no complete cases", path.display());
    }
    Ok(d)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| windemos::Error::io(path, e))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate { spec, out, print_spec } => {
            let cfg = config(g, None);
            let mut spec = match spec {
                Some(p) => SimulationSpec::load(cfg.resolve(p))?,
                None => SimulationSpec::default(),
            };
            if g.seed != 0 {
                spec.seed = g.seed;
            }
            if print_spec {
                print!("{}", spec.to_toml_string());
                return Ok(());
            }
            let sim = simulate(&spec)?;
            sim.write(cfg.resolve(&out))?;
            println!("wrote {} cases to {}", sim.cases.len(), out.display());
        }
        Command::FitCorrelation { data, out, k } => {
            let cfg = config(g, None);
            let d = load(&cfg, &data, true)?;
            let c = pipeline::fit_correlation_stage(&d.cases, k)?;
            write_text(&cfg.resolve(&out), &c.report)?;
            let m = c.chosen.model;
            println!("k = {}: r = {:.4}, s = {:.4}, phi = {:.2}", m.k, m.r, m.s, m.phi);
        }
        Command::Train { data, correlation, out, training, k, member_means } => {
            let mut cfg = config(g, Some(&training));
            cfg.member_means = member_means;
            let d = load(&cfg, &data, true)?;
            let corr = load_correlation(cfg.resolve(&correlation), k)?;
            let t = pipeline::train(&d.cases, &corr, &cfg)?;
            if t.params.is_empty() {
                bail!("no training window could be fitted");
            }
            save_params(cfg.resolve(&out), &t.params)?;
            println!(
                "fitted {} parameter sets ({} local fallbacks, {} skipped)",
                t.params.len(),
                t.local_fallbacks,
                t.skipped.len()
            );
        }
        Command::Forecast { params, data, history, out, training, method, ecc_quantiles } => {
            let mut cfg = config(g, Some(&training));
            if ecc_quantiles {
                cfg.ecc_sampling = EccSampling::Quantiles;
            }
            let p = load_params(cfg.resolve(&params))?;
            let d = load(&cfg, &data, false)?;
            let h = match &history {
                Some(path) => load(&cfg, path, true)?.cases,
                None => d.cases.clone(),
            };
            let methods: Vec<Method> = if method.is_empty() {
                vec![Method::Emos, Method::Independent, Method::Ecc, Method::ErrorDress, Method::SpeedEmos]
            } else {
                method.into_iter().map(Method::from).collect()
            };
            let records = pipeline::forecast(&d.cases, &h, &p, &methods, &cfg)?;
            if records.is_empty() {
                bail!("no case has parameters for its date");
            }
            pipeline::write_forecasts(&cfg.resolve(&out), &records)?;
            println!("wrote {} forecasts to {}", records.len(), out.display());
        }
        Command::Verify { forecasts, data, out_dir, es_samples, speed_ensemble_size } => {
            let mut cfg = config(g, None);
            cfg.es_samples = es_samples;
            cfg.speed_ensemble_size = speed_ensemble_size;
            let d = load(&cfg, &data, true)?;
            let records = pipeline::read_forecasts(&cfg.resolve(&forecasts))?;
            let v = pipeline::verify(&d.cases, &records, &cfg)?;
            pipeline::write_verify_outputs(&cfg.resolve(&out_dir), &v)?;
            print!("{}", v.table());
        }
        Command::PlotData { data, out_dir, forecasts, case, points, k, es_samples, speed_ensemble_size } => {
            let mut cfg = config(g, None);
            cfg.es_samples = es_samples;
            cfg.speed_ensemble_size = speed_ensemble_size;
            let d = load(&cfg, &data, true)?;
            let dir = cfg.resolve(&out_dir);
            let c = pipeline::fit_correlation_stage(&d.cases, k)?;
            pipeline::write_correlation_plot_data(&dir, &d.cases, &c)?;
            if let Some(f) = forecasts {
                let records = pipeline::read_forecasts(&cfg.resolve(&f))?;
                let v = pipeline::verify(&d.cases, &records, &cfg)?;
                pipeline::write_rank_histograms(&dir.join("rank_histogram.csv"), &v)?;
                pipeline::write_marginal(&dir.join("marginal_calibration.csv"), &v.marginal)?;
                let emos = records
                    .iter()
                    .filter(|r| r.method == Method::Emos)
                    .filter_map(|r| match &r.value {
                        ForecastValue::Density(p) => Some((r, *p)),
                        _ => None,
                    })
                    .nth(case);
                match emos {
                    Some((r, p)) => {
                        let c = d
                            .cases
                            .iter()
                            .find(|c| c.station_id == r.station_id && c.valid_time == r.valid_time)
                            .expect("verified case is in the dataset");
                        pipeline::write_ellipse_plot_data(&dir, c, &p, points)?;
                    }
                    None => log::warn!("no EMOS forecast number {case}; ellipses skipped"),
                }
            }
            println!("wrote plot data to {}", out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
