//! The end-to-end stages behind the command line: correlation fit, rolling
//! training, forecasting, verification and plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, Utc};

use crate::bvn::{prediction_ellipse, BivariateNormalParams};
use crate::config::{RunConfig, ScopeKind, DEFAULT_REGIONAL_DAYS};
use crate::dataset::{format_time, parse_time};
use crate::error::{Error, Result};
use crate::estimation::{build_window, fit_emos_on_window, EmosParameters, FitOptions, Scope, VarCoeffs};
use crate::par::{map_indexed, try_map_indexed};
use crate::params_io::format_correlation_report;
use crate::predict::{fit_speed_emos, make_forecast, SpeedForecast};
use crate::references::{ecc, error_dress, independent_emos, DiscreteForecast, Method};
use crate::rng::{derive_seed, Stream};
use crate::sectors::{sector_scatter, sector_stats, select_correlation, CorrelationFit, CorrelationSpec, SectorStats};
use crate::verify::{
    format_score_csv, format_score_table, marginal_calibration_data, randomize_zero_speeds, score_cases,
    score_speed_cases, CaseScore, Forecast, MarginalRow, RankHistogram, ScoreSummary, VerifyOptions,
};
use crate::wind::{ForecastCase, WindVector};

/// Coverages of the prediction ellipses in the plot data.
pub const ELLIPSE_COVERAGES: [f64; 4] = [0.25, 0.5, 0.75, 0.9];
pub const ELLIPSE_POINTS: usize = 361;

fn issue_time(d: NaiveDate) -> DateTime<Utc> {
    d.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(f)))
}

fn finish<W: std::io::Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

#[derive(Debug, Clone)]
pub struct CorrelationOutcome {
    pub stats: Vec<SectorStats>,
    pub fits: Vec<CorrelationFit>,
    pub best_k: u8,
    pub chosen: CorrelationSpec,
    pub report: String,
}

/// Phase one: sector statistics and the correlation model for k = 1, 2, 3.
/// `k` overrides the selected harmonic.
pub fn fit_correlation_stage(cases: &[ForecastCase], k: Option<u8>) -> Result<CorrelationOutcome> {
    let stats = sector_stats(cases)?;
    let (fits, selected) = select_correlation(&stats)?;
    let best_k = k.unwrap_or(selected);
    let fit = fits
        .iter()
        .find(|f| f.model.k == best_k)
        .ok_or_else(|| Error::InvalidParameter(format!("k must be 1, 2 or 3, got {best_k}")))?;
    let chosen = CorrelationSpec::from(fit.model);
    let report = format_correlation_report(&fits, best_k, &stats, None)?;
    Ok(CorrelationOutcome { stats, fits, best_k, chosen, report })
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    /// Regional blocks for every issue date, followed by Local blocks when
    /// the scope is local.
    pub params: Vec<EmosParameters>,
    /// Local fits replaced by the Regional parameters for lack of data.
    pub local_fallbacks: usize,
    /// Fits that failed outright, with the reason.
    pub skipped: Vec<String>,
}

fn issue_dates(cases: &[ForecastCase], n: usize) -> Vec<NaiveDate> {
    let dates: BTreeSet<NaiveDate> = cases.iter().map(|c| c.valid_time.date_naive()).collect();
    let Some(&first) = dates.iter().next() else {
        return Vec::new();
    };
    let earliest = first + Duration::days(n as i64);
    dates.into_iter().filter(|d| *d >= earliest).collect()
}

fn fit_options(cfg: &RunConfig) -> FitOptions {
    FitOptions { member_means: cfg.member_means, min_local_cases: cfg.min_local_cases }
}

/// Fit one window: the bivariate model plus the wind speed model.
fn fit_date(
    cases: &[ForecastCase],
    date: NaiveDate,
    scope: &Scope,
    n: usize,
    corr: &CorrelationSpec,
    warm: Option<&VarCoeffs>,
    opts: FitOptions,
) -> Result<EmosParameters> {
    let t = issue_time(date);
    let window = build_window(cases, t, scope, n)?;
    let mut fit = fit_emos_on_window(&window, t, scope, corr, warm, opts)?;
    match fit_speed_emos(&window) {
        Ok(s) => fit.params.speed = Some(s.coeffs),
        Err(e) => log::warn!("{scope} {date}: no wind speed model: {e}"),
    }
    Ok(fit.params)
}

/// Rolling training with warm starts. Regional parameters are fitted for
/// every issue date; with the local scope each station is fitted as well,
/// and dates where the station history is too short keep the Regional
/// parameters.
pub fn train(cases: &[ForecastCase], corr: &CorrelationSpec, cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let opts = fit_options(cfg);
    let n_regional = match cfg.scope {
        ScopeKind::Regional => cfg.n_train(),
        ScopeKind::Local => DEFAULT_REGIONAL_DAYS,
    };
    let mut out = TrainOutcome::default();
    let mut warm: Option<VarCoeffs> = None;
    for date in issue_dates(cases, n_regional) {
        match fit_date(cases, date, &Scope::Regional, n_regional, corr, warm.as_ref(), opts) {
            Ok(p) => {
                warm = Some(p.vars);
                out.params.push(p);
            }
            Err(e) => {
                log::warn!("regional {date}: {e}");
                out.skipped.push(format!("regional {date}: {e}"));
            }
        }
    }

    if cfg.scope == ScopeKind::Local {
        let n = cfg.n_train();
        let dates = issue_dates(cases, n);
        let stations: Vec<String> =
            cases.iter().map(|c| c.station_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let per_station = map_indexed(&stations, |_, st| {
            let scope = Scope::Local(st.clone());
            let mut warm: Option<VarCoeffs> = None;
            let mut params = Vec::new();
            let mut fallbacks = 0;
            let mut skipped = Vec::new();
            for &date in &dates {
                match fit_date(cases, date, &scope, n, corr, warm.as_ref(), opts) {
                    Ok(p) => {
                        warm = Some(p.vars);
                        params.push(p);
                    }
                    Err(e) if matches!(e.root(), Error::InsufficientData(_)) => fallbacks += 1,
                    Err(e) => skipped.push(format!("local:{st} {date}: {e}")),
                }
            }
            (params, fallbacks, skipped)
        });
        for (params, fallbacks, skipped) in per_station {
            out.params.extend(params);
            out.local_fallbacks += fallbacks;
            out.skipped.extend(skipped);
        }
        if out.local_fallbacks > 0 {
            log::info!("{} local fits fell back to regional parameters", out.local_fallbacks);
        }
    }
    Ok(out)
}

/// Parameters by scope and issue date.
#[derive(Debug, Clone, Default)]
pub struct ParamIndex {
    map: BTreeMap<(Scope, NaiveDate), EmosParameters>,
}

impl ParamIndex {
    pub fn new(params: &[EmosParameters]) -> Self {
        ParamIndex { map: params.iter().map(|p| ((p.scope.clone(), p.fitted_at.date_naive()), p.clone())).collect() }
    }

    /// Local parameters for the station when asked for and available,
    /// otherwise the Regional ones.
    pub fn lookup(&self, station: &str, date: NaiveDate, scope: ScopeKind) -> Option<&EmosParameters> {
        let local = match scope {
            ScopeKind::Local => self.map.get(&(Scope::Local(station.to_string()), date)),
            ScopeKind::Regional => None,
        };
        local.or_else(|| self.map.get(&(Scope::Regional, date)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForecastValue {
    Density(BivariateNormalParams),
    Members(Vec<WindVector>),
    Speed { location: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub station_id: String,
    pub valid_time: DateTime<Utc>,
    pub method: Method,
    pub value: ForecastValue,
}

/// Forecasts for every case with parameters for its date. `history` supplies
/// the error vectors for error dressing.
pub fn forecast(
    cases: &[ForecastCase],
    history: &[ForecastCase],
    params: &[EmosParameters],
    methods: &[Method],
    cfg: &RunConfig,
) -> Result<Vec<ForecastRecord>> {
    cfg.validate()?;
    let index = ParamIndex::new(params);
    let per_case = try_map_indexed(cases, |i, c| {
        let date = c.valid_time.date_naive();
        let Some(p) = index.lookup(&c.station_id, date, cfg.scope) else {
            return Ok::<_, Error>(Vec::new());
        };
        let record = |method, value| ForecastRecord {
            station_id: c.station_id.clone(),
            valid_time: c.valid_time,
            method,
            value,
        };
        let ctx = |e: Error| e.context(format!("forecast for {} at {}", c.station_id, format_time(c.valid_time)));
        let mut out = Vec::new();
        for &method in methods {
            match method {
                Method::Emos => {
                    let f = make_forecast(p, &c.ensemble).map_err(ctx)?;
                    out.push(record(method, ForecastValue::Density(f.params)));
                }
                Method::Independent => {
                    let f = independent_emos(p, &c.ensemble).map_err(ctx)?;
                    out.push(record(method, ForecastValue::Density(f.params)));
                }
                Method::Ecc => {
                    let f = independent_emos(p, &c.ensemble).map_err(ctx)?;
                    let seed = derive_seed(cfg.seed, Stream::Ecc, i as u64);
                    let d = ecc(&c.ensemble, &f, seed, cfg.ecc_sampling).map_err(ctx)?;
                    out.push(record(method, ForecastValue::Members(d.members)));
                }
                Method::ErrorDress => {
                    let (scope, n) = match &p.scope {
                        Scope::Local(_) => (p.scope.clone(), cfg.n_train()),
                        Scope::Regional if cfg.scope == ScopeKind::Regional => (Scope::Regional, cfg.n_train()),
                        Scope::Regional => (Scope::Regional, DEFAULT_REGIONAL_DAYS),
                    };
                    let Ok(window) = build_window(history, p.fitted_at, &scope, n) else {
                        continue;
                    };
                    let seed = derive_seed(cfg.seed, Stream::ErrorDress, i as u64);
                    let d = error_dress(&window, &c.ensemble, cfg.error_dress_size, seed, cfg.error_selection)
                        .map_err(ctx)?;
                    if d.short {
                        log::debug!("error dressing skipped for {} {date}: short window", c.station_id);
                        continue;
                    }
                    out.push(record(method, ForecastValue::Members(d.forecast.members)));
                }
                Method::Raw => out.push(record(method, ForecastValue::Members(c.ensemble.members.clone()))),
                Method::SpeedEmos => {
                    if let Some(sp) = p.speed {
                        if let SpeedForecast::TruncNormal { location, scale } = sp.forecast(&c.ensemble) {
                            out.push(record(method, ForecastValue::Speed { location, scale }));
                        }
                    }
                }
            }
        }
        Ok(out)
    })?;
    Ok(per_case.into_iter().flatten().collect())
}

pub const FORECAST_HEADER: [&str; 13] = [
    "station_id",
    "valid_time",
    "method",
    "member",
    "u",
    "v",
    "mu_u",
    "mu_v",
    "var_u",
    "var_v",
    "rho",
    "location",
    "scale",
];

pub fn write_forecasts(path: &Path, records: &[ForecastRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(FORECAST_HEADER)?;
    for r in records {
        let t = format_time(r.valid_time);
        let head = [r.station_id.clone(), t, r.method.name().to_string()];
        match &r.value {
            ForecastValue::Density(p) => {
                let tail = ["", "", ""].map(String::from);
                let vals = [p.mu_u, p.mu_v, p.var_u, p.var_v, p.rho].map(num);
                w.write_record(head.iter().chain(&tail).chain(&vals).chain(&["".into(), "".into()]))?;
            }
            ForecastValue::Members(ms) => {
                for (j, m) in ms.iter().enumerate() {
                    let vals = [(j + 1).to_string(), num(m.u), num(m.v)];
                    let empty = vec![String::new(); 7];
                    w.write_record(head.iter().chain(&vals).chain(&empty))?;
                }
            }
            ForecastValue::Speed { location, scale } => {
                let empty = vec![String::new(); 8];
                w.write_record(head.iter().chain(&empty).chain(&[num(*location), num(*scale)]))?;
            }
        }
    }
    finish(w, path)
}

pub fn read_forecasts(path: &Path) -> Result<Vec<ForecastRecord>> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != FORECAST_HEADER {
        return Err(Error::Parse { path: name, line: 1, message: "unexpected forecast header".into() });
    }
    let mut out: Vec<ForecastRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |m: String| Error::Parse { path: name.clone(), line, message: m };
        let f = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| err(format!("{}: cannot parse {:?}", FORECAST_HEADER[i], &rec[i])))
        };
        let valid_time = parse_time(&rec[1]).map_err(err)?;
        let method: Method = rec[2].parse().map_err(|e: Error| err(e.to_string()))?;
        let station_id = rec[0].to_string();
        let value = match method {
            Method::Emos | Method::Independent => ForecastValue::Density(
                BivariateNormalParams::new(f(6)?, f(7)?, f(8)?, f(9)?, f(10)?).map_err(|e| err(e.to_string()))?,
            ),
            Method::SpeedEmos => ForecastValue::Speed { location: f(11)?, scale: f(12)? },
            _ => {
                let w = WindVector::new(f(4)?, f(5)?);
                if let Some(last) = out.last_mut() {
                    if last.method == method && last.station_id == station_id && last.valid_time == valid_time {
                        if let ForecastValue::Members(ms) = &mut last.value {
                            ms.push(w);
                            continue;
                        }
                    }
                }
                ForecastValue::Members(vec![w])
            }
        };
        out.push(ForecastRecord { station_id, valid_time, method, value });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MethodScores {
    pub method: Method,
    pub summary: ScoreSummary,
    pub histogram: Option<RankHistogram>,
    /// Vector methods only, aligned with `VerifyOutcome::keys`.
    pub cases: Vec<CaseScore>,
    /// `(crps, ae)` per case for speed-only methods.
    pub speed_cases: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    /// The verified cases, common to all methods, by time then station.
    pub keys: Vec<(String, DateTime<Utc>)>,
    pub methods: Vec<MethodScores>,
    pub marginal: Vec<MarginalRow>,
}

impl VerifyOutcome {
    pub fn get(&self, method: Method) -> Option<&MethodScores> {
        self.methods.iter().find(|m| m.method == method)
    }

    fn rows(&self, label: bool) -> Vec<(String, ScoreSummary)> {
        self.methods
            .iter()
            .map(|m| (if label { m.method.label() } else { m.method.name() }.to_string(), m.summary.clone()))
            .collect()
    }

    pub fn table(&self) -> String {
        format_score_table(&self.rows(true))
    }
}

/// Score every method on the cases that all of them forecast and that have
/// an observation.
pub fn verify(cases: &[ForecastCase], records: &[ForecastRecord], cfg: &RunConfig) -> Result<VerifyOutcome> {
    cfg.validate()?;
    let observed: BTreeMap<(DateTime<Utc>, &str), &ForecastCase> =
        cases.iter().filter(|c| c.observation.is_some()).map(|c| ((c.valid_time, c.station_id.as_str()), c)).collect();
    let mut by_method: BTreeMap<Method, BTreeMap<(DateTime<Utc>, &str), &ForecastValue>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().insert((r.valid_time, r.station_id.as_str()), &r.value);
    }
    if by_method.is_empty() {
        return Err(Error::InsufficientData("no forecasts to verify".into()));
    }
    let keys: Vec<(DateTime<Utc>, &str)> =
        observed.keys().filter(|k| by_method.values().all(|m| m.contains_key(*k))).copied().collect();
    if keys.is_empty() {
        return Err(Error::InsufficientData("no case has both an observation and every forecast".into()));
    }
    let obs: Vec<WindVector> = keys.iter().map(|k| observed[k].observation.expect("filtered")).collect();
    let speeds = randomize_zero_speeds(&obs.iter().map(|o| o.speed()).collect::<Vec<_>>(), cfg.seed);
    let opts =
        VerifyOptions { es_samples: cfg.es_samples, speed_ensemble_size: cfg.speed_ensemble_size, seed: cfg.seed };

    let mut methods = Vec::new();
    for (&method, fc) in &by_method {
        let ctx = |e: Error| e.context(format!("verifying {method}"));
        if method == Method::SpeedEmos {
            let sf: Vec<SpeedForecast> = keys
                .iter()
                .map(|k| match fc[k] {
                    ForecastValue::Speed { location, scale } => {
                        Ok(SpeedForecast::TruncNormal { location: *location, scale: *scale })
                    }
                    _ => Err(Error::DatasetShape(format!("{method} record is not a speed forecast"))),
                })
                .collect::<Result<_>>()?;
            let (summary, speed_cases) = score_speed_cases(&sf, &speeds).map_err(ctx)?;
            methods.push(MethodScores { method, summary, histogram: None, cases: Vec::new(), speed_cases });
            continue;
        }
        let forecasts: Vec<Forecast> =
            keys.iter().map(|k| to_forecast(method, fc[k])).collect::<Result<_>>().map_err(ctx)?;
        let (summary, scores, hist) = score_cases(&forecasts, &obs, &speeds, &opts).map_err(ctx)?;
        methods.push(MethodScores { method, summary, histogram: Some(hist), cases: scores, speed_cases: Vec::new() });
    }

    let marginal = match by_method.get(&Method::Emos) {
        Some(fc) => {
            let densities: Vec<BivariateNormalParams> = keys
                .iter()
                .map(|k| match fc[k] {
                    ForecastValue::Density(p) => *p,
                    _ => unreachable!("checked while scoring"),
                })
                .collect();
            let verified: Vec<ForecastCase> = keys.iter().map(|k| observed[k].clone()).collect();
            marginal_calibration_data(&verified, &densities, cfg.seed)?
        }
        None => Vec::new(),
    };

    Ok(VerifyOutcome { keys: keys.into_iter().map(|(t, s)| (s.to_string(), t)).collect(), methods, marginal })
}

fn to_forecast(method: Method, v: &ForecastValue) -> Result<Forecast> {
    use crate::predict::{DensityForecast, Provenance};
    match v {
        ForecastValue::Density(p) => Ok(Forecast::Density(DensityForecast {
            params: *p,
            provenance: Provenance { scope: Scope::Regional, issue_time: DateTime::UNIX_EPOCH, station: None },
            zero_direction: false,
        })),
        ForecastValue::Members(ms) => Ok(Forecast::Discrete(DiscreteForecast { members: ms.clone(), method })),
        ForecastValue::Speed { .. } => Err(Error::DatasetShape(format!("{method} record has no wind vector"))),
    }
}

/// Write `scores.txt`, `scores.csv`, `case_scores.csv`, `rank_histogram.csv`
/// and `marginal_calibration.csv` into `dir`.
pub fn write_verify_outputs(dir: &Path, v: &VerifyOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("scores.txt");
    std::fs::write(&p, v.table()).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("scores.csv");
    std::fs::write(&p, format_score_csv(&v.rows(false))).map_err(|e| Error::io(&p, e))?;

    let p = dir.join("case_scores.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["station_id", "valid_time", "method", "es", "bae", "crps", "ae", "rank"])?;
    for m in &v.methods {
        for (i, (st, t)) in v.keys.iter().enumerate() {
            let head = [st.clone(), format_time(*t), m.method.name().to_string()];
            let tail = match (m.cases.get(i), m.speed_cases.get(i)) {
                (Some(s), _) => [num(s.es), num(s.bae), num(s.crps), num(s.ae), s.rank.to_string()],
                (None, Some(&(crps, ae))) => [String::new(), String::new(), num(crps), num(ae), String::new()],
                (None, None) => continue,
            };
            w.write_record(head.iter().chain(&tail))?;
        }
    }
    finish(w, &p)?;

    write_rank_histograms(&dir.join("rank_histogram.csv"), v)?;
    write_marginal(&dir.join("marginal_calibration.csv"), &v.marginal)
}

pub fn write_rank_histograms(path: &Path, v: &VerifyOutcome) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "rank", "count", "frequency"])?;
    for m in &v.methods {
        if let Some(h) = &m.histogram {
            for (i, (c, f)) in h.counts.iter().zip(h.frequencies()).enumerate() {
                w.write_record([m.method.name().to_string(), (i + 1).to_string(), c.to_string(), num(f)])?;
            }
        }
    }
    finish(w, path)
}

pub fn write_marginal(path: &Path, rows: &[MarginalRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["obs_u", "obs_v", "raw_u", "raw_v", "emos_u", "emos_v"])?;
    for r in rows {
        w.write_record(
            [r.obs_perturbed.u, r.obs_perturbed.v, r.raw_member.u, r.raw_member.v, r.emos_sample.u, r.emos_sample.v]
                .map(num),
        )?;
    }
    finish(w, path)
}

/// Sector scatter, sector statistics and the fitted correlation curves.
pub fn write_correlation_plot_data(dir: &Path, cases: &[ForecastCase], c: &CorrelationOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("sector_scatter.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["sector", "obs_u", "obs_v"])?;
    for (sector, pts) in sector_scatter(cases)? {
        for pt in pts {
            w.write_record([sector.get().to_string(), num(pt.u), num(pt.v)])?;
        }
    }
    finish(w, &p)?;

    let p = dir.join("sector_stats.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["sector", "count", "corr", "center_dir"])?;
    for s in &c.stats {
        w.write_record([s.sector.get().to_string(), s.count.to_string(), opt(s.corr), opt(s.center_dir)])?;
    }
    finish(w, &p)?;

    let p = dir.join("correlation_curve.csv");
    let mut w = csv_writer(&p)?;
    let mut header = vec!["theta".to_string()];
    header.extend(c.fits.iter().map(|f| format!("k{}", f.model.k)));
    header.push("chosen".into());
    w.write_record(&header)?;
    for deg in 0..=360 {
        let theta = deg as f64;
        let mut row = vec![num(theta)];
        row.extend(c.fits.iter().map(|f| num(f.model.eval(theta))));
        row.push(num(c.chosen.model.eval(theta)));
        w.write_record(&row)?;
    }
    finish(w, &p)
}

/// Prediction ellipses of the bivariate EMOS forecast for one case, with the
/// ensemble members and the observation.
pub fn write_ellipse_plot_data(
    dir: &Path,
    case: &ForecastCase,
    density: &BivariateNormalParams,
    points: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("ellipses.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["station_id", "valid_time", "coverage", "point", "u", "v"])?;
    let t = format_time(case.valid_time);
    for cov in ELLIPSE_COVERAGES {
        let e = prediction_ellipse(density, cov)?;
        for (i, pt) in e.polyline(points).iter().enumerate() {
            w.write_record([case.station_id.clone(), t.clone(), num(cov), i.to_string(), num(pt.u), num(pt.v)])?;
        }
    }
    finish(w, &p)?;

    let p = dir.join("ellipse_context.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["kind", "u", "v"])?;
    for m in &case.ensemble.members {
        w.write_record(["member".to_string(), num(m.u), num(m.v)])?;
    }
    w.write_record(["forecast_mean".to_string(), num(density.mu_u), num(density.mu_v)])?;
    if let Some(o) = case.observation {
        w.write_record(["observation".to_string(), num(o.u), num(o.v)])?;
    }
    finish(w, &p)
}
