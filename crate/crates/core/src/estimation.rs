//! Rolling training windows and the online estimation phases: least squares
//! for the mean coefficients and maximum likelihood for the variance
//! coefficients, with the correlation model held fixed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use nalgebra::{DMatrix, DVector};

use crate::bvn::{BivariateNormalParams, MAX_ABS_RHO};
use crate::error::{Error, Result};
use crate::numeric::stable_sum;
use crate::optim::{bfgs, BfgsOptions};
use crate::par;
use crate::predict::SpeedEmosCoeffs;
use crate::sectors::CorrelationSpec;
use crate::wind::{EnsembleForecast, EnsembleStats, ForecastCase, WindVector};

/// Minimum window size for a Local fit that came up short of `n` days.
pub const MIN_LOCAL_CASES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Regional,
    Local(String),
}

impl Scope {
    pub fn station(&self) -> Option<&str> {
        match self {
            Scope::Regional => None,
            Scope::Local(s) => Some(s),
        }
    }

    pub fn is_regional(&self) -> bool {
        matches!(self, Scope::Regional)
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Regional => write!(f, "regional"),
            Scope::Local(s) => write!(f, "local:{s}"),
        }
    }
}

impl FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "regional" {
            Ok(Scope::Regional)
        } else if let Some(st) = s.strip_prefix("local:") {
            Ok(Scope::Local(st.to_string()))
        } else {
            Err(Error::InvalidParameter(format!("unknown scope {s:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub cases: Vec<ForecastCase>,
    pub length_days: usize,
    /// Distinct valid dates represented in the window.
    pub days_collected: usize,
    /// Local windows only: fewer than `length_days` days were available.
    pub shortfall: bool,
}

impl TrainingWindow {
    pub fn from_cases(cases: Vec<ForecastCase>) -> Self {
        let days: BTreeSet<NaiveDate> = cases.iter().map(|c| c.valid_time.date_naive()).collect();
        TrainingWindow { length_days: days.len(), days_collected: days.len(), shortfall: false, cases }
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

/// Training window for a forecast issued at `issue_time`.
///
/// Regional windows take every observed case, at any station, whose valid
/// date lies in the `n` calendar days before the issue date. Local windows
/// walk backwards through the station's observed cases until `n` distinct
/// days are collected, flagging a shortfall when the history runs out.
pub fn build_window(
    cases: &[ForecastCase],
    issue_time: DateTime<Utc>,
    scope: &Scope,
    n: usize,
) -> Result<TrainingWindow> {
    if n == 0 {
        return Err(Error::InvalidParameter("training length must be at least 1 day".into()));
    }
    let issue_date = issue_time.date_naive();
    let window = match scope {
        Scope::Regional => {
            let first = issue_date - Duration::days(n as i64);
            let selected: Vec<ForecastCase> = cases
                .iter()
                .filter(|c| c.observation.is_some())
                .filter(|c| {
                    let d = c.valid_time.date_naive();
                    d >= first && d < issue_date
                })
                .cloned()
                .collect();
            let days: BTreeSet<NaiveDate> = selected.iter().map(|c| c.valid_time.date_naive()).collect();
            TrainingWindow { days_collected: days.len(), cases: selected, length_days: n, shortfall: false }
        }
        Scope::Local(station) => {
            let mut history: Vec<&ForecastCase> = cases
                .iter()
                .filter(|c| &c.station_id == station && c.observation.is_some())
                .filter(|c| c.valid_time.date_naive() < issue_date)
                .collect();
            history.sort_by_key(|c| std::cmp::Reverse(c.valid_time));
            let mut days = BTreeSet::new();
            let mut selected = Vec::new();
            for c in history {
                let d = c.valid_time.date_naive();
                if !days.contains(&d) {
                    if days.len() == n {
                        break;
                    }
                    days.insert(d);
                }
                selected.push(c.clone());
            }
            selected.reverse();
            TrainingWindow { days_collected: days.len(), shortfall: days.len() < n, cases: selected, length_days: n }
        }
    };
    if window.cases.is_empty() {
        return Err(Error::InsufficientData(format!("empty {scope} training window before {issue_time}")));
    }
    Ok(window)
}

/// Mean model coefficients. In the standard form `mu_u = a_u + b_u * u_bar`;
/// when member slopes are present, `mu_u = a_u + sum_i b_{u,i} * u_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCoeffs {
    pub a_u: f64,
    pub b_u: f64,
    pub a_v: f64,
    pub b_v: f64,
    pub member_slopes: Option<MemberSlopes>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberSlopes {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl MeanCoeffs {
    pub fn identity() -> Self {
        MeanCoeffs { a_u: 0.0, b_u: 1.0, a_v: 0.0, b_v: 1.0, member_slopes: None }
    }

    /// Member-wise form equivalent to the standard coefficients.
    pub fn to_member_form(&self, m: usize) -> MeanCoeffs {
        MeanCoeffs {
            member_slopes: Some(MemberSlopes { u: vec![self.b_u / m as f64; m], v: vec![self.b_v / m as f64; m] }),
            ..self.clone()
        }
    }

    pub fn mean(&self, ensemble: &EnsembleForecast, stats: &EnsembleStats) -> Result<WindVector> {
        match &self.member_slopes {
            None => Ok(WindVector::new(self.a_u + self.b_u * stats.u_bar, self.a_v + self.b_v * stats.v_bar)),
            Some(sl) => {
                if sl.u.len() != ensemble.len() || sl.v.len() != ensemble.len() {
                    return Err(Error::InvalidParameter(format!(
                        "{} member slopes for a {}-member ensemble",
                        sl.u.len(),
                        ensemble.len()
                    )));
                }
                let mu = self.a_u + stable_sum(sl.u.iter().zip(&ensemble.members).map(|(b, w)| b * w.u));
                let mv = self.a_v + stable_sum(sl.v.iter().zip(&ensemble.members).map(|(b, w)| b * w.v));
                Ok(WindVector::new(mu, mv))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFit {
    pub coeffs: MeanCoeffs,
    /// The regressor was constant and the fit fell back to intercept only.
    pub degenerate_u: bool,
    pub degenerate_v: bool,
}

fn observed(window: &TrainingWindow) -> Result<Vec<(EnsembleStats, WindVector)>> {
    window
        .cases
        .iter()
        .map(|c| {
            let obs = c.observation.ok_or_else(|| {
                Error::InvalidParameter(format!("training case {} {} has no observation", c.station_id, c.valid_time))
            })?;
            Ok((c.ensemble.stats()?, obs))
        })
        .collect()
}

/// Simple linear regression of `y` on `x`; `None` when `x` is constant.
fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let mx = stable_sum(x.iter().copied()) / n;
    let my = stable_sum(y.iter().copied()) / n;
    let sxx = stable_sum(x.iter().map(|v| (v - mx) * (v - mx)));
    let sxy = stable_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let scale = stable_sum(x.iter().map(|v| v * v)).max(f64::MIN_POSITIVE);
    if sxx <= 1e-12 * scale || sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    Some((my - b * mx, b))
}

/// Ordinary least squares of the observed components on the ensemble means,
/// one regression per component.
pub fn fit_means(window: &TrainingWindow) -> Result<MeanFit> {
    let data = observed(window)?;
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!("mean regression needs at least 2 cases, got {}", data.len())));
    }
    let ubar: Vec<f64> = data.iter().map(|(s, _)| s.u_bar).collect();
    let vbar: Vec<f64> = data.iter().map(|(s, _)| s.v_bar).collect();
    let uo: Vec<f64> = data.iter().map(|(_, o)| o.u).collect();
    let vo: Vec<f64> = data.iter().map(|(_, o)| o.v).collect();
    let n = data.len() as f64;
    let (a_u, b_u, degenerate_u) = match ols(&ubar, &uo) {
        Some((a, b)) => (a, b, false),
        None => (stable_sum(uo.iter().copied()) / n, 0.0, true),
    };
    let (a_v, b_v, degenerate_v) = match ols(&vbar, &vo) {
        Some((a, b)) => (a, b, false),
        None => (stable_sum(vo.iter().copied()) / n, 0.0, true),
    };
    Ok(MeanFit { coeffs: MeanCoeffs { a_u, b_u, a_v, b_v, member_slopes: None }, degenerate_u, degenerate_v })
}

/// Least squares on an intercept plus every member value. Returns `None` when
/// the design is rank deficient.
fn member_regression(members: &[Vec<f64>], y: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = y.len();
    let m = members[0].len();
    if n < m + 1 {
        return None;
    }
    let x = DMatrix::from_fn(n, m + 1, |i, j| if j == 0 { 1.0 } else { members[i][j - 1] });
    let yv = DVector::from_column_slice(y);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return None;
    }
    let beta = svd.solve(&yv, 1e-14 * smax).ok()?;
    Some((beta[0], beta.iter().skip(1).copied().collect()))
}

/// Member-wise mean model: regress each observed component on an intercept
/// and all m member values. Falls back to the standard regression (stored in
/// member form) when the design is degenerate.
pub fn fit_means_general(window: &TrainingWindow) -> Result<MeanFit> {
    let base = fit_means(window)?;
    let m = window.cases[0].ensemble.len();
    if window.cases.iter().any(|c| c.ensemble.len() != m) {
        return Err(Error::DatasetShape("ensemble size varies within the window".into()));
    }
    let us: Vec<Vec<f64>> = window.cases.iter().map(|c| c.ensemble.u_values()).collect();
    let vs: Vec<Vec<f64>> = window.cases.iter().map(|c| c.ensemble.v_values()).collect();
    let uo: Vec<f64> = window.cases.iter().filter_map(|c| c.observation.map(|o| o.u)).collect();
    let vo: Vec<f64> = window.cases.iter().filter_map(|c| c.observation.map(|o| o.v)).collect();
    let std_form = base.coeffs.to_member_form(m);
    let slopes = std_form.member_slopes.clone().expect("member form");
    let (a_u, su, deg_u) = match member_regression(&us, &uo) {
        Some((a, b)) => (a, b, false),
        None => (base.coeffs.a_u, slopes.u, true),
    };
    let (a_v, sv, deg_v) = match member_regression(&vs, &vo) {
        Some((a, b)) => (a, b, false),
        None => (base.coeffs.a_v, slopes.v, true),
    };
    Ok(MeanFit {
        coeffs: MeanCoeffs {
            a_u,
            b_u: su.iter().sum(),
            a_v,
            b_v: sv.iter().sum(),
            member_slopes: Some(MemberSlopes { u: su, v: sv }),
        },
        degenerate_u: deg_u,
        degenerate_v: deg_v,
    })
}

/// Variance model coefficients: `sigma_u^2 = c_u + d_u * s_u^2`, likewise
/// for v. All four are nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarCoeffs {
    pub c_u: f64,
    pub d_u: f64,
    pub c_v: f64,
    pub d_v: f64,
}

impl VarCoeffs {
    /// Starting point when no previous estimate exists.
    pub const COLD_START: VarCoeffs = VarCoeffs { c_u: 1.0, d_u: 1.0, c_v: 1.0, d_v: 1.0 };

    pub fn as_array(&self) -> [f64; 4] {
        [self.c_u, self.d_u, self.c_v, self.d_v]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        VarCoeffs { c_u: a[0], d_u: a[1], c_v: a[2], d_v: a[3] }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.as_array().iter().all(|x| *x >= 0.0 && x.is_finite())
    }

    pub fn variances(&self, stats: &EnsembleStats) -> (f64, f64) {
        (self.c_u + self.d_u * stats.s2_u, self.c_v + self.d_v * stats.s2_v)
    }
}

/// Full parameter set of a fitted bivariate EMOS model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmosParameters {
    pub means: MeanCoeffs,
    pub vars: VarCoeffs,
    pub corr: CorrelationSpec,
    pub scope: Scope,
    pub fitted_at: DateTime<Utc>,
    /// Wind speed EMOS coefficients fitted on the same window, when present.
    pub speed: Option<SpeedEmosCoeffs>,
}

/// Per-case quantities the likelihood needs; independent of the variance
/// coefficients, so computed once per fit.
#[derive(Debug, Clone, Copy)]
struct LikTerm {
    du: f64,
    dv: f64,
    s2_u: f64,
    s2_v: f64,
    rho: f64,
}

fn likelihood_terms(window: &TrainingWindow, means: &MeanCoeffs, corr: &CorrelationSpec) -> Result<Vec<LikTerm>> {
    window
        .cases
        .iter()
        .map(|c| {
            let obs = c.observation.ok_or_else(|| {
                Error::InvalidParameter(format!("training case {} {} has no observation", c.station_id, c.valid_time))
            })?;
            let stats = c.ensemble.stats()?;
            let mu = means.mean(&c.ensemble, &stats)?;
            Ok(LikTerm {
                du: obs.u - mu.u,
                dv: obs.v - mu.v,
                s2_u: stats.s2_u,
                s2_v: stats.s2_v,
                rho: corr.for_stats(&stats).rho,
            })
        })
        .collect()
}

const PAR_THRESHOLD: usize = 4096;

fn term_log_density(t: &LikTerm, vc: &VarCoeffs) -> f64 {
    let var_u = vc.c_u + vc.d_u * t.s2_u;
    let var_v = vc.c_v + vc.d_v * t.s2_v;
    if !(var_u > 0.0 && var_v > 0.0) || !(t.rho.abs() <= MAX_ABS_RHO) {
        return f64::NEG_INFINITY;
    }
    let p = BivariateNormalParams { mu_u: 0.0, mu_v: 0.0, var_u, var_v, rho: t.rho };
    p.log_density_unchecked(WindVector::new(t.du, t.dv))
}

fn terms_log_likelihood(terms: &[LikTerm], vc: &VarCoeffs) -> f64 {
    let parts = if terms.len() >= PAR_THRESHOLD {
        par::map_indexed(terms, |_, t| term_log_density(t, vc))
    } else {
        par::map_indexed_seq(terms, |_, t| term_log_density(t, vc))
    };
    if parts.contains(&f64::NEG_INFINITY) {
        return f64::NEG_INFINITY;
    }
    stable_sum(parts)
}

/// Log-likelihood of the window's observations under the bivariate normal
/// model with the given coefficients. Infeasible coefficients (a
/// nonpositive variance or |rho| at 1 on any case) give negative infinity.
pub fn log_likelihood(
    vc: &VarCoeffs,
    window: &TrainingWindow,
    means: &MeanCoeffs,
    corr: &CorrelationSpec,
) -> Result<f64> {
    let terms = likelihood_terms(window, means, corr)?;
    Ok(terms_log_likelihood(&terms, vc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceFit {
    pub coeffs: VarCoeffs,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Components whose ensemble spread is zero throughout the window; their
    /// `d` is pinned at 0.
    pub pinned_u: bool,
    pub pinned_v: bool,
}

/// Maximum likelihood for (c_u, d_u, c_v, d_v) >= 0 by BFGS over their square
/// roots, started from `init` (normally the previous day's estimate).
pub fn fit_variances(
    window: &TrainingWindow,
    means: &MeanCoeffs,
    corr: &CorrelationSpec,
    init: &VarCoeffs,
) -> Result<VarianceFit> {
    if window.is_empty() {
        return Err(Error::InsufficientData("empty training window".into()));
    }
    if !init.is_nonnegative() {
        return Err(Error::InvalidParameter(format!("infeasible starting point {init:?}")));
    }
    let terms = likelihood_terms(window, means, corr)?;
    let n = terms.len() as f64;
    let pinned_u = terms.iter().all(|t| t.s2_u == 0.0);
    let pinned_v = terms.iter().all(|t| t.s2_v == 0.0);

    // Zero-spread components: d = 0, c starts at the residual mean square,
    // which is the exact maximizer when rho vanishes.
    let mut start = *init;
    if pinned_u {
        start.d_u = 0.0;
        start.c_u = stable_sum(terms.iter().map(|t| t.du * t.du)) / n;
    }
    if pinned_v {
        start.d_v = 0.0;
        start.c_v = stable_sum(terms.iter().map(|t| t.dv * t.dv)) / n;
    }
    let free: Vec<usize> = (0..4).filter(|&i| !((i == 1 && pinned_u) || (i == 3 && pinned_v))).collect();

    let base = start.as_array();
    let to_coeffs = |x: &[f64]| {
        let mut a = base;
        for (slot, &i) in free.iter().enumerate() {
            a[i] = x[slot] * x[slot];
        }
        VarCoeffs::from_array(a)
    };
    let objective = |x: &[f64]| {
        let ll = terms_log_likelihood(&terms, &to_coeffs(x));
        if ll.is_finite() {
            -ll / n
        } else {
            f64::INFINITY
        }
    };

    let init_ll = terms_log_likelihood(&terms, init);
    let start_ll = terms_log_likelihood(&terms, &start);
    // A zero square root has zero gradient, so start slightly inside.
    let x0: Vec<f64> = free.iter().map(|&i| base[i].sqrt().max(1e-3)).collect();
    let res = bfgs(objective, &x0, BfgsOptions::default());
    let fitted = to_coeffs(&res.x);
    let fitted_ll = terms_log_likelihood(&terms, &fitted);

    let mut best = (fitted, fitted_ll);
    for cand in [(start, start_ll), (*init, init_ll)] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    if !best.1.is_finite() {
        return Err(Error::NonConvergence {
            iterations: res.iterations,
            message: "no feasible variance coefficients found".into(),
        });
    }
    Ok(VarianceFit {
        coeffs: best.0,
        log_likelihood: best.1,
        converged: res.converged,
        iterations: res.iterations,
        pinned_u,
        pinned_v,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Use the member-wise mean model.
    pub member_means: bool,
    pub min_local_cases: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { member_means: false, min_local_cases: MIN_LOCAL_CASES }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmosFit {
    pub params: EmosParameters,
    pub window_cases: usize,
    pub shortfall: bool,
    pub mean_degenerate: bool,
    pub variance_converged: bool,
}

/// Build the window, fit the means, then the variances.
pub fn fit_emos(
    cases: &[ForecastCase],
    issue_time: DateTime<Utc>,
    scope: &Scope,
    n: usize,
    corr: &CorrelationSpec,
    warm_start: Option<&VarCoeffs>,
    opts: FitOptions,
) -> Result<EmosFit> {
    let ctx = || match scope {
        Scope::Regional => format!("regional fit for {issue_time}"),
        Scope::Local(s) => format!("local fit at station {s} for {issue_time}"),
    };
    let window = build_window(cases, issue_time, scope, n).map_err(|e| e.context(ctx()))?;
    fit_emos_on_window(&window, issue_time, scope, corr, warm_start, opts).map_err(|e| e.context(ctx()))
}

pub fn fit_emos_on_window(
    window: &TrainingWindow,
    issue_time: DateTime<Utc>,
    scope: &Scope,
    corr: &CorrelationSpec,
    warm_start: Option<&VarCoeffs>,
    opts: FitOptions,
) -> Result<EmosFit> {
    if window.len() < 2 {
        return Err(Error::InsufficientData(format!("{} training case(s), at least 2 required", window.len())));
    }
    if window.shortfall && window.len() < opts.min_local_cases {
        return Err(Error::InsufficientData(format!(
            "local window has {} of {} days and only {} cases (minimum {})",
            window.days_collected,
            window.length_days,
            window.len(),
            opts.min_local_cases
        )));
    }
    let mean_fit = if opts.member_means { fit_means_general(window)? } else { fit_means(window)? };
    let init = warm_start.copied().unwrap_or(VarCoeffs::COLD_START);
    let var_fit = fit_variances(window, &mean_fit.coeffs, corr, &init)?;
    Ok(EmosFit {
        params: EmosParameters {
            means: mean_fit.coeffs,
            vars: var_fit.coeffs,
            corr: *corr,
            scope: scope.clone(),
            fitted_at: issue_time,
            speed: None,
        },
        window_cases: window.len(),
        shortfall: window.shortfall,
        mean_degenerate: mean_fit.degenerate_u || mean_fit.degenerate_v,
        variance_converged: var_fit.converged,
    })
}
