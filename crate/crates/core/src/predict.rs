//! Density forecasts from fitted parameters, and wind speed forecasts.

use chrono::{DateTime, Utc};
use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::bvn::{BivariateNormalParams, MAX_ABS_RHO};
use crate::error::{Error, Result};
use crate::estimation::{EmosParameters, Scope, TrainingWindow};
use crate::numeric::{pop_variance, stable_sum};
use crate::optim::{bfgs, BfgsOptions};
use crate::rng::rng_from_seed;
use crate::wind::EnsembleForecast;

/// Default size of the speed ensemble drawn from a bivariate density.
pub const SPEED_ENSEMBLE_SIZE: usize = 100;
/// Lower guard on the squared scale of the truncated normal, (m/s)^2.
pub const MIN_SPEED_SCALE2: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub scope: Scope,
    pub issue_time: DateTime<Utc>,
    pub station: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityForecast {
    pub params: BivariateNormalParams,
    pub provenance: Provenance,
    /// The ensemble mean was the zero vector and rho was taken at 0°.
    pub zero_direction: bool,
}

/// Assemble the bivariate normal forecast: bias-corrected means, affine
/// variances and the direction dependent correlation.
pub fn make_forecast(p: &EmosParameters, e: &EnsembleForecast) -> Result<DensityForecast> {
    let stats = e.stats()?;
    let mu = p.means.mean(e, &stats)?;
    let (var_u, var_v) = p.vars.variances(&stats);
    let corr = p.corr.for_stats(&stats);
    let params =
        BivariateNormalParams { mu_u: mu.u, mu_v: mu.v, var_u, var_v, rho: corr.rho.clamp(-MAX_ABS_RHO, MAX_ABS_RHO) };
    params.validate()?;
    Ok(DensityForecast {
        params,
        provenance: Provenance {
            scope: p.scope.clone(),
            issue_time: p.fitted_at,
            station: p.scope.station().map(str::to_string),
        },
        zero_direction: corr.zero_direction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpeedForecast {
    Ensemble(Vec<f64>),
    TruncNormal { location: f64, scale: f64 },
}

/// Wind speed ensemble: Euclidean norms of `n` draws from the density.
pub fn speed_ensemble(f: &DensityForecast, n: usize, seed: u64) -> Result<SpeedForecast> {
    f.params.validate()?;
    let mut rng = rng_from_seed(seed);
    Ok(SpeedForecast::Ensemble(speed_samples(&f.params, n, &mut rng)))
}

pub fn speed_samples<R: Rng + ?Sized>(p: &BivariateNormalParams, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| p.draw(rng).speed()).collect()
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// CRPS of a normal with location `mu` and scale `sigma`, left-truncated at
/// zero, at observation `y >= 0`.
pub fn crps_truncnorm(mu: f64, sigma: f64, y: f64) -> f64 {
    let n = std_normal();
    let p = n.cdf(mu / sigma);
    let z = (y - mu) / sigma;
    sigma / (p * p)
        * (z * p * (2.0 * n.cdf(z) + p - 2.0) + 2.0 * n.pdf(z) * p
            - n.cdf(std::f64::consts::SQRT_2 * mu / sigma) / std::f64::consts::PI.sqrt())
}

/// CDF of the zero-truncated normal.
pub fn truncnorm_cdf(mu: f64, sigma: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let n = std_normal();
    let lo = n.cdf(-mu / sigma);
    (n.cdf((x - mu) / sigma) - lo) / (1.0 - lo)
}

pub fn truncnorm_median(mu: f64, sigma: f64) -> f64 {
    truncnorm_quantile(mu, sigma, 0.5)
}

pub fn truncnorm_quantile(mu: f64, sigma: f64, q: f64) -> f64 {
    let n = std_normal();
    let lo = n.cdf(-mu / sigma);
    (mu + sigma * n.inverse_cdf(lo + q * (1.0 - lo))).max(0.0)
}

pub fn sample_truncnorm<R: Rng + ?Sized>(mu: f64, sigma: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    truncnorm_quantile(mu, sigma, u)
}

/// Wind speed EMOS: location `a + b * mean member speed`, squared scale
/// `c + d * variance of member speeds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedEmosCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Regressors of the wind speed EMOS model: mean and population variance of
/// the member speeds.
pub fn speed_predictors(e: &EnsembleForecast) -> (f64, f64) {
    let speeds: Vec<f64> = e.members.iter().map(|w| w.speed()).collect();
    (crate::numeric::mean(&speeds), pop_variance(&speeds))
}

impl SpeedEmosCoeffs {
    pub fn location_scale(&self, mean_speed: f64, var_speed: f64) -> (f64, f64) {
        let scale2 = (self.c + self.d * var_speed).max(MIN_SPEED_SCALE2);
        (self.a + self.b * mean_speed, scale2.sqrt())
    }

    pub fn forecast(&self, e: &EnsembleForecast) -> SpeedForecast {
        let (m, v) = speed_predictors(e);
        let (location, scale) = self.location_scale(m, v);
        SpeedForecast::TruncNormal { location, scale }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedEmosFit {
    pub coeffs: SpeedEmosCoeffs,
    pub mean_crps: f64,
    pub initial_crps: f64,
    pub converged: bool,
}

/// Minimum CRPS estimation of the wind speed EMOS coefficients over the
/// window's observed speeds, with `c, d >= 0` via square roots.
pub fn fit_speed_emos(window: &TrainingWindow) -> Result<SpeedEmosFit> {
    let data: Vec<(f64, f64, f64)> = window
        .cases
        .iter()
        .filter_map(|c| {
            c.observation.map(|o| {
                let (m, v) = speed_predictors(&c.ensemble);
                (m, v, o.speed())
            })
        })
        .collect();
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!("speed EMOS needs at least 2 observed cases, got {}", data.len())));
    }
    let n = data.len() as f64;

    let mean_crps = |co: &SpeedEmosCoeffs| {
        let terms: Vec<f64> = data
            .iter()
            .map(|&(m, v, y)| {
                let (loc, scale) = co.location_scale(m, v);
                crps_truncnorm(loc, scale, y)
            })
            .collect();
        stable_sum(terms) / n
    };
    let to_coeffs = |x: &[f64]| SpeedEmosCoeffs { a: x[0], b: x[1], c: x[2] * x[2], d: x[3] * x[3] };

    // Start from the least squares fit of observed on mean member speed.
    let xs: Vec<f64> = data.iter().map(|d| d.0).collect();
    let ys: Vec<f64> = data.iter().map(|d| d.2).collect();
    let mx = crate::numeric::mean(&xs);
    let my = crate::numeric::mean(&ys);
    let sxx = stable_sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    let sxy = stable_sum(xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)));
    let (a0, b0) = if sxx > 1e-12 { (my - sxy / sxx * mx, sxy / sxx) } else { (my, 0.0) };
    let resid_var = stable_sum(xs.iter().zip(&ys).map(|(x, y)| (y - a0 - b0 * x).powi(2))) / n;
    let x0 = [a0, b0, resid_var.max(0.01).sqrt(), 0.5];
    let init = to_coeffs(&x0);
    let initial_crps = mean_crps(&init);

    let objective = |x: &[f64]| {
        let v = mean_crps(&to_coeffs(x));
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let res = bfgs(objective, &x0, BfgsOptions { gtol: 1e-9, ..BfgsOptions::default() });
    let fitted = to_coeffs(&res.x);
    let fitted_crps = mean_crps(&fitted);
    let (coeffs, crps) = if fitted_crps <= initial_crps { (fitted, fitted_crps) } else { (init, initial_crps) };
    Ok(SpeedEmosFit { coeffs, mean_crps: crps, initial_crps, converged: res.converged })
}
