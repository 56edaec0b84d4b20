//! Reference forecasts: independent EMOS, ensemble copula coupling and error
//! dressing.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimation::{EmosParameters, TrainingWindow};
use crate::predict::{make_forecast, DensityForecast};
use crate::rng::rng_from_seed;
use crate::wind::{EnsembleForecast, WindVector};

/// Default number of error vectors used to dress the ensemble mean.
pub const ERROR_DRESSING_SIZE: usize = 35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Raw,
    Emos,
    Independent,
    Ecc,
    ErrorDress,
    SpeedEmos,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Raw, Method::Emos, Method::Independent, Method::Ecc, Method::ErrorDress, Method::SpeedEmos];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Emos => "emos",
            Method::Independent => "independent",
            Method::Ecc => "ecc",
            Method::ErrorDress => "error-dress",
            Method::SpeedEmos => "speed-emos",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Raw => "Raw ensemble",
            Method::Emos => "Bivariate EMOS",
            Method::Independent => "Independent EMOS",
            Method::Ecc => "ECC",
            Method::ErrorDress => "Error Dressing",
            Method::SpeedEmos => "Wind speed EMOS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// A forecast given as a finite set of equally weighted wind vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteForecast {
    pub members: Vec<WindVector>,
    pub method: Method,
}

/// Bivariate EMOS with the correlation forced to zero.
pub fn independent_emos(p: &EmosParameters, e: &EnsembleForecast) -> Result<DensityForecast> {
    let mut f = make_forecast(p, e)?;
    f.params.rho = 0.0;
    f.zero_direction = false;
    Ok(f)
}

/// How ECC obtains the postprocessed marginal values before reordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EccSampling {
    /// Random draws from each univariate normal.
    #[default]
    Random,
    /// Equidistant quantiles at levels i / (m + 1).
    Quantiles,
}

/// Ranks 0..m of `values` (0 = smallest), ties broken uniformly at random.
pub fn random_ranks<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> Vec<usize> {
    let keys: Vec<u64> = values.iter().map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(keys[a].cmp(&keys[b])));
    let mut ranks = vec![0; values.len()];
    for (r, i) in order.into_iter().enumerate() {
        ranks[i] = r;
    }
    ranks
}

/// Reorder postprocessed component samples so member i receives the sample
/// whose rank equals the rank of raw member i, per component.
pub fn ecc_reorder<R: Rng + ?Sized>(
    raw: &EnsembleForecast,
    mut u_samples: Vec<f64>,
    mut v_samples: Vec<f64>,
    rng: &mut R,
) -> Result<Vec<WindVector>> {
    let m = raw.len();
    if u_samples.len() != m || v_samples.len() != m {
        return Err(Error::InvalidParameter(format!(
            "ECC needs {m} samples per component, got {} and {}",
            u_samples.len(),
            v_samples.len()
        )));
    }
    u_samples.sort_by(f64::total_cmp);
    v_samples.sort_by(f64::total_cmp);
    let ru = random_ranks(&raw.u_values(), rng);
    let rv = random_ranks(&raw.v_values(), rng);
    Ok((0..m).map(|i| WindVector::new(u_samples[ru[i]], v_samples[rv[i]])).collect())
}

/// Ensemble copula coupling of an independent density forecast onto the raw
/// ensemble's rank structure.
pub fn ecc(
    raw: &EnsembleForecast,
    f_indep: &DensityForecast,
    seed: u64,
    sampling: EccSampling,
) -> Result<DiscreteForecast> {
    let p = f_indep.params;
    p.validate()?;
    if p.rho != 0.0 {
        return Err(Error::InvalidParameter("ECC expects an independent forecast (rho = 0)".into()));
    }
    let m = raw.len();
    let (su, sv) = (p.var_u.sqrt(), p.var_v.sqrt());
    let mut rng = rng_from_seed(seed);
    let (us, vs) = match sampling {
        EccSampling::Random => {
            let us = (0..m).map(|_| p.mu_u + su * rng.sample::<f64, _>(StandardNormal)).collect();
            let vs = (0..m).map(|_| p.mu_v + sv * rng.sample::<f64, _>(StandardNormal)).collect();
            (us, vs)
        }
        EccSampling::Quantiles => {
            let n = Normal::standard();
            let z: Vec<f64> = (1..=m).map(|i| n.inverse_cdf(i as f64 / (m + 1) as f64)).collect();
            (z.iter().map(|z| p.mu_u + su * z).collect(), z.iter().map(|z| p.mu_v + sv * z).collect())
        }
    };
    Ok(DiscreteForecast { members: ecc_reorder(raw, us, vs, &mut rng)?, method: Method::Ecc })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorSelection {
    /// Uniform subsample without replacement.
    #[default]
    Random,
    /// The most recent errors in the window.
    MostRecent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DressedForecast {
    pub forecast: DiscreteForecast,
    /// The window held fewer errors than requested and all of them were used.
    pub short: bool,
}

/// Dress the current ensemble mean with `count` observation minus ensemble
/// mean errors from the training window.
pub fn error_dress(
    window: &TrainingWindow,
    e: &EnsembleForecast,
    count: usize,
    seed: u64,
    selection: ErrorSelection,
) -> Result<DressedForecast> {
    let errors: Vec<WindVector> = window
        .cases
        .iter()
        .filter_map(|c| {
            let obs = c.observation?;
            let s = c.ensemble.stats().ok()?;
            Some(obs - s.mean_vector())
        })
        .collect();
    if errors.is_empty() {
        return Err(Error::InsufficientData("no error vectors in the training window".into()));
    }
    let center = e.stats()?.mean_vector();
    let short = errors.len() < count;
    let chosen: Vec<WindVector> = if errors.len() <= count {
        errors
    } else {
        match selection {
            ErrorSelection::MostRecent => errors[errors.len() - count..].to_vec(),
            ErrorSelection::Random => {
                let mut rng = rng_from_seed(seed);
                let mut idx = sample_indices(&mut rng, errors.len(), count).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| errors[i]).collect()
            }
        }
    };
    Ok(DressedForecast {
        forecast: DiscreteForecast {
            members: chosen.into_iter().map(|err| center + err).collect(),
            method: Method::ErrorDress,
        },
        short,
    })
}
