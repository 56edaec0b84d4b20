//! Synthetic ensembles and observations drawn from a known bivariate EMOS
//! model.
//!
//! For every station and day a latent wind vector is drawn around a station
//! climatology. Members scatter around the latent vector, optionally with the
//! direction dependent correlation of the truth model, and the observation is
//! drawn from the bivariate normal that the truth coefficients assign to the
//! resulting ensemble.

use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bvn::MAX_ABS_RHO;
use crate::dataset::{format_time, write_cases, KNOT};
use crate::error::{Error, Result};
use crate::estimation::{EmosParameters, MeanCoeffs, Scope, VarCoeffs};
use crate::predict::make_forecast;
use crate::rng::{stream_rng, Stream};
use crate::sectors::{CorrelationModel, CorrelationSpec};
use crate::wind::{EnsembleForecast, ForecastCase, WindVector};

/// Coefficients of the data-generating model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    pub a_u: f64,
    pub b_u: f64,
    pub a_v: f64,
    pub b_v: f64,
    pub c_u: f64,
    pub d_u: f64,
    pub c_v: f64,
    pub d_v: f64,
    pub r: f64,
    pub s: f64,
    pub k: u8,
    pub phi: f64,
}

impl Default for TruthSpec {
    fn default() -> Self {
        TruthSpec {
            a_u: 0.0,
            b_u: 1.0,
            a_v: 0.0,
            b_v: 1.0,
            c_u: 0.0,
            d_u: 1.0,
            c_v: 0.0,
            d_v: 1.0,
            r: 0.0,
            s: 0.0,
            k: 1,
            phi: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub truth: TruthSpec,
    pub n_stations: usize,
    pub n_days: usize,
    pub members: usize,
    /// First valid date, `YYYY-MM-DD`.
    pub start: String,
    pub seed: u64,
    /// Climatological mean of the latent wind, m/s.
    pub climate_u: f64,
    pub climate_v: f64,
    /// Day-to-day standard deviation of the latent wind per component, m/s.
    pub latent_sd: f64,
    /// Standard deviation of the per-station climatology offsets, m/s.
    pub station_sd: f64,
    /// Member spread (standard deviation) is uniform on this range per case
    /// and component, m/s.
    pub spread_min: f64,
    pub spread_max: f64,
    /// Members share the truth model's direction dependent correlation.
    pub correlated_members: bool,
    /// Probability that a case loses one member row in the written file.
    pub missing_member_rate: f64,
    /// Probability that a case has no observation.
    pub missing_obs_rate: f64,
    /// Round observed speeds to whole knots, zero below two knots.
    pub discretize: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            truth: TruthSpec::default(),
            n_stations: 10,
            n_days: 100,
            members: 8,
            start: "2008-01-01".into(),
            seed: 1,
            climate_u: 1.0,
            climate_v: 0.5,
            latent_sd: 4.0,
            station_sd: 1.0,
            spread_min: 0.5,
            spread_max: 2.5,
            correlated_members: true,
            missing_member_rate: 0.0,
            missing_obs_rate: 0.0,
            discretize: false,
        }
    }
}

impl SimulationSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SimulationSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("simulation spec serializes")
    }

    pub fn start_time(&self) -> Result<DateTime<Utc>> {
        NaiveDate::parse_from_str(&self.start, "%Y-%m-%d")
            .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
            .map_err(|_| Error::InvalidParameter(format!("start date {:?} is not YYYY-MM-DD", self.start)))
    }

    pub fn correlation(&self) -> Result<CorrelationModel> {
        let t = &self.truth;
        CorrelationModel::new(t.r, t.s, t.k, t.phi)
    }

    /// The truth model as a parameter set.
    pub fn truth_parameters(&self) -> Result<EmosParameters> {
        let t = &self.truth;
        Ok(EmosParameters {
            means: MeanCoeffs { a_u: t.a_u, b_u: t.b_u, a_v: t.a_v, b_v: t.b_v, member_slopes: None },
            vars: VarCoeffs { c_u: t.c_u, d_u: t.d_u, c_v: t.c_v, d_v: t.d_v },
            corr: CorrelationSpec::from(self.correlation()?),
            scope: Scope::Regional,
            fitted_at: self.start_time()?,
            speed: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        let t = &self.truth;
        if [t.c_u, t.d_u, t.c_v, t.d_v].iter().any(|x| !(*x >= 0.0)) {
            return bad("variance coefficients must be nonnegative");
        }
        self.correlation()?;
        if self.members < 2 {
            return bad("at least two members are needed");
        }
        if self.n_stations == 0 || self.n_days == 0 {
            return bad("n_stations and n_days must be positive");
        }
        if !(self.spread_min > 0.0 && self.spread_max >= self.spread_min) {
            return bad("spread range must satisfy 0 < spread_min <= spread_max");
        }
        if !(self.latent_sd >= 0.0 && self.station_sd >= 0.0) {
            return bad("standard deviations must be nonnegative");
        }
        for p in [self.missing_member_rate, self.missing_obs_rate] {
            if !(0.0..=1.0).contains(&p) {
                return bad("missing rates must lie in [0, 1]");
            }
        }
        self.start_time()?;
        Ok(())
    }

    pub fn n_cases(&self) -> usize {
        self.n_stations * self.n_days
    }
}

pub fn station_name(i: usize) -> String {
    format!("S{:03}", i + 1)
}

/// Round a speed to whole knots, recording speeds below two knots as calm.
/// The direction is kept.
pub fn discretize_observation(w: WindVector) -> WindVector {
    let knots = w.speed() / KNOT;
    if knots < 2.0 {
        return WindVector::ZERO;
    }
    w.scale(knots.round() * KNOT / w.speed())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Cases ordered by valid time, then station.
    pub cases: Vec<ForecastCase>,
    /// Per case, the member whose row is left out of the written file.
    pub missing_member: Vec<Option<usize>>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn correlated_draw<R: Rng + ?Sized>(su: f64, sv: f64, rho: f64, rng: &mut R) -> WindVector {
    let z1 = normal(rng);
    let z2 = normal(rng);
    WindVector::new(su * z1, sv * (rho * z1 + (1.0 - rho * rho).sqrt() * z2))
}

pub fn simulate(spec: &SimulationSpec) -> Result<Simulation> {
    spec.validate()?;
    let truth = spec.truth_parameters()?;
    let model = spec.correlation()?;
    let start = spec.start_time()?;
    let offsets: Vec<WindVector> = (0..spec.n_stations)
        .map(|s| {
            let mut rng = stream_rng(spec.seed, Stream::Misc, s as u64);
            WindVector::new(spec.station_sd * normal(&mut rng), spec.station_sd * normal(&mut rng))
        })
        .collect();

    let mut cases = Vec::with_capacity(spec.n_cases());
    let mut missing_member = Vec::with_capacity(spec.n_cases());
    for day in 0..spec.n_days {
        let time = start + Duration::days(day as i64);
        for (st, off) in offsets.iter().enumerate() {
            let index = (st * spec.n_days + day) as u64;
            let mut rng = stream_rng(spec.seed, Stream::Simulate, index);
            let latent = WindVector::new(
                spec.climate_u + off.u + spec.latent_sd * normal(&mut rng),
                spec.climate_v + off.v + spec.latent_sd * normal(&mut rng),
            );
            let su = rng.random_range(spec.spread_min..=spec.spread_max);
            let sv = rng.random_range(spec.spread_min..=spec.spread_max);
            let rho_members = if spec.correlated_members {
                latent.direction().map_or(0.0, |d| model.eval(d)).clamp(-MAX_ABS_RHO, MAX_ABS_RHO)
            } else {
                0.0
            };
            let members: Vec<WindVector> =
                (0..spec.members).map(|_| latent + correlated_draw(su, sv, rho_members, &mut rng)).collect();
            let ensemble = EnsembleForecast::new(members);
            let f = make_forecast(&truth, &ensemble)
                .map_err(|e| e.context(format!("simulating case {} at {}", station_name(st), format_time(time))))?;
            let obs = f.params.draw(&mut rng);
            let obs = if spec.discretize { discretize_observation(obs) } else { obs };
            let drop_obs = rng.random::<f64>() < spec.missing_obs_rate;
            let drop_member =
                (rng.random::<f64>() < spec.missing_member_rate).then(|| rng.random_range(0..spec.members));
            cases.push(ForecastCase {
                station_id: station_name(st),
                valid_time: time,
                ensemble,
                observation: (!drop_obs).then_some(obs),
            });
            missing_member.push(drop_member);
        }
    }
    Ok(Simulation { cases, missing_member })
}

impl Simulation {
    /// Cases as they appear in the written file: incomplete ensembles lose
    /// the dropped member.
    pub fn file_cases(&self) -> Vec<ForecastCase> {
        self.cases
            .iter()
            .zip(&self.missing_member)
            .map(|(c, miss)| match miss {
                None => c.clone(),
                Some(j) => {
                    let mut c = c.clone();
                    c.ensemble.members.remove(*j);
                    c.ensemble.member_ids.remove(*j);
                    c
                }
            })
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_cases(std::io::BufWriter::new(file), &self.file_cases())
    }

    pub fn write_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_cases(w, &self.file_cases())
    }
}
