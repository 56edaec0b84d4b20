//! Verification: energy score, CRPS, absolute errors, spatial median,
//! multivariate rank histograms and the reliability index.

use std::fmt::Write as _;

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bvn::{sample_with, BivariateNormalParams};
use crate::error::{Error, Result};
use crate::numeric::stable_sum;
use crate::par::map_indexed;
use crate::predict::{crps_truncnorm, speed_samples, truncnorm_median, DensityForecast, SpeedForecast};
use crate::references::DiscreteForecast;
use crate::rng::{stream_rng, Stream};
use crate::wind::{ForecastCase, WindVector};

/// Monte Carlo sample size for the energy score of a density.
pub const ES_SAMPLES: usize = 10_000;
/// Sample size drawn from a density before ranking the observation.
pub const RANK_SAMPLE_SIZE: usize = 8;
/// Upper end of the uniform replacement for observed zero speeds, m/s.
pub const ZERO_SPEED_UPPER: f64 = 1.03;
/// Half of the one-knot recording resolution, m/s.
pub const OBS_JITTER: f64 = 0.2572;
pub const MEDIAN_TOL: f64 = 1e-9;
pub const MEDIAN_MAX_ITER: usize = 10_000;

fn energy_kernel<T>(xs: &[T], y: &T, dist: impl Fn(&T, &T) -> f64) -> f64 {
    assert!(!xs.is_empty(), "score of an empty ensemble");
    let m = xs.len() as f64;
    let first = stable_sum(xs.iter().map(|x| dist(x, y))) / m;
    let pair = stable_sum(xs.iter().enumerate().flat_map(|(i, a)| xs[i + 1..].iter().map(|b| dist(a, b))));
    first - pair / (m * m)
}

/// Energy score of the empirical distribution of `members`. Panics on an
/// empty slice.
pub fn energy_score_ensemble(members: &[WindVector], y: WindVector) -> f64 {
    energy_kernel(members, &y, |a, b| a.distance(b))
}

/// Energy score estimated from i.i.d. draws `samples` using the adjacent-pair
/// estimate of the second expectation.
pub fn energy_score_samples(samples: &[WindVector], y: WindVector) -> f64 {
    let k = samples.len();
    assert!(k >= 2, "at least two samples are needed");
    let first = stable_sum(samples.iter().map(|x| x.distance(&y))) / k as f64;
    let pair = stable_sum(samples.windows(2).map(|w| w[0].distance(&w[1])));
    first - pair / (2.0 * (k - 1) as f64)
}

/// Monte Carlo energy score of a bivariate normal with `k` draws.
pub fn energy_score_density<R: Rng + ?Sized>(
    p: &BivariateNormalParams,
    y: WindVector,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    p.validate()?;
    if k < 2 {
        return Err(Error::InvalidParameter(format!("energy score needs k >= 2, got {k}")));
    }
    Ok(energy_score_samples(&sample_with(p, k, rng), y))
}

/// CRPS of the empirical distribution of `xs`. Panics on an empty slice.
pub fn crps_ensemble(xs: &[f64], y: f64) -> f64 {
    energy_kernel(xs, &y, |a, b| (a - b).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialMedian {
    pub point: WindVector,
    pub converged: bool,
    pub iterations: usize,
}

/// Sum of weighted Euclidean distances from `x` to `points`.
pub fn spatial_median_objective(points: &[WindVector], weights: Option<&[f64]>, x: WindVector) -> f64 {
    stable_sum(points.iter().enumerate().map(|(i, p)| weights.map_or(1.0, |w| w[i]) * p.distance(&x)))
}

/// Spatial median by the modified Weiszfeld iteration of Vardi and Zhang,
/// which stays well defined when an iterate lands on a data point.
pub fn spatial_median(points: &[WindVector], weights: Option<&[f64]>) -> Result<SpatialMedian> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("spatial median of no points".into()));
    }
    if let Some(w) = weights {
        if w.len() != points.len() || w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite, nonnegative and aligned".into()));
        }
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total = stable_sum((0..points.len()).map(w));
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("weights sum to zero".into()));
    }
    let scale = points.iter().map(|p| p.u.abs().max(p.v.abs())).fold(1.0, f64::max);
    let coincide = 1e-14 * scale;

    let mut y = WindVector::new(
        stable_sum(points.iter().enumerate().map(|(i, p)| w(i) * p.u)) / total,
        stable_sum(points.iter().enumerate().map(|(i, p)| w(i) * p.v)) / total,
    );
    for it in 1..=MEDIAN_MAX_ITER {
        let mut eta = 0.0;
        let (mut tu, mut tv, mut den) = (0.0, 0.0, 0.0);
        let (mut ru, mut rv) = (0.0, 0.0);
        for (i, p) in points.iter().enumerate() {
            let d = p.distance(&y);
            if d <= coincide {
                eta += w(i);
                continue;
            }
            let q = w(i) / d;
            tu += q * p.u;
            tv += q * p.v;
            den += q;
            ru += q * (p.u - y.u);
            rv += q * (p.v - y.v);
        }
        if den == 0.0 {
            return Ok(SpatialMedian { point: y, converged: true, iterations: it });
        }
        let t = WindVector::new(tu / den, tv / den);
        let next = if eta == 0.0 {
            t
        } else {
            let r = ru.hypot(rv);
            if r <= eta {
                return Ok(SpatialMedian { point: y, converged: true, iterations: it });
            }
            let a = (1.0 - eta / r).max(0.0);
            let b = (eta / r).min(1.0);
            WindVector::new(a * t.u + b * y.u, a * t.v + b * y.v)
        };
        let step = next.distance(&y);
        y = next;
        if step < MEDIAN_TOL {
            return Ok(SpatialMedian { point: y, converged: true, iterations: it });
        }
    }
    Ok(SpatialMedian { point: y, converged: false, iterations: MEDIAN_MAX_ITER })
}

/// A forecast of the wind vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Forecast {
    Density(DensityForecast),
    Discrete(DiscreteForecast),
}

impl Forecast {
    /// Bivariate median: the mean vector of a density, the spatial median of
    /// a discrete forecast.
    pub fn bivariate_median(&self) -> Result<WindVector> {
        match self {
            Forecast::Density(f) => Ok(f.params.mean()),
            Forecast::Discrete(d) => Ok(spatial_median(&d.members, None)?.point),
        }
    }
}

pub fn bivariate_abs_error(f: &Forecast, y: WindVector) -> Result<f64> {
    Ok(f.bivariate_median()?.distance(&y))
}

/// Randomized multivariate rank of `y` among `members`, in 1..=m+1.
///
/// Each pooled vector gets a pre-rank: the number of pooled vectors that are
/// componentwise less than or equal to it. The observation's rank is one plus
/// the number of members with a smaller pre-rank, plus a uniform draw over the
/// members sharing its pre-rank.
pub fn multivariate_rank<R: Rng + ?Sized>(members: &[WindVector], y: WindVector, rng: &mut R) -> usize {
    assert!(!members.is_empty(), "rank within an empty ensemble");
    let leq = |a: &WindVector, b: &WindVector| a.u <= b.u && a.v <= b.v;
    let pre = |z: &WindVector| members.iter().filter(|x| leq(x, z)).count() + usize::from(leq(&y, z));
    let obs = pre(&y);
    let (mut below, mut ties) = (0, 0);
    for x in members {
        match pre(x).cmp(&obs) {
            std::cmp::Ordering::Less => below += 1,
            std::cmp::Ordering::Equal => ties += 1,
            std::cmp::Ordering::Greater => {}
        }
    }
    below + 1 + rng.random_range(0..=ties)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankHistogram {
    /// `counts[i]` is the number of cases with rank `i + 1`.
    pub counts: Vec<u64>,
}

impl RankHistogram {
    pub fn new(bins: usize) -> Self {
        RankHistogram { counts: vec![0; bins] }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, rank: usize) {
        self.counts[rank - 1] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.counts.iter().map(|&c| if n > 0.0 { c as f64 / n } else { 0.0 }).collect()
    }

    /// Merge consecutive groups of `width` ranks.
    pub fn binned(&self, width: usize) -> Result<RankHistogram> {
        if width == 0 || !self.bins().is_multiple_of(width) {
            return Err(Error::InvalidParameter(format!("cannot group {} ranks in bins of {width}", self.bins())));
        }
        Ok(RankHistogram { counts: self.counts.chunks(width).map(|c| c.iter().sum()).collect() })
    }

    pub fn merge(&mut self, other: &RankHistogram) -> Result<()> {
        if other.bins() != self.bins() {
            return Err(Error::DatasetShape("rank histograms of different sizes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Pearson chi-square statistic against uniformity and its p-value.
    pub fn chi_square(&self) -> (f64, f64) {
        let k = self.bins();
        let n = self.total() as f64;
        if k < 2 || n == 0.0 {
            return (0.0, 1.0);
        }
        let e = n / k as f64;
        let stat = self.counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum::<f64>();
        let dist = ChiSquared::new((k - 1) as f64).expect("positive degrees of freedom");
        (stat, 1.0 - dist.cdf(stat))
    }
}

/// Reliability index: L1 distance of the rank frequencies from uniform.
pub fn reliability_index(h: &RankHistogram) -> f64 {
    let u = 1.0 / h.bins() as f64;
    stable_sum(h.frequencies().into_iter().map(|f| (f - u).abs()))
}

/// Number of consecutive ranks merged for a forecast with `m` members: the
/// 36 ranks of a 35-member forecast go into 9 groups of 4.
pub fn rank_bin_width(m: usize) -> usize {
    if m + 1 == 36 {
        4
    } else {
        1
    }
}

/// Ensemble used for ranking: the members of a discrete forecast, or a
/// sample of `RANK_SAMPLE_SIZE` draws from a density.
fn rank_members(f: &Forecast, seed: u64, index: u64) -> Vec<WindVector> {
    match f {
        Forecast::Density(d) => {
            let mut rng = stream_rng(seed, Stream::RankSample, index);
            sample_with(&d.params, RANK_SAMPLE_SIZE, &mut rng)
        }
        Forecast::Discrete(d) => d.members.clone(),
    }
}

fn rank_of(f: &Forecast, y: WindVector, seed: u64, index: u64) -> (usize, usize) {
    let members = rank_members(f, seed, index);
    let mut rng = stream_rng(seed, Stream::RankTies, index);
    (multivariate_rank(&members, y, &mut rng), members.len())
}

/// Multivariate rank histogram over aligned forecasts and observations. All
/// forecasts must rank against the same number of members.
pub fn rank_histogram(forecasts: &[Forecast], obs: &[WindVector], seed: u64) -> Result<RankHistogram> {
    if forecasts.len() != obs.len() {
        return Err(Error::DatasetShape("forecasts and observations differ in length".into()));
    }
    let ranks = map_indexed(forecasts, |i, f| rank_of(f, obs[i], seed, i as u64));
    histogram_from_ranks(&ranks)
}

fn histogram_from_ranks(ranks: &[(usize, usize)]) -> Result<RankHistogram> {
    let Some(&(_, m)) = ranks.first() else {
        return Err(Error::InsufficientData("no cases to rank".into()));
    };
    let mut h = RankHistogram::new(m + 1);
    for &(r, mi) in ranks {
        if mi != m {
            return Err(Error::DatasetShape(format!("rank histogram mixes ensembles of size {m} and {mi}")));
        }
        h.add(r);
    }
    h.binned(rank_bin_width(m))
}

/// Replace each exact zero by a uniform draw on (0, 1.03]. The draw for
/// position `i` depends only on `(seed, i)`.
pub fn randomize_zero_speeds(speeds: &[f64], seed: u64) -> Vec<f64> {
    speeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if s == 0.0 {
                let u: f64 = stream_rng(seed, Stream::ZeroSpeeds, i as u64).random();
                ZERO_SPEED_UPPER * (1.0 - u)
            } else {
                s
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalRow {
    pub obs_perturbed: WindVector,
    pub raw_member: WindVector,
    pub emos_sample: WindVector,
}

/// Data for the marginal calibration diagram: per case a slightly jittered
/// observation, one raw member chosen at random and one draw from the density.
pub fn marginal_calibration_data(
    cases: &[ForecastCase],
    densities: &[BivariateNormalParams],
    seed: u64,
) -> Result<Vec<MarginalRow>> {
    if cases.len() != densities.len() {
        return Err(Error::DatasetShape("cases and densities differ in length".into()));
    }
    cases
        .iter()
        .zip(densities)
        .enumerate()
        .map(|(i, (c, p))| {
            let obs = c.observation.ok_or_else(|| Error::InsufficientData(format!("case {i} has no observation")))?;
            if c.ensemble.is_empty() {
                return Err(Error::DegenerateEnsemble(0));
            }
            let mut rng = stream_rng(seed, Stream::MarginalCalibration, i as u64);
            let ju = rng.random_range(-OBS_JITTER..=OBS_JITTER);
            let jv = rng.random_range(-OBS_JITTER..=OBS_JITTER);
            let raw_member = c.ensemble.members[rng.random_range(0..c.ensemble.len())];
            Ok(MarginalRow {
                obs_perturbed: WindVector::new(obs.u + ju, obs.v + jv),
                raw_member,
                emos_sample: p.draw(&mut rng),
            })
        })
        .collect()
}

pub fn crps_speed(f: &SpeedForecast, y: f64) -> f64 {
    match f {
        SpeedForecast::Ensemble(xs) => crps_ensemble(xs, y),
        SpeedForecast::TruncNormal { location, scale } => crps_truncnorm(*location, *scale, y),
    }
}

/// Median of the predictive speed distribution, the point forecast for MAE.
pub fn speed_median(f: &SpeedForecast) -> f64 {
    match f {
        SpeedForecast::Ensemble(xs) => {
            let mut s = xs.clone();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            if n % 2 == 1 {
                s[n / 2]
            } else {
                0.5 * (s[n / 2 - 1] + s[n / 2])
            }
        }
        SpeedForecast::TruncNormal { location, scale } => truncnorm_median(*location, *scale),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub es_samples: usize,
    pub speed_ensemble_size: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { es_samples: ES_SAMPLES, speed_ensemble_size: crate::predict::SPEED_ENSEMBLE_SIZE, seed: 0 }
    }
}

/// Scores of one forecast case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseScore {
    pub es: f64,
    pub bae: f64,
    pub crps: f64,
    pub ae: f64,
    pub rank: usize,
}

/// Speed forecast implied by a vector forecast.
pub fn speed_forecast_of(f: &Forecast, size: usize, seed: u64, index: u64) -> SpeedForecast {
    match f {
        Forecast::Density(d) => {
            let mut rng = stream_rng(seed, Stream::SpeedEnsemble, index);
            SpeedForecast::Ensemble(speed_samples(&d.params, size, &mut rng))
        }
        Forecast::Discrete(d) => SpeedForecast::Ensemble(d.members.iter().map(|w| w.speed()).collect()),
    }
}

/// Score one case. `obs_speed` is the observed speed after zero
/// randomization. Random streams are keyed by `index`, so two methods scored
/// on the same case share their Monte Carlo draws where they can.
pub fn score_case(f: &Forecast, y: WindVector, obs_speed: f64, index: u64, opts: &VerifyOptions) -> Result<CaseScore> {
    let es = match f {
        Forecast::Density(d) => {
            let mut rng = stream_rng(opts.seed, Stream::EnergyScore, index);
            energy_score_density(&d.params, y, opts.es_samples, &mut rng)?
        }
        Forecast::Discrete(d) => {
            if d.members.is_empty() {
                return Err(Error::DegenerateEnsemble(0));
            }
            energy_score_ensemble(&d.members, y)
        }
    };
    let sf = speed_forecast_of(f, opts.speed_ensemble_size, opts.seed, index);
    let (rank, _) = rank_of(f, y, opts.seed, index);
    Ok(CaseScore {
        es,
        bae: bivariate_abs_error(f, y)?,
        crps: crps_speed(&sf, obs_speed),
        ae: (speed_median(&sf) - obs_speed).abs(),
        rank,
    })
}

/// Mean scores of one method. Fields that do not apply to a method (the
/// vector scores of a speed-only forecast) are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub mean_es: Option<f64>,
    pub bmae: Option<f64>,
    pub crps: f64,
    pub mae: f64,
    pub delta: Option<f64>,
    pub n_cases: usize,
}

impl ScoreSummary {
    /// Case-weighted pooling of two disjoint summaries. The reliability index
    /// is not an average and is dropped; merge the rank histograms instead.
    pub fn pool(&self, other: &ScoreSummary) -> ScoreSummary {
        let (n1, n2) = (self.n_cases as f64, other.n_cases as f64);
        let n = n1 + n2;
        let avg = |a: f64, b: f64| if n == 0.0 { 0.0 } else { (n1 * a + n2 * b) / n };
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => Some(avg(a, b)),
            _ => None,
        };
        ScoreSummary {
            mean_es: opt(self.mean_es, other.mean_es),
            bmae: opt(self.bmae, other.bmae),
            crps: avg(self.crps, other.crps),
            mae: avg(self.mae, other.mae),
            delta: None,
            n_cases: self.n_cases + other.n_cases,
        }
    }
}

fn mean_of(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        stable_sum(xs) / n as f64
    }
}

/// Score aligned vector forecasts. `obs_speeds` are the zero-randomized
/// observed speeds.
pub fn score_cases(
    forecasts: &[Forecast],
    obs: &[WindVector],
    obs_speeds: &[f64],
    opts: &VerifyOptions,
) -> Result<(ScoreSummary, Vec<CaseScore>, RankHistogram)> {
    if forecasts.len() != obs.len() || obs.len() != obs_speeds.len() {
        return Err(Error::DatasetShape("forecasts and observations differ in length".into()));
    }
    let scores: Vec<CaseScore> =
        crate::par::try_map_indexed(forecasts, |i, f| score_case(f, obs[i], obs_speeds[i], i as u64, opts))?;
    let sizes: Vec<(usize, usize)> = forecasts
        .iter()
        .zip(&scores)
        .map(|(f, s)| {
            let m = match f {
                Forecast::Density(_) => RANK_SAMPLE_SIZE,
                Forecast::Discrete(d) => d.members.len(),
            };
            (s.rank, m)
        })
        .collect();
    let hist = histogram_from_ranks(&sizes)?;
    let n = scores.len();
    let summary = ScoreSummary {
        mean_es: Some(mean_of(scores.iter().map(|s| s.es), n)),
        bmae: Some(mean_of(scores.iter().map(|s| s.bae), n)),
        crps: mean_of(scores.iter().map(|s| s.crps), n),
        mae: mean_of(scores.iter().map(|s| s.ae), n),
        delta: Some(reliability_index(&hist)),
        n_cases: n,
    };
    Ok((summary, scores, hist))
}

/// Score speed-only forecasts with CRPS and MAE.
pub fn score_speed_cases(forecasts: &[SpeedForecast], obs_speeds: &[f64]) -> Result<(ScoreSummary, Vec<(f64, f64)>)> {
    if forecasts.len() != obs_speeds.len() {
        return Err(Error::DatasetShape("forecasts and observations differ in length".into()));
    }
    let scores = map_indexed(forecasts, |i, f| {
        let y = obs_speeds[i];
        (crps_speed(f, y), (speed_median(f) - y).abs())
    });
    let n = scores.len();
    let summary = ScoreSummary {
        mean_es: None,
        bmae: None,
        crps: mean_of(scores.iter().map(|s| s.0), n),
        mae: mean_of(scores.iter().map(|s| s.1), n),
        delta: None,
        n_cases: n,
    };
    Ok((summary, scores))
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Plain-text score table with two decimals.
pub fn format_score_table(rows: &[(String, ScoreSummary)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}",
        "Method", "ES", "bMAE", "Delta", "CRPS", "MAE", "Cases"
    );
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}",
            name,
            cell(s.mean_es),
            cell(s.bmae),
            cell(s.delta),
            cell(Some(s.crps)),
            cell(Some(s.mae)),
            s.n_cases
        );
    }
    out
}

/// CSV score table at full precision; empty cells for scores that do not apply.
pub fn format_score_csv(rows: &[(String, ScoreSummary)]) -> String {
    let f = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
    let mut out = String::from("method,es,bmae,delta,crps,mae,n_cases\n");
    for (name, s) in rows {
        let _ =
            writeln!(out, "{},{},{},{},{},{},{}", name, f(s.mean_es), f(s.bmae), f(s.delta), s.crps, s.mae, s.n_cases);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvn::sample;
    use crate::estimation::Scope;
    use crate::predict::Provenance;
    use crate::references::Method;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn w(u: f64, v: f64) -> WindVector {
        WindVector::new(u, v)
    }

    fn density(p: BivariateNormalParams) -> Forecast {
        Forecast::Density(DensityForecast {
            params: p,
            provenance: Provenance { scope: Scope::Regional, issue_time: chrono::DateTime::UNIX_EPOCH, station: None },
            zero_direction: false,
        })
    }

    fn discrete(members: Vec<WindVector>) -> Forecast {
        Forecast::Discrete(DiscreteForecast { members, method: Method::Raw })
    }

    fn brute_es(xs: &[WindVector], y: WindVector) -> f64 {
        let m = xs.len() as f64;
        let mut a = 0.0;
        for x in xs {
            a += ((x.u - y.u).powi(2) + (x.v - y.v).powi(2)).sqrt();
        }
        let mut b = 0.0;
        for x in xs {
            for z in xs {
                b += ((x.u - z.u).powi(2) + (x.v - z.v).powi(2)).sqrt();
            }
        }
        a / m - b / (2.0 * m * m)
    }

    #[test]
    fn energy_score_examples() {
        assert_eq!(energy_score_ensemble(&[w(3.0, 4.0)], w(0.0, 0.0)), 5.0);
        assert_eq!(energy_score_ensemble(&[w(0.0, 0.0), w(2.0, 0.0)], w(1.0, 0.0)), 0.5);
        assert_eq!(energy_score_ensemble(&[w(1.5, -2.0); 5], w(1.5, -2.0)), 0.0);
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps_ensemble(&[4.0], 1.5), 2.5);
        assert_eq!(crps_ensemble(&[0.0, 2.0], 1.0), 0.5);
        assert_eq!(crps_ensemble(&[2.2; 4], 2.2), 0.0);
    }

    #[test]
    fn density_es_near_point_mass() {
        let p = BivariateNormalParams::new(1.0, 2.0, 1e-10, 1e-10, 0.0).unwrap();
        let mut rng = rng_from_seed(1);
        let s = energy_score_density(&p, w(1.0, 2.0), ES_SAMPLES, &mut rng).unwrap();
        assert!(s.abs() < 1e-3);
    }

    #[test]
    fn density_es_matches_reference_run() {
        let p = BivariateNormalParams::standard();
        let y = w(0.0, 0.0);
        // Reference from a large sample: E|X| - E|X - X'|/2 over 10^6 draws.
        let big = sample(&p, 1_000_000, 99).unwrap();
        let reference = energy_score_samples(&big, y);
        let reps: Vec<f64> = (0..50)
            .map(|i| {
                let mut rng = rng_from_seed(1000 + i);
                energy_score_density(&p, y, ES_SAMPLES, &mut rng).unwrap()
            })
            .collect();
        let mean = reps.iter().sum::<f64>() / 50.0;
        let sd = (reps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
        assert!((reps[0] - reference).abs() < 3.0 * sd, "{} vs {reference} sd {sd}", reps[0]);
        // Closed form for the standard normal: sqrt(pi/2) - sqrt(pi)/2.
        let exact = (std::f64::consts::PI / 2.0).sqrt() - std::f64::consts::PI.sqrt() / 2.0;
        assert!((reference - exact).abs() < 3e-3, "{reference} vs {exact}");
    }

    #[test]
    fn density_es_is_seeded() {
        let p = BivariateNormalParams::new(0.5, -1.0, 2.0, 3.0, 0.4).unwrap();
        let a = energy_score_density(&p, w(1.0, 1.0), 1000, &mut rng_from_seed(7)).unwrap();
        let b = energy_score_density(&p, w(1.0, 1.0), 1000, &mut rng_from_seed(7)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(energy_score_density(&p, w(1.0, 1.0), 1, &mut rng_from_seed(7)).is_err());
    }

    #[test]
    fn mc_estimator_converges_to_empirical_score() {
        let mut rng = rng_from_seed(5);
        let members: Vec<WindVector> =
            (0..300).map(|_| w(rng.random_range(-5.0..5.0), rng.random_range(-3.0..8.0))).collect();
        let y = w(1.0, 2.0);
        let exact = energy_score_ensemble(&members, y);
        let draws: Vec<WindVector> = (0..100_000).map(|_| members[rng.random_range(0..300)]).collect();
        let approx = energy_score_samples(&draws, y);
        assert!(((approx - exact) / exact).abs() < 0.01, "{approx} vs {exact}");
    }

    #[test]
    fn propriety_spot_check() {
        let truth = BivariateNormalParams::new(0.0, 0.0, 1.0, 1.0, 0.7).unwrap();
        let other = BivariateNormalParams::new(0.0, 0.0, 1.0, 1.0, -0.2).unwrap();
        let obs = sample(&truth, 10_000, 3).unwrap();
        let (mut sp, mut sq) = (0.0, 0.0);
        let mut diffs = Vec::new();
        for (i, y) in obs.iter().enumerate() {
            let a = energy_score_density(&truth, *y, 200, &mut stream_rng(1, Stream::EnergyScore, i as u64)).unwrap();
            let b = energy_score_density(&other, *y, 200, &mut stream_rng(1, Stream::EnergyScore, i as u64)).unwrap();
            sp += a;
            sq += b;
            diffs.push(b - a);
        }
        let n = obs.len() as f64;
        let md = diffs.iter().sum::<f64>() / n;
        let se = (diffs.iter().map(|d| (d - md).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
        assert!(sp / n <= sq / n + 2.0 * se, "{} vs {}", sp / n, sq / n);
    }

    #[test]
    fn spatial_median_symmetric_sets() {
        let cross = [w(1.0, 0.0), w(-1.0, 0.0), w(0.0, 1.0), w(0.0, -1.0)];
        let m = spatial_median(&cross, None).unwrap();
        assert!(m.converged && m.point.speed() < 1e-9);
        let h = 3f64.sqrt() / 2.0;
        let tri = [w(0.0, 1.0), w(-h, -0.5), w(h, -0.5)];
        let m = spatial_median(&tri, None).unwrap();
        assert!(m.point.speed() < 1e-9);
    }

    #[test]
    fn spatial_median_on_a_data_point() {
        // Four points around a heavy centre: the centre is the median and the
        // iteration starts exactly on it.
        let pts = [w(0.0, 0.0), w(0.0, 0.0), w(0.0, 0.0), w(1.0, 0.0), w(-1.0, 0.0), w(0.0, 1.0), w(0.0, -1.0)];
        let m = spatial_median(&pts, None).unwrap();
        assert!(m.converged && m.point == w(0.0, 0.0));
        // Majority weight at one point pins the median there.
        let pts = [w(5.0, 5.0), w(0.0, 0.0), w(1.0, 0.0)];
        let m = spatial_median(&pts, Some(&[10.0, 1.0, 1.0])).unwrap();
        assert!(m.point.distance(&w(5.0, 5.0)) < 1e-9, "{:?}", m);
    }

    #[test]
    fn spatial_median_beats_grid() {
        let mut rng = rng_from_seed(11);
        let pts: Vec<WindVector> =
            (0..100).map(|_| w(rng.random_range(-10.0..10.0), rng.random_range(-4.0..6.0))).collect();
        let m = spatial_median(&pts, None).unwrap();
        let obj = spatial_median_objective(&pts, None, m.point);
        for i in 0..200 {
            for j in 0..200 {
                let g = w(-10.0 + 20.0 * i as f64 / 199.0, -4.0 + 10.0 * j as f64 / 199.0);
                assert!(obj <= spatial_median_objective(&pts, None, g) + 1e-12);
            }
        }
    }

    #[test]
    fn spatial_median_of_elliptical_sample() {
        let p = BivariateNormalParams::new(2.0, -1.0, 4.0, 1.0, 0.5).unwrap();
        let n = 10_000;
        let pts = sample(&p, n, 21).unwrap();
        let m = spatial_median(&pts, None).unwrap();
        assert!(m.point.distance(&w(2.0, -1.0)) < 3.0 / (n as f64).sqrt() * 2.0);
        assert!(spatial_median(&[], None).is_err());
    }

    #[test]
    fn bivariate_abs_error_examples() {
        let cross = vec![w(1.0, 0.0), w(-1.0, 0.0), w(0.0, 1.0), w(0.0, -1.0)];
        assert!((bivariate_abs_error(&discrete(cross), w(3.0, 4.0)).unwrap() - 5.0).abs() < 1e-9);
        for s2 in [0.1, 1.0, 25.0] {
            let f = density(BivariateNormalParams::new(2.0, 0.0, s2, s2, 0.0).unwrap());
            assert_eq!(bivariate_abs_error(&f, w(0.0, 0.0)).unwrap(), 2.0);
        }
        let f = density(BivariateNormalParams::new(1.0, 1.0, 1.0, 1.0, 0.3).unwrap());
        assert_eq!(bivariate_abs_error(&f, w(1.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn rank_examples() {
        let mut rng = rng_from_seed(0);
        assert_eq!(multivariate_rank(&[w(0.0, 0.0)], w(1.0, 1.0), &mut rng), 2);
        assert_eq!(multivariate_rank(&[w(1.0, 1.0)], w(0.0, 0.0), &mut rng), 1);
    }

    #[test]
    fn tied_ranks_are_uniform() {
        let members = vec![w(1.0, 1.0); 8];
        let mut h = RankHistogram::new(9);
        let mut rng = rng_from_seed(4);
        for _ in 0..10_000 {
            h.add(multivariate_rank(&members, w(1.0, 1.0), &mut rng));
        }
        assert!(h.chi_square().1 > 0.01, "{:?}", h);
    }

    #[test]
    fn calibrated_ranks_are_uniform() {
        let p = BivariateNormalParams::new(1.0, -2.0, 2.0, 0.5, 0.6).unwrap();
        let n = 10_000;
        let obs = sample(&p, n, 77).unwrap();
        let fc: Vec<Forecast> = (0..n).map(|_| density(p)).collect();
        let h = rank_histogram(&fc, &obs, 3).unwrap();
        assert_eq!(h.bins(), 9);
        assert_eq!(h.total(), n as u64);
        assert!(h.chi_square().1 > 0.01, "{:?}", h);
        assert!(reliability_index(&h) < 0.1);
    }

    #[test]
    fn far_observations_land_in_last_rank() {
        let fc: Vec<Forecast> = (0..50).map(|_| discrete(vec![w(0.0, 0.0), w(1.0, -1.0), w(-1.0, 1.0)])).collect();
        let obs = vec![w(100.0, 100.0); 50];
        let h = rank_histogram(&fc, &obs, 1).unwrap();
        assert_eq!(h.counts, vec![0, 0, 0, 50]);
    }

    #[test]
    fn dressing_ranks_are_binned_by_four() {
        let members: Vec<WindVector> = (0..35).map(|i| w(i as f64, i as f64)).collect();
        let fc: Vec<Forecast> = (0..36).map(|_| discrete(members.clone())).collect();
        let obs: Vec<WindVector> = (0..36).map(|i| w(i as f64 - 0.5, i as f64 - 0.5)).collect();
        let h = rank_histogram(&fc, &obs, 1).unwrap();
        assert_eq!(h.counts, vec![4; 9]);
        let mixed = vec![discrete(members.clone()), discrete(members[..10].to_vec())];
        assert!(rank_histogram(&mixed, &obs[..2], 1).is_err());
    }

    #[test]
    fn reliability_index_examples() {
        let mut h = RankHistogram::new(9);
        for _ in 0..7 {
            h.add(4);
        }
        assert_eq!(reliability_index(&h), 16.0 / 9.0);
        let u = RankHistogram { counts: vec![3; 9] };
        assert_eq!(reliability_index(&u), 0.0);
    }

    #[test]
    fn zero_speed_randomization() {
        let out = randomize_zero_speeds(&[0.0, 3.1, 0.0], 9);
        assert_eq!(out[1], 3.1);
        for x in [out[0], out[2]] {
            assert!(x > 0.0 && x <= ZERO_SPEED_UPPER);
        }
        assert_ne!(out[0], out[2]);
        let none = [1.0, 2.5, 0.1];
        assert_eq!(randomize_zero_speeds(&none, 9), none.to_vec());
        let zeros = vec![0.0; 1_000_000];
        let r = randomize_zero_speeds(&zeros, 2);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        assert!((mean - 0.515).abs() < 0.003, "{mean}");
    }

    #[test]
    fn marginal_rows() {
        use crate::wind::EnsembleForecast;
        let case = ForecastCase {
            station_id: "S".into(),
            valid_time: chrono::DateTime::UNIX_EPOCH,
            ensemble: EnsembleForecast::new(vec![w(1.0, 2.0), w(3.0, 4.0)]),
            observation: Some(w(5.0, 5.0)),
        };
        let cases = vec![case; 500];
        let dens = vec![BivariateNormalParams::standard(); 500];
        let rows = marginal_calibration_data(&cases[..1], &dens[..1], 3).unwrap();
        assert_eq!(rows.len(), 1);
        let rows = marginal_calibration_data(&cases, &dens, 3).unwrap();
        for r in &rows {
            assert!((r.obs_perturbed.u - 5.0).abs() <= OBS_JITTER);
            assert!((r.obs_perturbed.v - 5.0).abs() <= OBS_JITTER);
            assert!(r.raw_member == w(1.0, 2.0) || r.raw_member == w(3.0, 4.0));
        }
        assert_eq!(rows, marginal_calibration_data(&cases, &dens, 3).unwrap());
    }

    #[test]
    fn speed_scores() {
        assert_eq!(speed_median(&SpeedForecast::Ensemble(vec![3.0, 1.0, 2.0])), 2.0);
        assert_eq!(speed_median(&SpeedForecast::Ensemble(vec![4.0, 1.0, 2.0, 3.0])), 2.5);
        let t = SpeedForecast::TruncNormal { location: 5.0, scale: 1.0 };
        assert!((speed_median(&t) - 5.0).abs() < 1e-6);
        assert_eq!(crps_speed(&SpeedForecast::Ensemble(vec![0.0, 2.0]), 1.0), 0.5);
    }

    #[test]
    fn summary_table_and_pooling() {
        let p = BivariateNormalParams::new(0.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        let obs = sample(&p, 40, 1).unwrap();
        let speeds: Vec<f64> = obs.iter().map(|o| o.speed()).collect();
        let fc: Vec<Forecast> = (0..40).map(|_| density(p)).collect();
        let opts = VerifyOptions { es_samples: 500, speed_ensemble_size: 50, seed: 2 };
        let (all, _, _) = score_cases(&fc, &obs, &speeds, &opts).unwrap();
        let (a, _, _) = score_cases(&fc[..15], &obs[..15], &speeds[..15], &opts).unwrap();
        // Per-case streams are keyed by the index, so re-index the tail.
        let tail: Vec<CaseScore> =
            (15..40).map(|i| score_case(&fc[i], obs[i], speeds[i], i as u64, &opts).unwrap()).collect();
        let b = ScoreSummary {
            mean_es: Some(tail.iter().map(|s| s.es).sum::<f64>() / 25.0),
            bmae: Some(tail.iter().map(|s| s.bae).sum::<f64>() / 25.0),
            crps: tail.iter().map(|s| s.crps).sum::<f64>() / 25.0,
            mae: tail.iter().map(|s| s.ae).sum::<f64>() / 25.0,
            delta: None,
            n_cases: 25,
        };
        let pooled = a.pool(&b);
        assert_eq!(pooled.n_cases, 40);
        assert!((pooled.mean_es.unwrap() - all.mean_es.unwrap()).abs() < 1e-12);
        assert!((pooled.crps - all.crps).abs() < 1e-12);
        let table = format_score_table(&[("emos".into(), all.clone())]);
        assert!(table.lines().nth(1).unwrap().starts_with("emos"));
        let csv = format_score_csv(&[("emos".into(), all)]);
        assert!(csv.starts_with("method,es,bmae,delta,crps,mae,n_cases\nemos,"));
    }

    proptest! {
        #[test]
        fn es_matches_brute_force(pts in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..12),
                                  y in (-20.0f64..20.0, -20.0f64..20.0)) {
            let xs: Vec<WindVector> = pts.iter().map(|&(u, v)| w(u, v)).collect();
            let y = w(y.0, y.1);
            prop_assert!((energy_score_ensemble(&xs, y) - brute_es(&xs, y)).abs() <= 1e-12);
            prop_assert!(energy_score_ensemble(&xs, y) >= -1e-12);
        }

        #[test]
        fn crps_equals_embedded_es(xs in prop::collection::vec(-50.0f64..50.0, 1..15), y in -50.0f64..50.0) {
            let emb: Vec<WindVector> = xs.iter().map(|&x| w(x, 0.0)).collect();
            prop_assert_eq!(crps_ensemble(&xs, y).to_bits(), energy_score_ensemble(&emb, w(y, 0.0)).to_bits());
        }

        #[test]
        fn ranks_stay_in_range(pts in prop::collection::vec((-3i32..3, -3i32..3), 1..10),
                               y in (-3i32..3, -3i32..3), seed in any::<u64>()) {
            let xs: Vec<WindVector> = pts.iter().map(|&(u, v)| w(u as f64, v as f64)).collect();
            let r = multivariate_rank(&xs, w(y.0 as f64, y.1 as f64), &mut rng_from_seed(seed));
            prop_assert!(r >= 1 && r <= xs.len() + 1);
        }

        #[test]
        fn reliability_index_bounds(counts in prop::collection::vec(0u64..50, 2..12)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let h = RankHistogram { counts };
            let f = h.frequencies();
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let d = reliability_index(&h);
            prop_assert!((0.0..=2.0).contains(&d));
        }
    }
}
