//! Wind sectors, per-sector correlation statistics and the direction
//! dependent correlation model.
//!
//! Sector 1 is the disk of speeds up to 2 m/s. Sectors 2 to 9 split the rest
//! of the plane into 45° wedges by the azimuth the ensemble mean vector points
//! to, clockwise from north, using half-open intervals (low, high]: sector 2
//! covers pointing azimuths (0°, 45°], sector 9 covers (315°, 360°].

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::numeric::{pearson, wrap_degrees, wrap_degrees_signed};
use crate::optim::{levenberg_marquardt, LmOptions};
use crate::par;
use crate::wind::{EnsembleStats, ForecastCase, WindVector};

pub const SECTOR_COUNT: usize = 9;
/// Upper speed bound of the calm sector, m/s.
pub const CALM_SPEED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SectorId(u8);

impl SectorId {
    pub const CALM: SectorId = SectorId(1);

    pub fn new(id: u8) -> Result<Self> {
        if (1..=SECTOR_COUNT as u8).contains(&id) {
            Ok(SectorId(id))
        } else {
            Err(Error::InvalidParameter(format!("sector id {id} outside 1..=9")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = SectorId> {
        (1..=SECTOR_COUNT as u8).map(SectorId)
    }

    /// Meteorological direction of the wedge's angular midpoint; `None` for
    /// the calm sector.
    pub fn center_direction(self) -> Option<f64> {
        if self.0 == 1 {
            return None;
        }
        let pointing_mid = 45.0 * f64::from(self.0 - 2) + 22.5;
        Some(wrap_degrees(pointing_mid + 180.0))
    }
}

impl fmt::Display for SectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Sector of a wind vector. Wedge boundaries are resolved with exact sign
/// comparisons rather than through a computed angle.
pub fn assign_sector(w: WindVector) -> SectorId {
    let (u, v) = (w.u, w.v);
    if u * u + v * v <= CALM_SPEED * CALM_SPEED {
        return SectorId::CALM;
    }
    let id = if u > 0.0 && u <= v {
        2 // (0, 45]
    } else if u > 0.0 && v >= 0.0 {
        3 // (45, 90]
    } else if v < 0.0 && u >= -v {
        4 // (90, 135]
    } else if v < 0.0 && u >= 0.0 {
        5 // (135, 180]
    } else if u < 0.0 && u >= v {
        6 // (180, 225]
    } else if u < 0.0 && v <= 0.0 {
        7 // (225, 270]
    } else if v > 0.0 && -u >= v {
        8 // (270, 315]
    } else {
        9 // (315, 360]
    };
    SectorId(id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorStats {
    pub sector: SectorId,
    pub count: usize,
    /// Pearson correlation of the observed components; `None` with fewer
    /// than two cases or a constant component.
    pub corr: Option<f64>,
    pub center_dir: Option<f64>,
}

fn sector_groups(cases: &[ForecastCase]) -> Result<Vec<Vec<WindVector>>> {
    let mut groups = vec![Vec::new(); SECTOR_COUNT];
    for case in cases {
        let obs = case.observation.ok_or_else(|| {
            Error::InvalidParameter(format!("case {} {} has no observation", case.station_id, case.valid_time))
        })?;
        let stats = case.ensemble.stats()?;
        let id = assign_sector(stats.mean_vector());
        groups[usize::from(id.get() - 1)].push(obs);
    }
    Ok(groups)
}

/// Observations grouped by the sector of their ensemble mean forecast.
pub fn sector_scatter(cases: &[ForecastCase]) -> Result<Vec<(SectorId, Vec<WindVector>)>> {
    Ok(sector_groups(cases)?.into_iter().zip(SectorId::all()).map(|(g, id)| (id, g)).collect())
}

/// Correlation of observed components conditional on the sector of the
/// ensemble mean. Always returns nine entries, ordered by sector.
pub fn sector_stats(cases: &[ForecastCase]) -> Result<Vec<SectorStats>> {
    let groups = sector_groups(cases)?;
    Ok(par::map_indexed(&groups, |i, obs| {
        let us: Vec<f64> = obs.iter().map(|w| w.u).collect();
        let vs: Vec<f64> = obs.iter().map(|w| w.v).collect();
        let sector = SectorId(i as u8 + 1);
        SectorStats { sector, count: obs.len(), corr: pearson(&us, &vs), center_dir: sector.center_direction() }
    }))
}

/// `rho(theta) = r * cos(2*pi/360 * (k*theta + phi)) + s`, with theta the
/// ensemble mean wind direction in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationModel {
    pub r: f64,
    pub s: f64,
    pub k: u8,
    pub phi: f64,
}

impl CorrelationModel {
    pub fn new(r: f64, s: f64, k: u8, phi: f64) -> Result<Self> {
        let m = CorrelationModel { r, s, k, phi };
        m.validate()?;
        Ok(m)
    }

    /// Constant zero correlation.
    pub fn zero() -> Self {
        CorrelationModel { r: 0.0, s: 0.0, k: 1, phi: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.k) {
            return Err(Error::InvalidParameter(format!("period count k must be 1, 2 or 3, got {}", self.k)));
        }
        if !(self.r.is_finite() && self.s.is_finite() && self.phi.is_finite()) {
            return Err(Error::InvalidParameter("non-finite correlation model".into()));
        }
        if self.r.abs() + self.s.abs() > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "|r| + |s| must not exceed 1, got {}",
                self.r.abs() + self.s.abs()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, theta: f64) -> f64 {
        eval_correlation(self, theta)
    }
}

pub fn eval_correlation(m: &CorrelationModel, theta: f64) -> f64 {
    m.r * ((2.0 * PI / 360.0) * (f64::from(m.k) * theta + m.phi)).cos() + m.s
}

/// Correlation for one ensemble, with the flag raised when the ensemble mean
/// is exactly zero and the direction falls back to 0°.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseCorrelation {
    pub rho: f64,
    pub zero_direction: bool,
}

/// Correlation for an ensemble: the fitted model at the ensemble mean
/// direction, or `calm_rho` for calm-sector ensembles when that alternative
/// is configured.
pub fn correlation_for(model: &CorrelationModel, calm_rho: Option<f64>, stats: &EnsembleStats) -> CaseCorrelation {
    let mean = stats.mean_vector();
    if let Some(rho) = calm_rho {
        if assign_sector(mean) == SectorId::CALM {
            return CaseCorrelation { rho, zero_direction: false };
        }
    }
    match mean.direction() {
        Ok(theta) => CaseCorrelation { rho: model.eval(theta), zero_direction: false },
        Err(_) => CaseCorrelation { rho: model.eval(0.0), zero_direction: true },
    }
}

/// Correlation model plus the optional calm-sector alternative, which uses a
/// fixed empirical correlation for ensembles whose mean lies in sector 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    pub model: CorrelationModel,
    pub calm_rho: Option<f64>,
}

impl CorrelationSpec {
    pub fn for_stats(&self, stats: &EnsembleStats) -> CaseCorrelation {
        correlation_for(&self.model, self.calm_rho, stats)
    }
}

impl From<CorrelationModel> for CorrelationSpec {
    fn from(model: CorrelationModel) -> Self {
        CorrelationSpec { model, calm_rho: None }
    }
}

/// Result of the weighted nonlinear least squares fit of the correlation
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFit {
    pub model: CorrelationModel,
    /// Weighted residual sum of squares, weights normalized to sum to one.
    pub weighted_rss: f64,
    /// `(sector, observed - fitted)` for every sector used in the fit.
    pub residuals: Vec<(SectorId, f64)>,
    /// False when the amplitude is zero and the phase carries no information.
    pub phi_identified: bool,
    /// True when the unconstrained optimum violated |r| + |s| <= 1.
    pub constrained: bool,
    pub iterations: usize,
}

struct FitPoint {
    sector: SectorId,
    theta: f64,
    corr: f64,
    weight: f64,
}

fn usable_points(stats: &[SectorStats]) -> Vec<FitPoint> {
    let pts: Vec<(SectorId, f64, f64, f64)> = stats
        .iter()
        .filter(|s| s.sector != SectorId::CALM && s.count > 0)
        .filter_map(|s| Some((s.sector, s.center_dir?, s.corr?, s.count as f64)))
        .collect();
    let total: f64 = pts.iter().map(|p| p.3).sum();
    pts.into_iter()
        .map(|(sector, theta, corr, count)| FitPoint { sector, theta, corr, weight: count / total })
        .collect()
}

fn angle(k: f64, theta: f64, phi: f64) -> f64 {
    (2.0 * PI / 360.0) * (k * theta + phi)
}

/// Weighted least squares for (r, s) with the phase held fixed.
fn linear_start(points: &[FitPoint], k: f64, phi: f64) -> (f64, f64) {
    let sw: f64 = points.iter().map(|p| p.weight).sum();
    let xm = points.iter().map(|p| p.weight * angle(k, p.theta, phi).cos()).sum::<f64>() / sw;
    let ym = points.iter().map(|p| p.weight * p.corr).sum::<f64>() / sw;
    let sxx: f64 = points.iter().map(|p| p.weight * (angle(k, p.theta, phi).cos() - xm).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| p.weight * (angle(k, p.theta, phi).cos() - xm) * (p.corr - ym)).sum();
    if sxx <= 1e-14 {
        return (0.0, ym);
    }
    let r = sxy / sxx;
    (r, ym - r * xm)
}

/// Fit (r, s, phi) at a fixed period count `k` by weighted nonlinear least
/// squares, weights proportional to the sector counts. The calm sector is not
/// used. Choosing `k` is left to the caller.
pub fn fit_correlation(stats: &[SectorStats], k: u8) -> Result<CorrelationFit> {
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidParameter(format!("k must be 1, 2 or 3, got {k}")));
    }
    let points = usable_points(stats);
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation fit needs at least 3 sectors with a defined correlation, got {}",
            points.len()
        )));
    }
    let kf = f64::from(k);
    let deg = 2.0 * PI / 360.0;

    let residuals = |x: &[f64]| -> Vec<f64> {
        points.iter().map(|p| p.weight.sqrt() * (x[0] * angle(kf, p.theta, x[2]).cos() + x[1] - p.corr)).collect()
    };
    let jacobian = |x: &[f64]| -> Vec<Vec<f64>> {
        points
            .iter()
            .map(|p| {
                let w = p.weight.sqrt();
                let a = angle(kf, p.theta, x[2]);
                vec![w * a.cos(), w, -w * x[0] * a.sin() * deg]
            })
            .collect()
    };

    let opts = LmOptions::default();
    let mut best: Option<crate::optim::LmResult> = None;
    let mut iterations = 0;
    for phi0 in [0.0, 90.0, 180.0, 270.0] {
        let (r0, s0) = linear_start(&points, kf, phi0);
        let res = levenberg_marquardt(residuals, jacobian, &[r0, s0, phi0], opts);
        iterations += res.iterations;
        let better = match &best {
            None => true,
            Some(b) => res.cost < b.cost,
        };
        if better {
            best = Some(res);
        }
    }
    let best = best.expect("at least one start");
    if !best.converged {
        return Err(Error::NonConvergence {
            iterations,
            message: format!("best iterate r={} s={} phi={} rss={}", best.x[0], best.x[1], best.x[2], best.cost),
        });
    }

    let (mut r, mut s, mut phi) = (best.x[0], best.x[1], best.x[2]);
    let mut cost = best.cost;
    let mut constrained = false;
    if r.abs() + s.abs() > 1.0 {
        constrained = true;
        let scale = 1.0 / (r.abs() + s.abs());
        r *= scale;
        s *= scale;
        let (rr, ss) = (r, s);
        let res1 = |x: &[f64]| residuals(&[rr, ss, x[0]]);
        let jac1 = |x: &[f64]| jacobian(&[rr, ss, x[0]]).into_iter().map(|row| vec![row[2]]).collect::<Vec<_>>();
        let polished = levenberg_marquardt(res1, jac1, &[phi], opts);
        iterations += polished.iterations;
        phi = polished.x[0];
        cost = polished.cost;
    }

    if r < 0.0 {
        r = -r;
        phi += 180.0;
    }
    let phi_identified = r.abs() > 1e-8;
    let phi = if phi_identified { wrap_degrees_signed(phi) } else { 0.0 };
    let model = CorrelationModel { r, s, k, phi };
    let residuals_out = points.iter().map(|p| (p.sector, p.corr - model.eval(p.theta))).collect();

    Ok(CorrelationFit { model, weighted_rss: cost, residuals: residuals_out, phi_identified, constrained, iterations })
}

/// Fit every k in {1, 2, 3} and return the fits together with the k of lowest
/// weighted RSS. Ties go to the smaller k.
pub fn select_correlation(stats: &[SectorStats]) -> Result<(Vec<CorrelationFit>, u8)> {
    let fits = [1u8, 2, 3].iter().map(|&k| fit_correlation(stats, k)).collect::<Result<Vec<_>>>()?;
    let best = fits
        .iter()
        .min_by(|a, b| {
            a.weighted_rss
                .partial_cmp(&b.weighted_rss)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.model.k.cmp(&b.model.k))
        })
        .map(|f| f.model.k)
        .unwrap_or(1);
    Ok((fits, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wind::EnsembleForecast;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn synthetic_stats(model: &CorrelationModel, counts: &[usize]) -> Vec<SectorStats> {
        SectorId::all()
            .map(|id| {
                let count = if id == SectorId::CALM { 0 } else { counts[usize::from(id.get() - 2)] };
                let center = id.center_direction();
                SectorStats { sector: id, count, corr: center.map(|c| model.eval(c)), center_dir: center }
            })
            .collect()
    }

    /// Independent route: the model is linear in (r cos phi, -r sin phi, s)
    /// once k is fixed, so weighted linear least squares gives the optimum.
    fn harmonic_oracle(stats: &[SectorStats], k: u8) -> (f64, f64, f64) {
        let pts: Vec<_> =
            stats.iter().filter(|s| s.sector != SectorId::CALM && s.count > 0 && s.corr.is_some()).collect();
        let total: f64 = pts.iter().map(|s| s.count as f64).sum();
        let mut ata = nalgebra::Matrix3::<f64>::zeros();
        let mut atb = nalgebra::Vector3::<f64>::zeros();
        for s in pts {
            let w = s.count as f64 / total;
            let a = (f64::from(k) * s.center_dir.unwrap()).to_radians();
            let row = nalgebra::Vector3::new(a.cos(), a.sin(), 1.0);
            ata += w * row * row.transpose();
            atb += w * row * s.corr.unwrap();
        }
        let sol = ata.lu().solve(&atb).unwrap();
        let r = sol[0].hypot(sol[1]);
        let phi = (-sol[1]).atan2(sol[0]).to_degrees();
        (r, sol[2], phi)
    }

    #[test]
    fn sector_assignment_examples() {
        assert_eq!(assign_sector(WindVector::new(0.5, 0.5)), SectorId::CALM);
        assert_eq!(assign_sector(WindVector::new(3.0, 3.0)).get(), 2);
        assert_eq!(assign_sector(WindVector::new(-3.0, -3.0)).get(), 6);
        assert_eq!(assign_sector(WindVector::new(2.0, 0.0)), SectorId::CALM);
        assert_eq!(assign_sector(WindVector::new(0.0, 3.0)).get(), 9);
        assert_eq!(assign_sector(WindVector::new(3.0, 0.0)).get(), 3);
        assert_eq!(assign_sector(WindVector::new(0.0, -3.0)).get(), 5);
        assert_eq!(assign_sector(WindVector::new(-3.0, 0.0)).get(), 7);
        assert_eq!(assign_sector(WindVector::new(3.0, -3.0)).get(), 4);
        assert_eq!(assign_sector(WindVector::new(-3.0, 3.0)).get(), 8);
    }

    #[test]
    fn sector_centers_match_caption_quadrants() {
        // Sectors 2-3 point north-east, i.e. south-westerly winds.
        for id in 2..=3 {
            let d = SectorId::new(id).unwrap().center_direction().unwrap();
            assert!(d > 180.0 && d < 270.0);
        }
        for id in 4..=5 {
            let d = SectorId::new(id).unwrap().center_direction().unwrap();
            assert!(d > 270.0 && d < 360.0);
        }
        for id in 6..=7 {
            let d = SectorId::new(id).unwrap().center_direction().unwrap();
            assert!(d > 0.0 && d < 90.0);
        }
        for id in 8..=9 {
            let d = SectorId::new(id).unwrap().center_direction().unwrap();
            assert!(d > 90.0 && d < 180.0);
        }
        assert_eq!(SectorId::CALM.center_direction(), None);
        assert!(SectorId::new(0).is_err() && SectorId::new(10).is_err());
    }

    #[test]
    fn eval_examples() {
        let m = CorrelationModel::new(0.20, -0.15, 2, -61.9).unwrap();
        assert_abs_diff_eq!(m.eval(30.95), 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(m.eval(120.95), -0.35, epsilon = 1e-12);
        let flat = CorrelationModel::new(0.0, 0.3, 3, 17.0).unwrap();
        for t in [0.0, 45.0, 123.4, 359.9] {
            assert_eq!(flat.eval(t), 0.3);
        }
        assert!(CorrelationModel::new(0.6, 0.5, 1, 0.0).is_err());
        assert!(CorrelationModel::new(0.1, 0.1, 4, 0.0).is_err());
    }

    fn case_with(mean: WindVector, obs: WindVector) -> ForecastCase {
        ForecastCase {
            station_id: "S".into(),
            valid_time: chrono::DateTime::UNIX_EPOCH,
            ensemble: EnsembleForecast::new(vec![mean, mean]),
            observation: Some(obs),
        }
    }

    #[test]
    fn stats_all_calm() {
        let cases: Vec<_> = (0..5).map(|i| case_with(WindVector::ZERO, WindVector::new(i as f64, 1.0))).collect();
        let st = sector_stats(&cases).unwrap();
        assert_eq!(st.len(), 9);
        assert_eq!(st[0].count, 5);
        assert!(st[1..].iter().all(|s| s.count == 0 && s.corr.is_none()));
    }

    #[test]
    fn stats_two_collinear_points() {
        let mean = WindVector::new(3.0, 3.0);
        let cases = vec![
            case_with(mean, WindVector::new(0.0, 0.0)),
            case_with(mean, WindVector::new(1.0, 1.0)),
            case_with(WindVector::new(-3.0, -3.0), WindVector::new(1.0, 1.0)),
        ];
        let st = sector_stats(&cases).unwrap();
        assert_eq!(st[1].count, 2);
        assert_eq!(st[1].corr, Some(1.0));
        assert_eq!(st[5].count, 1);
        assert_eq!(st[5].corr, None);
    }

    #[test]
    fn stats_recover_sample_correlation() {
        let p = crate::bvn::BivariateNormalParams::new(0.0, 0.0, 1.0, 1.0, 0.5).unwrap();
        let obs = crate::bvn::sample(&p, 10_000, 99).unwrap();
        let mean = WindVector::new(3.0, 5.0);
        let cases: Vec<_> = obs.into_iter().map(|o| case_with(mean, o)).collect();
        let st = sector_stats(&cases).unwrap();
        assert_eq!(st[1].count, 10_000);
        assert!((st[1].corr.unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn stats_require_observations() {
        let mut c = case_with(WindVector::new(3.0, 3.0), WindVector::ZERO);
        c.observation = None;
        assert!(sector_stats(&[c]).is_err());
    }

    #[test]
    fn noiseless_recovery() {
        let truth = CorrelationModel::new(0.3, 0.1, 1, 40.0).unwrap();
        let st = synthetic_stats(&truth, &[10; 8]);
        let fit = fit_correlation(&st, 1).unwrap();
        assert!(fit.weighted_rss < 1e-10);
        assert_abs_diff_eq!(fit.model.r, 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.model.s, 0.1, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.model.phi, 40.0, epsilon = 1e-6);
        assert!(fit.phi_identified && !fit.constrained);
    }

    #[test]
    fn noiseless_recovery_regional_example() {
        let truth = CorrelationModel::new(0.20, -0.15, 2, -61.9).unwrap();
        let st = synthetic_stats(&truth, &[120, 30, 44, 80, 500, 61, 23, 9]);
        let fit = fit_correlation(&st, 2).unwrap();
        assert!(fit.weighted_rss < 1e-10);
        assert_abs_diff_eq!(fit.model.r, 0.20, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.model.s, -0.15, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.model.phi, -61.9, epsilon = 1e-6);
    }

    #[test]
    fn constant_stats_leave_phase_unidentified() {
        let st = synthetic_stats(&CorrelationModel::new(0.0, -0.4, 1, 0.0).unwrap(), &[5; 8]);
        let fit = fit_correlation(&st, 1).unwrap();
        assert!(fit.model.r.abs() < 1e-8);
        assert_abs_diff_eq!(fit.model.s, -0.4, epsilon = 1e-10);
        assert!(fit.weighted_rss < 1e-20);
        assert!(!fit.phi_identified);
    }

    #[test]
    fn too_few_sectors() {
        let truth = CorrelationModel::new(0.3, 0.1, 1, 40.0).unwrap();
        let st = synthetic_stats(&truth, &[10, 10, 0, 0, 0, 0, 0, 0]);
        assert!(matches!(fit_correlation(&st, 1), Err(Error::InsufficientData(_))));
        assert!(fit_correlation(&st, 0).is_err());
    }

    #[test]
    fn agrees_with_harmonic_regression_on_noisy_data() {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let truth = CorrelationModel::new(0.24, 0.07, 1, 70.5).unwrap();
        let counts = [40, 90, 300, 120, 75, 18, 230, 55];
        let mut rng = crate::rng::rng_from_seed(4);
        let mut st = synthetic_stats(&truth, &counts);
        for s in st.iter_mut().skip(1) {
            let e: f64 = rng.sample(StandardNormal);
            s.corr = s.corr.map(|c| c + 0.05 * e);
        }
        for k in 1..=3u8 {
            let fit = fit_correlation(&st, k).unwrap();
            let (r, s, phi) = harmonic_oracle(&st, k);
            assert_abs_diff_eq!(fit.model.r, r, epsilon = 1e-7);
            assert_abs_diff_eq!(fit.model.s, s, epsilon = 1e-7);
            if r > 1e-6 {
                let d = wrap_degrees_signed(fit.model.phi - phi);
                assert!(d.abs() < 1e-5, "k={k} phi {} vs {phi}", fit.model.phi);
            }
        }
    }

    #[test]
    fn constraint_projection() {
        // Data that wants |r| + |s| > 1.
        let st = synthetic_stats(&CorrelationModel { r: 0.7, s: 0.6, k: 1, phi: 10.0 }, &[10; 8]);
        let fit = fit_correlation(&st, 1).unwrap();
        assert!(fit.constrained);
        assert!(fit.model.r.abs() + fit.model.s.abs() <= 1.0 + 1e-12);
        assert!(fit.model.validate().is_ok());
    }

    #[test]
    fn selection_prefers_generating_k() {
        let truth = CorrelationModel::new(0.25, 0.05, 2, 30.0).unwrap();
        let st = synthetic_stats(&truth, &[10, 20, 30, 40, 50, 60, 70, 80]);
        let (fits, k) = select_correlation(&st).unwrap();
        assert_eq!(fits.len(), 3);
        assert_eq!(k, 2);
    }

    #[test]
    fn calm_and_zero_direction_conventions() {
        let m = CorrelationModel::new(0.3, 0.1, 1, 40.0).unwrap();
        let zero = EnsembleStats { u_bar: 0.0, v_bar: 0.0, s2_u: 1.0, s2_v: 1.0 };
        let c = correlation_for(&m, None, &zero);
        assert!(c.zero_direction);
        assert_abs_diff_eq!(c.rho, m.eval(0.0));
        let c = correlation_for(&m, Some(-0.2), &zero);
        assert_eq!(c.rho, -0.2);
        let windy = EnsembleStats { u_bar: 5.0, v_bar: 0.0, ..zero };
        assert_abs_diff_eq!(correlation_for(&m, Some(-0.2), &windy).rho, m.eval(270.0));
    }

    proptest! {
        #[test]
        fn correlation_bounded(r in -1.0..1.0f64, frac in 0.0..1.0f64, k in 1u8..=3, phi in -180.0..180.0f64) {
            let s = (1.0 - r.abs()) * frac * if r > 0.0 { -1.0 } else { 1.0 };
            let m = CorrelationModel::new(r, s, k, phi).unwrap();
            for i in 0..3600 {
                let rho = m.eval(i as f64 * 0.1);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
            }
        }

        #[test]
        fn correlation_periodic(r in -0.5..0.5f64, s in -0.5..0.5f64, k in 1u8..=3, phi in -180.0..180.0f64, theta in 0.0..360.0f64) {
            let m = CorrelationModel { r, s, k, phi };
            let a = m.eval(theta);
            let b = m.eval(theta + 360.0 / f64::from(k));
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn sectors_partition_plane(u in -40.0..40.0f64, v in -40.0..40.0f64) {
            let w = WindVector::new(u, v);
            let id = assign_sector(w);
            if w.speed() > CALM_SPEED {
                let az = w.pointing_azimuth();
                let az = if az == 0.0 { 360.0 } else { az };
                let lo = 45.0 * f64::from(id.get() - 2);
                prop_assert!(az > lo - 1e-9 && az <= lo + 45.0 + 1e-9, "az {} sector {}", az, id);
            } else {
                prop_assert_eq!(id, SectorId::CALM);
            }
        }

        #[test]
        fn weight_scaling_invariance(scale in 1usize..50) {
            let truth = CorrelationModel::new(0.24, 0.07, 1, 70.5).unwrap();
            let counts = [4, 9, 30, 12, 7, 18, 23, 5];
            let mut st = synthetic_stats(&truth, &counts);
            for (i, s) in st.iter_mut().enumerate() {
                s.corr = s.corr.map(|c| c + 0.03 * ((i * 7 % 5) as f64 - 2.0));
            }
            let a = fit_correlation(&st, 1).unwrap();
            for s in st.iter_mut() { s.count *= scale; }
            let b = fit_correlation(&st, 1).unwrap();
            prop_assert!((a.model.r - b.model.r).abs() < 1e-9);
            prop_assert!((a.model.s - b.model.s).abs() < 1e-9);
            prop_assert!((a.weighted_rss - b.weighted_rss).abs() < 1e-12);
        }
    }
}
