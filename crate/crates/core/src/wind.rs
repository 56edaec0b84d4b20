//! Wind vectors, ensembles and forecast cases.

use std::fmt;

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};
use crate::numeric::{stable_sum, wrap_degrees};

/// A 2-D wind vector in m/s: `u` is the zonal (west to east) component and
/// `v` the meridional (south to north) component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindVector {
    pub u: f64,
    pub v: f64,
}

impl WindVector {
    pub const ZERO: WindVector = WindVector { u: 0.0, v: 0.0 };

    pub const fn new(u: f64, v: f64) -> Self {
        WindVector { u, v }
    }

    pub fn speed(&self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &WindVector) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    /// Meteorological direction the wind blows FROM, clockwise from north,
    /// in [0, 360).
    pub fn direction(&self) -> Result<f64> {
        wind_direction(*self)
    }

    /// Compass azimuth the vector points TO, clockwise from north, in [0, 360).
    pub fn pointing_azimuth(&self) -> f64 {
        wrap_degrees(self.u.atan2(self.v).to_degrees())
    }

    pub fn scale(&self, k: f64) -> WindVector {
        WindVector::new(self.u * k, self.v * k)
    }
}

impl std::ops::Add for WindVector {
    type Output = WindVector;
    fn add(self, rhs: WindVector) -> WindVector {
        WindVector::new(self.u + rhs.u, self.v + rhs.v)
    }
}

impl std::ops::Sub for WindVector {
    type Output = WindVector;
    fn sub(self, rhs: WindVector) -> WindVector {
        WindVector::new(self.u - rhs.u, self.v - rhs.v)
    }
}

impl fmt::Display for WindVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.u, self.v)
    }
}

/// Meteorological wind direction: `atan2(-u, -v)` in degrees, mapped into
/// [0, 360). A southward vector (wind from the north) is 0°, a westward
/// vector (wind from the east) is 90°.
pub fn wind_direction(w: WindVector) -> Result<f64> {
    if w.u == 0.0 && w.v == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    Ok(wrap_degrees((-w.u).atan2(-w.v).to_degrees()))
}

/// Ensemble mean and population variances (divisor m) per component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleStats {
    pub u_bar: f64,
    pub v_bar: f64,
    pub s2_u: f64,
    pub s2_v: f64,
}

impl EnsembleStats {
    pub fn mean_vector(&self) -> WindVector {
        WindVector::new(self.u_bar, self.v_bar)
    }
}

/// The m member forecasts for one station and valid time. Members are kept in
/// a stable order so that member-specific coefficients stay aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleForecast {
    pub members: Vec<WindVector>,
    pub member_ids: Vec<String>,
}

impl EnsembleForecast {
    pub fn new(members: Vec<WindVector>) -> Self {
        let member_ids = (1..=members.len()).map(|i| format!("m{i}")).collect();
        EnsembleForecast { members, member_ids }
    }

    pub fn with_ids(members: Vec<WindVector>, member_ids: Vec<String>) -> Result<Self> {
        if members.len() != member_ids.len() {
            return Err(Error::DatasetShape(format!("{} members but {} member ids", members.len(), member_ids.len())));
        }
        Ok(EnsembleForecast { members, member_ids })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn stats(&self) -> Result<EnsembleStats> {
        ensemble_stats(self)
    }

    pub fn u_values(&self) -> Vec<f64> {
        self.members.iter().map(|w| w.u).collect()
    }

    pub fn v_values(&self) -> Vec<f64> {
        self.members.iter().map(|w| w.v).collect()
    }
}

pub fn ensemble_stats(e: &EnsembleForecast) -> Result<EnsembleStats> {
    let m = e.members.len();
    if m < 2 {
        return Err(Error::DegenerateEnsemble(m));
    }
    let mf = m as f64;
    let u_bar = stable_sum(e.members.iter().map(|w| w.u)) / mf;
    let v_bar = stable_sum(e.members.iter().map(|w| w.v)) / mf;
    let s2_u = stable_sum(e.members.iter().map(|w| (w.u - u_bar).powi(2))) / mf;
    let s2_v = stable_sum(e.members.iter().map(|w| (w.v - v_bar).powi(2))) / mf;
    Ok(EnsembleStats { u_bar, v_bar, s2_u, s2_v })
}

/// One station and valid time: the ensemble plus, when known, the verifying
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCase {
    pub station_id: String,
    pub valid_time: DateTime<Utc>,
    pub ensemble: EnsembleForecast,
    pub observation: Option<WindVector>,
}

impl ForecastCase {
    pub fn key(&self) -> (&str, DateTime<Utc>) {
        (&self.station_id, self.valid_time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ens(points: &[(f64, f64)]) -> EnsembleForecast {
        EnsembleForecast::new(points.iter().map(|&(u, v)| WindVector::new(u, v)).collect())
    }

    #[test]
    fn stats_of_two_members() {
        let s = ens(&[(1.0, 0.0), (3.0, 0.0)]).stats().unwrap();
        assert_eq!((s.u_bar, s.v_bar, s.s2_u, s.s2_v), (2.0, 0.0, 1.0, 0.0));
        let s = ens(&[(0.0, 0.0), (0.0, 4.0)]).stats().unwrap();
        assert_eq!((s.v_bar, s.s2_v), (2.0, 4.0));
    }

    #[test]
    fn zero_spread() {
        let s = ens(&[(2.0, -1.0); 5]).stats().unwrap();
        assert_eq!((s.u_bar, s.v_bar, s.s2_u, s.s2_v), (2.0, -1.0, 0.0, 0.0));
    }

    #[test]
    fn single_member_is_degenerate() {
        assert!(matches!(ens(&[(1.0, 1.0)]).stats(), Err(Error::DegenerateEnsemble(1))));
    }

    #[test]
    fn direction_axes() {
        assert_eq!(wind_direction(WindVector::new(0.0, -1.0)).unwrap(), 0.0);
        assert_eq!(wind_direction(WindVector::new(-1.0, 0.0)).unwrap(), 90.0);
        assert_abs_diff_eq!(wind_direction(WindVector::new(1.0, 1.0)).unwrap(), 225.0, epsilon = 1e-12);
        assert!(matches!(wind_direction(WindVector::ZERO), Err(Error::UndefinedDirection)));
    }

    #[test]
    fn pointing_azimuth_is_opposite_of_direction() {
        let w = WindVector::new(3.0, 3.0);
        assert_abs_diff_eq!(w.pointing_azimuth(), 45.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.direction().unwrap(), 225.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn direction_is_scale_invariant(u in -50.0..50.0f64, v in -50.0..50.0f64, k in 0.01..100.0f64) {
            prop_assume!(u.hypot(v) > 1e-6);
            let d1 = wind_direction(WindVector::new(u, v)).unwrap();
            let d2 = wind_direction(WindVector::new(u * k, v * k)).unwrap();
            let diff = (d1 - d2).abs();
            prop_assert!(diff < 1e-9 || (360.0 - diff) < 1e-9);
            prop_assert!((0.0..360.0).contains(&d1));
        }

        #[test]
        fn variances_nonnegative(pts in proptest::collection::vec((-30.0..30.0f64, -30.0..30.0f64), 2..20)) {
            let s = ens(&pts).stats().unwrap();
            prop_assert!(s.s2_u >= 0.0 && s.s2_v >= 0.0);
        }
    }
}
