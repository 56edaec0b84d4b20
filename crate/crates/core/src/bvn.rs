//! The bivariate normal density of a wind vector, sampling from it, and its
//! prediction ellipses.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::wind::WindVector;

/// Largest admissible |rho|; keeps 1/(1 - rho^2) finite.
pub const MAX_ABS_RHO: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateNormalParams {
    pub mu_u: f64,
    pub mu_v: f64,
    pub var_u: f64,
    pub var_v: f64,
    pub rho: f64,
}

impl BivariateNormalParams {
    pub fn new(mu_u: f64, mu_v: f64, var_u: f64, var_v: f64, rho: f64) -> Result<Self> {
        let p = BivariateNormalParams { mu_u, mu_v, var_u, var_v, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn standard() -> Self {
        BivariateNormalParams { mu_u: 0.0, mu_v: 0.0, var_u: 1.0, var_v: 1.0, rho: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_u.is_finite() && self.mu_v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite mean ({}, {})", self.mu_u, self.mu_v)));
        }
        if !(self.var_u > 0.0 && self.var_v > 0.0 && self.var_u.is_finite() && self.var_v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "variances must be positive, got ({}, {})",
                self.var_u, self.var_v
            )));
        }
        if !(self.rho.abs() <= MAX_ABS_RHO) {
            return Err(Error::InvalidParameter(format!("|rho| must be below {MAX_ABS_RHO}, got {}", self.rho)));
        }
        Ok(())
    }

    pub fn mean(&self) -> WindVector {
        WindVector::new(self.mu_u, self.mu_v)
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let c = self.rho * (self.var_u * self.var_v).sqrt();
        [[self.var_u, c], [c, self.var_v]]
    }

    /// Squared Mahalanobis distance of `w` from the mean.
    pub fn mahalanobis2(&self, w: WindVector) -> f64 {
        let zu = (w.u - self.mu_u) / self.var_u.sqrt();
        let zv = (w.v - self.mu_v) / self.var_v.sqrt();
        (zu * zu - 2.0 * self.rho * zu * zv + zv * zv) / (1.0 - self.rho * self.rho)
    }

    /// Log density without validation; callers that validated once use this
    /// in hot loops.
    pub fn log_density_unchecked(&self, w: WindVector) -> f64 {
        let one_minus = 1.0 - self.rho * self.rho;
        -(2.0 * PI).ln() - 0.5 * (self.var_u.ln() + self.var_v.ln() + one_minus.ln()) - 0.5 * self.mahalanobis2(w)
    }

    /// One draw via the Cholesky factor of the covariance.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> WindVector {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let su = self.var_u.sqrt();
        let sv = self.var_v.sqrt();
        WindVector::new(self.mu_u + su * z1, self.mu_v + sv * (self.rho * z1 + (1.0 - self.rho * self.rho).sqrt() * z2))
    }
}

/// Density value at `w`.
pub fn density(p: &BivariateNormalParams, w: WindVector) -> Result<f64> {
    p.validate()?;
    let su = p.var_u.sqrt();
    let sv = p.var_v.sqrt();
    let one_minus = 1.0 - p.rho * p.rho;
    let norm = 1.0 / (2.0 * PI * su * sv * one_minus.sqrt());
    Ok(norm * (-0.5 * p.mahalanobis2(w)).exp())
}

pub fn log_density(p: &BivariateNormalParams, w: WindVector) -> Result<f64> {
    p.validate()?;
    Ok(p.log_density_unchecked(w))
}

/// `n` i.i.d. draws, reproducible for a given seed.
pub fn sample(p: &BivariateNormalParams, n: usize, seed: u64) -> Result<Vec<WindVector>> {
    p.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    Ok(sample_with(p, n, &mut rng))
}

pub fn sample_with<R: Rng + ?Sized>(p: &BivariateNormalParams, n: usize, rng: &mut R) -> Vec<WindVector> {
    (0..n).map(|_| p.draw(rng)).collect()
}

/// Quantile of the chi-square distribution with two degrees of freedom.
pub fn chi2_2dof_quantile(p: f64) -> f64 {
    -2.0 * (-p).ln_1p()
}

/// Level set of the density enclosing a given probability mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: WindVector,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Angle of the major axis, degrees counterclockwise from the +u axis,
    /// in (-90, 90].
    pub orientation_deg: f64,
    pub coverage: f64,
}

impl Ellipse {
    /// Closed polyline with `points` vertices; the last vertex repeats the
    /// first.
    pub fn polyline(&self, points: usize) -> Vec<WindVector> {
        let n = points.max(2);
        let (s, c) = self.orientation_deg.to_radians().sin_cos();
        (0..n)
            .map(|i| {
                let t = if i + 1 == n { 0.0 } else { 2.0 * PI * i as f64 / (n - 1) as f64 };
                let a = self.semi_major * t.cos();
                let b = self.semi_minor * t.sin();
                WindVector::new(self.center.u + a * c - b * s, self.center.v + a * s + b * c)
            })
            .collect()
    }
}

pub fn prediction_ellipse(p: &BivariateNormalParams, coverage: f64) -> Result<Ellipse> {
    p.validate()?;
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::InvalidParameter(format!("coverage must lie in (0, 1), got {coverage}")));
    }
    let q = chi2_2dof_quantile(coverage);
    let [[a, b], [_, d]] = p.covariance();
    // Eigen-decomposition of the symmetric 2x2 covariance.
    let half_trace = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let l1 = half_trace + disc;
    let l2 = (half_trace - disc).max(0.0);
    let orientation = if b == 0.0 {
        if a >= d {
            0.0
        } else {
            90.0
        }
    } else {
        (l1 - a).atan2(b).to_degrees()
    };
    let orientation = if orientation > 90.0 {
        orientation - 180.0
    } else if orientation <= -90.0 {
        orientation + 180.0
    } else {
        orientation
    };
    Ok(Ellipse {
        center: p.mean(),
        semi_major: (q * l1).sqrt(),
        semi_minor: (q * l2).sqrt(),
        orientation_deg: orientation,
        coverage,
    })
}
