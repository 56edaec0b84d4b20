//! Small numeric helpers shared across modules.

/// Neumaier-compensated sum. Callers collect per-case terms in case order
/// first, which makes parallel and sequential totals bit-identical.
pub fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(values: &[f64]) -> f64 {
    stable_sum(values.iter().copied()) / values.len() as f64
}

/// Population variance (divisor n).
pub fn pop_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    stable_sum(values.iter().map(|x| (x - m) * (x - m))) / values.len() as f64
}

/// Pearson correlation, `None` when fewer than two points or a zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Map an angle in degrees into [0, 360).
pub fn wrap_degrees(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

/// Map an angle in degrees into (-180, 180].
pub fn wrap_degrees_signed(deg: f64) -> f64 {
    let d = wrap_degrees(deg);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}
