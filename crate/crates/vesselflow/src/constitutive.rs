use std::f64::consts::PI;

use crate::error::{SimError, SimResult};
use crate::network::{SyntheticCoefficients, TubeLaw, TubeStation, Vessel, VesselModel};

pub const DEFAULT_AREA_FLOOR: f64 = 1e-10;

const INVERSION_TOL: f64 = 1e-14;
const INVERSION_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrimitiveState {
    pub p: f64,
    pub q: f64,
}

impl PrimitiveState {
    pub fn new(p: f64, q: f64) -> Self {
        PrimitiveState { p, q }
    }
}

/// Coefficients of `P_t + a Q_x = f`, `Q_t + b P_x + 2c Q_x = g` together with
/// the cross-sectional area they were evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoefficientSet {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub f: f64,
    pub g: f64,
    pub area: f64,
}

impl CoefficientSet {
    pub fn discriminant(&self) -> f64 {
        self.c * self.c + self.a * self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenData {
    pub lambda_r: f64,
    pub lambda_l: f64,
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannPair {
    pub r: f64,
    pub s: f64,
}

/// Admissible radius interval of a law at position `x`.
pub fn radius_range(law: &TubeLaw, x: f64) -> (f64, f64) {
    match law {
        TubeLaw::PowerLaw { .. } => (0.0, f64::INFINITY),
        TubeLaw::Tabulated { stations } => {
            let (k0, k1, _) = bracket(stations, x);
            let lo = stations[k0].radius[0].max(stations[k1].radius[0]);
            let hi = last(&stations[k0].radius).min(*last(&stations[k1].radius));
            (lo, hi)
        }
    }
}

fn last(v: &[f64]) -> &f64 {
    &v[v.len() - 1]
}

/// Stations bracketing `x` and the linear weight of the second one. Outside
/// the station span the nearest station is used alone.
fn bracket(stations: &[TubeStation], x: f64) -> (usize, usize, f64) {
    let n = stations.len();
    if n == 1 || x <= stations[0].x {
        return (0, 0, 0.0);
    }
    if x >= stations[n - 1].x {
        return (n - 1, n - 1, 0.0);
    }
    let k = stations.partition_point(|s| s.x <= x) - 1;
    let w = (x - stations[k].x) / (stations[k + 1].x - stations[k].x);
    (k, k + 1, w)
}

/// Monotone piecewise-cubic Hermite slopes (Fritsch-Carlson).
fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let end_slope = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

/// Value and derivative of the monotone cubic through one station's samples.
fn station_eval(st: &TubeStation, r: f64) -> SimResult<(f64, f64)> {
    let xs = &st.radius;
    let ys = &st.pressure;
    let (lo, hi) = (xs[0], *last(xs));
    if !(r >= lo && r <= hi) {
        return Err(SimError::RadiusOutOfRange { radius: r, min: lo, max: hi });
    }
    let d = pchip_slopes(xs, ys);
    let k = (xs.partition_point(|v| *v <= r).max(1) - 1).min(xs.len() - 2);
    let h = xs[k + 1] - xs[k];
    let t = (r - xs[k]) / h;
    let (t2, t3) = (t * t, t * t * t);
    let p = (2.0 * t3 - 3.0 * t2 + 1.0) * ys[k]
        + (t3 - 2.0 * t2 + t) * h * d[k]
        + (-2.0 * t3 + 3.0 * t2) * ys[k + 1]
        + (t3 - t2) * h * d[k + 1];
    let dp = ((6.0 * t2 - 6.0 * t) * ys[k]
        + (3.0 * t2 - 4.0 * t + 1.0) * h * d[k]
        + (-6.0 * t2 + 6.0 * t) * ys[k + 1]
        + (3.0 * t2 - 2.0 * t) * h * d[k + 1])
        / h;
    Ok((p, dp))
}

/// `(P, dP/dR, dP/dx at fixed R)`.
fn law_eval(law: &TubeLaw, x: f64, r: f64) -> SimResult<(f64, f64, f64)> {
    match law {
        TubeLaw::PowerLaw { c, r0, beta } => {
            if !(r > 0.0) || !r.is_finite() {
                return Err(SimError::RadiusOutOfRange { radius: r, min: 0.0, max: f64::INFINITY });
            }
            let ratio = r / r0;
            let pow = ratio.powf(*beta);
            Ok((c * (pow - 1.0), c * beta * pow / r, 0.0))
        }
        TubeLaw::Tabulated { stations } => {
            let (k0, k1, w) = bracket(stations, x);
            let (lo, hi) = radius_range(law, x);
            if !(r >= lo && r <= hi) {
                return Err(SimError::RadiusOutOfRange { radius: r, min: lo, max: hi });
            }
            let (p0, d0) = station_eval(&stations[k0], r)?;
            if k0 == k1 {
                return Ok((p0, d0, 0.0));
            }
            let (p1, d1) = station_eval(&stations[k1], r)?;
            let dx = stations[k1].x - stations[k0].x;
            Ok(((1.0 - w) * p0 + w * p1, (1.0 - w) * d0 + w * d1, (p1 - p0) / dx))
        }
    }
}

pub fn pressure_from_radius(law: &TubeLaw, x: f64, radius: f64) -> SimResult<f64> {
    law_eval(law, x, radius).map(|v| v.0)
}

pub fn pressure_from_area(law: &TubeLaw, x: f64, area: f64) -> SimResult<f64> {
    pressure_from_radius(law, x, (area / PI).sqrt())
}

/// Pressure range `(P_min, P_max)` reachable at `x`.
pub fn pressure_range(law: &TubeLaw, x: f64) -> SimResult<(f64, f64)> {
    match law {
        TubeLaw::PowerLaw { c, .. } => Ok((-c, f64::INFINITY)),
        TubeLaw::Tabulated { .. } => {
            let (lo, hi) = radius_range(law, x);
            Ok((pressure_from_radius(law, x, lo)?, pressure_from_radius(law, x, hi)?))
        }
    }
}

/// Inverts the tube law by Newton's method safeguarded with bisection.
pub fn radius_from_pressure(law: &TubeLaw, x: f64, pressure: f64) -> SimResult<f64> {
    invert(law, x, pressure).map(|(r, _)| r)
}

/// Radius for `pressure` together with `(dP/dR, dP/dx)` there.
fn invert(law: &TubeLaw, x: f64, pressure: f64) -> SimResult<(f64, (f64, f64))> {
    let (p_lo, p_hi) = pressure_range(law, x)?;
    let open_below = matches!(law, TubeLaw::PowerLaw { .. });
    if !pressure.is_finite() || pressure < p_lo || pressure > p_hi || (open_below && pressure == p_lo) {
        return Err(SimError::PressureOutOfRange { pressure, min: p_lo, max: p_hi });
    }
    let (mut lo, mut hi, mut r) = match law {
        TubeLaw::PowerLaw { c, r0, beta } => (0.0, f64::INFINITY, r0 * (1.0 + pressure / c).powf(1.0 / beta)),
        TubeLaw::Tabulated { .. } => {
            let (lo, hi) = radius_range(law, x);
            let frac = (pressure - p_lo) / (p_hi - p_lo);
            (lo, hi, lo + frac * (hi - lo))
        }
    };
    if !(r > lo && r < hi) {
        r = if hi.is_finite() { 0.5 * (lo + hi) } else { 1.0 };
    }
    for _ in 0..INVERSION_MAX_ITERS {
        let (p, dp, dx) = law_eval(law, x, r)?;
        let residual = p - pressure;
        if residual.abs() <= INVERSION_TOL {
            return Ok((r, (dp, dx)));
        }
        if residual > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let newton = r - residual / dp;
        let next = if dp > 0.0 && newton > lo && newton < hi {
            newton
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * r
        };
        if (next - r).abs() <= 2.0 * f64::EPSILON * r.abs() {
            return Ok((r, (dp, dx)));
        }
        r = next;
    }
    Err(SimError::InversionFailed { pressure })
}

/// `dP/dA` at the given pressure.
pub fn stiffness(law: &TubeLaw, x: f64, pressure: f64) -> SimResult<f64> {
    let (r, (dp_dr, _)) = invert(law, x, pressure)?;
    Ok(dp_dr / (2.0 * PI * r))
}

/// Coefficients of a synthetic vessel at `x`, without any checks.
pub fn synthetic_coefficients(sc: &SyntheticCoefficients, x: f64) -> CoefficientSet {
    CoefficientSet {
        a: sc.a.at(x),
        b: sc.b.at(x),
        c: sc.c.at(x),
        f: sc.f.at(x),
        g: sc.g.at(x),
        area: sc.area.at(x),
    }
}

/// Coefficients without the positivity checks; used by the condition checker.
pub fn raw_coefficients(vessel: &Vessel, x: f64, state: PrimitiveState) -> SimResult<CoefficientSet> {
    let law = match &vessel.model {
        VesselModel::Synthetic(sc) => return Ok(synthetic_coefficients(sc, x)),
        VesselModel::TubeLaw(law) => law,
    };
    let PrimitiveState { p, q } = state;
    let (r, (dp_dr, dp_dx)) = invert(law, x, p)?;
    let area = PI * r * r;
    let a = dp_dr / (2.0 * PI * r);
    let alpha = vessel.alpha;
    let q_over_a = q / area;
    let da_dx = -2.0 * PI * r * dp_dx / dp_dr;
    let friction = 4.0 * PI * vessel.nu * alpha / (alpha - 1.0);
    Ok(CoefficientSet {
        a,
        b: area / vessel.rho_blood - alpha * q_over_a * q_over_a / a,
        c: alpha * q_over_a,
        f: 0.0,
        g: alpha * q_over_a * q_over_a * da_dx - friction * q_over_a,
        area,
    })
}

/// Coefficients of the `(P, Q)` system for a vessel at `(x, t)`. The physical
/// model is autonomous, so `t` only matters for future time-dependent laws.
pub fn coefficients(
    vessel: &Vessel,
    x: f64,
    _t: f64,
    state: PrimitiveState,
    area_floor: f64,
) -> SimResult<CoefficientSet> {
    let cs = raw_coefficients(vessel, x, state)?;
    if !(cs.area >= area_floor) {
        return Err(SimError::CollapsedVessel { vessel: vessel.id.clone(), x, area: cs.area, floor: area_floor });
    }
    if !(cs.a > 0.0) {
        return Err(SimError::NonPositiveStiffness { vessel: vessel.id.clone(), x, a: cs.a });
    }
    Ok(cs)
}

pub fn eigen(cs: &CoefficientSet) -> SimResult<EigenData> {
    let discriminant = cs.discriminant();
    if !(discriminant > 0.0) {
        return Err(SimError::HyperbolicityViolation { discriminant });
    }
    let u = discriminant.sqrt();
    Ok(EigenData { lambda_r: cs.c + u, lambda_l: cs.c - u, u })
}

pub fn to_riemann(cs: &CoefficientSet, e: &EigenData, st: PrimitiveState) -> RiemannPair {
    RiemannPair {
        r: -e.lambda_l * st.p + cs.a * st.q,
        s: -e.lambda_r * st.p + cs.a * st.q,
    }
}

pub fn from_riemann(cs: &CoefficientSet, e: &EigenData, rp: RiemannPair) -> PrimitiveState {
    PrimitiveState {
        p: (rp.r - rp.s) / (2.0 * e.u),
        q: (e.lambda_r * rp.r - e.lambda_l * rp.s) / (2.0 * e.u * cs.a),
    }
}
