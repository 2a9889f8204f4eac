//! Reference solutions and experiment drivers. The oracles use only
//! elementary arithmetic so that agreement with the solver is evidence.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{SimError, SimResult};
use crate::io::output::{Record, Sink};
use crate::network::{Network, VesselId};
use crate::solver::{initial_state, run, InitSpec, NetworkState, Profile, SimConfig, VesselInit};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("coefficients are not hyperbolic: c^2 + ab = {0}")]
    NotHyperbolic(f64),
    #[error("characteristic foot {foot} at x={x} leaves the profile support [{lo}, {hi}]")]
    HorizonTooLong { x: f64, foot: f64, lo: f64, hi: f64 },
}

/// Exact traveling-wave solution of the constant-coefficient system with no
/// forcing, in characteristic variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTranslation {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LinearTranslation {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, OracleError> {
        let disc = c * c + a * b;
        if !(disc > 0.0) {
            return Err(OracleError::NotHyperbolic(disc));
        }
        Ok(LinearTranslation { a, b, c })
    }

    /// `(right speed, left speed, half spread)`.
    pub fn speeds(&self) -> (f64, f64, f64) {
        let spread = (self.c * self.c + self.a * self.b).sqrt();
        (self.c + spread, self.c - spread, spread)
    }

    /// Pressure and flow from characteristic values.
    pub fn primitive(&self, r: f64, s: f64) -> (f64, f64) {
        let (right, left, spread) = self.speeds();
        ((r - s) / (2.0 * spread), (right * r - left * s) / (2.0 * spread * self.a))
    }

    /// Characteristic values from pressure and flow.
    pub fn characteristic(&self, p: f64, q: f64) -> (f64, f64) {
        let (right, left, _) = self.speeds();
        (-left * p + self.a * q, -right * p + self.a * q)
    }
}

/// `r(x, t) = r0(x - right t)`, `s(x, t) = s0(x - left t)` at every `x`.
/// With `support = Some((lo, hi))` every foot must stay inside it.
pub fn oracle_linear_translation(
    oracle: &LinearTranslation,
    r0: &dyn Fn(f64) -> f64,
    s0: &dyn Fn(f64) -> f64,
    t: f64,
    xs: &[f64],
    support: Option<(f64, f64)>,
) -> Result<Vec<(f64, f64)>, OracleError> {
    let (right, left, _) = oracle.speeds();
    xs.iter()
        .map(|&x| {
            let feet = (x - right * t, x - left * t);
            if let Some((lo, hi)) = support {
                for foot in [feet.0, feet.1] {
                    if foot < lo || foot > hi {
                        return Err(OracleError::HorizonTooLong { x, foot, lo, hi });
                    }
                }
            }
            Ok((r0(feet.0), s0(feet.1)))
        })
        .collect()
}

/// How the venous side of the reference lumped model is driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VenousDrive {
    /// Vein end held at `pressure` behind resistance `resistance`.
    Pressure { pressure: f64, resistance: f64 },
    /// Prescribed outflow.
    Flow(f64),
}

/// Two-capacitor lumped model driven by a constant inflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcOracle {
    pub r_c: f64,
    pub c1: f64,
    pub c2: f64,
    pub inflow: f64,
    pub venous: VenousDrive,
}

type Mat2 = [[f64; 2]; 2];

fn mat_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

impl RcOracle {
    /// `d/dt (P_C1, P_C2) = M (P_C1, P_C2) + k`.
    pub fn system(&self) -> (Mat2, [f64; 2]) {
        let g = 1.0 / self.r_c;
        let (g_out, k_out) = match self.venous {
            VenousDrive::Pressure { pressure, resistance } => (1.0 / resistance, pressure / resistance),
            VenousDrive::Flow(q) => (0.0, -q),
        };
        let m = [[-g / self.c1, g / self.c1], [g / self.c2, -(g + g_out) / self.c2]];
        (m, [self.inflow / self.c1, k_out / self.c2])
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let (m, _) = self.system();
        let trace = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let disc = (0.25 * trace * trace - det).max(0.0).sqrt();
        (0.5 * trace - disc, 0.5 * trace + disc)
    }

    /// Apply `f(M)` via Sylvester's formula; `df` is used for a repeated root.
    fn apply(&self, f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64, v: [f64; 2]) -> [f64; 2] {
        let (m, _) = self.system();
        let (l1, l2) = self.eigenvalues();
        let scale = l1.abs().max(l2.abs()).max(f64::MIN_POSITIVE);
        let shifted = |l: f64| -> Mat2 { [[m[0][0] - l, m[0][1]], [m[1][0], m[1][1] - l]] };
        if (l1 - l2).abs() <= 1e-12 * scale {
            let n = mat_vec(&shifted(l1), v);
            return [f(l1) * v[0] + df(l1) * n[0], f(l1) * v[1] + df(l1) * n[1]];
        }
        let a = mat_vec(&shifted(l2), v);
        let b = mat_vec(&shifted(l1), v);
        let (fa, fb) = (f(l1) / (l1 - l2), f(l2) / (l2 - l1));
        [fa * a[0] + fb * b[0], fa * a[1] + fb * b[1]]
    }

    /// Exact `(P_C1, P_C2)` at time `t` from `start`.
    pub fn at(&self, start: (f64, f64), t: f64) -> (f64, f64) {
        let (_, k) = self.system();
        let exp = |z: f64| (z * t).exp();
        let dexp = |z: f64| t * (z * t).exp();
        // (e^{zt} - 1) / z, continuous at z = 0.
        let integral = |z: f64| if (z * t).abs() < 1e-8 { t * (1.0 + 0.5 * z * t) } else { (z * t).exp_m1() / z };
        let dintegral = |z: f64| {
            if (z * t).abs() < 1e-5 {
                t * t * (0.5 + z * t / 6.0)
            } else {
                (t * (z * t).exp() * z - (z * t).exp_m1()) / (z * z)
            }
        };
        let h = self.apply(&exp, &dexp, [start.0, start.1]);
        let p = self.apply(&integral, &dintegral, k);
        (h[0] + p[0], h[1] + p[1])
    }

    /// Equilibrium `(P_C1, P_C2)`, if one exists.
    pub fn steady(&self) -> Option<(f64, f64)> {
        match self.venous {
            VenousDrive::Pressure { pressure, resistance } => {
                let p2 = pressure + resistance * self.inflow;
                Some((p2 + self.r_c * self.inflow, p2))
            }
            VenousDrive::Flow(_) => None,
        }
    }

    /// Slowest relaxation time.
    pub fn time_constant(&self) -> f64 {
        let (l1, l2) = self.eigenvalues();
        let slow = if l2.abs() > 0.0 { l2.abs() } else { l1.abs() };
        1.0 / slow
    }
}

/// `P_C1(t), P_C2(t)` at each requested time from a common start.
pub fn oracle_rc_transitional(oracle: &RcOracle, start: (f64, f64), times: &[f64]) -> Vec<(f64, f64)> {
    times.iter().map(|&t| oracle.at(start, t)).collect()
}

/// Stores every accepted state.
#[derive(Debug, Default)]
pub struct TrajectorySink {
    pub states: Vec<NetworkState>,
}

impl Sink for TrajectorySink {
    fn record(&mut self, _rec: &Record) -> SimResult<()> {
        Ok(())
    }

    fn on_step(&mut self, _net: &Network, state: &NetworkState) -> SimResult<()> {
        self.states.push(state.clone());
        Ok(())
    }
}

/// Solver inputs for one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: Network,
    pub config: SimConfig,
    pub initial: InitSpec,
}

/// Perturbation of the initial data: `epsilon * profile` is added to the
/// pressure and flow of every vessel.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialPerturbation {
    pub pressure: Profile,
    pub flow: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceRow {
    pub epsilon: f64,
    /// Sup over time levels and grid nodes of `|U - U~|`.
    pub deviation: f64,
    pub ratio: f64,
    /// Same for one-sided difference quotients in `x`.
    pub gradient_deviation: f64,
    pub gradient_ratio: f64,
}

fn perturbed_init(net: &Network, base: &InitSpec, pert: &InitialPerturbation, epsilon: f64) -> SimResult<InitSpec> {
    let mut vessels = BTreeMap::new();
    for (id, v) in &net.vessels {
        let init = base.for_vessel(id);
        let mix = |profile: &Profile, delta: &Profile| -> SimResult<Profile> {
            let p = profile.sample(v.n_cells)?;
            let d = delta.sample(v.n_cells)?;
            Ok(Profile::Samples(p.iter().zip(&d).map(|(a, b)| a + epsilon * b).collect()))
        };
        vessels.insert(id.clone(), VesselInit { p: mix(&init.p, &pert.pressure)?, q: mix(&init.q, &pert.flow)? });
    }
    Ok(InitSpec { default: base.default.clone(), vessels })
}

/// Full trajectory of a scenario including the initial state.
pub fn trajectory(scenario: &Scenario, initial: &InitSpec) -> SimResult<Vec<NetworkState>> {
    let (init, _) = initial_state(&scenario.network, initial, &scenario.config)?;
    let mut sink = TrajectorySink { states: vec![init.clone()] };
    run(&scenario.network, &init, &scenario.config, &[], &mut sink).map_err(|e| e.error)?;
    Ok(sink.states)
}

fn sup_deviation(a: &[NetworkState], b: &[NetworkState]) -> SimResult<(f64, f64)> {
    if a.len() != b.len() {
        return Err(SimError::InvalidConfig(format!(
            "runs took different step sequences ({} vs {} levels)",
            a.len(),
            b.len()
        )));
    }
    let mut dev = 0.0f64;
    let mut grad = 0.0f64;
    let diff = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x - y).collect() };
    for (sa, sb) in a.iter().zip(b) {
        if (sa.t - sb.t).abs() > 1e-12 * sa.t.abs().max(1.0) {
            return Err(SimError::InvalidConfig(format!("time levels differ: {} vs {}", sa.t, sb.t)));
        }
        for (id, fa) in &sa.vessels {
            let fb = &sb.vessels[id];
            let n = fa.n_cells() as f64;
            for d in [diff(&fa.p, &fb.p), diff(&fa.q, &fb.q)] {
                dev = d.iter().fold(dev, |m, v| m.max(v.abs()));
                grad = d.windows(2).fold(grad, |m, w| m.max(((w[1] - w[0]) * n).abs()));
            }
        }
    }
    Ok((dev, grad))
}

/// Runs the base scenario and one perturbed run per epsilon.
pub fn dependence_experiment(
    scenario: &Scenario,
    perturbation: &InitialPerturbation,
    epsilons: &[f64],
) -> SimResult<Vec<DependenceRow>> {
    let base = trajectory(scenario, &scenario.initial)?;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let init = perturbed_init(&scenario.network, &scenario.initial, perturbation, epsilon)?;
        let other = trajectory(scenario, &init)?;
        let (deviation, gradient_deviation) = sup_deviation(&base, &other)?;
        let ratio = |d: f64| if epsilon == 0.0 { 0.0 } else { d / epsilon };
        rows.push(DependenceRow {
            epsilon,
            deviation,
            ratio: ratio(deviation),
            gradient_deviation,
            gradient_ratio: ratio(gradient_deviation),
        });
    }
    Ok(rows)
}

/// Largest relative spread `max/min - 1` of a set of positive ratios.
pub fn ratio_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max / min - 1.0
}

pub fn write_dependence_csv<W: Write>(out: W, rows: &[DependenceRow]) -> SimResult<W> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SimError::Output(e.to_string());
    w.write_record(["epsilon", "deviation", "ratio", "gradient_deviation", "gradient_ratio"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.epsilon.to_string(),
            r.deviation.to_string(),
            r.ratio.to_string(),
            r.gradient_deviation.to_string(),
            r.gradient_ratio.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| SimError::Output(e.to_string()))
}

/// Picks out one vessel's pressure at a grid node along a trajectory.
pub fn pressure_history(states: &[NetworkState], vessel: &VesselId, j: usize) -> Vec<(f64, f64)> {
    states.iter().map(|s| (s.t, s.vessels[vessel].p[j])).collect()
}
