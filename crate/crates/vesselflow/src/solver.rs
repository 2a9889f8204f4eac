use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::characteristics::{interior_update, CharacteristicField, FrozenLevel, InteriorUpdate, VesselField};
use crate::constitutive::{coefficients, eigen, from_riemann, PrimitiveState, RiemannPair, DEFAULT_AREA_FLOOR};
use crate::error::{SimError, SimResult};
use crate::io::output::{probe_records, Probe, Sink};
use crate::junctions::{
    assemble_branching, assemble_transitional, close_external_flow, close_external_pressure, solve_junction,
    EndpointClosureInput, TransitionalState,
};
use crate::network::{endpoints_of, Diagnostic, End, Network, NodeId, NodeKind, Severity, Subject, VesselId};
use crate::wellposedness::{check_endpoints, check_state};

/// Number of halvings below the base step before the driver gives up.
const MAX_HALVINGS: u32 = 10;
/// Successful reduced steps before the base step is restored.
const RESTORE_AFTER: usize = 10;
const COMPAT_WARN: f64 = 1e-6;
const COMPAT_ERROR: f64 = 1e-2;

fn default_cfl() -> f64 {
    0.9
}
fn default_tol() -> f64 {
    1e-10
}
fn default_iters() -> usize {
    50
}
fn default_floor() -> f64 {
    DEFAULT_AREA_FLOOR
}
fn default_check_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_cfl")]
    pub cfl_max: f64,
    #[serde(default = "default_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_iters")]
    pub picard_max_iters: usize,
    #[serde(default = "default_floor")]
    pub epsilon0: f64,
    #[serde(default = "default_check_every")]
    pub check_every: usize,
}

impl SimConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        SimConfig {
            dt,
            t_end,
            cfl_max: default_cfl(),
            picard_tol: default_tol(),
            picard_max_iters: default_iters(),
            epsilon0: default_floor(),
            check_every: default_check_every(),
        }
    }

    pub fn validate(&self) -> SimResult<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.dt) {
            return Err(SimError::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(SimError::InvalidConfig(format!("t_end = {} must be non-negative", self.t_end)));
        }
        if !pos(self.cfl_max) || !pos(self.picard_tol) || !pos(self.epsilon0) {
            return Err(SimError::InvalidConfig("cfl_max, picard_tol and epsilon0 must be positive".into()));
        }
        if self.picard_max_iters < 1 || self.check_every < 1 {
            return Err(SimError::InvalidConfig("picard_max_iters and check_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pressure and flow on every vessel plus node-internal states at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub t: f64,
    pub vessels: BTreeMap<VesselId, VesselField>,
    pub junction_pressure: BTreeMap<NodeId, f64>,
    pub transitional: BTreeMap<NodeId, TransitionalState>,
}

impl NetworkState {
    pub fn endpoint(&self, vessel: &VesselId, end: End) -> PrimitiveState {
        let f = &self.vessels[vessel];
        match end {
            End::X0 => f.state(0),
            End::X1 => f.state(f.n_cells()),
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.vessels
            .values()
            .flat_map(|f| f.p.iter().chain(f.q.iter()).copied())
            .chain(self.junction_pressure.values().copied())
            .chain(self.transitional.values().flat_map(|s| [s.p_c1, s.p_c2]))
    }

    /// `max |self - other| / (1 + |self|)` over every stored value.
    pub fn scaled_deviation(&self, other: &NetworkState) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0, f64::max)
    }
}

/// Initial profile of one quantity along a vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Constant(f64),
    /// One value per grid node.
    Samples(Vec<f64>),
    /// `base + amplitude * exp(-((x - center) / width)^2)`.
    Gaussian { base: f64, amplitude: f64, center: f64, width: f64 },
    /// `mean + amplitude * sin(2 pi wavenumber x + phase)`.
    Sine { mean: f64, amplitude: f64, wavenumber: f64, phase: f64 },
    Sum(Vec<Profile>),
}

impl Profile {
    pub fn sample(&self, n_cells: usize) -> SimResult<Vec<f64>> {
        let xs = (0..=n_cells).map(|j| j as f64 / n_cells as f64);
        Ok(match self {
            Profile::Constant(v) => vec![*v; n_cells + 1],
            Profile::Samples(v) => {
                if v.len() != n_cells + 1 {
                    return Err(SimError::InvalidInitial(format!(
                        "sampled profile has {} values, grid has {}",
                        v.len(),
                        n_cells + 1
                    )));
                }
                v.clone()
            }
            Profile::Gaussian { base, amplitude, center, width } => {
                xs.map(|x| base + amplitude * (-((x - center) / width).powi(2)).exp()).collect()
            }
            Profile::Sine { mean, amplitude, wavenumber, phase } => {
                xs.map(|x| mean + amplitude * (2.0 * PI * wavenumber * x + phase).sin()).collect()
            }
            Profile::Sum(parts) => {
                let mut acc = vec![0.0; n_cells + 1];
                for p in parts {
                    for (a, v) in acc.iter_mut().zip(p.sample(n_cells)?) {
                        *a += v;
                    }
                }
                acc
            }
        })
    }
}

fn zero_profile() -> Profile {
    Profile::Constant(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VesselInit {
    #[serde(default = "zero_profile")]
    pub p: Profile,
    #[serde(default = "zero_profile")]
    pub q: Profile,
}

impl Default for VesselInit {
    fn default() -> Self {
        VesselInit { p: zero_profile(), q: zero_profile() }
    }
}

/// Initial data: a default for every vessel, optionally overridden per vessel.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default)]
    pub default: VesselInit,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub vessels: BTreeMap<VesselId, VesselInit>,
}

impl InitSpec {
    pub fn uniform(p: f64, q: f64) -> Self {
        InitSpec {
            default: VesselInit { p: Profile::Constant(p), q: Profile::Constant(q) },
            vessels: BTreeMap::new(),
        }
    }

    pub fn for_vessel(&self, id: &VesselId) -> &VesselInit {
        self.vessels.get(id).unwrap_or(&self.default)
    }
}

/// Relative mismatch of the initial data with each node's conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Compatibility {
    pub residuals: Vec<(NodeId, f64)>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Samples the initial profiles on every grid, initializes node states and
/// measures how far the data is from satisfying the node conditions at t=0.
pub fn initial_state(net: &Network, spec: &InitSpec, cfg: &SimConfig) -> SimResult<(NetworkState, Compatibility)> {
    let mut vessels = BTreeMap::new();
    for (id, v) in &net.vessels {
        let init = spec.for_vessel(id);
        let field = VesselField {
            vessel: id.clone(),
            t: 0.0,
            p: init.p.sample(v.n_cells)?,
            q: init.q.sample(v.n_cells)?,
        };
        for j in 0..=v.n_cells {
            coefficients(v, v.grid_x(j), 0.0, field.state(j), cfg.epsilon0)
                .map_err(|e| SimError::InvalidInitial(format!("vessel {id} node {j}: {e}")))?;
        }
        vessels.insert(id.clone(), field);
    }
    for id in spec.vessels.keys() {
        if !net.vessels.contains_key(id) {
            return Err(SimError::InvalidInitial(format!("initial data for unknown vessel {id}")));
        }
    }

    let mut state = NetworkState { t: 0.0, vessels, junction_pressure: BTreeMap::new(), transitional: BTreeMap::new() };
    let p_scale = state.vessels.values().flat_map(|f| f.p.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let q_scale = state.vessels.values().flat_map(|f| f.q.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let rel = |x: f64, scale: f64| if x == 0.0 { 0.0 } else { x / scale.max(x) };

    let mut residuals = Vec::new();
    for (id, node) in &net.nodes {
        let ends = endpoints_of(net, id)?;
        let states: Vec<PrimitiveState> = ends.iter().map(|e| state.endpoint(&e.vessel, e.end)).collect();
        let residual = match &node.kind {
            NodeKind::ExternalPressure { signal } => {
                let pb = signal.eval(0.0);
                states.iter().map(|s| rel((s.p - pb).abs(), p_scale.max(pb.abs()))).fold(0.0, f64::max)
            }
            NodeKind::ExternalFlow { signal } => {
                let qb = signal.eval(0.0);
                states.iter().map(|s| rel((s.q - qb).abs(), q_scale.max(qb.abs()))).fold(0.0, f64::max)
            }
            NodeKind::Branching { .. } => {
                let mean_p = states.iter().map(|s| s.p).sum::<f64>() / states.len() as f64;
                state.junction_pressure.insert(id.clone(), mean_p);
                let balance: f64 = ends
                    .iter()
                    .zip(&states)
                    .map(|(e, s)| if e.end == End::X1 { s.q } else { -s.q })
                    .sum();
                let spread = states.iter().map(|s| (s.p - mean_p).abs()).fold(0.0, f64::max);
                rel(balance.abs(), q_scale).max(rel(spread, p_scale))
            }
            NodeKind::Transitional(params) => {
                let side_mean = |end: End| {
                    let v: Vec<f64> =
                        ends.iter().zip(&states).filter(|(e, _)| e.end == end).map(|(_, s)| s.p).collect();
                    v.iter().sum::<f64>() / v.len().max(1) as f64
                };
                let st = TransitionalState {
                    p_c1: params.p_c1_init.unwrap_or_else(|| side_mean(End::X1)),
                    p_c2: params.p_c2_init.unwrap_or_else(|| side_mean(End::X0)),
                };
                state.transitional.insert(id.clone(), st);
                ends.iter()
                    .zip(&states)
                    .map(|(e, s)| {
                        let r = params.resistance_of(&e.vessel, e.end).unwrap_or(0.0);
                        let mismatch = match e.end {
                            End::X1 => r * s.q - (s.p - st.p_c1),
                            End::X0 => r * s.q - (st.p_c2 - s.p),
                        };
                        rel(mismatch.abs(), p_scale)
                    })
                    .fold(0.0, f64::max)
            }
        };
        residuals.push((id.clone(), residual));
    }

    let diagnostics = residuals
        .iter()
        .filter(|(_, r)| *r > COMPAT_WARN)
        .map(|(id, r)| Diagnostic {
            subject: Subject::Node(id.clone()),
            severity: if *r > COMPAT_ERROR { Severity::Error } else { Severity::Warning },
            message: format!("initial data violates the node conditions (relative residual {r:.3e})"),
        })
        .collect();
    Ok((state, Compatibility { residuals, diagnostics }))
}

fn frozen_levels(net: &Network, state: &NetworkState, cfg: &SimConfig) -> SimResult<BTreeMap<VesselId, FrozenLevel>> {
    let mut out = BTreeMap::new();
    for (id, field) in &state.vessels {
        let v = net.vessel(id)?;
        let mut coeffs = Vec::with_capacity(field.p.len());
        let mut eig = Vec::with_capacity(field.p.len());
        for j in 0..field.p.len() {
            let cs = coefficients(v, v.grid_x(j), state.t, field.state(j), cfg.epsilon0)?;
            eig.push(eigen(&cs)?);
            coeffs.push(cs);
        }
        out.insert(id.clone(), FrozenLevel { coeffs, eigen: eig });
    }
    Ok(out)
}

/// One linear step: characteristic update of every vessel and closure of
/// every node with coefficients frozen at `old` and `new`.
fn linear_step(
    net: &Network,
    prev: &NetworkState,
    iterate: &NetworkState,
    old: &BTreeMap<VesselId, FrozenLevel>,
    new: &BTreeMap<VesselId, FrozenLevel>,
    dt: f64,
    cfg: &SimConfig,
) -> SimResult<NetworkState> {
    let t_new = prev.t + dt;
    let mut next = NetworkState {
        t: t_new,
        vessels: BTreeMap::new(),
        junction_pressure: BTreeMap::new(),
        transitional: BTreeMap::new(),
    };
    let mut updates: BTreeMap<&VesselId, InteriorUpdate> = BTreeMap::new();
    for (id, field_prev) in &prev.vessels {
        let field_it = &iterate.vessels[id];
        let chars = CharacteristicField::new(&old[id], &new[id], &field_prev.states(), &field_it.states(), dt);
        let up = interior_update(&chars, cfg.cfl_max, id)?;
        let lvl = &new[id];
        let n = field_prev.n_cells();
        let mut field = VesselField { vessel: id.clone(), t: t_new, p: field_it.p.clone(), q: field_it.q.clone() };
        for j in 1..n {
            match (up.r[j], up.s[j]) {
                (Some(r), Some(s)) => field.set(j, from_riemann(&lvl.coeffs[j], &lvl.eigen[j], RiemannPair { r, s })),
                _ => return Err(SimError::CflViolation { vessel: id.clone(), courant: f64::INFINITY, cfl_max: cfg.cfl_max }),
            }
        }
        next.vessels.insert(id.clone(), field);
        updates.insert(id, up);
    }

    for (node_id, node) in &net.nodes {
        let ends = endpoints_of(net, node_id)?;
        let mut inputs = Vec::with_capacity(ends.len());
        for e in &ends {
            let lvl = &new[&e.vessel];
            let j = if e.end == End::X0 { 0 } else { lvl.coeffs.len() - 1 };
            let known = updates[&e.vessel].outgoing_at(e.end).ok_or_else(|| SimError::UnresolvedCharacteristic {
                node: node_id.clone(),
                vessel: e.vessel.clone(),
            })?;
            inputs.push(EndpointClosureInput {
                node: node_id.clone(),
                vessel: e.vessel.clone(),
                end: e.end,
                coeffs: lvl.coeffs[j],
                eigen: lvl.eigen[j],
                known,
                q_prev: prev.endpoint(&e.vessel, e.end).q,
                c_off: 0.0,
            });
        }
        let solved: Vec<(VesselId, End, PrimitiveState)> = match &node.kind {
            NodeKind::ExternalPressure { signal } => inputs
                .iter()
                .map(|i| Ok((i.vessel.clone(), i.end, close_external_pressure(i, signal.eval(t_new))?)))
                .collect::<SimResult<_>>()?,
            NodeKind::ExternalFlow { signal } => inputs
                .iter()
                .map(|i| Ok((i.vessel.clone(), i.end, close_external_flow(i, signal.eval(t_new))?)))
                .collect::<SimResult<_>>()?,
            NodeKind::Branching { .. } => {
                let sol = solve_junction(&assemble_branching(node, &inputs, dt)?)?;
                if let Some(pj) = sol.junction_pressure {
                    next.junction_pressure.insert(node_id.clone(), pj);
                }
                sol.endpoints
            }
            NodeKind::Transitional(_) => {
                let before = prev.transitional[node_id];
                let sol = solve_junction(&assemble_transitional(node, &inputs, before, dt)?)?;
                if let Some(caps) = sol.capacitors {
                    next.transitional.insert(node_id.clone(), caps);
                }
                sol.endpoints
            }
        };
        for (vessel, end, st) in solved {
            let field = next.vessels.get_mut(&vessel).expect("vessel present");
            let j = if end == End::X0 { 0 } else { field.n_cells() };
            field.set(j, st);
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: NetworkState,
    pub iterations: usize,
    /// Scaled deviation between successive iterates, one entry per iteration.
    pub history: Vec<f64>,
}

impl StepOutcome {
    /// Ratios of successive deviations, skipping exact zeros.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.history.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect()
    }
}

/// Advances one time level by fixed-point iteration on frozen coefficients,
/// starting from the previous level.
pub fn picard_step(net: &Network, prev: &NetworkState, cfg: &SimConfig, dt: f64) -> SimResult<StepOutcome> {
    let old = frozen_levels(net, prev, cfg)?;
    let mut iterate = prev.clone();
    iterate.t = prev.t + dt;
    let mut history = Vec::new();
    for k in 1..=cfg.picard_max_iters {
        let new = if k == 1 { old.clone() } else { frozen_levels(net, &iterate, cfg)? };
        let next = linear_step(net, prev, &iterate, &old, &new, dt, cfg)?;
        let deviation = next.scaled_deviation(&iterate);
        history.push(deviation);
        iterate = next;
        if deviation <= cfg.picard_tol {
            return Ok(StepOutcome { state: iterate, iterations: k, history });
        }
    }
    Err(SimError::PicardDivergence { iterations: cfg.picard_max_iters, deviation: *history.last().unwrap_or(&f64::NAN) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub steps: usize,
    pub picard_iterations: usize,
    /// Iterations used at each accepted step.
    pub iterations_per_step: Vec<usize>,
    /// Deviation history of each accepted step.
    pub picard_histories: Vec<Vec<f64>>,
    pub dt_halvings: usize,
    pub dt_restores: usize,
    pub min_dt: f64,
    pub full_checks: usize,
    pub endpoint_checks: usize,
    pub final_state: NetworkState,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("run aborted at t={t} after {steps} steps: {error}", steps = report.steps)]
pub struct RunError {
    pub t: f64,
    pub error: SimError,
    pub report: Box<SimReport>,
}

/// Advances `init` to `cfg.t_end`, emitting probe records after every step.
pub fn run(
    net: &Network,
    init: &NetworkState,
    cfg: &SimConfig,
    probes: &[Probe],
    sink: &mut dyn Sink,
) -> Result<SimReport, RunError> {
    let mut report = SimReport {
        steps: 0,
        picard_iterations: 0,
        iterations_per_step: Vec::new(),
        picard_histories: Vec::new(),
        dt_halvings: 0,
        dt_restores: 0,
        min_dt: cfg.dt,
        full_checks: 0,
        endpoint_checks: 0,
        final_state: init.clone(),
    };
    let fail = |t: f64, error: SimError, report: &SimReport| RunError { t, error, report: Box::new(report.clone()) };

    if let Err(e) = cfg.validate() {
        return Err(fail(init.t, e, &report));
    }
    let initial = check_state(net, init, cfg);
    report.full_checks += 1;
    if !initial.passed() {
        return Err(fail(init.t, SimError::IllPosed { t: init.t, summary: initial.summary() }, &report));
    }

    let base = cfg.dt;
    let dt_min = base / 2f64.powi(MAX_HALVINGS as i32);
    let mut dt = base;
    let mut reduced_successes = 0;
    let mut state = init.clone();
    while cfg.t_end - state.t > 1e-9 * base {
        let step = dt.min(cfg.t_end - state.t);
        match picard_step(net, &state, cfg, step) {
            Ok(out) => {
                state = out.state;
                report.steps += 1;
                report.picard_iterations += out.iterations;
                report.iterations_per_step.push(out.iterations);
                report.picard_histories.push(out.history);
                report.min_dt = report.min_dt.min(step);
                if dt < base {
                    reduced_successes += 1;
                    if reduced_successes >= RESTORE_AFTER {
                        dt = base;
                        reduced_successes = 0;
                        report.dt_restores += 1;
                    }
                }
                let checked = if report.steps.is_multiple_of(cfg.check_every) {
                    report.full_checks += 1;
                    check_state(net, &state, cfg)
                } else {
                    report.endpoint_checks += 1;
                    check_endpoints(net, &state, cfg)
                };
                report.final_state = state.clone();
                if !checked.passed() {
                    return Err(fail(state.t, SimError::IllPosed { t: state.t, summary: checked.summary() }, &report));
                }
                let records = probe_records(net, &state, probes).map_err(|e| fail(state.t, e, &report))?;
                for r in &records {
                    sink.record(r).map_err(|e| fail(state.t, e, &report))?;
                }
                sink.on_step(net, &state).map_err(|e| fail(state.t, e, &report))?;
            }
            Err(e @ (SimError::CflViolation { .. } | SimError::PicardDivergence { .. })) => {
                if dt / 2.0 < dt_min * (1.0 - 1e-12) {
                    let err = SimError::StepSizeFloor { t: state.t, dt_min, cause: Box::new(e) };
                    return Err(fail(state.t, err, &report));
                }
                dt /= 2.0;
                reduced_successes = 0;
                report.dt_halvings += 1;
            }
            Err(e) => return Err(fail(state.t, e, &report)),
        }
    }
    report.final_state = state;
    Ok(report)
}
