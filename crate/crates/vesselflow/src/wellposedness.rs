use std::fmt;

use crate::constitutive::{eigen, raw_coefficients, to_riemann, CoefficientSet, PrimitiveState};
use crate::junctions::{assemble_branching, assemble_transitional, condition_estimate, EndpointClosureInput};
use crate::network::{endpoints_of, End, Network, NodeId, NodeKind, Vessel, VesselId};
use crate::solver::{NetworkState, SimConfig};

/// Junction matrices with a larger condition estimate count as singular.
pub const SINGULAR_CONDITION: f64 = 1e13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Condition {
    /// Tube law invertible and coefficients finite.
    Evaluable,
    /// `a > 0`.
    Stiffness,
    /// Cross-section at or above the floor.
    AreaFloor,
    /// `c^2 + ab > 0` at interior nodes.
    Hyperbolicity,
    /// `ab > 0` at vessel ends: one characteristic enters, one leaves.
    EndSeparation,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Evaluable,
        Condition::Stiffness,
        Condition::AreaFloor,
        Condition::Hyperbolicity,
        Condition::EndSeparation,
    ];

    pub fn describe(self) -> &'static str {
        match self {
            Condition::Evaluable => "coefficients evaluable",
            Condition::Stiffness => "wave coefficient a > 0",
            Condition::AreaFloor => "area above floor",
            Condition::Hyperbolicity => "interior hyperbolicity c^2 + ab > 0",
            Condition::EndSeparation => "endpoint characteristic separation ab > 0",
        }
    }
}

/// Worst sample of one condition over one vessel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub condition: Condition,
    pub passed: bool,
    pub samples: usize,
    /// Smallest margin seen (`None` for `Evaluable` or when nothing was sampled).
    pub worst_margin: Option<f64>,
    pub worst_index: Option<usize>,
    pub worst_x: Option<f64>,
}

impl ConditionResult {
    fn empty(condition: Condition) -> Self {
        ConditionResult { condition, passed: true, samples: 0, worst_margin: None, worst_index: None, worst_x: None }
    }

    fn observe(&mut self, margin: f64, strict: bool, j: usize, x: f64) {
        self.samples += 1;
        let ok = if strict { margin > 0.0 } else { margin >= 0.0 };
        self.passed &= ok;
        if self.worst_margin.is_none_or(|w| margin < w) || margin.is_nan() {
            self.worst_margin = Some(margin);
            self.worst_index = Some(j);
            self.worst_x = Some(x);
        }
    }

    fn fail_at(&mut self, j: usize, x: f64) {
        self.samples += 1;
        if self.passed {
            self.worst_index = Some(j);
            self.worst_x = Some(x);
        }
        self.passed = false;
    }
}

/// How many boundary conditions an end with `ab <= 0` actually needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Determinacy {
    /// Both characteristics enter: one prescribed datum is too few.
    UnderDetermined,
    /// Both characteristics leave: any prescribed datum over-constrains.
    OverDetermined,
    /// One characteristic speed vanishes.
    Degenerate,
    /// Characteristic speeds are not real.
    NotHyperbolic,
}

impl fmt::Display for Determinacy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Determinacy::UnderDetermined => "under-determined",
            Determinacy::OverDetermined => "over-determined",
            Determinacy::Degenerate => "degenerate",
            Determinacy::NotHyperbolic => "not hyperbolic",
        })
    }
}

/// An end that violates the separation condition.
#[derive(Debug, Clone, PartialEq)]
pub struct EndFinding {
    pub vessel: VesselId,
    pub end: End,
    pub determinacy: Determinacy,
    /// Flow enters the vessel through this end (a source end).
    pub inflow: bool,
    pub ab: f64,
    pub speeds: Option<(f64, f64)>,
}

impl EndFinding {
    fn classify(vessel: &VesselId, end: End, cs: &CoefficientSet) -> Self {
        let ab = cs.a * cs.b;
        let inflow = match end {
            End::X0 => cs.c >= 0.0,
            End::X1 => cs.c <= 0.0,
        };
        let (determinacy, speeds) = match eigen(cs) {
            Err(_) => (Determinacy::NotHyperbolic, None),
            Ok(e) => {
                let speeds = [e.lambda_l, e.lambda_r];
                let entering = speeds
                    .iter()
                    .filter(|l| match end {
                        End::X0 => **l > 0.0,
                        End::X1 => **l < 0.0,
                    })
                    .count();
                let zero = speeds.contains(&0.0);
                let d = match (zero, entering) {
                    (true, _) => Determinacy::Degenerate,
                    (false, 2) => Determinacy::UnderDetermined,
                    (false, 0) => Determinacy::OverDetermined,
                    _ => Determinacy::Degenerate,
                };
                (d, Some((e.lambda_l, e.lambda_r)))
            }
        };
        EndFinding { vessel: vessel.clone(), end, determinacy, inflow, ab, speeds }
    }
}

impl fmt::Display for EndFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let end = match self.end {
            End::X0 => "x=0",
            End::X1 => "x=1",
        };
        let kind = if self.inflow { "inflow" } else { "outflow" };
        write!(f, "vessel {} {end} ({kind} end): ab = {:.6e}, boundary {}", self.vessel, self.ab, self.determinacy)?;
        if let Some((l, r)) = self.speeds {
            write!(f, " (speeds {l:.6e}, {r:.6e})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselConditions {
    pub vessel: VesselId,
    pub results: Vec<ConditionResult>,
    pub end_findings: Vec<EndFinding>,
    pub errors: Vec<String>,
}

impl VesselConditions {
    fn new(vessel: &VesselId) -> Self {
        VesselConditions {
            vessel: vessel.clone(),
            results: Condition::ALL.iter().map(|c| ConditionResult::empty(*c)).collect(),
            end_findings: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn result(&self, c: Condition) -> &ConditionResult {
        self.results.iter().find(|r| r.condition == c).expect("every condition tracked")
    }

    fn result_mut(&mut self, c: Condition) -> &mut ConditionResult {
        self.results.iter_mut().find(|r| r.condition == c).expect("every condition tracked")
    }

    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    fn sample(&mut self, vessel: &Vessel, j: usize, state: PrimitiveState, area_floor: f64, interior: bool, end: Option<End>) {
        let x = vessel.grid_x(j);
        let cs = match raw_coefficients(vessel, x, state) {
            Ok(cs) if [cs.a, cs.b, cs.c, cs.area].iter().all(|v| v.is_finite()) => cs,
            Ok(_) => {
                self.result_mut(Condition::Evaluable).fail_at(j, x);
                self.errors.push(format!("non-finite coefficients at x={x} (P={}, Q={})", state.p, state.q));
                return;
            }
            Err(e) => {
                self.result_mut(Condition::Evaluable).fail_at(j, x);
                self.errors.push(format!("x={x}: {e}"));
                return;
            }
        };
        self.result_mut(Condition::Evaluable).samples += 1;
        self.result_mut(Condition::Stiffness).observe(cs.a, true, j, x);
        self.result_mut(Condition::AreaFloor).observe(cs.area - area_floor, false, j, x);
        if interior {
            self.result_mut(Condition::Hyperbolicity).observe(cs.discriminant(), true, j, x);
        }
        if let Some(end) = end {
            let ab = cs.a * cs.b;
            self.result_mut(Condition::EndSeparation).observe(ab, true, j, x);
            if !(ab > 0.0) && !self.end_findings.iter().any(|f| f.end == end) {
                self.end_findings.push(EndFinding::classify(&self.vessel, end, &cs));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConditioning {
    pub node: NodeId,
    pub condition: Option<f64>,
    pub note: Option<String>,
}

impl NodeConditioning {
    pub fn passed(&self) -> bool {
        self.condition.is_none_or(|c| c < SINGULAR_CONDITION)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    /// Time of the checked state; `None` for envelope checks.
    pub t: Option<f64>,
    pub vessels: Vec<VesselConditions>,
    pub nodes: Vec<NodeConditioning>,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.vessels.iter().all(|v| v.passed()) && self.nodes.iter().all(|n| n.passed())
    }

    pub fn vessel(&self, id: &VesselId) -> Option<&VesselConditions> {
        self.vessels.iter().find(|v| &v.vessel == id)
    }

    pub fn end_findings(&self) -> impl Iterator<Item = &EndFinding> {
        self.vessels.iter().flat_map(|v| v.end_findings.iter())
    }

    /// One line per failed condition.
    pub fn summary(&self) -> String {
        let mut lines = Vec::new();
        for v in &self.vessels {
            for r in v.results.iter().filter(|r| !r.passed) {
                let mut line = format!("vessel {}: {} violated", v.vessel, r.condition.describe());
                if let (Some(m), Some(x)) = (r.worst_margin, r.worst_x) {
                    line.push_str(&format!(" (worst {m:.6e} at x={x})"));
                } else if let Some(x) = r.worst_x {
                    line.push_str(&format!(" (first at x={x})"));
                }
                lines.push(line);
            }
            lines.extend(v.end_findings.iter().map(|f| f.to_string()));
            lines.extend(v.errors.iter().take(3).map(|e| format!("vessel {}: {e}", v.vessel)));
        }
        for n in self.nodes.iter().filter(|n| !n.passed()) {
            lines.push(format!("node {}: junction condition estimate {:.3e}", n.node, n.condition.unwrap_or(f64::NAN)));
        }
        lines.join("; ")
    }
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.t {
            Some(t) => writeln!(f, "condition report at t={t}")?,
            None => writeln!(f, "condition report over envelope")?,
        }
        for v in &self.vessels {
            writeln!(f, "vessel {}:", v.vessel)?;
            for r in &v.results {
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                write!(f, "  {verdict} {} [{} samples]", r.condition.describe(), r.samples)?;
                if let (Some(m), Some(j), Some(x)) = (r.worst_margin, r.worst_index, r.worst_x) {
                    write!(f, " worst {m:.6e} at node {j} (x={x})")?;
                }
                writeln!(f)?;
            }
            for e in &v.end_findings {
                writeln!(f, "  {e}")?;
            }
            for e in &v.errors {
                writeln!(f, "  {e}")?;
            }
        }
        for n in &self.nodes {
            match (n.condition, &n.note) {
                (Some(c), _) => {
                    let verdict = if n.passed() { "PASS" } else { "FAIL" };
                    writeln!(f, "node {}: {verdict} junction condition estimate {c:.3e}", n.node)?
                }
                (None, Some(note)) => writeln!(f, "node {}: {note}", n.node)?,
                (None, None) => {}
            }
        }
        Ok(())
    }
}

fn node_conditioning(net: &Network, state: &NetworkState, cfg: &SimConfig) -> Vec<NodeConditioning> {
    let mut out = Vec::new();
    for (id, node) in &net.nodes {
        if !matches!(node.kind, NodeKind::Branching { .. } | NodeKind::Transitional(_)) {
            continue;
        }
        let attempt = || -> Result<f64, String> {
            let ends = endpoints_of(net, id).map_err(|e| e.to_string())?;
            let mut inputs = Vec::new();
            for e in &ends {
                let v = net.vessel(&e.vessel).map_err(|e| e.to_string())?;
                let st = state.endpoint(&e.vessel, e.end);
                let cs = raw_coefficients(v, e.end.x(), st).map_err(|e| e.to_string())?;
                let eig = eigen(&cs).map_err(|e| e.to_string())?;
                let rp = to_riemann(&cs, &eig, st);
                inputs.push(EndpointClosureInput {
                    node: id.clone(),
                    vessel: e.vessel.clone(),
                    end: e.end,
                    coeffs: cs,
                    eigen: eig,
                    known: if e.end == End::X1 { rp.r } else { rp.s },
                    q_prev: st.q,
                    c_off: 0.0,
                });
            }
            let sys = match &node.kind {
                NodeKind::Transitional(_) => {
                    let prev = state.transitional.get(id).copied().ok_or("missing capacitor state")?;
                    assemble_transitional(node, &inputs, prev, cfg.dt)
                }
                _ => assemble_branching(node, &inputs, cfg.dt),
            }
            .map_err(|e| e.to_string())?;
            Ok(condition_estimate(&sys))
        };
        out.push(match attempt() {
            Ok(c) => NodeConditioning { node: id.clone(), condition: Some(c), note: None },
            Err(note) => NodeConditioning { node: id.clone(), condition: None, note: Some(note) },
        });
    }
    out
}

fn check(net: &Network, state: &NetworkState, cfg: &SimConfig, full: bool) -> ConditionReport {
    let mut vessels = Vec::new();
    for (id, field) in &state.vessels {
        let Ok(vessel) = net.vessel(id) else { continue };
        let n = field.n_cells();
        let mut vc = VesselConditions::new(id);
        for j in 0..=n {
            let end = match j {
                0 => Some(End::X0),
                j if j == n => Some(End::X1),
                _ => None,
            };
            if !full && end.is_none() {
                continue;
            }
            vc.sample(vessel, j, field.state(j), cfg.epsilon0, end.is_none(), end);
        }
        vessels.push(vc);
    }
    let nodes = if full { node_conditioning(net, state, cfg) } else { Vec::new() };
    ConditionReport { t: Some(state.t), vessels, nodes }
}

/// Every condition at every grid node, plus junction conditioning.
pub fn check_state(net: &Network, state: &NetworkState, cfg: &SimConfig) -> ConditionReport {
    check(net, state, cfg, true)
}

/// The cheap per-step subset: vessel ends only.
pub fn check_endpoints(net: &Network, state: &NetworkState, cfg: &SimConfig) -> ConditionReport {
    check(net, state, cfg, false)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Worst margins over a tensor grid of `(P, Q)` samples at every grid node.
/// `Q = 0` is always sampled when it lies in range, since the interior
/// hyperbolicity margin is smallest there.
pub fn check_envelope(
    net: &Network,
    pressure: (f64, f64),
    flow: (f64, f64),
    samples: usize,
    area_floor: f64,
) -> ConditionReport {
    let ps = linspace(pressure.0, pressure.1, samples);
    let mut qs = linspace(flow.0, flow.1, samples);
    if flow.0 <= 0.0 && 0.0 <= flow.1 && !qs.contains(&0.0) {
        qs.push(0.0);
    }
    let mut vessels = Vec::new();
    for (id, vessel) in &net.vessels {
        let mut vc = VesselConditions::new(id);
        let n = vessel.n_cells;
        for j in 0..=n {
            let end = match j {
                0 => Some(End::X0),
                j if j == n => Some(End::X1),
                _ => None,
            };
            for &p in &ps {
                for &q in &qs {
                    vc.sample(vessel, j, PrimitiveState::new(p, q), area_floor, end.is_none(), end);
                }
            }
        }
        vessels.push(vc);
    }
    ConditionReport { t: None, vessels, nodes: Vec::new() }
}
