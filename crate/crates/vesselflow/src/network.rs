use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};
use crate::io::signal::BoundarySignal;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VesselId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl fmt::Display for VesselId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VesselId {
    fn from(s: &str) -> Self {
        VesselId(s.to_string())
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// Which end of the unit parameter interval a vessel attaches with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum End {
    #[serde(rename = "x0")]
    X0,
    #[serde(rename = "x1")]
    X1,
}

impl End {
    pub fn x(self) -> f64 {
        match self {
            End::X0 => 0.0,
            End::X1 => 1.0,
        }
    }

    /// Flow with `Q > 0` leaves the vessel through `x = 1` and enters at `x = 0`.
    pub fn orientation(self) -> Orientation {
        match self {
            End::X0 => Orientation::Outgoing,
            End::X1 => Orientation::Incoming,
        }
    }
}

impl fmt::Display for End {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            End::X0 => "x0",
            End::X1 => "x1",
        })
    }
}

/// Direction of a vessel relative to a node: incoming vessels deliver flow
/// into the node at their `x = 1` end, outgoing vessels leave it at `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Incoming,
    Outgoing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeStation {
    pub x: f64,
    pub radius: Vec<f64>,
    pub pressure: Vec<f64>,
}

/// Pressure-radius relation `P(x, R)` with `dP/dR > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TubeLaw {
    /// `P = c * ((R / r0)^beta - 1)`, independent of `x`.
    PowerLaw { c: f64, r0: f64, beta: f64 },
    /// Monotone `(R, P)` samples at one or more stations along the vessel;
    /// linear in `x` between stations.
    Tabulated { stations: Vec<TubeStation> },
}

/// A coefficient field over `x in [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Field {
    Constant(f64),
    Linear { linear: [f64; 2] },
    Samples { samples: Vec<f64> },
}

impl Field {
    pub fn at(&self, x: f64) -> f64 {
        match self {
            Field::Constant(v) => *v,
            Field::Linear { linear } => linear[0] + x * (linear[1] - linear[0]),
            Field::Samples { samples } => {
                let m = samples.len() - 1;
                let s = (x.clamp(0.0, 1.0)) * m as f64;
                let j = (s.floor() as usize).min(m.saturating_sub(1));
                let theta = s - j as f64;
                samples[j] + theta * (samples[j + 1] - samples[j])
            }
        }
    }

    fn well_formed(&self) -> Result<(), String> {
        match self {
            Field::Constant(v) if !v.is_finite() => Err("non-finite constant".into()),
            Field::Linear { linear } if linear.iter().any(|v| !v.is_finite()) => {
                Err("non-finite linear endpoint".into())
            }
            Field::Samples { samples } if samples.len() < 2 => {
                Err("sampled field needs at least 2 samples".into())
            }
            Field::Samples { samples } if samples.iter().any(|v| !v.is_finite()) => {
                Err("non-finite sample".into())
            }
            _ => Ok(()),
        }
    }
}

fn zero_field() -> Field {
    Field::Constant(0.0)
}

fn unit_field() -> Field {
    Field::Constant(1.0)
}

/// User-specified coefficients of the general two-by-two system, independent
/// of the state. Used for linear verification problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCoefficients {
    pub a: Field,
    pub b: Field,
    pub c: Field,
    #[serde(default = "zero_field")]
    pub f: Field,
    #[serde(default = "zero_field")]
    pub g: Field,
    #[serde(default = "unit_field")]
    pub area: Field,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VesselModel {
    #[serde(rename = "tube_law")]
    TubeLaw(TubeLaw),
    #[serde(rename = "synthetic")]
    Synthetic(SyntheticCoefficients),
}

fn default_alpha() -> f64 {
    1.1
}

fn default_nu() -> f64 {
    3.5e-6
}

fn default_rho() -> f64 {
    1050.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    pub id: VesselId,
    pub n_cells: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_rho")]
    pub rho_blood: f64,
    #[serde(flatten)]
    pub model: VesselModel,
    pub x0_node: NodeId,
    pub x1_node: NodeId,
}

impl Vessel {
    pub fn node_at(&self, end: End) -> &NodeId {
        match end {
            End::X0 => &self.x0_node,
            End::X1 => &self.x1_node,
        }
    }

    pub fn grid_x(&self, j: usize) -> f64 {
        j as f64 / self.n_cells as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchAttachment {
    pub vessel: VesselId,
    pub end: End,
    /// Inertance constant of the junction momentum balance.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResistiveAttachment {
    pub vessel: VesselId,
    pub resistance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionalParams {
    /// Attached at their `x = 1` end.
    pub arteries: Vec<ResistiveAttachment>,
    /// Attached at their `x = 0` end.
    pub veins: Vec<ResistiveAttachment>,
    pub r_c: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_c1_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_c2_init: Option<f64>,
}

impl TransitionalParams {
    pub fn resistance_of(&self, vessel: &VesselId, end: End) -> Option<f64> {
        let list = match end {
            End::X1 => &self.arteries,
            End::X0 => &self.veins,
        };
        list.iter().find(|a| &a.vessel == vessel).map(|a| a.resistance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    ExternalPressure { signal: BoundarySignal },
    ExternalFlow { signal: BoundarySignal },
    Branching { attachments: Vec<BranchAttachment> },
    Transitional(TransitionalParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(flatten)]
    pub kind: NodeKind,
}

impl Node {
    pub fn rho_of(&self, vessel: &VesselId, end: End) -> Option<f64> {
        match &self.kind {
            NodeKind::Branching { attachments } => attachments
                .iter()
                .find(|a| &a.vessel == vessel && a.end == end)
                .map(|a| a.rho),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub vessels: BTreeMap<VesselId, Vessel>,
    pub nodes: BTreeMap<NodeId, Node>,
}

impl Network {
    /// Builds the id maps, rejecting duplicate ids.
    pub fn new(vessels: Vec<Vessel>, nodes: Vec<Node>) -> SimResult<Self> {
        let mut net = Network::default();
        for v in vessels {
            if net.vessels.contains_key(&v.id) {
                return Err(SimError::InvalidNetwork(format!("duplicate vessel id {}", v.id)));
            }
            net.vessels.insert(v.id.clone(), v);
        }
        for n in nodes {
            if net.nodes.contains_key(&n.id) {
                return Err(SimError::InvalidNetwork(format!("duplicate node id {}", n.id)));
            }
            net.nodes.insert(n.id.clone(), n);
        }
        Ok(net)
    }

    pub fn vessel(&self, id: &VesselId) -> SimResult<&Vessel> {
        self.vessels.get(id).ok_or_else(|| SimError::UnknownVessel(id.clone()))
    }

    pub fn node(&self, id: &NodeId) -> SimResult<&Node> {
        self.nodes.get(id).ok_or_else(|| SimError::UnknownNode(id.clone()))
    }

    /// Number of attachment slots declared by nodes. External nodes own one
    /// slot per vessel end that references them.
    pub fn attachment_count(&self) -> usize {
        self.nodes
            .values()
            .map(|n| match &n.kind {
                NodeKind::ExternalPressure { .. } | NodeKind::ExternalFlow { .. } => self
                    .vessels
                    .values()
                    .flat_map(|v| [&v.x0_node, &v.x1_node])
                    .filter(|id| **id == n.id)
                    .count(),
                NodeKind::Branching { attachments } => attachments.len(),
                NodeKind::Transitional(p) => p.arteries.len() + p.veins.len(),
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoint {
    pub vessel: VesselId,
    pub end: End,
    pub orientation: Orientation,
}

/// Vessel ends attached to `node`, sorted by vessel id then end.
pub fn endpoints_of(net: &Network, node: &NodeId) -> SimResult<Vec<Endpoint>> {
    if !net.nodes.contains_key(node) {
        return Err(SimError::UnknownNode(node.clone()));
    }
    let mut out = Vec::new();
    for v in net.vessels.values() {
        for end in [End::X0, End::X1] {
            if v.node_at(end) == node {
                out.push(Endpoint {
                    vessel: v.id.clone(),
                    end,
                    orientation: end.orientation(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subject {
    Vessel(VesselId),
    Node(NodeId),
    Network,
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Vessel(id) => write!(f, "vessel {id}"),
            Subject::Node(id) => write!(f, "node {id}"),
            Subject::Network => f.write_str("network"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub subject: Subject,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {}: {}", self.subject, self.message)
    }
}

struct Collector(Vec<Diagnostic>);

impl Collector {
    fn error(&mut self, subject: Subject, message: impl Into<String>) {
        self.0.push(Diagnostic { subject, severity: Severity::Error, message: message.into() });
    }

    fn warn(&mut self, subject: Subject, message: impl Into<String>) {
        self.0.push(Diagnostic { subject, severity: Severity::Warning, message: message.into() });
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn check_tube_law(law: &TubeLaw) -> Result<(), String> {
    match law {
        TubeLaw::PowerLaw { c, r0, beta } => {
            if !(positive(*c) && positive(*r0) && positive(*beta)) {
                return Err("power law needs c, r0, beta > 0".into());
            }
        }
        TubeLaw::Tabulated { stations } => {
            if stations.is_empty() {
                return Err("tabulated law needs at least one station".into());
            }
            for w in stations.windows(2) {
                if !(w[1].x > w[0].x) {
                    return Err("station positions must be strictly increasing".into());
                }
            }
            for s in stations {
                if !(0.0..=1.0).contains(&s.x) {
                    return Err(format!("station x={} outside [0, 1]", s.x));
                }
                if s.radius.len() < 2 || s.radius.len() != s.pressure.len() {
                    return Err("each station needs >= 2 matching (radius, pressure) samples".into());
                }
                if s.radius[0] <= 0.0 {
                    return Err("tabulated radii must be positive".into());
                }
                let monotone = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
                if !monotone(&s.radius) || !monotone(&s.pressure) {
                    return Err(format!(
                        "station x={}: radius and pressure must both be strictly increasing",
                        s.x
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Structural checks. Returns an empty list iff the network is well formed;
/// a disconnected graph only produces a warning.
pub fn validate_network(net: &Network) -> Vec<Diagnostic> {
    let mut d = Collector(Vec::new());

    for v in net.vessels.values() {
        let s = || Subject::Vessel(v.id.clone());
        if v.n_cells < 2 {
            d.error(s(), format!("n_cells = {} must be >= 2", v.n_cells));
        }
        if !(v.alpha.is_finite() && v.alpha > 1.0) {
            d.error(s(), format!("alpha = {} must exceed 1", v.alpha));
        }
        if !positive(v.nu) {
            d.error(s(), format!("nu = {} must be positive", v.nu));
        }
        if !positive(v.rho_blood) {
            d.error(s(), format!("rho_blood = {} must be positive", v.rho_blood));
        }
        if v.x0_node == v.x1_node {
            d.error(s(), format!("both ends attach to node {} (self-loop)", v.x0_node));
        }
        for end in [End::X0, End::X1] {
            if !net.nodes.contains_key(v.node_at(end)) {
                d.error(s(), format!("{end} end references unknown node {}", v.node_at(end)));
            }
        }
        match &v.model {
            VesselModel::TubeLaw(law) => {
                if let Err(m) = check_tube_law(law) {
                    d.error(s(), m);
                }
            }
            VesselModel::Synthetic(sc) => {
                for (name, field) in [
                    ("a", &sc.a),
                    ("b", &sc.b),
                    ("c", &sc.c),
                    ("f", &sc.f),
                    ("g", &sc.g),
                    ("area", &sc.area),
                ] {
                    if let Err(m) = field.well_formed() {
                        d.error(s(), format!("synthetic {name}: {m}"));
                    }
                }
            }
        }
    }

    for node in net.nodes.values() {
        let s = || Subject::Node(node.id.clone());
        let referencing: BTreeSet<(VesselId, End)> = net
            .vessels
            .values()
            .flat_map(|v| [End::X0, End::X1].map(|e| (v, e)))
            .filter(|(v, e)| *v.node_at(*e) == node.id)
            .map(|(v, e)| (v.id.clone(), e))
            .collect();

        let declared: Vec<(VesselId, End)> = match &node.kind {
            NodeKind::ExternalPressure { .. } | NodeKind::ExternalFlow { .. } => {
                if referencing.len() != 1 {
                    d.error(
                        s(),
                        format!("external node must attach exactly one vessel end, found {}", referencing.len()),
                    );
                }
                referencing.iter().cloned().collect()
            }
            NodeKind::Branching { attachments } => {
                if attachments.len() < 2 {
                    d.error(s(), "branching node needs at least 2 attachments");
                }
                if !attachments.iter().any(|a| a.end == End::X1) {
                    d.error(s(), "branching node has no incoming vessel (attached at x1)");
                }
                if !attachments.iter().any(|a| a.end == End::X0) {
                    d.error(s(), "branching node has no outgoing vessel (attached at x0)");
                }
                for a in attachments {
                    if !positive(a.rho) {
                        d.error(s(), format!("vessel {}: rho = {} must be positive", a.vessel, a.rho));
                    }
                }
                attachments.iter().map(|a| (a.vessel.clone(), a.end)).collect()
            }
            NodeKind::Transitional(p) => {
                if p.arteries.is_empty() {
                    d.error(s(), "transitional node needs at least one artery");
                }
                if p.veins.is_empty() {
                    d.error(s(), "transitional node needs at least one vein");
                }
                for a in p.arteries.iter().chain(&p.veins) {
                    if !positive(a.resistance) {
                        d.error(
                            s(),
                            format!("vessel {}: resistance = {} must be positive", a.vessel, a.resistance),
                        );
                    }
                }
                for (name, val) in [("r_c", p.r_c), ("c1", p.c1), ("c2", p.c2)] {
                    if !positive(val) {
                        d.error(s(), format!("{name} = {val} must be positive"));
                    }
                }
                for (name, val) in [("p_c1_init", p.p_c1_init), ("p_c2_init", p.p_c2_init)] {
                    if let Some(v) = val {
                        if !v.is_finite() {
                            d.error(s(), format!("{name} must be finite"));
                        }
                    }
                }
                p.arteries
                    .iter()
                    .map(|a| (a.vessel.clone(), End::X1))
                    .chain(p.veins.iter().map(|a| (a.vessel.clone(), End::X0)))
                    .collect()
            }
        };

        let mut seen = BTreeSet::new();
        for slot in &declared {
            if !seen.insert(slot.clone()) {
                d.error(s(), format!("vessel {} {} attached twice", slot.0, slot.1));
            }
            if !net.vessels.contains_key(&slot.0) {
                d.error(s(), format!("attachment references unknown vessel {}", slot.0));
            } else if !referencing.contains(slot) {
                d.error(
                    s(),
                    format!("vessel {} {} end does not reference this node", slot.0, slot.1),
                );
            }
        }
        for slot in &referencing {
            if !seen.contains(slot) {
                d.error(
                    s(),
                    format!("vessel {} {} end references this node but is not attached", slot.0, slot.1),
                );
            }
        }
    }

    if !net.vessels.is_empty() && components(net) > 1 {
        d.warn(Subject::Network, "network graph is not connected");
    }
    d.0
}

fn components(net: &Network) -> usize {
    let index: BTreeMap<&NodeId, usize> = net.nodes.keys().enumerate().map(|(i, k)| (k, i)).collect();
    let mut parent: Vec<usize> = (0..index.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for v in net.vessels.values() {
        if let (Some(&a), Some(&b)) = (index.get(&v.x0_node), index.get(&v.x1_node)) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
    }
    let used: BTreeSet<usize> = net
        .vessels
        .values()
        .flat_map(|v| [&v.x0_node, &v.x1_node])
        .filter_map(|id| index.get(id).copied())
        .collect();
    let mut roots = BTreeSet::new();
    for i in used {
        roots.insert(find(&mut parent, i));
    }
    roots.len()
}
