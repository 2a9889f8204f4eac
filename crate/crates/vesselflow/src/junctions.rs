use nalgebra::{DMatrix, DVector};

use crate::constitutive::{CoefficientSet, EigenData, PrimitiveState};
use crate::error::{SimError, SimResult};
use crate::network::{End, Node, NodeId, NodeKind, Orientation, TransitionalParams, VesselId};

/// Matrices whose equilibrated condition estimate exceeds this are treated
/// as singular.
const SINGULAR_CONDITION: f64 = 1e13;
const RESIDUAL_TOL: f64 = 1e-10;

/// What a node closure needs to know about one attached vessel end at the
/// new time level.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointClosureInput {
    pub node: NodeId,
    pub vessel: VesselId,
    pub end: End,
    pub coeffs: CoefficientSet,
    pub eigen: EigenData,
    /// Characteristic value arriving from the vessel interior: `r` at `x = 1`,
    /// `s` at `x = 0`.
    pub known: f64,
    /// Endpoint flow at the previous time level.
    pub q_prev: f64,
    /// Additive offset in the junction momentum balance.
    pub c_off: f64,
}

/// A linear relation `p * P + q * Q = rhs` on one endpoint state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndRelation {
    pub p: f64,
    pub q: f64,
    pub rhs: f64,
}

impl EndpointClosureInput {
    pub fn orientation(&self) -> Orientation {
        self.end.orientation()
    }

    /// `-lambda_L P + a Q = r` at `x = 1`, `-lambda_R P + a Q = s` at `x = 0`.
    pub fn relation(&self) -> EndRelation {
        let lambda = match self.end {
            End::X1 => self.eigen.lambda_l,
            End::X0 => self.eigen.lambda_r,
        };
        EndRelation { p: -lambda, q: self.coeffs.a, rhs: self.known }
    }
}

/// Endpoint state with prescribed pressure.
pub fn close_external_pressure(input: &EndpointClosureInput, p_b: f64) -> SimResult<PrimitiveState> {
    let rel = input.relation();
    if rel.q == 0.0 || !rel.q.is_finite() {
        return Err(SimError::DegenerateBoundary {
            node: input.node.clone(),
            message: format!("vessel {}: wave coefficient a = {}", input.vessel, rel.q),
        });
    }
    Ok(PrimitiveState::new(p_b, (rel.rhs - rel.p * p_b) / rel.q))
}

/// Endpoint state with prescribed flow.
pub fn close_external_flow(input: &EndpointClosureInput, q_b: f64) -> SimResult<PrimitiveState> {
    let rel = input.relation();
    if rel.p == 0.0 || !rel.p.is_finite() {
        return Err(SimError::DegenerateBoundary {
            node: input.node.clone(),
            message: format!("vessel {}: characteristic speed vanishes at the {} end", input.vessel, input.end),
        });
    }
    Ok(PrimitiveState::new((rel.rhs - rel.q * q_b) / rel.p, q_b))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Unknown {
    Pressure(VesselId, End),
    Flow(VesselId, End),
    JunctionPressure,
    Capacitor1,
    Capacitor2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JunctionSystem {
    pub node: NodeId,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub layout: Vec<Unknown>,
}

impl JunctionSystem {
    pub fn size(&self) -> usize {
        self.layout.len()
    }
}

/// Capacitor pressures of a transitional node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionalState {
    pub p_c1: f64,
    pub p_c2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JunctionSolution {
    pub endpoints: Vec<(VesselId, End, PrimitiveState)>,
    pub junction_pressure: Option<f64>,
    pub capacitors: Option<TransitionalState>,
    pub condition: f64,
}

impl JunctionSolution {
    pub fn endpoint(&self, vessel: &VesselId, end: End) -> Option<PrimitiveState> {
        self.endpoints.iter().find(|(v, e, _)| v == vessel && *e == end).map(|x| x.2)
    }
}

fn endpoint_layout(ends: &[(VesselId, End)]) -> Vec<Unknown> {
    ends.iter()
        .flat_map(|(v, e)| [Unknown::Pressure(v.clone(), *e), Unknown::Flow(v.clone(), *e)])
        .collect()
}

/// Branching node: `2 mu + 1` unknowns `(P_k, Q_k)` per end and the junction
/// pressure; rows are the characteristic relations, the backward-Euler
/// momentum balances and mass conservation.
pub fn assemble_branching(node: &Node, inputs: &[EndpointClosureInput], dt: f64) -> SimResult<JunctionSystem> {
    if !matches!(node.kind, NodeKind::Branching { .. }) {
        return Err(SimError::InvalidNetwork(format!("node {} is not a branching node", node.id)));
    }
    let mu = inputs.len();
    let n = 2 * mu + 1;
    let mut m = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    let pj = 2 * mu;
    for (k, inp) in inputs.iter().enumerate() {
        let rho = node
            .rho_of(&inp.vessel, inp.end)
            .ok_or_else(|| SimError::InvalidNetwork(format!("node {}: vessel {} not attached", node.id, inp.vessel)))?;
        let rel = inp.relation();
        m[(k, 2 * k)] = rel.p;
        m[(k, 2 * k + 1)] = rel.q;
        rhs[k] = rel.rhs;

        let row = mu + k;
        let area = inp.coeffs.area;
        let sign = match inp.orientation() {
            Orientation::Incoming => 1.0,
            Orientation::Outgoing => -1.0,
        };
        m[(row, 2 * k + 1)] = rho / dt;
        m[(row, 2 * k)] = -sign * area;
        m[(row, pj)] = sign * area;
        rhs[row] = rho * inp.q_prev / dt + inp.c_off;

        m[(2 * mu, 2 * k + 1)] = sign;
    }
    let ends: Vec<_> = inputs.iter().map(|i| (i.vessel.clone(), i.end)).collect();
    let mut layout = endpoint_layout(&ends);
    layout.push(Unknown::JunctionPressure);
    Ok(JunctionSystem { node: node.id.clone(), matrix: m, rhs, layout })
}

/// Transitional node from per-end relations: `2 mu + 2` unknowns, the end
/// states plus both capacitor pressures.
pub fn assemble_transitional_relations(
    node: &NodeId,
    params: &TransitionalParams,
    ends: &[(VesselId, End, EndRelation)],
    prev: TransitionalState,
    dt: f64,
) -> SimResult<JunctionSystem> {
    let mu = ends.len();
    let n = 2 * mu + 2;
    let (c1_idx, c2_idx) = (2 * mu, 2 * mu + 1);
    let mut m = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (k, (vessel, end, rel)) in ends.iter().enumerate() {
        m[(k, 2 * k)] = rel.p;
        m[(k, 2 * k + 1)] = rel.q;
        rhs[k] = rel.rhs;

        let resistance = params
            .resistance_of(vessel, *end)
            .ok_or_else(|| SimError::InvalidNetwork(format!("node {node}: vessel {vessel} not attached")))?;
        let row = mu + k;
        m[(row, 2 * k + 1)] = resistance;
        match end {
            End::X1 => {
                m[(row, 2 * k)] = -1.0;
                m[(row, c1_idx)] = 1.0;
                m[(2 * mu, 2 * k + 1)] = -1.0;
            }
            End::X0 => {
                m[(row, 2 * k)] = 1.0;
                m[(row, c2_idx)] = -1.0;
                m[(2 * mu + 1, 2 * k + 1)] = 1.0;
            }
        }
    }
    let g = 1.0 / params.r_c;
    m[(2 * mu, c1_idx)] = params.c1 / dt + g;
    m[(2 * mu, c2_idx)] = -g;
    rhs[2 * mu] = params.c1 * prev.p_c1 / dt;
    m[(2 * mu + 1, c2_idx)] = params.c2 / dt + g;
    m[(2 * mu + 1, c1_idx)] = -g;
    rhs[2 * mu + 1] = params.c2 * prev.p_c2 / dt;

    let ids: Vec<_> = ends.iter().map(|(v, e, _)| (v.clone(), *e)).collect();
    let mut layout = endpoint_layout(&ids);
    layout.push(Unknown::Capacitor1);
    layout.push(Unknown::Capacitor2);
    Ok(JunctionSystem { node: node.clone(), matrix: m, rhs, layout })
}

pub fn assemble_transitional(
    node: &Node,
    inputs: &[EndpointClosureInput],
    prev: TransitionalState,
    dt: f64,
) -> SimResult<JunctionSystem> {
    let NodeKind::Transitional(params) = &node.kind else {
        return Err(SimError::InvalidNetwork(format!("node {} is not a transitional node", node.id)));
    };
    let ends: Vec<_> = inputs.iter().map(|i| (i.vessel.clone(), i.end, i.relation())).collect();
    assemble_transitional_relations(&node.id, params, &ends, prev, dt)
}

/// Row and column equilibration factors bringing every row and column to unit
/// max-norm.
fn equilibrate(m: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = m.nrows();
    let row = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let mx = m.row(i).amax();
            if mx > 0.0 { 1.0 / mx } else { 1.0 }
        }),
    );
    let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * row[i]);
    let col = DVector::from_iterator(
        n,
        (0..n).map(|j| {
            let mx = scaled.column(j).amax();
            if mx > 0.0 { 1.0 / mx } else { 1.0 }
        }),
    );
    (row, col)
}

fn norm_one(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols()).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn norm_inf(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// One-norm condition number of the equilibrated matrix; infinite when the
/// factorization breaks down.
pub fn condition_estimate(sys: &JunctionSystem) -> f64 {
    let (row, col) = equilibrate(&sys.matrix);
    let n = sys.size();
    let scaled = DMatrix::from_fn(n, n, |i, j| sys.matrix[(i, j)] * row[i] * col[j]);
    match scaled.clone().lu().try_inverse() {
        Some(inv) => norm_one(&scaled) * norm_one(&inv),
        None => f64::INFINITY,
    }
}

/// Dense solve with partial pivoting on the equilibrated system.
pub fn solve_junction(sys: &JunctionSystem) -> SimResult<JunctionSolution> {
    let n = sys.size();
    let (row, col) = equilibrate(&sys.matrix);
    let scaled = DMatrix::from_fn(n, n, |i, j| sys.matrix[(i, j)] * row[i] * col[j]);
    let rhs = sys.rhs.component_mul(&row);
    let lu = scaled.clone().lu();
    let singular = |condition: f64| SimError::SingularJunction { node: sys.node.clone(), condition };
    let inv = lu.try_inverse().ok_or_else(|| singular(f64::INFINITY))?;
    let condition = norm_one(&scaled) * norm_one(&inv);
    if !(condition < SINGULAR_CONDITION) {
        return Err(singular(condition));
    }
    let mut y = lu.solve(&rhs).ok_or_else(|| singular(condition))?;
    let residual = &rhs - &scaled * &y;
    if let Some(dy) = lu.solve(&residual) {
        y += dy;
    }
    let x = y.component_mul(&col);

    let res = &sys.matrix * &x - &sys.rhs;
    let bound = RESIDUAL_TOL * norm_inf(&sys.matrix) * x.amax();
    if res.amax() > bound.max(f64::MIN_POSITIVE) && res.amax() > 0.0 {
        return Err(singular(condition));
    }

    let mut endpoints = Vec::new();
    let mut junction_pressure = None;
    let mut cap = [None, None];
    let mut i = 0;
    while i < n {
        match &sys.layout[i] {
            Unknown::Pressure(v, e) => {
                endpoints.push((v.clone(), *e, PrimitiveState::new(x[i], x[i + 1])));
                i += 2;
                continue;
            }
            Unknown::Flow(..) => {}
            Unknown::JunctionPressure => junction_pressure = Some(x[i]),
            Unknown::Capacitor1 => cap[0] = Some(x[i]),
            Unknown::Capacitor2 => cap[1] = Some(x[i]),
        }
        i += 1;
    }
    let capacitors = match cap {
        [Some(p_c1), Some(p_c2)] => Some(TransitionalState { p_c1, p_c2 }),
        _ => None,
    };
    Ok(JunctionSolution { endpoints, junction_pressure, capacitors, condition })
}

/// Flow through the capillary resistance.
pub fn capillary_flow(params: &TransitionalParams, st: TransitionalState) -> f64 {
    (st.p_c1 - st.p_c2) / params.r_c
}

/// How the venous side of a decoupled transitional node is driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VeinBoundary {
    Pressure(f64),
    Flow(f64),
}

/// One backward-Euler step of a transitional node whose ends are ideal
/// sources instead of vessels: every artery delivers its prescribed flow and
/// every vein is held at a prescribed pressure or flow.
pub fn transitional_decoupled_step(
    node: &NodeId,
    params: &TransitionalParams,
    artery_flows: &[f64],
    veins: &[VeinBoundary],
    prev: TransitionalState,
    dt: f64,
) -> SimResult<JunctionSolution> {
    if artery_flows.len() != params.arteries.len() || veins.len() != params.veins.len() {
        return Err(SimError::InvalidConfig("decoupled drive must match the node's ends".into()));
    }
    let mut ends = Vec::new();
    for (a, q) in params.arteries.iter().zip(artery_flows) {
        ends.push((a.vessel.clone(), End::X1, EndRelation { p: 0.0, q: 1.0, rhs: *q }));
    }
    for (v, b) in params.veins.iter().zip(veins) {
        let rel = match b {
            VeinBoundary::Pressure(p) => EndRelation { p: 1.0, q: 0.0, rhs: *p },
            VeinBoundary::Flow(q) => EndRelation { p: 0.0, q: 1.0, rhs: *q },
        };
        ends.push((v.vessel.clone(), End::X0, rel));
    }
    let sys = assemble_transitional_relations(node, params, &ends, prev, dt)?;
    solve_junction(&sys)
}

/// Derivative of each end's resistive row with respect to the end's
/// unresolved characteristic variable (`s` at arteries, `r` at veins), read
/// off the assembled matrix. Positive whenever the resistances are positive
/// and the end speeds satisfy `lambda_L < 0 < lambda_R`.
pub fn transitional_diagonal(sys: &JunctionSystem, inputs: &[EndpointClosureInput]) -> Vec<f64> {
    let mu = inputs.len();
    inputs
        .iter()
        .enumerate()
        .map(|(k, inp)| {
            let e = &inp.eigen;
            let a = inp.coeffs.a;
            let (dp, dq) = match inp.end {
                End::X1 => (-1.0 / (2.0 * e.u), -e.lambda_l / (2.0 * e.u * a)),
                End::X0 => (1.0 / (2.0 * e.u), e.lambda_r / (2.0 * e.u * a)),
            };
            sys.matrix[(mu + k, 2 * k)] * dp + sys.matrix[(mu + k, 2 * k + 1)] * dq
        })
        .collect()
}

/// Per-end data entering the time-derivative system of a branching node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchEnd {
    pub orientation: Orientation,
    pub rho: f64,
    pub area: f64,
    pub a: f64,
    pub eigen: EigenData,
}

fn incoming_first(ends: &[BranchEnd]) -> Vec<BranchEnd> {
    let mut v: Vec<BranchEnd> = ends.iter().copied().filter(|e| e.orientation == Orientation::Incoming).collect();
    v.extend(ends.iter().copied().filter(|e| e.orientation == Orientation::Outgoing));
    v
}

/// The `mu x mu` system for the time derivatives of the unresolved
/// characteristic variables at a branching node (`s` of incoming, `r` of
/// outgoing vessels). Rows equate junction pressures of each end with the
/// first; the last row is the differentiated mass balance. Incoming ends
/// come first.
pub fn reduced_derivative_block(ends: &[BranchEnd]) -> DMatrix<f64> {
    let ends = incoming_first(ends);
    let mu = ends.len();
    let dq: Vec<f64> = ends
        .iter()
        .map(|e| match e.orientation {
            Orientation::Incoming => -e.eigen.lambda_l / (2.0 * e.eigen.u * e.a),
            Orientation::Outgoing => e.eigen.lambda_r / (2.0 * e.eigen.u * e.a),
        })
        .collect();
    let sigma = |e: &BranchEnd| match e.orientation {
        Orientation::Incoming => -1.0,
        Orientation::Outgoing => 1.0,
    };
    let mut m = DMatrix::zeros(mu, mu);
    for i in 1..mu {
        m[(i - 1, 0)] = -sigma(&ends[0]) * ends[0].rho / ends[0].area * dq[0];
        m[(i - 1, i)] = sigma(&ends[i]) * ends[i].rho / ends[i].area * dq[i];
    }
    for (k, e) in ends.iter().enumerate() {
        m[(mu - 1, k)] = -sigma(e) * dq[k];
    }
    m
}

/// Closed-form determinant of [`reduced_derivative_block`]:
/// `(-1/2)^mu prod_in rho lambda_L / (u a A) prod_out rho lambda_R / (u a A) sum A / rho`.
pub fn reduced_block_determinant(ends: &[BranchEnd]) -> f64 {
    let mu = ends.len() as i32;
    let product: f64 = ends
        .iter()
        .map(|e| {
            let lambda = match e.orientation {
                Orientation::Incoming => e.eigen.lambda_l,
                Orientation::Outgoing => e.eigen.lambda_r,
            };
            e.rho * lambda / (e.eigen.u * e.a * e.area)
        })
        .product();
    let sum: f64 = ends.iter().map(|e| e.area / e.rho).sum();
    (-0.5f64).powi(mu) * product * sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{eigen, to_riemann};
    use crate::network::{BranchAttachment, ResistiveAttachment};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn input(vessel: &str, end: End, cs: CoefficientSet, st: PrimitiveState, q_prev: f64) -> EndpointClosureInput {
        let e = eigen(&cs).unwrap();
        let rp = to_riemann(&cs, &e, st);
        let known = match end {
            End::X0 => rp.s,
            End::X1 => rp.r,
        };
        EndpointClosureInput {
            node: "n".into(),
            vessel: vessel.into(),
            end,
            coeffs: cs,
            eigen: e,
            known,
            q_prev,
            c_off: 0.0,
        }
    }

    fn unit() -> CoefficientSet {
        CoefficientSet { a: 1.0, b: 1.0, c: 0.0, f: 0.0, g: 0.0, area: 1.0 }
    }

    fn branching(ends: &[(&str, End, f64)]) -> Node {
        Node {
            id: "n".into(),
            kind: NodeKind::Branching {
                attachments: ends
                    .iter()
                    .map(|(v, e, rho)| BranchAttachment { vessel: (*v).into(), end: *e, rho: *rho })
                    .collect(),
            },
        }
    }

    fn transitional(r_art: f64, r_vein: f64) -> TransitionalParams {
        TransitionalParams {
            arteries: vec![ResistiveAttachment { vessel: "4".into(), resistance: r_art }],
            veins: vec![ResistiveAttachment { vessel: "5".into(), resistance: r_vein }],
            r_c: 2.0,
            c1: 0.5,
            c2: 0.25,
            p_c1_init: None,
            p_c2_init: None,
        }
    }

    #[test]
    fn pressure_closure_example() {
        let mut inp = input("1", End::X0, unit(), PrimitiveState::default(), 0.0);
        inp.known = 1.0;
        assert_eq!(close_external_pressure(&inp, 2.0).unwrap(), PrimitiveState::new(2.0, 3.0));
    }

    #[test]
    fn flow_closure_example() {
        let mut inp = input("1", End::X0, unit(), PrimitiveState::default(), 0.0);
        inp.known = 1.0;
        assert_eq!(close_external_flow(&inp, 3.0).unwrap(), PrimitiveState::new(2.0, 3.0));
        inp.known = 0.0;
        assert_eq!(close_external_flow(&inp, 0.0).unwrap(), PrimitiveState::new(0.0, 0.0));
    }

    #[test]
    fn closures_reproduce_steady_state() {
        let cs = CoefficientSet { a: 2.0, b: 0.5, c: 0.3, f: 0.0, g: 0.0, area: 1.0 };
        let st = PrimitiveState::new(1.5, -0.25);
        for end in [End::X0, End::X1] {
            let inp = input("1", end, cs, st, st.q);
            let got = close_external_pressure(&inp, st.p).unwrap();
            assert!((got.q - st.q).abs() < 1e-15);
            let got = close_external_flow(&inp, st.q).unwrap();
            assert!((got.p - st.p).abs() < 1e-15);
        }
    }

    #[test]
    fn bifurcation_system_is_seven_by_seven() {
        let node = branching(&[("1", End::X1, 1.0), ("2", End::X0, 1.0), ("3", End::X0, 1.0)]);
        let st = PrimitiveState::new(1.0, 0.5);
        let inputs = vec![
            input("1", End::X1, unit(), st, 0.5),
            input("2", End::X0, unit(), st, 0.25),
            input("3", End::X0, unit(), st, 0.25),
        ];
        let sys = assemble_branching(&node, &inputs, 0.1).unwrap();
        assert_eq!((sys.matrix.nrows(), sys.matrix.ncols()), (7, 7));
        assert_eq!(sys.layout.len(), 7);
    }

    #[test]
    fn straight_connector_keeps_steady_state() {
        let node = branching(&[("1", End::X1, 0.1), ("2", End::X0, 0.1)]);
        let st = PrimitiveState::new(3.0, 0.7);
        let inputs = vec![input("1", End::X1, unit(), st, st.q), input("2", End::X0, unit(), st, st.q)];
        let sol = solve_junction(&assemble_branching(&node, &inputs, 0.01).unwrap()).unwrap();
        for (_, _, got) in &sol.endpoints {
            assert!((got.p - st.p).abs() < 1e-13 && (got.q - st.q).abs() < 1e-13);
        }
        assert!((sol.junction_pressure.unwrap() - st.p).abs() < 1e-13);
    }

    #[test]
    fn identity_system_returns_rhs() {
        let sys = JunctionSystem {
            node: "n".into(),
            matrix: DMatrix::identity(3, 3),
            rhs: DVector::from_vec(vec![1.0, -2.0, 3.0]),
            layout: vec![Unknown::Pressure("1".into(), End::X0), Unknown::Flow("1".into(), End::X0), Unknown::JunctionPressure],
        };
        let sol = solve_junction(&sys).unwrap();
        assert_eq!(sol.endpoints[0].2, PrimitiveState::new(1.0, -2.0));
        assert_eq!(sol.junction_pressure, Some(3.0));
    }

    #[test]
    fn singular_system_reported() {
        let sys = JunctionSystem {
            node: "bad".into(),
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]),
            rhs: DVector::from_vec(vec![1.0, 2.0]),
            layout: vec![Unknown::Pressure("1".into(), End::X0), Unknown::Flow("1".into(), End::X0)],
        };
        match solve_junction(&sys) {
            Err(SimError::SingularJunction { node, .. }) => assert_eq!(node.0, "bad"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transitional_system_is_six_by_six() {
        let node = Node { id: "t".into(), kind: NodeKind::Transitional(transitional(1.0, 1.0)) };
        let st = PrimitiveState::new(1.0, 0.1);
        let inputs = vec![input("4", End::X1, unit(), st, 0.1), input("5", End::X0, unit(), st, 0.1)];
        let sys = assemble_transitional(&node, &inputs, TransitionalState { p_c1: 0.0, p_c2: 0.0 }, 0.1).unwrap();
        assert_eq!(sys.size(), 6);
    }

    #[test]
    fn capillary_flow_example() {
        let p = transitional(1.0, 1.0);
        assert_eq!(capillary_flow(&p, TransitionalState { p_c1: 10.0, p_c2: 4.0 }), 3.0);
    }

    #[test]
    fn transitional_equilibrium_is_preserved() {
        // P_C1 - P_C2 = R_C Q and equal artery/vein flow Q: nothing moves.
        let params = transitional(1.0, 1.0);
        let q = 0.5;
        let prev = TransitionalState { p_c1: 4.0, p_c2: 3.0 };
        let art = PrimitiveState::new(prev.p_c1 + q, q);
        let vein = PrimitiveState::new(prev.p_c2 - q, q);
        let node = Node { id: "t".into(), kind: NodeKind::Transitional(params) };
        let inputs = vec![input("4", End::X1, unit(), art, q), input("5", End::X0, unit(), vein, q)];
        let sol = solve_junction(&assemble_transitional(&node, &inputs, prev, 0.1).unwrap()).unwrap();
        let caps = sol.capacitors.unwrap();
        assert!((caps.p_c1 - prev.p_c1).abs() < 1e-13 && (caps.p_c2 - prev.p_c2).abs() < 1e-13);
    }

    #[test]
    fn rho_to_zero_gives_pressure_continuity() {
        let st1 = PrimitiveState::new(2.0, 1.0);
        let st2 = PrimitiveState::new(1.0, 0.3);
        let mut last_gap = f64::INFINITY;
        for k in 2..=6 {
            let rho = 10f64.powi(-k);
            let node = branching(&[("1", End::X1, rho), ("2", End::X0, rho)]);
            let inputs = vec![input("1", End::X1, unit(), st1, 0.5), input("2", End::X0, unit(), st2, 0.5)];
            let sol = solve_junction(&assemble_branching(&node, &inputs, 0.01).unwrap()).unwrap();
            let gap = (sol.endpoints[0].2.p - sol.endpoints[1].2.p).abs();
            assert!(gap < last_gap, "gap {gap} did not shrink at rho {rho}");
            last_gap = gap;
        }
        assert!(last_gap < 1e-3);
    }

    fn random_end(rng: &mut ChaCha8Rng, orientation: Orientation) -> BranchEnd {
        let a = 10f64.powf(rng.gen_range(-1.0..1.0));
        let b = 10f64.powf(rng.gen_range(-1.0..1.0));
        let c: f64 = rng.gen_range(-0.9..0.9) * (a * b).sqrt();
        let cs = CoefficientSet { a, b, c, ..Default::default() };
        BranchEnd {
            orientation,
            rho: 10f64.powf(rng.gen_range(-3.0..0.0)),
            area: 10f64.powf(rng.gen_range(-1.0..1.0)),
            a,
            eigen: eigen(&cs).unwrap(),
        }
    }

    #[test]
    fn derivative_block_determinant_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n_in = rng.gen_range(1..4);
            let n_out = rng.gen_range(1..4);
            let mut ends: Vec<_> = (0..n_in).map(|_| random_end(&mut rng, Orientation::Incoming)).collect();
            ends.extend((0..n_out).map(|_| random_end(&mut rng, Orientation::Outgoing)));
            let det = reduced_derivative_block(&ends).determinant();
            let formula = reduced_block_determinant(&ends);
            assert!(det != 0.0);
            assert!(((det - formula) / formula).abs() < 1e-10, "{det} vs {formula}");
        }
    }

    proptest! {
        #[test]
        fn closures_honor_characteristic(a in 0.1f64..10.0, b in 0.1f64..10.0, cf in -0.9f64..0.9,
                                         known in -5.0f64..5.0, value in -5.0f64..5.0, right in any::<bool>()) {
            let c = cf * (a * b).sqrt();
            let cs = CoefficientSet { a, b, c, ..Default::default() };
            let end = if right { End::X1 } else { End::X0 };
            let mut inp = input("1", end, cs, PrimitiveState::default(), 0.0);
            inp.known = known;
            let e = inp.eigen;
            for st in [close_external_pressure(&inp, value).unwrap(), close_external_flow(&inp, value).unwrap()] {
                let rp = to_riemann(&cs, &e, st);
                let got = if right { rp.r } else { rp.s };
                prop_assert!((got - known).abs() <= 1e-12 * known.abs().max(1.0) * (1.0 + a + e.u));
            }
            let st = close_external_pressure(&inp, value).unwrap();
            let back = close_external_flow(&inp, st.q).unwrap();
            prop_assert!((back.p - value).abs() <= 1e-12 * value.abs().max(1.0) * (1.0 + a / e.u) * 10.0);
        }

        #[test]
        fn branching_mass_balance_and_consistency(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_in = rng.gen_range(1..3);
            let n_out = rng.gen_range(1..4);
            let mut spec = Vec::new();
            let mut inputs = Vec::new();
            for k in 0..n_in + n_out {
                let end = if k < n_in { End::X1 } else { End::X0 };
                let name = format!("{k}");
                let a = 10f64.powf(rng.gen_range(-1.0..1.0));
                let b = 10f64.powf(rng.gen_range(-1.0..1.0));
                let c = rng.gen_range(-0.5..0.5) * (a * b).sqrt();
                let cs = CoefficientSet { a, b, c, f: 0.0, g: 0.0, area: rng.gen_range(0.5..2.0) };
                let st = PrimitiveState::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let mut inp = input(&name, end, cs, st, rng.gen_range(-1.0..1.0));
                inp.node = "n".into();
                spec.push((name, end, rng.gen_range(1e-3..1.0)));
                inputs.push(inp);
            }
            let spec_ref: Vec<(&str, End, f64)> = spec.iter().map(|(n, e, r)| (n.as_str(), *e, *r)).collect();
            let node = branching(&spec_ref);
            let sys = assemble_branching(&node, &inputs, 0.01).unwrap();
            let sol = solve_junction(&sys).unwrap();
            let (mut inflow, mut outflow, mut total) = (0.0, 0.0, 0.0);
            for (inp, (_, end, st)) in inputs.iter().zip(&sol.endpoints) {
                match end {
                    End::X1 => inflow += st.q,
                    End::X0 => outflow += st.q,
                }
                total += st.q.abs();
                let rp = to_riemann(&inp.coeffs, &inp.eigen, *st);
                let got = if *end == End::X1 { rp.r } else { rp.s };
                prop_assert!((got - inp.known).abs() <= 1e-10 * inp.known.abs().max(1.0));
            }
            prop_assert!((inflow - outflow).abs() <= 1e-10 * total.max(1.0));
            let res = &sys.matrix * DVector::from_iterator(sys.size(), sol.endpoints.iter()
                .flat_map(|e| [e.2.p, e.2.q]).chain(sol.junction_pressure)) - &sys.rhs;
            prop_assert!(res.amax() <= 1e-10 * norm_inf(&sys.matrix) * sys.rhs.amax().max(1.0));
        }

        #[test]
        fn transitional_diagonal_positive(r1 in 1e-3f64..1e3, r2 in 1e-3f64..1e3,
                                          a in 0.1f64..10.0, b in 0.1f64..10.0, cf in -0.9f64..0.9) {
            let c = cf * (a * b).sqrt();
            let cs = CoefficientSet { a, b, c, f: 0.0, g: 0.0, area: 1.0 };
            let node = Node { id: "t".into(), kind: NodeKind::Transitional(transitional(r1, r2)) };
            let st = PrimitiveState::new(1.0, 0.2);
            let inputs = vec![input("4", End::X1, cs, st, 0.2), input("5", End::X0, cs, st, 0.2)];
            let sys = assemble_transitional(&node, &inputs, TransitionalState { p_c1: 0.0, p_c2: 0.0 }, 0.1).unwrap();
            let diag = transitional_diagonal(&sys, &inputs);
            let e = inputs[0].eigen;
            prop_assert!((diag[0] - (-r1 * e.lambda_l / (2.0 * e.u * a) + 1.0 / (2.0 * e.u))).abs() < 1e-12 * diag[0].abs());
            prop_assert!((diag[1] - (r2 * e.lambda_r / (2.0 * e.u * a) + 1.0 / (2.0 * e.u))).abs() < 1e-12 * diag[1].abs());
            prop_assert!(diag.iter().all(|d| *d > 0.0));
        }
    }
}
