#![allow(dead_code)]

use std::f64::consts::PI;

use vesselflow::io::signal::BoundarySignal;
use vesselflow::network::{
    BranchAttachment, End, Field, Network, Node, NodeKind, SyntheticCoefficients, TubeLaw, Vessel, VesselModel,
};

pub fn synthetic(id: &str, n: usize, a: f64, b: Field, c: f64, x0: &str, x1: &str) -> Vessel {
    Vessel {
        id: id.into(),
        n_cells: n,
        alpha: 1.1,
        nu: 1e-6,
        rho_blood: 1.0,
        model: VesselModel::Synthetic(SyntheticCoefficients {
            a: Field::Constant(a),
            b,
            c: Field::Constant(c),
            f: Field::Constant(0.0),
            g: Field::Constant(0.0),
            area: Field::Constant(1.0),
        }),
        x0_node: x0.into(),
        x1_node: x1.into(),
    }
}

pub fn power_law(id: &str, n: usize, law: TubeLaw, rho: f64, nu: f64, x0: &str, x1: &str) -> Vessel {
    Vessel { id: id.into(), n_cells: n, alpha: 1.1, nu, rho_blood: rho, model: VesselModel::TubeLaw(law), x0_node: x0.into(), x1_node: x1.into() }
}

pub fn pressure(id: &str, signal: BoundarySignal) -> Node {
    Node { id: id.into(), kind: NodeKind::ExternalPressure { signal } }
}

pub fn flow(id: &str, signal: BoundarySignal) -> Node {
    Node { id: id.into(), kind: NodeKind::ExternalFlow { signal } }
}

pub fn constant(value: f64) -> BoundarySignal {
    BoundarySignal::Constant { value }
}

pub fn branching(id: &str, ends: &[(&str, End)], rho: f64) -> Node {
    Node {
        id: id.into(),
        kind: NodeKind::Branching {
            attachments: ends.iter().map(|(v, e)| BranchAttachment { vessel: (*v).into(), end: *e, rho }).collect(),
        },
    }
}

/// Unit-area, unit-stiffness tube law: `A = 1 + P`, `a = 1`.
pub fn unit_law() -> TubeLaw {
    TubeLaw::PowerLaw { c: 1.0, r0: 1.0 / PI.sqrt(), beta: 2.0 }
}

/// Single nondimensional vessel with pressure held at `edge` at both ends.
pub fn unit_pulse_vessel(n: usize, edge: f64) -> Network {
    Network::new(
        vec![power_law("1", n, unit_law(), 1.0, 1e-3, "in", "out")],
        vec![pressure("in", constant(edge)), pressure("out", constant(edge))],
    )
    .unwrap()
}

/// Nondimensional Y: parent 1 into j, daughters 2 and 3 out of j.
pub fn unit_y(n: usize, rho_j: f64) -> Network {
    let narrow = TubeLaw::PowerLaw { c: 1.0, r0: (0.6 / PI).sqrt(), beta: 2.0 };
    Network::new(
        vec![
            power_law("1", n, unit_law(), 1.0, 1e-3, "in", "j"),
            power_law("2", n, narrow.clone(), 1.0, 1e-3, "j", "o2"),
            power_law("3", n, narrow, 1.0, 1e-3, "j", "o3"),
        ],
        vec![
            pressure("in", constant(0.0)),
            branching("j", &[("1", End::X1), ("2", End::X0), ("3", End::X0)], rho_j),
            pressure("o2", constant(0.0)),
            pressure("o3", constant(0.0)),
        ],
    )
    .unwrap()
}

/// SI-scaled Y with a pulsatile inflow starting from rest.
pub fn si_y(n: usize) -> Network {
    let parent = TubeLaw::PowerLaw { c: 4.0e4, r0: 2.0e-3, beta: 2.0 };
    let daughter = TubeLaw::PowerLaw { c: 5.0e4, r0: 1.5e-3, beta: 2.0 };
    let inflow = BoundarySignal::Sine { mean: 5.0e-6, amplitude: 5.0e-6, frequency: 1.0, phase: -PI / 2.0 };
    Network::new(
        vec![
            power_law("1", n, parent, 1050.0, 3.5e-6, "in", "j"),
            power_law("2", n, daughter.clone(), 1050.0, 3.5e-6, "j", "o2"),
            power_law("3", n, daughter, 1050.0, 3.5e-6, "j", "o3"),
        ],
        vec![
            flow("in", inflow),
            branching("j", &[("1", End::X1), ("2", End::X0), ("3", End::X0)], 1.0),
            pressure("o2", constant(0.0)),
            pressure("o3", constant(0.0)),
        ],
    )
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
