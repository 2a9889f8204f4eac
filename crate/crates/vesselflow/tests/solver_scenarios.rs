mod common;

use std::path::Path;

use common::*;
use vesselflow::io::config::load_config;
use vesselflow::io::output::{MemorySink, NullSink};
use vesselflow::io::signal::BoundarySignal;
use vesselflow::network::{End, Field, Network, NodeId, TubeLaw, VesselId};
use vesselflow::solver::{initial_state, run, InitSpec, Profile, SimConfig, VesselInit};
use vesselflow::verification::{
    dependence_experiment, trajectory, write_dependence_csv, InitialPerturbation, Scenario,
};
use vesselflow::SimError;

fn unit_wave(n: usize) -> Network {
    let signal = BoundarySignal::Sine { mean: 0.0, amplitude: 0.1, frequency: 1.0, phase: 0.0 };
    Network::new(
        vec![synthetic("1", n, 1.0, Field::Constant(1.0), 0.0, "in", "out")],
        vec![pressure("in", signal), pressure("out", constant(0.0))],
    )
    .unwrap()
}

#[test]
fn oversized_step_is_halved_then_restored() {
    let net = unit_wave(20);
    let cfg = SimConfig::new(0.2, 1.0);
    let (init, _) = initial_state(&net, &InitSpec::default(), &cfg).unwrap();
    let report = run(&net, &init, &cfg, &[], &mut NullSink).unwrap();
    assert!((report.final_state.t - 1.0).abs() < 1e-12);
    assert!((report.min_dt - 0.025).abs() < 1e-15, "{}", report.min_dt);
    assert!(report.dt_halvings >= 3);
    assert!(report.dt_restores >= 1);
    assert_eq!(report.full_checks, report.steps + 1);
}

#[test]
fn step_floor_reported_with_cause() {
    let net = unit_wave(20);
    let mut cfg = SimConfig::new(0.5, 1.0);
    cfg.cfl_max = 1e-6;
    let (init, _) = initial_state(&net, &InitSpec::default(), &cfg).unwrap();
    let err = run(&net, &init, &cfg, &[], &mut NullSink).unwrap_err();
    assert_eq!(err.report.dt_halvings, 10);
    assert_eq!(err.report.steps, 0);
    match err.error {
        SimError::StepSizeFloor { dt_min, cause, .. } => {
            assert!((dt_min - 0.5 / 1024.0).abs() < 1e-18);
            assert!(matches!(*cause, SimError::CflViolation { .. }));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn sparse_full_checks_use_endpoint_checks_between() {
    let net = unit_wave(20);
    let mut cfg = SimConfig::new(0.025, 0.5);
    cfg.check_every = 5;
    let (init, _) = initial_state(&net, &InitSpec::default(), &cfg).unwrap();
    let report = run(&net, &init, &cfg, &[], &mut NullSink).unwrap();
    assert_eq!(report.steps, 20);
    assert_eq!(report.full_checks, 1 + 4);
    assert_eq!(report.endpoint_checks, 16);
}

#[test]
fn incompatible_initial_data_is_diagnosed_not_fatal() {
    let net = unit_wave(20);
    let cfg = SimConfig::new(0.025, 0.1);
    let (_, compat) = initial_state(&net, &InitSpec::uniform(0.5, 0.0), &cfg).unwrap();
    assert!(!compat.diagnostics.is_empty());
    let (_, compat) = initial_state(&net, &InitSpec::default(), &cfg).unwrap();
    assert!(compat.diagnostics.is_empty());
}

#[test]
fn transitional_network_approaches_throughflow() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/transitional.json");
    let cfg = load_config(&path).unwrap();
    let (mut state, _) = initial_state(&cfg.network, &cfg.initial, &cfg.solver).unwrap();
    let (artery_id, vein_id, bed_id) = (VesselId::from("artery"), VesselId::from("vein"), NodeId::from("bed"));
    let inflow = 5e-6;
    let mut mismatches = Vec::new();
    for t_end in [2.0, 4.0, 6.0] {
        let mut solver = cfg.solver.clone();
        solver.t_end = t_end;
        state = run(&cfg.network, &state, &solver, &[], &mut NullSink).unwrap().final_state;
        let artery = state.endpoint(&artery_id, End::X1);
        let vein = state.endpoint(&vein_id, End::X0);
        let bed = &state.transitional[&bed_id];
        assert!((artery.p - bed.p_c1 - 1e7 * artery.q).abs() < 1e-6 * artery.p.abs());
        assert!((bed.p_c2 - vein.p - 1e7 * vein.q).abs() < 1e-6 * bed.p_c2.abs());
        mismatches.push((artery.q - inflow).abs().max((vein.q - inflow).abs()) / inflow);
    }
    assert!(mismatches.windows(2).all(|w| w[1] < w[0]), "{mismatches:?}");
    // One slow compliance mode dominates: equal decay per segment.
    let (first, second) = (mismatches[1] / mismatches[0], mismatches[2] / mismatches[1]);
    assert!((first / second - 1.0).abs() < 0.05, "{mismatches:?}");
}

#[test]
fn memory_sink_collects_probe_records() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/y_network.json");
    let mut cfg = load_config(&path).unwrap();
    cfg.solver.t_end = 0.015;
    let (init, _) = initial_state(&cfg.network, &cfg.initial, &cfg.solver).unwrap();
    let mut sink = MemorySink::default();
    let report = run(&cfg.network, &init, &cfg.solver, &cfg.probes, &mut sink).unwrap();
    assert_eq!(report.steps, 10);
    assert_eq!(sink.records.len(), 10 * 6);
    assert!(sink.records.iter().all(|r| r.value.is_finite()));
}

fn small_y_scenario() -> Scenario {
    let mut config = SimConfig::new(0.02, 0.2);
    config.picard_tol = 1e-13;
    Scenario { network: unit_y(20, 0.5), config, initial: InitSpec::default() }
}

#[test]
fn dependence_rows_scale_with_epsilon() {
    let scenario = small_y_scenario();
    let pert = InitialPerturbation {
        pressure: Profile::Sine { mean: 0.0, amplitude: 1.0, wavenumber: 1.0, phase: 0.0 },
        flow: Profile::Constant(0.0),
    };
    let rows = dependence_experiment(&scenario, &pert, &[0.0, 1e-4, 2e-4]).unwrap();
    assert_eq!(rows[0].deviation, 0.0);
    assert!(rows[1].deviation > 0.0);
    assert!((rows[2].ratio / rows[1].ratio - 1.0).abs() < 1e-2);

    let bytes = write_dependence_csv(Vec::new(), &rows).unwrap();
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["epsilon", "deviation", "ratio", "gradient_deviation", "gradient_ratio"]
    );
    let parsed: Vec<Vec<f64>> =
        reader.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(parsed.len(), 3);
    assert_eq!(parsed[1][1], rows[1].deviation);
}

#[test]
fn trajectory_includes_initial_level() {
    let scenario = small_y_scenario();
    let mut initial = InitSpec::default();
    initial.vessels.insert(VesselId::from("1"), VesselInit { p: Profile::Constant(0.0), q: Profile::Constant(0.0) });
    let states = trajectory(&scenario, &initial).unwrap();
    assert_eq!(states.len(), 11);
    assert_eq!(states[0].t, 0.0);
    assert!((states[10].t - 0.2).abs() < 1e-12);
}

#[test]
fn asymmetric_junction_conserves_mass() {
    let inflow = BoundarySignal::Sine { mean: 5.0e-6, amplitude: 5.0e-6, frequency: 1.0, phase: -std::f64::consts::FRAC_PI_2 };
    let net = Network::new(
        vec![
            power_law("1", 40, TubeLaw::PowerLaw { c: 4.0e4, r0: 2.0e-3, beta: 2.0 }, 1050.0, 3.5e-6, "in", "j"),
            power_law("2", 40, TubeLaw::PowerLaw { c: 5.0e4, r0: 1.5e-3, beta: 2.0 }, 1050.0, 3.5e-6, "j", "o2"),
            power_law("3", 40, TubeLaw::PowerLaw { c: 7.0e4, r0: 1.1e-3, beta: 2.0 }, 1050.0, 3.5e-6, "j", "o3"),
        ],
        vec![
            flow("in", inflow),
            branching("j", &[("1", End::X1), ("2", End::X0), ("3", End::X0)], 1.0),
            pressure("o2", constant(0.0)),
            pressure("o3", constant(0.0)),
        ],
    )
    .unwrap();
    let scenario = Scenario { network: net, config: SimConfig::new(1.5e-3, 0.6), initial: InitSpec::default() };
    let states = trajectory(&scenario, &scenario.initial).unwrap();
    let (mut worst, mut nonzero, mut split_differs) = (0.0f64, 0, false);
    for s in &states[1..] {
        let q1 = s.endpoint(&VesselId::from("1"), End::X1).q;
        let q2 = s.endpoint(&VesselId::from("2"), End::X0).q;
        let q3 = s.endpoint(&VesselId::from("3"), End::X0).q;
        let imbalance = (q1 - q2 - q3).abs() / (q1.abs() + q2.abs() + q3.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(imbalance);
        nonzero += usize::from(q1 != 0.0);
        split_differs |= (q2 - q3).abs() > 0.1 * q2.abs();
    }
    assert!(nonzero > 100 && split_differs);
    assert!(worst < 1e-10, "{worst:e}");
}
