use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Parser;

use crate::error::SimError;
use crate::io::config::{load_config, parse_snapshot_times};
use crate::io::output::{snapshot_records, write_records, CsvSink, Record, Sink};
use crate::network::{Network, Severity};
use crate::solver::{initial_state, run, NetworkState};
use crate::wellposedness::check_state;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ILL_POSED: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "simulate", about = "Run a one-dimensional vessel network simulation")]
pub struct Args {
    /// Configuration file (JSON).
    pub config: PathBuf,
    /// Override the final time.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Override the base time step.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Validate and check solvability of the initial state, then exit.
    #[arg(long)]
    pub check_only: bool,
    /// Comma-separated snapshot times.
    #[arg(long)]
    pub snapshot: Option<String>,
}

/// Writes probe rows and full-field snapshots at the requested times.
struct RunSink<W: Write> {
    probes: CsvSink<W>,
    snapshot_times: Vec<f64>,
    next_snapshot: usize,
    directory: PathBuf,
    tolerance: f64,
}

impl<W: Write> Sink for RunSink<W> {
    fn record(&mut self, rec: &Record) -> crate::SimResult<()> {
        self.probes.record(rec)
    }

    fn on_step(&mut self, net: &Network, state: &NetworkState) -> crate::SimResult<()> {
        while let Some(&t) = self.snapshot_times.get(self.next_snapshot) {
            if state.t + self.tolerance < t {
                break;
            }
            write_snapshot(&self.directory, t, net, state)?;
            self.next_snapshot += 1;
        }
        Ok(())
    }
}

fn write_snapshot(dir: &std::path::Path, requested: f64, net: &Network, state: &NetworkState) -> crate::SimResult<()> {
    let path = dir.join(format!("snapshot_t{requested}.csv"));
    let file = File::create(&path).map_err(|e| SimError::Output(format!("{}: {e}", path.display())))?;
    let mut w = write_records(BufWriter::new(file), &snapshot_records(net, state)?)?;
    w.flush().map_err(|e| SimError::Output(e.to_string()))
}

fn exit_code(e: &SimError) -> i32 {
    match e {
        e if e.is_condition_failure() => EXIT_ILL_POSED,
        SimError::StepSizeFloor { cause, .. } if cause.is_condition_failure() => EXIT_ILL_POSED,
        _ => EXIT_SOLVER,
    }
}

/// Runs the command line program; returns the process exit code.
pub fn execute(args: &Args, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(t) = args.t_end {
        cfg.solver.t_end = t;
    }
    if let Some(dt) = args.dt {
        cfg.solver.dt = dt;
    }
    if let Err(e) = cfg.solver.validate() {
        let _ = writeln!(err, "error: {e}");
        return EXIT_USAGE;
    }
    if let Some(s) = &args.snapshot {
        match parse_snapshot_times(s) {
            Ok(ts) => cfg.output.snapshots = ts,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return EXIT_USAGE;
            }
        }
    }
    if let Some(dir) = &args.output {
        cfg.output.directory = dir.clone();
    }
    for w in &cfg.warnings {
        let _ = writeln!(err, "{w}");
    }

    let (init, compat) = match initial_state(&cfg.network, &cfg.initial, &cfg.solver) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return if e.is_condition_failure() { EXIT_ILL_POSED } else { EXIT_USAGE };
        }
    };
    for d in &compat.diagnostics {
        let label = if d.severity == Severity::Error { "large mismatch" } else { "mismatch" };
        let _ = writeln!(err, "initial data {label}: {d}");
    }

    let report = check_state(&cfg.network, &init, &cfg.solver);
    if args.check_only {
        let _ = write!(out, "{report}");
        return if report.passed() { EXIT_OK } else { EXIT_ILL_POSED };
    }
    if !report.passed() {
        let _ = write!(err, "{report}");
        let _ = writeln!(err, "error: initial state is not well posed: {}", report.summary());
        return EXIT_ILL_POSED;
    }

    if let Err(e) = std::fs::create_dir_all(&cfg.output.directory) {
        let _ = writeln!(err, "error: cannot create {}: {e}", cfg.output.directory.display());
        return EXIT_SOLVER;
    }
    let probe_path = cfg.output.directory.join(&cfg.output.probe_file);
    let file = match File::create(&probe_path) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: cannot create {}: {e}", probe_path.display());
            return EXIT_SOLVER;
        }
    };
    let probes = match CsvSink::new(BufWriter::new(file)) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_SOLVER;
        }
    };
    let mut sink = RunSink {
        probes,
        snapshot_times: cfg.output.snapshots.clone(),
        next_snapshot: 0,
        directory: cfg.output.directory.clone(),
        tolerance: 1e-9 * cfg.solver.dt,
    };
    if let Err(e) = sink.on_step(&cfg.network, &init) {
        let _ = writeln!(err, "error: {e}");
        return EXIT_SOLVER;
    }
    let result = run(&cfg.network, &init, &cfg.solver, &cfg.probes, &mut sink);
    let flushed = sink.probes.flush();
    match (result, flushed) {
        (Ok(report), Ok(())) => {
            let _ = writeln!(
                out,
                "completed {} steps to t={} ({} fixed-point iterations, {} step halvings)",
                report.steps, report.final_state.t, report.picard_iterations, report.dt_halvings
            );
            EXIT_OK
        }
        (Err(e), _) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e.error)
        }
        (Ok(_), Err(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_SOLVER
        }
    }
}
