use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constitutive::raw_coefficients;
use crate::error::{SimError, SimResult};
use crate::junctions::capillary_flow;
use crate::network::{Network, NodeId, NodeKind, VesselId};
use crate::solver::NetworkState;

pub const CSV_HEADER: [&str; 6] = ["t", "kind", "id", "x", "quantity", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VesselQuantity {
    P,
    Q,
    A,
    R,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeQuantity {
    #[serde(rename = "P_C1")]
    PC1,
    #[serde(rename = "P_C2")]
    PC2,
    #[serde(rename = "Q_C")]
    QC,
    #[serde(rename = "P_junc")]
    PJunc,
}

impl VesselQuantity {
    pub fn name(self) -> &'static str {
        match self {
            VesselQuantity::P => "P",
            VesselQuantity::Q => "Q",
            VesselQuantity::A => "A",
            VesselQuantity::R => "R",
            VesselQuantity::V => "V",
        }
    }
}

impl NodeQuantity {
    pub fn name(self) -> &'static str {
        match self {
            NodeQuantity::PC1 => "P_C1",
            NodeQuantity::PC2 => "P_C2",
            NodeQuantity::QC => "Q_C",
            NodeQuantity::PJunc => "P_junc",
        }
    }
}

/// Where along a vessel a probe samples: a grid index or a fraction of the
/// length (rounded to the nearest grid node).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLocation {
    XIndex(usize),
    XFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Probe {
    Vessel {
        vessel: VesselId,
        #[serde(flatten)]
        at: ProbeLocation,
        quantities: Vec<VesselQuantity>,
    },
    Node {
        node: NodeId,
        quantities: Vec<NodeQuantity>,
    },
}

impl Probe {
    pub fn validate(&self, net: &Network) -> SimResult<()> {
        match self {
            Probe::Vessel { vessel, at, quantities } => {
                let v = net.vessel(vessel)?;
                match at {
                    ProbeLocation::XIndex(j) if *j > v.n_cells => {
                        return Err(SimError::InvalidConfig(format!(
                            "probe on vessel {vessel}: index {j} beyond n_cells {}",
                            v.n_cells
                        )))
                    }
                    ProbeLocation::XFraction(f) if !(0.0..=1.0).contains(f) => {
                        return Err(SimError::InvalidConfig(format!(
                            "probe on vessel {vessel}: fraction {f} outside [0, 1]"
                        )))
                    }
                    _ => {}
                }
                if quantities.is_empty() {
                    return Err(SimError::InvalidConfig(format!("probe on vessel {vessel} lists no quantities")));
                }
            }
            Probe::Node { node, quantities } => {
                let n = net.node(node)?;
                for q in quantities {
                    let ok = matches!(
                        (q, &n.kind),
                        (NodeQuantity::PJunc, NodeKind::Branching { .. })
                            | (NodeQuantity::PC1 | NodeQuantity::PC2 | NodeQuantity::QC, NodeKind::Transitional(_))
                    );
                    if !ok {
                        return Err(SimError::InvalidConfig(format!(
                            "probe quantity {} not available at node {node}",
                            q.name()
                        )));
                    }
                }
                if quantities.is_empty() {
                    return Err(SimError::InvalidConfig(format!("probe on node {node} lists no quantities")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Vessel,
    Node,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub kind: RecordKind,
    pub id: String,
    pub x: Option<f64>,
    pub quantity: &'static str,
    pub value: f64,
}

/// Receives probe records and, optionally, every accepted state.
pub trait Sink {
    fn record(&mut self, rec: &Record) -> SimResult<()>;

    fn on_step(&mut self, _net: &Network, _state: &NetworkState) -> SimResult<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl Sink for NullSink {
    fn record(&mut self, _rec: &Record) -> SimResult<()> {
        Ok(())
    }
}

/// Collects records in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<Record>,
}

impl Sink for MemorySink {
    fn record(&mut self, rec: &Record) -> SimResult<()> {
        self.records.push(rec.clone());
        Ok(())
    }
}

fn io_err(e: impl std::fmt::Display) -> SimError {
    SimError::Output(e.to_string())
}

/// Writes records as CSV rows under the fixed header.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(inner: W) -> SimResult<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(CSV_HEADER).map_err(io_err)?;
        Ok(CsvSink { writer })
    }

    pub fn into_inner(self) -> SimResult<W> {
        self.writer.into_inner().map_err(io_err)
    }

    pub fn flush(&mut self) -> SimResult<()> {
        self.writer.flush().map_err(io_err)
    }
}

impl<W: Write> Sink for CsvSink<W> {
    fn record(&mut self, rec: &Record) -> SimResult<()> {
        write_record(&mut self.writer, rec)
    }
}

fn write_record<W: Write>(w: &mut csv::Writer<W>, rec: &Record) -> SimResult<()> {
    let kind = match rec.kind {
        RecordKind::Vessel => "vessel",
        RecordKind::Node => "node",
    };
    let x = rec.x.map(|x| x.to_string()).unwrap_or_default();
    w.write_record([rec.t.to_string(), kind.to_string(), rec.id.clone(), x, rec.quantity.to_string(), rec.value.to_string()])
        .map_err(io_err)
}

/// Writes a complete set of records, header first.
pub fn write_records<W: Write>(out: W, records: &[Record]) -> SimResult<W> {
    let mut sink = CsvSink::new(out)?;
    for r in records {
        sink.record(r)?;
    }
    sink.into_inner()
}

fn vessel_value(net: &Network, state: &NetworkState, vessel: &VesselId, j: usize, q: VesselQuantity) -> SimResult<f64> {
    let field = &state.vessels[vessel];
    let st = field.state(j);
    let v = net.vessel(vessel)?;
    let area = || raw_coefficients(v, v.grid_x(j), st).map(|c| c.area);
    Ok(match q {
        VesselQuantity::P => st.p,
        VesselQuantity::Q => st.q,
        VesselQuantity::A => area()?,
        VesselQuantity::R => (area()? / std::f64::consts::PI).sqrt(),
        VesselQuantity::V => st.q / area()?,
    })
}

/// Records for every probe at the state's time, in declaration order and
/// quantity order within a probe.
pub fn probe_records(net: &Network, state: &NetworkState, probes: &[Probe]) -> SimResult<Vec<Record>> {
    let mut out = Vec::new();
    for probe in probes {
        match probe {
            Probe::Vessel { vessel, at, quantities } => {
                let n = net.vessel(vessel)?.n_cells;
                let j = match at {
                    ProbeLocation::XIndex(j) => *j,
                    ProbeLocation::XFraction(f) => (f * n as f64).round() as usize,
                };
                for q in quantities {
                    out.push(Record {
                        t: state.t,
                        kind: RecordKind::Vessel,
                        id: vessel.0.clone(),
                        x: Some(j as f64 / n as f64),
                        quantity: q.name(),
                        value: vessel_value(net, state, vessel, j, *q)?,
                    });
                }
            }
            Probe::Node { node, quantities } => {
                for q in quantities {
                    let value = match q {
                        NodeQuantity::PJunc => state.junction_pressure.get(node).copied(),
                        NodeQuantity::PC1 => state.transitional.get(node).map(|s| s.p_c1),
                        NodeQuantity::PC2 => state.transitional.get(node).map(|s| s.p_c2),
                        NodeQuantity::QC => match (&net.node(node)?.kind, state.transitional.get(node)) {
                            (NodeKind::Transitional(p), Some(s)) => Some(capillary_flow(p, *s)),
                            _ => None,
                        },
                    };
                    out.push(Record {
                        t: state.t,
                        kind: RecordKind::Node,
                        id: node.0.clone(),
                        x: None,
                        quantity: q.name(),
                        value: value.unwrap_or(f64::NAN),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Full-field records: P and Q at every grid node of every vessel, then the
/// junction and lumped-node values.
pub fn snapshot_records(net: &Network, state: &NetworkState) -> SimResult<Vec<Record>> {
    let mut out = Vec::new();
    for (id, field) in &state.vessels {
        let n = field.n_cells();
        for (quantity, values) in [("P", &field.p), ("Q", &field.q)] {
            for (j, value) in values.iter().enumerate() {
                out.push(Record {
                    t: state.t,
                    kind: RecordKind::Vessel,
                    id: id.0.clone(),
                    x: Some(j as f64 / n as f64),
                    quantity,
                    value: *value,
                });
            }
        }
    }
    let node_probes: Vec<Probe> = net
        .nodes
        .iter()
        .filter_map(|(id, node)| {
            let quantities = match node.kind {
                NodeKind::Branching { .. } => vec![NodeQuantity::PJunc],
                NodeKind::Transitional(_) => vec![NodeQuantity::PC1, NodeQuantity::PC2, NodeQuantity::QC],
                _ => return None,
            };
            Some(Probe::Node { node: id.clone(), quantities })
        })
        .collect();
    out.extend(probe_records(net, state, &node_probes)?);
    Ok(out)
}
