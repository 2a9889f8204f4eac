use crate::network::{NodeId, VesselId};

pub type SimResult<T> = Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("radius {radius} outside tube law range [{min}, {max}]")]
    RadiusOutOfRange { radius: f64, min: f64, max: f64 },
    #[error("pressure {pressure} outside tube law range [{min}, {max}]")]
    PressureOutOfRange { pressure: f64, min: f64, max: f64 },
    #[error("radius inversion did not converge for pressure {pressure}")]
    InversionFailed { pressure: f64 },
    #[error("vessel {vessel}: area {area} below floor {floor} at x={x}")]
    CollapsedVessel { vessel: VesselId, x: f64, area: f64, floor: f64 },
    #[error("vessel {vessel}: non-positive wave coefficient a={a} at x={x}")]
    NonPositiveStiffness { vessel: VesselId, x: f64, a: f64 },
    #[error("hyperbolicity lost: c^2 + ab = {discriminant}")]
    HyperbolicityViolation { discriminant: f64 },
    #[error("vessel {vessel}: CFL violated, |lambda| dt n = {courant} > {cfl_max}")]
    CflViolation { vessel: VesselId, courant: f64, cfl_max: f64 },
    #[error("node {node}: junction matrix singular (condition estimate {condition:e})")]
    SingularJunction { node: NodeId, condition: f64 },
    #[error("node {node}: vessel {vessel} end has no resolved outgoing characteristic")]
    UnresolvedCharacteristic { node: NodeId, vessel: VesselId },
    #[error("node {node}: {message}")]
    DegenerateBoundary { node: NodeId, message: String },
    #[error("fixed-point iteration did not converge in {iterations} iterations (last deviation {deviation:e}); reduce dt")]
    PicardDivergence { iterations: usize, deviation: f64 },
    #[error("time step fell below floor {dt_min:e} at t={t}: {cause}")]
    StepSizeFloor { t: f64, dt_min: f64, cause: Box<SimError> },
    #[error("well-posedness check failed at t={t}: {summary}")]
    IllPosed { t: f64, summary: String },
    #[error("network invalid: {0}")]
    InvalidNetwork(String),
    #[error("initial data: {0}")]
    InvalidInitial(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown vessel {0}")]
    UnknownVessel(VesselId),
    #[error("output: {0}")]
    Output(String),
}

impl SimError {
    /// True for errors that stem from violated solvability conditions rather
    /// than numerical trouble.
    pub fn is_condition_failure(&self) -> bool {
        matches!(
            self,
            SimError::IllPosed { .. } | SimError::HyperbolicityViolation { .. }
        )
    }
}
