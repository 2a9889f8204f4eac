use serde::{Deserialize, Serialize};

/// Time-dependent boundary value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundarySignal {
    Constant { value: f64 },
    /// Piecewise linear through the points, held constant outside their range.
    Table { points: TablePoints },
    /// `mean + amplitude * sin(2 pi frequency t + phase)`.
    Sine { mean: f64, amplitude: f64, frequency: f64, phase: f64 },
}

/// At least two `(t, value)` pairs with strictly increasing `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct TablePoints(Vec<(f64, f64)>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("table needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("table times must be strictly increasing (point {index})")]
    NotIncreasing { index: usize },
    #[error("table contains a non-finite entry (point {index})")]
    NonFinite { index: usize },
}

impl TablePoints {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, TableError> {
        if points.len() < 2 {
            return Err(TableError::TooShort(points.len()));
        }
        for (i, (t, v)) in points.iter().enumerate() {
            if !t.is_finite() || !v.is_finite() {
                return Err(TableError::NonFinite { index: i });
            }
        }
        for i in 1..points.len() {
            if !(points[i].0 > points[i - 1].0) {
                return Err(TableError::NotIncreasing { index: i });
            }
        }
        Ok(TablePoints(points))
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn eval(&self, t: f64) -> f64 {
        let pts = &self.0;
        let (t0, v0) = pts[0];
        let (tn, vn) = pts[pts.len() - 1];
        if t <= t0 {
            return v0;
        }
        if t >= tn {
            return vn;
        }
        let k = pts.partition_point(|p| p.0 <= t);
        let (ta, va) = pts[k - 1];
        let (tb, vb) = pts[k];
        va + (t - ta) / (tb - ta) * (vb - va)
    }
}

impl TryFrom<Vec<(f64, f64)>> for TablePoints {
    type Error = TableError;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        TablePoints::new(v)
    }
}

impl From<TablePoints> for Vec<(f64, f64)> {
    fn from(t: TablePoints) -> Self {
        t.0
    }
}

impl BoundarySignal {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            BoundarySignal::Constant { value } => *value,
            BoundarySignal::Table { points } => points.eval(t),
            BoundarySignal::Sine { mean, amplitude, frequency, phase } => {
                mean + amplitude * (2.0 * std::f64::consts::PI * frequency * t + phase).sin()
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            BoundarySignal::Constant { value } => value.is_finite(),
            BoundarySignal::Table { .. } => true,
            BoundarySignal::Sine { mean, amplitude, frequency, phase } => {
                [mean, amplitude, frequency, phase].iter().all(|v| v.is_finite())
            }
        }
    }
}

/// Parses a signal from its JSON form.
pub fn parse_signal(text: &str) -> Result<BoundarySignal, serde_json::Error> {
    serde_json::from_str(text)
}
