//! Machine-readable comparison records.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::TcurError;

/// Fine-tuning method in a comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Unconstrained weight update.
    Full,
    /// Per-slice matrix CUR adapters.
    MatrixCur,
    /// Tensor CUR adapter.
    Tcur,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::MatrixCur => "matrix_cur",
            Method::Tcur => "tcur",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = TcurError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Method::Full),
            "matrix_cur" => Ok(Method::MatrixCur),
            "tcur" => Ok(Method::Tcur),
            other => Err(TcurError::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// One row of a method comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRecord {
    pub method: Method,
    pub params: usize,
    pub final_loss: f64,
    /// `||W_eff - target||_F / ||target||_F`
    pub rel_error: f64,
    pub wall_ms: f64,
    pub rank: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

/// Records for every method fitted to one synthetic task.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub plant_mode: String,
    pub steps_run: usize,
    pub records: Vec<ReportRecord>,
}

impl ComparisonReport {
    pub fn record(&self, method: Method) -> Option<&ReportRecord> {
        self.records.iter().find(|r| r.method == method)
    }

    /// Zeroes the timing fields so reports from equal seeds compare equal.
    pub fn without_timing(mut self) -> Self {
        for r in &mut self.records {
            r.wall_ms = 0.0;
        }
        self
    }
}
