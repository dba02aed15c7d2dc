use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    /// `‖A x̂₀ − y‖₂` of the estimate used at this step.
    pub residual: f64,
    pub lambda: f64,
    pub phi: f64,
}

/// One record per executed sampler step, in execution order (t = T … 1).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GuidanceTrace {
    pub records: Vec<TraceRecord>,
}

impl GuidanceTrace {
    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with columns `t,residual,lambda_t,phi_t`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,residual,lambda_t,phi_t\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e}\n",
                r.t, r.residual, r.lambda, r.phi
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
