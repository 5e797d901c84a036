//! Tuning for a workload that is known exactly.

use serde::{Deserialize, Serialize};

use crate::cost::{cost_vector, workload_cost};
use crate::error::Result;
use crate::params::{CostVector, SystemParams, Tuning, Workload};
use crate::search::{minimize, Diagnostics, SearchOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub tuning: Tuning,
    /// Expected I/O per query at `tuning`.
    pub objective: f64,
    pub costs: CostVector,
    pub diagnostics: Diagnostics,
}

/// Minimizes the expected cost of `wkl` over size ratio, filter memory and policy.
pub fn tune_nominal(sys: &SystemParams, wkl: &Workload) -> Result<TuningResult> {
    tune_nominal_with(sys, wkl, &SearchOptions::default())
}

pub fn tune_nominal_with(sys: &SystemParams, wkl: &Workload, opts: &SearchOptions) -> Result<TuningResult> {
    let out = minimize(sys, opts, |c| wkl.dot(c))?;
    Ok(TuningResult {
        tuning: out.tuning,
        objective: workload_cost(wkl, sys, &out.tuning)?,
        costs: cost_vector(sys, &out.tuning)?,
        diagnostics: out.diagnostics,
    })
}
