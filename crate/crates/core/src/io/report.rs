//! Run summaries and the metadata block echoed with every output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::CostBreakdown;
use crate::solver::{InfeasibilityCertificate, SolveReport, Termination};

use super::config::RunConfig;

pub const TOOL_NAME: &str = "fcsd";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 over every input, in order, each prefixed by its label.
    pub inputs_digest: String,
    pub config: RunConfig,
    pub provenance: BTreeMap<String, String>,
}

impl Metadata {
    pub fn new(command: &str, inputs: &[(&str, &[u8])], config: &RunConfig) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            inputs_digest: inputs_digest(inputs),
            config: config.clone(),
            provenance: config
                .provenance()
                .into_iter()
                .map(|(k, v)| (k, v.to_string()))
                .collect(),
        }
    }
}

pub fn inputs_digest(inputs: &[(&str, &[u8])]) -> String {
    let mut h = Sha256::new();
    for (label, bytes) in inputs {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

/// Cost breakdown plus solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(flatten)]
    pub breakdown: CostBreakdown,
    /// Energy cost plus the surrogate penalty the solver minimized.
    pub objective: f64,
    pub surrogate_penalty: f64,
    pub termination: Termination,
    pub iterations: usize,
    pub feasibility_residual: f64,
    pub optimality_residual: f64,
    pub simultaneity_flags: Vec<usize>,
    pub certificate: Option<InfeasibilityCertificate>,
    /// Rolling runs only: steps whose plan used the relaxed terminal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relaxed_steps: Option<Vec<usize>>,
}

impl Summary {
    pub fn from_report(report: &SolveReport, breakdown: CostBreakdown, surrogate_penalty: f64) -> Self {
        Self {
            breakdown,
            objective: report.objective,
            surrogate_penalty,
            termination: report.termination,
            iterations: report.iterations,
            feasibility_residual: report.feasibility_residual,
            optimality_residual: report.optimality_residual,
            simultaneity_flags: report.simultaneity_flags.clone(),
            certificate: report.certificate,
            relaxed_steps: None,
        }
    }
}
