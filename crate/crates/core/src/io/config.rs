//! Flat JSON run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{BatteryParams, PenaltyMode};
use crate::error::{Error, Result};
use crate::model::{ProblemOptions, TerminalCondition};
use crate::rolling::{RollingOptions, DEFAULT_RELAXATION_WEIGHT};
use crate::solver::SolveOptions;

/// Every battery and solver setting of a run. Missing keys take the defaults
/// below; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub capacity_mwh: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub p_max_mw: f64,
    pub soc_initial: f64,
    pub soc_final: f64,
    pub c_life: f64,
    pub peukert_exponent: f64,
    pub a_k_dkk_per_kwh: f64,
    pub penalty_mode: PenaltyMode,
    pub grid_limit_mw: Option<f64>,
    /// Smoothing of the penalty at zero throughput.
    pub epsilon: f64,
    pub tol_feasibility: f64,
    pub tol_optimality: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Soft terminal weight used by rolling runs, DKK per unit SoC.
    pub relaxation_weight: f64,
    pub prices: Option<PathBuf>,
    pub load: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solve = SolveOptions::default();
        Self {
            capacity_mwh: 2.0,
            eta_charge: 0.95,
            eta_discharge: 0.95,
            p_max_mw: 1.0,
            soc_initial: 0.5,
            soc_final: 0.5,
            c_life: 12500.0,
            peukert_exponent: 1.15,
            a_k_dkk_per_kwh: 0.0,
            penalty_mode: PenaltyMode::Capacity,
            grid_limit_mw: None,
            epsilon: 0.0,
            tol_feasibility: solve.tol_feasibility,
            tol_optimality: solve.tol_optimality,
            max_iterations: solve.max_iterations,
            seed: solve.seed,
            relaxation_weight: DEFAULT_RELAXATION_WEIGHT,
            prices: None,
            load: None,
        }
    }
}

/// Battery defaults taken from the published case study; every other
/// default is an assumption of this tool.
const CASE_STUDY_DEFAULTS: [&str; 3] = ["p_max_mw", "c_life", "peukert_exponent"];

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.to_path_buf(),
                line: j.line(),
                message: j.to_string(),
            },
            other => other,
        })
    }

    pub fn battery(&self) -> BatteryParams {
        BatteryParams {
            capacity_mwh: self.capacity_mwh,
            eta_charge: self.eta_charge,
            eta_discharge: self.eta_discharge,
            p_max_mw: self.p_max_mw,
            soc_initial: self.soc_initial,
            soc_final: self.soc_final,
            c_life: self.c_life,
            peukert_exponent: self.peukert_exponent,
            a_k_dkk_per_kwh: self.a_k_dkk_per_kwh,
            penalty_mode: self.penalty_mode,
            grid_limit_mw: self.grid_limit_mw,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol_feasibility: self.tol_feasibility,
            tol_optimality: self.tol_optimality,
            max_iterations: self.max_iterations,
            seed: self.seed,
        }
    }

    pub fn problem_options(&self) -> ProblemOptions {
        ProblemOptions {
            epsilon: self.epsilon,
            terminal: TerminalCondition::Hard,
        }
    }

    pub fn rolling_options(&self) -> RollingOptions {
        RollingOptions {
            solve: self.solve_options(),
            epsilon: self.epsilon,
            relaxation_weight: self.relaxation_weight,
        }
    }

    /// Where each battery value comes from: `"case_study"` for the published
    /// constants left at their defaults, `"assumed"` for other defaults and
    /// `"user"` for values that differ from the default.
    pub fn provenance(&self) -> BTreeMap<String, &'static str> {
        let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
        let current = serde_json::to_value(self).expect("config serializes");
        let battery_keys = [
            "capacity_mwh",
            "eta_charge",
            "eta_discharge",
            "p_max_mw",
            "soc_initial",
            "soc_final",
            "c_life",
            "peukert_exponent",
            "a_k_dkk_per_kwh",
            "penalty_mode",
            "grid_limit_mw",
        ];
        battery_keys
            .iter()
            .map(|&k| {
                let label = if current[k] != defaults[k] {
                    "user"
                } else if CASE_STUDY_DEFAULTS.contains(&k) {
                    "case_study"
                } else {
                    "assumed"
                };
                (k.to_string(), label)
            })
            .collect()
    }
}
