//! After-the-fact check of a schedule: feasibility, per-step PLET loss and
//! a rainflow cycle count for comparison.

use serde::{Deserialize, Serialize};

use crate::degradation::{
    plet_accumulated_loss, rainflow_cycles_with, rainflow_equivalent_loss, CycleRecord,
    ResidualPolicy,
};
use crate::domain::{
    grid_limit_violations, soc_trajectory, validate_feasibility, BatteryParams, CostBreakdown,
    DispatchSchedule, Violation,
};
use crate::error::{Error, Result};
use crate::model::{cost_breakdown, DayInputs};
use crate::solver::SIMULTANEITY_FRACTION;

/// Constraint breaches below this are not reported.
pub const AUDIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub steps: usize,
    pub soc: Vec<f64>,
    pub violations: Vec<Violation>,
    pub per_step_loss: Vec<f64>,
    pub plet_loss: f64,
    /// Closed cycles plus half cycles for the residual.
    pub rainflow_cycles: Vec<CycleRecord>,
    pub rainflow_equivalent_loss: f64,
    /// Same count with the residual closed as if the day repeated.
    pub rainflow_closed_loss: f64,
    pub simultaneity_flags: Vec<usize>,
    pub breakdown: CostBreakdown,
}

pub fn audit(schedule: &DispatchSchedule, day: &DayInputs, bat: &BatteryParams) -> Result<AuditReport> {
    if schedule.len() != day.steps() {
        return Err(Error::input(format!(
            "schedule has {} steps but the day has {}",
            schedule.len(),
            day.steps()
        )));
    }
    let traj = soc_trajectory(schedule, bat, &day.grid)?;
    let mut violations = validate_feasibility(schedule, bat, &day.grid, AUDIT_TOLERANCE)?;
    if let Some(limit) = bat.grid_limit_mw {
        violations.extend(grid_limit_violations(schedule, &day.load, limit, AUDIT_TOLERANCE)?);
    }
    let ledger = plet_accumulated_loss(&traj, bat);
    let cycles = rainflow_cycles_with(&traj, ResidualPolicy::HalfCycles);
    let closed = rainflow_cycles_with(&traj, ResidualPolicy::CloseAsFullCycles);
    Ok(AuditReport {
        steps: schedule.len(),
        soc: traj.values().to_vec(),
        violations,
        per_step_loss: ledger.per_step_loss,
        plet_loss: ledger.total_loss,
        rainflow_equivalent_loss: rainflow_equivalent_loss(&cycles, bat),
        rainflow_closed_loss: rainflow_equivalent_loss(&closed, bat),
        rainflow_cycles: cycles,
        simultaneity_flags: schedule.simultaneous_steps(SIMULTANEITY_FRACTION * bat.p_max_mw),
        breakdown: cost_breakdown(schedule, day, bat)?,
    })
}
