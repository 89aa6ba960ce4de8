//! Peukert lifetime energy throughput (PLET) degradation and a rainflow
//! cycle audit.
//!
//! The PLET loss is what the optimizer penalizes. Rainflow counting has no
//! closed form, so it is only used after the fact to compare a schedule's
//! cycle-based wear against the per-step figure.

use serde::{Deserialize, Serialize};

use crate::domain::{BatteryParams, SocTrajectory};
use crate::error::{Error, Result};

/// Lifetime throughput `n * dod^k_p` for `n` cycles at depth `dod`.
pub fn plet_lifetime_throughput(n: f64, dod: f64, k_p: f64) -> Result<f64> {
    if !(n >= 0.0) {
        return Err(Error::input(format!("cycle count must be >= 0, got {n}")));
    }
    if !(0.0..=1.0).contains(&dod) {
        return Err(Error::input(format!("depth of discharge must lie in [0, 1], got {dod}")));
    }
    if !(k_p >= 1.0) {
        return Err(Error::input(format!("Peukert exponent must be >= 1, got {k_p}")));
    }
    Ok(n * dod.powf(k_p))
}

/// Capacity fraction lost to one step that moves the SoC by `delta_dod`.
pub fn plet_step_loss(delta_dod: f64, bat: &BatteryParams) -> Result<f64> {
    if !(delta_dod >= 0.0) {
        return Err(Error::input(format!(
            "SoC change must be non-negative, got {delta_dod}"
        )));
    }
    Ok(step_loss_unchecked(delta_dod, bat))
}

fn step_loss_unchecked(delta_dod: f64, bat: &BatteryParams) -> f64 {
    delta_dod.powf(bat.peukert_exponent) / bat.c_life
}

/// Per-step and total PLET capacity loss along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationLedger {
    pub per_step_loss: Vec<f64>,
    pub total_loss: f64,
}

pub fn plet_accumulated_loss(traj: &SocTrajectory, bat: &BatteryParams) -> DegradationLedger {
    let per_step_loss: Vec<f64> = traj
        .increments()
        .map(|d| step_loss_unchecked(d.abs(), bat))
        .collect();
    let total_loss = per_step_loss.iter().sum();
    DegradationLedger {
        per_step_loss,
        total_loss,
    }
}

/// One rainflow-counted cycle: `weight` is 1.0 for a closed cycle, 0.5 for a
/// half cycle left in the residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub depth: f64,
    pub weight: f64,
}

/// What to do with the unclosed residual after four-point counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualPolicy {
    /// Every residual range counts as a half cycle.
    #[default]
    HalfCycles,
    /// Treat the history as repeating: count the residual concatenated with
    /// itself and keep the closed cycles found in that pass.
    CloseAsFullCycles,
}

/// Turning points of a series, endpoints included. Plateaus collapse to one
/// point.
pub fn extrema(series: &[f64]) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::with_capacity(series.len());
    for &v in series {
        if pts.last() == Some(&v) {
            continue;
        }
        if pts.len() >= 2 {
            let a = pts[pts.len() - 2];
            let b = pts[pts.len() - 1];
            // b is not a turning point if a -> b -> v keeps direction
            if (b - a) * (v - b) > 0.0 {
                pts.pop();
            }
        }
        pts.push(v);
    }
    pts
}

/// Four-point rainflow pass. Returns closed cycle depths and the residual.
fn four_point(points: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut stack: Vec<f64> = Vec::with_capacity(points.len());
    let mut closed = Vec::new();
    for &p in points {
        stack.push(p);
        while stack.len() >= 4 {
            let n = stack.len();
            let (a, b, c, d) = (stack[n - 4], stack[n - 3], stack[n - 2], stack[n - 1]);
            let inner = (c - b).abs();
            if inner <= (b - a).abs() && inner <= (d - c).abs() {
                closed.push(inner);
                stack.drain(n - 3..n - 1);
            } else {
                break;
            }
        }
    }
    (closed, stack)
}

pub fn rainflow_cycles(traj: &SocTrajectory) -> Vec<CycleRecord> {
    rainflow_cycles_with(traj, ResidualPolicy::HalfCycles)
}

pub fn rainflow_cycles_with(traj: &SocTrajectory, policy: ResidualPolicy) -> Vec<CycleRecord> {
    let (closed, residual) = four_point(&extrema(traj.values()));
    let mut out: Vec<CycleRecord> = closed
        .into_iter()
        .map(|depth| CycleRecord { depth, weight: 1.0 })
        .collect();
    match policy {
        ResidualPolicy::HalfCycles => {
            out.extend(residual.windows(2).map(|w| CycleRecord {
                depth: (w[1] - w[0]).abs(),
                weight: 0.5,
            }));
        }
        ResidualPolicy::CloseAsFullCycles => {
            if residual.len() >= 2 {
                let mut doubled = residual.clone();
                doubled.extend_from_slice(&residual);
                let (wrapped, _) = four_point(&extrema(&doubled));
                out.extend(wrapped.into_iter().map(|depth| CycleRecord { depth, weight: 1.0 }));
            }
        }
    }
    out
}

/// Sum of `weight * depth^k_p / C_life` over the counted cycles.
pub fn rainflow_equivalent_loss(cycles: &[CycleRecord], bat: &BatteryParams) -> f64 {
    cycles
        .iter()
        .map(|c| c.weight * step_loss_unchecked(c.depth, bat))
        .sum()
}
