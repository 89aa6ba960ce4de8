//! Core data types for one scheduling day and the deterministic
//! derivations every other module builds on: the state-of-charge recursion,
//! the net grid exchange, and constraint checking.
//!
//! Units are canonical throughout: MW, MWh, hours, DKK/MWh. The penalty
//! weight `a_k` is carried in DKK/kWh as configured and converted only where
//! the objective is assembled.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete time grid of `steps` intervals, each `step_hours` long.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    steps: usize,
    step_hours: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, step_hours: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::input("time grid needs at least one step"));
        }
        if !(step_hours.is_finite() && step_hours > 0.0) {
            return Err(Error::input(format!(
                "step length must be positive, got {step_hours} h"
            )));
        }
        Ok(Self { steps, step_hours })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_hours(&self) -> f64 {
        self.step_hours
    }
}

/// Day-ahead spot prices in DKK/MWh, one per step. Negative prices are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries(Vec<f64>);

impl PriceSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::input(format!("price at step {i} is not finite: {v}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Station demand in MW, one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile(Vec<f64>);

impl LoadProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::input(format!(
                "load at step {i} must be finite and non-negative, got {v}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How the configured `a_k` (DKK/kWh) becomes the weight on the
/// dimensionless capacity-loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    /// `W = a_k * 1000 * C_bat`: DKK per unit of capacity fraction lost,
    /// i.e. the replacement value of the lost kWh.
    #[default]
    Capacity,
    /// `W = a_k`, applied to the loss fraction as is.
    Paper,
}

/// Physical and economic constants of the station battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    pub capacity_mwh: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub p_max_mw: f64,
    pub soc_initial: f64,
    pub soc_final: f64,
    /// Lifetime throughput constant of the PLET model.
    pub c_life: f64,
    /// Peukert lifetime exponent.
    pub peukert_exponent: f64,
    /// Degradation penalty coefficient in DKK/kWh.
    pub a_k_dkk_per_kwh: f64,
    pub penalty_mode: PenaltyMode,
    /// Optional bound on |P_in - P_out| at the connection point.
    pub grid_limit_mw: Option<f64>,
}

impl BatteryParams {
    /// Checks every invariant. Returns the list of soft warnings on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::input(format!("{name} must be positive, got {v}")))
            }
        }
        fn unit(name: &str, v: f64, open_low: bool) -> Result<()> {
            let ok = v.is_finite() && v <= 1.0 && if open_low { v > 0.0 } else { v >= 0.0 };
            if ok {
                Ok(())
            } else {
                let lo = if open_low { "(0" } else { "[0" };
                Err(Error::input(format!("{name} must lie in {lo}, 1], got {v}")))
            }
        }

        positive("battery capacity", self.capacity_mwh)?;
        positive("power limit", self.p_max_mw)?;
        positive("lifetime throughput constant", self.c_life)?;
        unit("charge efficiency", self.eta_charge, true)?;
        unit("discharge efficiency", self.eta_discharge, true)?;
        unit("initial SoC", self.soc_initial, false)?;
        unit("final SoC", self.soc_final, false)?;
        if !(self.peukert_exponent.is_finite() && self.peukert_exponent >= 1.0) {
            return Err(Error::input(format!(
                "Peukert exponent must be >= 1, got {}",
                self.peukert_exponent
            )));
        }
        if !(self.a_k_dkk_per_kwh.is_finite() && self.a_k_dkk_per_kwh >= 0.0) {
            return Err(Error::input(format!(
                "penalty coefficient must be non-negative, got {}",
                self.a_k_dkk_per_kwh
            )));
        }
        if let Some(limit) = self.grid_limit_mw {
            positive("grid limit", limit)?;
        }

        let mut warnings = Vec::new();
        if !(1.1..=1.3).contains(&self.peukert_exponent) {
            let msg = format!(
                "Peukert exponent {} is outside the usual range [1.1, 1.3]",
                self.peukert_exponent
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok(warnings)
    }

    /// Weight `W` applied to the capacity-loss fraction, in DKK.
    pub fn penalty_weight(&self) -> f64 {
        match self.penalty_mode {
            PenaltyMode::Capacity => self.a_k_dkk_per_kwh * 1000.0 * self.capacity_mwh,
            PenaltyMode::Paper => self.a_k_dkk_per_kwh,
        }
    }

    /// SoC gained per MW of charging over one step.
    pub fn charge_gain(&self, step_hours: f64) -> f64 {
        step_hours * self.eta_charge / self.capacity_mwh
    }

    /// SoC lost per MW of discharging over one step.
    pub fn discharge_drain(&self, step_hours: f64) -> f64 {
        step_hours / (self.eta_discharge * self.capacity_mwh)
    }
}

/// Per-step charge and discharge powers, both in MW and non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSchedule {
    pub charge_mw: Vec<f64>,
    pub discharge_mw: Vec<f64>,
}

impl DispatchSchedule {
    pub fn new(charge_mw: Vec<f64>, discharge_mw: Vec<f64>) -> Result<Self> {
        if charge_mw.len() != discharge_mw.len() {
            return Err(Error::input(format!(
                "charge ({}) and discharge ({}) lengths differ",
                charge_mw.len(),
                discharge_mw.len()
            )));
        }
        Ok(Self {
            charge_mw,
            discharge_mw,
        })
    }

    pub fn idle(steps: usize) -> Self {
        Self {
            charge_mw: vec![0.0; steps],
            discharge_mw: vec![0.0; steps],
        }
    }

    /// Splits a flattened `[charge.., discharge..]` vector.
    pub fn from_flat(x: &[f64]) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(Error::input("flattened schedule must have even length"));
        }
        let (c, d) = x.split_at(x.len() / 2);
        Ok(Self {
            charge_mw: c.to_vec(),
            discharge_mw: d.to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut x = self.charge_mw.clone();
        x.extend_from_slice(&self.discharge_mw);
        x
    }

    pub fn len(&self) -> usize {
        self.charge_mw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charge_mw.is_empty()
    }

    /// Steps where charging and discharging overlap by more than `threshold` MW.
    pub fn simultaneous_steps(&self, threshold: f64) -> Vec<usize> {
        self.charge_mw
            .iter()
            .zip(&self.discharge_mw)
            .enumerate()
            .filter(|(_, (c, d))| c.min(**d) > threshold)
            .map(|(t, _)| t)
            .collect()
    }
}

/// SoC path of length `T + 1`; entry 0 is the initial SoC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocTrajectory(pub Vec<f64>);

impl SocTrajectory {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.0.last().expect("trajectory always holds the initial SoC")
    }

    /// Per-step changes `soc[t+1] - soc[t]`.
    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.windows(2).map(|w| w[1] - w[0])
    }
}

/// Power drawn from (`import_mw`) and fed into (`export_mw`) the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridExchange {
    pub import_mw: Vec<f64>,
    pub export_mw: Vec<f64>,
}

impl GridExchange {
    pub fn net(&self) -> impl Iterator<Item = f64> + '_ {
        self.import_mw.iter().zip(&self.export_mw).map(|(i, o)| i - o)
    }
}

/// Decomposition of the daily cost of a schedule, all in DKK except
/// `plet_loss` which is a capacity fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub energy_cost: f64,
    pub baseline_cost: f64,
    pub arbitrage_revenue: f64,
    pub plet_loss: f64,
    pub degradation_cost: f64,
    pub total_objective: f64,
}

pub fn soc_trajectory(
    schedule: &DispatchSchedule,
    bat: &BatteryParams,
    grid: &TimeGrid,
) -> Result<SocTrajectory> {
    if schedule.len() != grid.steps() {
        return Err(Error::input(format!(
            "schedule has {} steps, grid has {}",
            schedule.len(),
            grid.steps()
        )));
    }
    let gain = bat.charge_gain(grid.step_hours());
    let drain = bat.discharge_drain(grid.step_hours());
    let mut soc = Vec::with_capacity(grid.steps() + 1);
    let mut level = bat.soc_initial;
    soc.push(level);
    for (c, d) in schedule.charge_mw.iter().zip(&schedule.discharge_mw) {
        level += gain * c - drain * d;
        soc.push(level);
    }
    Ok(SocTrajectory(soc))
}

pub fn grid_exchange(schedule: &DispatchSchedule, load: &LoadProfile) -> Result<GridExchange> {
    if schedule.len() != load.len() {
        return Err(Error::input(format!(
            "schedule has {} steps, load has {}",
            schedule.len(),
            load.len()
        )));
    }
    let (import_mw, export_mw) = schedule
        .charge_mw
        .iter()
        .zip(&schedule.discharge_mw)
        .zip(load.values())
        .map(|((c, d), dem)| {
            let g = c - d + dem;
            (g.max(0.0), (-g).max(0.0))
        })
        .unzip();
    Ok(GridExchange {
        import_mw,
        export_mw,
    })
}

/// Which constraint a [`Violation`] breaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    ChargePowerLimit,
    DischargePowerLimit,
    SocLowerBound,
    SocUpperBound,
    TerminalSoc,
    GridLimit,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintKind::ChargePowerLimit => "charge power limit",
            ConstraintKind::DischargePowerLimit => "discharge power limit",
            ConstraintKind::SocLowerBound => "SoC lower bound",
            ConstraintKind::SocUpperBound => "SoC upper bound",
            ConstraintKind::TerminalSoc => "terminal SoC",
            ConstraintKind::GridLimit => "grid connection limit",
        };
        f.write_str(s)
    }
}

/// A breached constraint. `step` indexes the schedule for power limits and the
/// trajectory for SoC bounds; `magnitude` is the distance past the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintKind,
    pub step: usize,
    pub magnitude: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at step {} by {:.3e}",
            self.constraint, self.step, self.magnitude
        )
    }
}

/// Lists every power, SoC box and terminal-SoC breach larger than `tol`.
///
/// Grid-limit checks need the load profile; see [`grid_limit_violations`].
pub fn validate_feasibility(
    schedule: &DispatchSchedule,
    bat: &BatteryParams,
    grid: &TimeGrid,
    tol: f64,
) -> Result<Vec<Violation>> {
    if !(tol >= 0.0) {
        return Err(Error::input(format!("tolerance must be >= 0, got {tol}")));
    }
    let traj = soc_trajectory(schedule, bat, grid)?;
    let mut out = Vec::new();
    let mut power = |kind, t, p: f64| {
        if p < -tol {
            out.push(Violation {
                constraint: kind,
                step: t,
                magnitude: -p,
            });
        } else if p > bat.p_max_mw + tol {
            out.push(Violation {
                constraint: kind,
                step: t,
                magnitude: p - bat.p_max_mw,
            });
        }
    };
    for (t, (&c, &d)) in schedule
        .charge_mw
        .iter()
        .zip(&schedule.discharge_mw)
        .enumerate()
    {
        power(ConstraintKind::ChargePowerLimit, t, c);
        power(ConstraintKind::DischargePowerLimit, t, d);
    }
    for (t, &s) in traj.values().iter().enumerate() {
        if s < -tol {
            out.push(Violation {
                constraint: ConstraintKind::SocLowerBound,
                step: t,
                magnitude: -s,
            });
        } else if s > 1.0 + tol {
            out.push(Violation {
                constraint: ConstraintKind::SocUpperBound,
                step: t,
                magnitude: s - 1.0,
            });
        }
    }
    let terminal_gap = (traj.last() - bat.soc_final).abs();
    if terminal_gap > tol {
        out.push(Violation {
            constraint: ConstraintKind::TerminalSoc,
            step: grid.steps(),
            magnitude: terminal_gap,
        });
    }
    Ok(out)
}

/// Steps where the net exchange exceeds `limit_mw` in either direction.
pub fn grid_limit_violations(
    schedule: &DispatchSchedule,
    load: &LoadProfile,
    limit_mw: f64,
    tol: f64,
) -> Result<Vec<Violation>> {
    let exchange = grid_exchange(schedule, load)?;
    Ok(exchange
        .net()
        .enumerate()
        .filter(|(_, g)| g.abs() > limit_mw + tol)
        .map(|(t, g)| Violation {
            constraint: ConstraintKind::GridLimit,
            step: t,
            magnitude: g.abs() - limit_mw,
        })
        .collect())
}
