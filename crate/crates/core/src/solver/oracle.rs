//! Exhaustive grid search over per-step power levels. Only usable on tiny
//! horizons; it exists to cross-check [`super::solve`].

use crate::domain::DispatchSchedule;
use crate::error::{Error, Result};
use crate::model::{objective_value, ProblemInstance, TerminalCondition};

use super::{finish, SolveReport, Termination};

/// Hard cap on `levels^(2T)`.
pub const ENUMERATION_BUDGET: f64 = 1e8;

/// Power grid spacing `P_max / (levels - 1)`.
pub fn grid_step(inst: &ProblemInstance, levels: usize) -> f64 {
    inst.upper_bound() / (levels - 1) as f64
}

/// Half of the smallest non-zero SoC move one grid step of either variable
/// produces; the oracle's feasibility tolerance.
pub fn soc_tolerance(inst: &ProblemInstance, levels: usize) -> f64 {
    let (gain, drain) = inst.dynamics();
    0.5 * gain.min(drain) * grid_step(inst, levels)
}

/// Upper bound on `oracle - continuous optimum`.
///
/// With lossless efficiencies, no grid limit, and `SoC_0`, `SoC_end` and 1
/// all multiples of the SoC grid step, the constraint matrix is totally
/// unimodular in grid units, so some feasible grid point lies within one grid
/// step of the continuous optimum in every coordinate. The bound is then
/// `h * sum_i sup |df/dx_i|` over the power box.
pub fn grid_gap_bound(inst: &ProblemInstance, levels: usize) -> f64 {
    let h = grid_step(inst, levels);
    let (gain, drain) = inst.dynamics();
    let tau = inst.step_hours();
    let p = inst.upper_bound();
    let s_max = (gain + drain) * p;
    let dphi = inst.weight * inst.penalty.derivative(s_max);
    inst.day
        .prices
        .values()
        .iter()
        .map(|price| {
            let lin = price.abs() * tau;
            (lin + dphi * gain) + (lin + dphi * drain)
        })
        .sum::<f64>()
        * h
}

struct Search<'a> {
    inst: &'a ProblemInstance,
    levels: usize,
    h: f64,
    tol: f64,
    gain: f64,
    drain: f64,
    charge: Vec<f64>,
    discharge: Vec<f64>,
    best: Option<(f64, Vec<f64>, Vec<f64>)>,
    leaves: usize,
}

impl Search<'_> {
    fn step_cost(&self, t: usize, c: f64, d: f64) -> f64 {
        let day = &self.inst.day;
        let tau = self.inst.step_hours();
        let energy = (c - d + day.load.values()[t]) * day.prices.values()[t] * tau;
        let pen = if self.inst.weight == 0.0 {
            0.0
        } else {
            self.inst.weight * self.inst.penalty.value(self.gain * c + self.drain * d)
        };
        energy + pen
    }

    fn descend(&mut self, t: usize, soc: f64, cost: f64) {
        let t_len = self.inst.steps();
        if t == t_len {
            self.leaves += 1;
            let gap = (soc - self.inst.bat.soc_final).abs();
            let total = match self.inst.terminal {
                TerminalCondition::Hard => {
                    if gap > self.tol {
                        return;
                    }
                    cost
                }
                TerminalCondition::Soft { weight } => cost + weight * gap,
            };
            if self.best.as_ref().is_none_or(|(b, _, _)| total < *b) {
                self.best = Some((total, self.charge.clone(), self.discharge.clone()));
            }
            return;
        }
        let dem = self.inst.day.load.values()[t];
        for ic in 0..self.levels {
            let c = ic as f64 * self.h;
            for id in 0..self.levels {
                let d = id as f64 * self.h;
                let next = soc + self.gain * c - self.drain * d;
                if next < -self.tol || next > 1.0 + self.tol {
                    continue;
                }
                if let Some(lim) = self.inst.bat.grid_limit_mw {
                    if (c - d + dem).abs() > lim + self.tol {
                        continue;
                    }
                }
                self.charge[t] = c;
                self.discharge[t] = d;
                let step = self.step_cost(t, c, d);
                self.descend(t + 1, next, cost + step);
            }
        }
    }
}

/// Best schedule on the power grid `{0, h, ..., P_max}` per variable.
///
/// Points whose SoC path leaves the box (or misses a hard terminal target)
/// by more than [`soc_tolerance`] are discarded; branches are pruned as soon
/// as the SoC leaves the box, which does not change the result.
pub fn oracle_solve(inst: &ProblemInstance, levels: usize) -> Result<SolveReport> {
    if levels < 2 {
        return Err(Error::input("oracle needs at least 2 levels per variable"));
    }
    let count = (levels as f64).powi(2 * inst.steps() as i32);
    if count > ENUMERATION_BUDGET {
        return Err(Error::input(format!(
            "oracle would enumerate {count:.3e} points, budget is {ENUMERATION_BUDGET:.0e}"
        )));
    }
    let (gain, drain) = inst.dynamics();
    let t_len = inst.steps();
    let mut search = Search {
        inst,
        levels,
        h: grid_step(inst, levels),
        tol: soc_tolerance(inst, levels),
        gain,
        drain,
        charge: vec![0.0; t_len],
        discharge: vec![0.0; t_len],
        best: None,
        leaves: 0,
    };
    search.descend(0, inst.bat.soc_initial, 0.0);
    let leaves = search.leaves;
    Ok(match search.best {
        Some((_, c, d)) => {
            let schedule = DispatchSchedule::new(c, d)?;
            let mut report = finish(inst, schedule, leaves, Termination::Converged, 0.0, None);
            report.objective = objective_value(&report.schedule.to_flat(), inst);
            report
        }
        None => finish(
            inst,
            DispatchSchedule::idle(t_len),
            leaves,
            Termination::Infeasible,
            f64::INFINITY,
            None,
        ),
    })
}
