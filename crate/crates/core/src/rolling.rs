//! Shrinking-horizon re-solving: at every step the remaining day is solved
//! from the realized SoC and only the first action is committed.

use serde::{Deserialize, Serialize};

use crate::domain::{
    soc_trajectory, BatteryParams, CostBreakdown, DispatchSchedule, LoadProfile, PriceSeries,
    SocTrajectory, TimeGrid,
};
use crate::error::{Error, Result};
use crate::model::{build_problem, cost_breakdown, DayInputs, ProblemOptions, TerminalCondition};
use crate::solver::{check_reachability, solve, SolveOptions, SolveReport, Termination};

/// Terminal relaxation weight used when the hard target becomes unreachable,
/// DKK per unit of SoC deviation.
pub const DEFAULT_RELAXATION_WEIGHT: f64 = 1e6;

/// Supplies the forecast the plan at step `t` is built on.
pub trait ForecastProvider {
    /// Prices and loads for steps `t..T`.
    fn forecast(&self, t: usize) -> Result<(PriceSeries, LoadProfile)>;
}

impl<F> ForecastProvider for F
where
    F: Fn(usize) -> Result<(PriceSeries, LoadProfile)>,
{
    fn forecast(&self, t: usize) -> Result<(PriceSeries, LoadProfile)> {
        self(t)
    }
}

/// Forecasts that always equal the realized day.
#[derive(Debug, Clone, Copy)]
pub struct StaticForecast<'a>(pub &'a DayInputs);

impl ForecastProvider for StaticForecast<'_> {
    fn forecast(&self, t: usize) -> Result<(PriceSeries, LoadProfile)> {
        let tail = self.0.tail(t)?;
        Ok((tail.prices, tail.load))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingOptions {
    pub solve: SolveOptions,
    pub epsilon: f64,
    pub relaxation_weight: f64,
}

impl Default for RollingOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            epsilon: 0.0,
            relaxation_weight: DEFAULT_RELAXATION_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingResult {
    pub schedule: DispatchSchedule,
    pub trajectory: SocTrajectory,
    /// The plan solved at each step; `reports[t].schedule` covers `t..T`.
    pub reports: Vec<SolveReport>,
    /// Realized costs against realized prices and load.
    pub breakdown: CostBreakdown,
    /// Steps whose plan needed the soft terminal condition.
    pub relaxed_steps: Vec<usize>,
}

pub fn roll(
    day: &DayInputs,
    bat: &BatteryParams,
    forecasts: &dyn ForecastProvider,
    opts: &RollingOptions,
) -> Result<RollingResult> {
    let t_len = day.steps();
    let tau = day.grid.step_hours();
    let hard = ProblemOptions {
        epsilon: opts.epsilon,
        terminal: TerminalCondition::Hard,
    };
    let soft = ProblemOptions {
        epsilon: opts.epsilon,
        terminal: TerminalCondition::Soft {
            weight: opts.relaxation_weight,
        },
    };
    if let Some(cert) = check_reachability(&build_problem(day, bat, &hard)?) {
        return Err(Error::input(format!(
            "terminal SoC unreachable from the start: needs {:+} but at most {:+} is possible",
            cert.required_soc_change, cert.max_achievable_soc_change
        )));
    }

    let mut charge = Vec::with_capacity(t_len);
    let mut discharge = Vec::with_capacity(t_len);
    let mut reports = Vec::with_capacity(t_len);
    let mut relaxed_steps = Vec::new();
    let mut soc = bat.soc_initial;
    let gain = bat.charge_gain(tau);
    let drain = bat.discharge_drain(tau);

    for t in 0..t_len {
        let (prices, load) = forecasts.forecast(t)?;
        if prices.len() != t_len - t || load.len() != t_len - t {
            return Err(Error::input(format!(
                "forecast at step {t} covers {} prices and {} loads, expected {}",
                prices.len(),
                load.len(),
                t_len - t
            )));
        }
        let horizon = DayInputs::new(TimeGrid::new(t_len - t, tau)?, prices, load)?;
        let mut state = bat.clone();
        state.soc_initial = soc.clamp(0.0, 1.0);

        let mut report = solve(&build_problem(&horizon, &state, &hard)?, &opts.solve);
        if report.termination == Termination::Infeasible {
            log::info!("step {t}: terminal SoC unreachable, relaxing");
            relaxed_steps.push(t);
            report = solve(&build_problem(&horizon, &state, &soft)?, &opts.solve);
        }
        if report.termination != Termination::Converged {
            log::warn!("step {t}: plan terminated with {:?}", report.termination);
        }
        let c = report.schedule.charge_mw[0];
        let d = report.schedule.discharge_mw[0];
        soc += gain * c - drain * d;
        charge.push(c);
        discharge.push(d);
        reports.push(report);
    }

    let schedule = DispatchSchedule::new(charge, discharge)?;
    let trajectory = soc_trajectory(&schedule, bat, &day.grid)?;
    let breakdown = cost_breakdown(&schedule, day, bat)?;
    Ok(RollingResult {
        schedule,
        trajectory,
        reports,
        breakdown,
        relaxed_steps,
    })
}
