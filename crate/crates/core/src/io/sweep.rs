//! Penalty-weight sweeps: one independent solve per `a_k`, run in parallel.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{soc_trajectory, SocTrajectory};
use crate::error::{Error, Result};
use crate::model::{build_problem, cost_breakdown, DayInputs};
use crate::solver::{solve, Termination};

use super::config::RunConfig;

/// Environment variable capping the sweep's worker threads.
pub const THREADS_ENV: &str = "FCSD_THREADS";

/// SoC moves at or below this size do not count towards reversals.
pub const REVERSAL_DEADBAND: f64 = 1e-4;

pub const SWEEP_HEADER: [&str; 8] = [
    "a_k",
    "energy_cost",
    "arbitrage_revenue",
    "plet_loss",
    "surrogate_penalty",
    "objective",
    "soc_reversals",
    "status",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a_k: f64,
    pub energy_cost: f64,
    pub arbitrage_revenue: f64,
    pub plet_loss: f64,
    pub surrogate_penalty: f64,
    pub objective: f64,
    pub soc_reversals: usize,
    /// `converged`, `max_iter`, `infeasible`, or `error: ...`.
    pub status: String,
}

/// Sign changes of the SoC increments, ignoring moves within `deadband`.
pub fn soc_reversals(traj: &SocTrajectory, deadband: f64) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for d in traj.increments() {
        if d.abs() <= deadband {
            continue;
        }
        if last != 0.0 && d.signum() != last {
            count += 1;
        }
        last = d.signum();
    }
    count
}

fn status_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIter => "max_iter",
        Termination::Infeasible => "infeasible",
    }
}

fn sweep_point(day: &DayInputs, config: &RunConfig, a_k: f64) -> SweepRow {
    let run = || -> Result<SweepRow> {
        let mut bat = config.battery();
        bat.a_k_dkk_per_kwh = a_k;
        let inst = build_problem(day, &bat, &config.problem_options())?;
        let report = solve(&inst, &config.solve_options());
        let x = report.schedule.to_flat();
        let breakdown = cost_breakdown(&report.schedule, day, &bat)?;
        let traj = soc_trajectory(&report.schedule, &bat, &day.grid)?;
        Ok(SweepRow {
            a_k,
            energy_cost: breakdown.energy_cost,
            arbitrage_revenue: breakdown.arbitrage_revenue,
            plet_loss: breakdown.plet_loss,
            surrogate_penalty: inst.surrogate_penalty(&x),
            objective: report.objective,
            soc_reversals: soc_reversals(&traj, REVERSAL_DEADBAND),
            status: status_name(report.termination).to_string(),
        })
    };
    run().unwrap_or_else(|e| SweepRow {
        a_k,
        energy_cost: f64::NAN,
        arbitrage_revenue: f64::NAN,
        plet_loss: f64::NAN,
        surrogate_penalty: f64::NAN,
        objective: f64::NAN,
        soc_reversals: 0,
        status: format!("error: {e}"),
    })
}

/// Thread count from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Solves once per weight. Rows come back in input order; failed points are
/// flagged in `status` and do not stop the sweep.
pub fn sweep(day: &DayInputs, config: &RunConfig, ak_values: &[f64]) -> Result<Vec<SweepRow>> {
    if ak_values.len() < 2 {
        return Err(Error::input("a sweep needs at least 2 weights"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::input(format!("cannot start worker threads: {e}")))?;
    Ok(pool.install(|| {
        ak_values
            .par_iter()
            .map(|&a_k| sweep_point(day, config, a_k))
            .collect()
    }))
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "{}", SWEEP_HEADER.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.a_k,
            r.energy_cost,
            r.arbitrage_revenue,
            r.plet_loss,
            r.surrogate_penalty,
            r.objective,
            r.soc_reversals,
            r.status.replace(',', ";")
        )?;
    }
    w.flush()
}
