//! Solver for assembled [`ProblemInstance`]s.
//!
//! The pipeline is:
//!
//! 1. a reachability pre-check of the terminal SoC;
//! 2. a primal-dual interior point solve ([`ipm`]);
//! 3. active-set polishing of the interior solution ([`polish`]);
//! 4. for zero-penalty (purely linear) instances, a second solve over the
//!    optimal face that minimizes total throughput, so ties resolve to the
//!    least-cycling optimum.
//!
//! [`oracle`] holds the brute-force grid enumerator used to cross-check it.

pub mod ipm;
pub mod oracle;
pub mod polish;
pub mod program;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{validate_feasibility, grid_limit_violations, DispatchSchedule};
use crate::model::{objective_value, ProblemInstance, TerminalCondition};
use ipm::{interior_point, IpmResult, IpmSettings, IpmStatus};
use program::{independent_rows, ConvexProgram, LinearObjective, LinearRow, SmoothObjective};

pub use oracle::{grid_gap_bound, oracle_solve};

/// Secondary throughput penalty (DKK per unit of SoC throughput) that breaks
/// ties between otherwise equal optima.
pub const TIE_BREAK_WEIGHT: f64 = 1e-12;

/// Overlap of charge and discharge above this fraction of `P_max` is flagged.
pub const SIMULTANEITY_FRACTION: f64 = 1e-6;

/// Curvature of the power-law penalty is evaluated no closer to zero than this.
const HESSIAN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol_feasibility: f64,
    /// Bound on the scaled KKT residual reported as `optimality_residual`.
    pub tol_optimality: f64,
    pub max_iterations: usize,
    /// Reserved for randomized restarts; the interior point path is
    /// deterministic and does not consume it.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_feasibility: 1e-8,
            tol_optimality: 1e-6,
            max_iterations: 50_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
    Infeasible,
}

/// Why the terminal SoC cannot be reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityCertificate {
    /// `SoC_end - SoC_0`.
    pub required_soc_change: f64,
    /// Largest SoC change of that sign achievable over the horizon.
    pub max_achievable_soc_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schedule: DispatchSchedule,
    /// `objective_value` of the returned schedule, DKK.
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub feasibility_residual: f64,
    pub optimality_residual: f64,
    pub simultaneity_flags: Vec<usize>,
    pub certificate: Option<InfeasibilityCertificate>,
}

/// Necessary condition for the hard terminal SoC: the required change must
/// fit within the per-step charge/discharge envelopes (including any grid
/// limit).
pub fn check_reachability(inst: &ProblemInstance) -> Option<InfeasibilityCertificate> {
    let (gain, drain) = inst.dynamics();
    let p = inst.bat.p_max_mw;
    let mut up = 0.0;
    let mut down = 0.0;
    for &dem in inst.day.load.values() {
        match inst.bat.grid_limit_mw {
            None => {
                up += gain * p;
                down += drain * p;
            }
            Some(lim) => {
                let headroom = lim - dem;
                up += if headroom >= 0.0 {
                    gain * p.min(headroom)
                } else {
                    -drain * (-headroom)
                };
                down += drain * p.min(lim + dem);
            }
        }
    }
    let required = inst.bat.soc_final - inst.bat.soc_initial;
    let slack = 1e-12;
    if required > up + slack {
        Some(InfeasibilityCertificate {
            required_soc_change: required,
            max_achievable_soc_change: up,
        })
    } else if -required > down + slack {
        Some(InfeasibilityCertificate {
            required_soc_change: required,
            max_achievable_soc_change: -down,
        })
    } else {
        None
    }
}

/// Scaled dispatch objective in the solver's variable layout (a trailing
/// terminal-gap variable when the terminal condition is soft).
struct DispatchObjective {
    steps: usize,
    linear: Vec<f64>,
    weight: f64,
    tie_break: f64,
    gain: f64,
    drain: f64,
    penalty: crate::model::PowerPenalty,
}

impl DispatchObjective {
    fn surrogate(&self, x: &[f64], t: usize) -> f64 {
        self.gain * x[t] + self.drain * x[self.steps + t]
    }
}

impl SmoothObjective for DispatchObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(c, x)| c * x).sum();
        let nonlin: f64 = (0..self.steps)
            .map(|t| {
                let s = self.surrogate(x, t);
                let pen = if self.weight == 0.0 { 0.0 } else { self.weight * self.penalty.value(s) };
                pen + self.tie_break * s
            })
            .sum();
        lin + nonlin
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.linear.clone();
        for t in 0..self.steps {
            let s = self.surrogate(x, t);
            let d = if self.weight == 0.0 { 0.0 } else { self.weight * self.penalty.derivative(s) };
            let d = d + self.tie_break;
            g[t] += d * self.gain;
            g[self.steps + t] += d * self.drain;
        }
        g
    }

    fn add_hessian(&self, x: &[f64], h: &mut DMatrix<f64>) {
        if self.weight == 0.0 {
            return;
        }
        let n = self.steps;
        for t in 0..n {
            let s = self.surrogate(x, t).abs().max(HESSIAN_FLOOR);
            let c = self.weight * self.penalty.second_derivative(s);
            h[(t, t)] += c * self.gain * self.gain;
            h[(t, n + t)] += c * self.gain * self.drain;
            h[(n + t, t)] += c * self.gain * self.drain;
            h[(n + t, n + t)] += c * self.drain * self.drain;
        }
    }

    fn is_linear(&self) -> bool {
        self.weight == 0.0
    }
}

struct Layout {
    num_vars: usize,
    eq: Vec<LinearRow>,
    ineq: Vec<LinearRow>,
    scale: f64,
}

fn layout(inst: &ProblemInstance) -> Layout {
    let t_len = inst.steps();
    let soft = matches!(inst.terminal, TerminalCondition::Soft { .. });
    let num_vars = 2 * t_len + usize::from(soft);
    let (gain, drain) = inst.dynamics();
    let p_max = inst.upper_bound();
    let soc0 = inst.bat.soc_initial;
    let target = inst.bat.soc_final - soc0;

    let mut ineq = Vec::new();
    for i in 0..2 * t_len {
        ineq.push(LinearRow::new(vec![(i, 1.0)], p_max));
        ineq.push(LinearRow::new(vec![(i, -1.0)], 0.0));
    }

    // cumulative SoC change after step t
    let prefix = |t: usize, sign: f64| -> Vec<(usize, f64)> {
        (0..=t)
            .map(|j| (j, sign * gain))
            .chain((0..=t).map(|j| (t_len + j, -sign * drain)))
            .collect()
    };
    let boxed_steps = if soft { t_len } else { t_len - 1 };
    for t in 0..boxed_steps {
        ineq.push(LinearRow::new(prefix(t, 1.0), 1.0 - soc0));
        ineq.push(LinearRow::new(prefix(t, -1.0), soc0));
    }

    let mut eq = Vec::new();
    if soft {
        let v = 2 * t_len;
        let mut up = prefix(t_len - 1, 1.0);
        up.push((v, -1.0));
        let mut dn = prefix(t_len - 1, -1.0);
        dn.push((v, -1.0));
        ineq.push(LinearRow::new(up, target));
        ineq.push(LinearRow::new(dn, -target));
        ineq.push(LinearRow::new(vec![(v, 1.0)], 1.0));
        ineq.push(LinearRow::new(vec![(v, -1.0)], 0.0));
    } else {
        eq.push(LinearRow::new(prefix(t_len - 1, 1.0), target));
    }

    if let Some(lim) = inst.bat.grid_limit_mw {
        for (t, &dem) in inst.day.load.values().iter().enumerate() {
            ineq.push(LinearRow::new(vec![(t, 1.0), (t_len + t, -1.0)], lim - dem));
            ineq.push(LinearRow::new(vec![(t, -1.0), (t_len + t, 1.0)], lim + dem));
        }
    }

    let scale = inst
        .linear_costs()
        .iter()
        .fold(1.0f64, |m, c| m.max(c.abs()));
    Layout {
        num_vars,
        eq,
        ineq,
        scale,
    }
}

fn dispatch_objective(inst: &ProblemInstance, scale: f64) -> DispatchObjective {
    let (gain, drain) = inst.dynamics();
    let mut linear: Vec<f64> = inst.linear_costs().iter().map(|c| c / scale).collect();
    if let TerminalCondition::Soft { weight } = inst.terminal {
        linear.push(weight / scale);
    }
    DispatchObjective {
        steps: inst.steps(),
        linear,
        weight: inst.weight / scale,
        tie_break: TIE_BREAK_WEIGHT / scale,
        gain,
        drain,
        penalty: inst.penalty,
    }
}

fn throughput_objective(inst: &ProblemInstance, num_vars: usize) -> LinearObjective {
    let (gain, drain) = inst.dynamics();
    let t_len = inst.steps();
    let mut c = vec![0.0; num_vars];
    for t in 0..t_len {
        c[t] = gain;
        c[t_len + t] = drain;
    }
    LinearObjective { c }
}

/// A primal-dual pair with the KKT residuals it was judged by.
struct Candidate {
    x: Vec<f64>,
    z: Vec<f64>,
    dual_residual: f64,
}

fn candidate_from(prog: &ConvexProgram<'_>, ipm: &IpmResult, feas_tol: f64) -> Candidate {
    match polish::polish(prog, ipm, feas_tol) {
        Some(p) if prog.objective.value(&p.x)
            <= prog.objective.value(&ipm.x) + 1e-9 * (1.0 + prog.objective.value(&ipm.x).abs()) =>
        {
            Candidate {
                x: p.x,
                z: p.z,
                dual_residual: p.dual_residual,
            }
        }
        _ => Candidate {
            x: ipm.x.clone(),
            z: ipm.z.clone(),
            dual_residual: ipm.dual_residual,
        },
    }
}

/// Largest `z_i * slack_i` at `x`, i.e. the complementarity gap in scaled
/// objective units.
fn complementarity(prog: &ConvexProgram<'_>, x: &[f64], z: &[f64]) -> f64 {
    prog.ineq
        .iter()
        .zip(z)
        .map(|(r, zi)| zi * (-r.residual(x)).max(0.0))
        .fold(0.0, f64::max)
}

/// Minimizes throughput over the optimal face identified by the first-stage
/// interior solution. Returns `None` if it cannot certify the result is still
/// optimal for the original objective.
fn least_throughput_optimum(
    inst: &ProblemInstance,
    prog: &ConvexProgram<'_>,
    first: &IpmResult,
    reference: &Candidate,
    settings: &IpmSettings,
    feas_tol: f64,
) -> Option<(Candidate, usize)> {
    let forced = polish::active_rows(first);
    let mut eq = prog.eq.clone();
    let mut ineq = Vec::new();
    for (i, row) in prog.ineq.iter().enumerate() {
        if forced.contains(&i) {
            eq.push(row.clone());
        } else {
            ineq.push(row.clone());
        }
    }
    let dense: Vec<_> = eq.iter().map(|r| r.dense(prog.num_vars)).collect();
    let keep = independent_rows(&dense, 1e-9);
    let eq: Vec<LinearRow> = keep.into_iter().map(|k| eq[k].clone()).collect();

    let obj = throughput_objective(inst, prog.num_vars);
    let face = ConvexProgram {
        num_vars: prog.num_vars,
        objective: &obj,
        eq,
        ineq,
    };
    let second = interior_point(&face, &reference.x, settings);
    if second.status != IpmStatus::Converged {
        return None;
    }
    let cand = candidate_from(&face, &second, feas_tol);
    let f_ref = prog.objective.value(&reference.x);
    let f_new = prog.objective.value(&cand.x);
    if prog.infeasibility(&cand.x) > feas_tol || f_new > f_ref + 1e-10 * (1.0 + f_ref.abs()) {
        return None;
    }
    // multipliers of the original program are those of the first stage
    Some((
        Candidate {
            x: cand.x,
            z: reference.z.clone(),
            dual_residual: reference.dual_residual,
        },
        second.iterations,
    ))
}

pub fn solve(inst: &ProblemInstance, opts: &SolveOptions) -> SolveReport {
    let t_len = inst.steps();
    let p_max = inst.upper_bound();

    if inst.terminal == TerminalCondition::Hard {
        if let Some(cert) = check_reachability(inst) {
            let schedule = DispatchSchedule::idle(t_len);
            return finish(inst, schedule, 0, Termination::Infeasible, f64::INFINITY, Some(cert));
        }
    }

    let lay = layout(inst);
    let obj = dispatch_objective(inst, lay.scale);
    let prog = ConvexProgram {
        num_vars: lay.num_vars,
        objective: &obj,
        eq: lay.eq,
        ineq: lay.ineq,
    };
    let settings = IpmSettings {
        tol: 1e-11,
        max_iter: opts.max_iterations.clamp(1, 500),
    };
    let mut x0 = vec![0.5 * p_max; 2 * t_len];
    if lay.num_vars > 2 * t_len {
        x0.push(0.5);
    }
    let first = interior_point(&prog, &x0, &settings);
    let mut iterations = first.iterations;
    let inner_tol = 0.1 * opts.tol_feasibility;

    let mut best = candidate_from(&prog, &first, inner_tol);
    if obj.is_linear() && first.status == IpmStatus::Converged {
        if let Some((c, its)) =
            least_throughput_optimum(inst, &prog, &first, &best, &settings, inner_tol)
        {
            best = c;
            iterations += its;
        }
    }

    let mut x = best.x.clone();
    for v in x.iter_mut().take(2 * t_len) {
        *v = v.clamp(0.0, p_max);
    }
    let optimality = best.dual_residual.max(complementarity(&prog, &x, &best.z));
    let schedule = DispatchSchedule::from_flat(&x[..2 * t_len]).expect("even length");

    let termination = match first.status {
        IpmStatus::Infeasible => Termination::Infeasible,
        _ => Termination::Converged,
    };
    let mut report = finish(inst, schedule, iterations, termination, optimality, None);
    if report.termination == Termination::Converged
        && (report.feasibility_residual > opts.tol_feasibility
            || report.optimality_residual > opts.tol_optimality)
    {
        report.termination = Termination::MaxIter;
    }
    report
}

fn finish(
    inst: &ProblemInstance,
    schedule: DispatchSchedule,
    iterations: usize,
    termination: Termination,
    optimality_residual: f64,
    certificate: Option<InfeasibilityCertificate>,
) -> SolveReport {
    let feasibility_residual = feasibility_residual(inst, &schedule);
    let objective = objective_value(&schedule.to_flat(), inst);
    let simultaneity_flags = schedule.simultaneous_steps(SIMULTANEITY_FRACTION * inst.bat.p_max_mw);
    SolveReport {
        schedule,
        objective,
        iterations,
        termination,
        feasibility_residual,
        optimality_residual,
        simultaneity_flags,
        certificate,
    }
}

/// Largest constraint breach of a schedule (terminal SoC excluded when the
/// terminal condition is soft).
pub fn feasibility_residual(inst: &ProblemInstance, schedule: &DispatchSchedule) -> f64 {
    let soft = matches!(inst.terminal, TerminalCondition::Soft { .. });
    let mut worst = validate_feasibility(schedule, &inst.bat, &inst.day.grid, 0.0)
        .expect("schedule sized by the instance")
        .into_iter()
        .filter(|v| !(soft && v.constraint == crate::domain::ConstraintKind::TerminalSoc))
        .map(|v| v.magnitude)
        .fold(0.0, f64::max);
    if let Some(lim) = inst.bat.grid_limit_mw {
        worst = grid_limit_violations(schedule, &inst.day.load, lim, 0.0)
            .expect("schedule sized by the instance")
            .into_iter()
            .map(|v| v.magnitude)
            .fold(worst, f64::max);
    }
    worst
}
