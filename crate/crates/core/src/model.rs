//! The penalized dispatch problem: energy cost plus a convex degradation
//! penalty, subject to SoC dynamics, a SoC box, a terminal SoC target and
//! power bounds.
//!
//! Decision vector layout is `x = [charge[0..T], discharge[0..T]]`.
//!
//! The degradation term is applied to the throughput surrogate
//! `s_t = gain * charge_t + drain * discharge_t`, an upper bound on
//! `|ΔSoC_t|` that keeps the problem convex.

use serde::{Deserialize, Serialize};

use crate::degradation::plet_accumulated_loss;
use crate::domain::{
    grid_exchange, soc_trajectory, BatteryParams, CostBreakdown, DispatchSchedule, LoadProfile,
    PriceSeries, TimeGrid,
};
use crate::error::{Error, Result};

/// Prices and load for one scheduling horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayInputs {
    pub grid: TimeGrid,
    pub prices: PriceSeries,
    pub load: LoadProfile,
}

impl DayInputs {
    pub fn new(grid: TimeGrid, prices: PriceSeries, load: LoadProfile) -> Result<Self> {
        if prices.len() != grid.steps() || load.len() != grid.steps() {
            return Err(Error::input(format!(
                "horizon has {} steps but {} prices and {} loads",
                grid.steps(),
                prices.len(),
                load.len()
            )));
        }
        Ok(Self { grid, prices, load })
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// Steps `from..` as a new horizon.
    pub fn tail(&self, from: usize) -> Result<Self> {
        let grid = TimeGrid::new(self.steps() - from, self.grid.step_hours())?;
        DayInputs::new(
            grid,
            PriceSeries::new(self.prices.values()[from..].to_vec())?,
            LoadProfile::new(self.load.values()[from..].to_vec())?,
        )
    }
}

/// Smoothed power-law penalty `((s^2 + eps^2)^(k/2) - eps^k) / C_life`.
///
/// Even in `s`, so it stays convex and finite for any real argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPenalty {
    pub exponent: f64,
    pub epsilon: f64,
    pub c_life: f64,
}

impl PowerPenalty {
    pub fn value(&self, s: f64) -> f64 {
        let k = self.exponent;
        if self.epsilon == 0.0 {
            s.abs().powf(k) / self.c_life
        } else {
            let e2 = self.epsilon * self.epsilon;
            ((s * s + e2).powf(0.5 * k) - self.epsilon.powf(k)) / self.c_life
        }
    }

    /// First derivative; zero at the origin for `k > 1`.
    pub fn derivative(&self, s: f64) -> f64 {
        let k = self.exponent;
        if s == 0.0 {
            // for k = 1 this picks the zero subgradient of |s|
            return 0.0;
        }
        if self.epsilon == 0.0 {
            k * s.abs().powf(k - 1.0) * s.signum() / self.c_life
        } else {
            let r2 = s * s + self.epsilon * self.epsilon;
            k * s * r2.powf(0.5 * k - 1.0) / self.c_life
        }
    }

    /// Second derivative; unbounded at the origin when `eps = 0` and `k < 2`.
    pub fn second_derivative(&self, s: f64) -> f64 {
        let k = self.exponent;
        if self.epsilon == 0.0 {
            if s == 0.0 {
                return if k < 2.0 { f64::INFINITY } else if k == 2.0 { 2.0 / self.c_life } else { 0.0 };
            }
            k * (k - 1.0) * s.abs().powf(k - 2.0) / self.c_life
        } else {
            let e2 = self.epsilon * self.epsilon;
            let r2 = s * s + e2;
            k * r2.powf(0.5 * k - 2.0) * ((k - 1.0) * s * s + e2) / self.c_life
        }
    }
}

/// What to do with the end-of-day SoC target.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TerminalCondition {
    /// `soc[T] = SoC_end` exactly.
    #[default]
    Hard,
    /// `weight * |soc[T] - SoC_end|` added to the objective (DKK per unit SoC).
    Soft { weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemOptions {
    /// Smoothing of the penalty at zero throughput.
    pub epsilon: f64,
    pub terminal: TerminalCondition,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            terminal: TerminalCondition::Hard,
        }
    }
}

/// One assembled dispatch problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub day: DayInputs,
    pub bat: BatteryParams,
    pub penalty: PowerPenalty,
    /// DKK per unit capacity fraction lost.
    pub weight: f64,
    pub terminal: TerminalCondition,
}

pub fn build_problem(
    day: &DayInputs,
    bat: &BatteryParams,
    opts: &ProblemOptions,
) -> Result<ProblemInstance> {
    if !(bat.capacity_mwh > 0.0) {
        return Err(Error::input(format!(
            "battery capacity must be positive, got {}",
            bat.capacity_mwh
        )));
    }
    if !(day.grid.step_hours() > 0.0) {
        return Err(Error::input("step length must be positive"));
    }
    bat.validate()?;
    if day.prices.len() != day.steps() || day.load.len() != day.steps() {
        return Err(Error::input("day inputs disagree on the horizon length"));
    }
    if !(opts.epsilon >= 0.0 && opts.epsilon.is_finite()) {
        return Err(Error::input(format!(
            "smoothing epsilon must be >= 0, got {}",
            opts.epsilon
        )));
    }
    if let TerminalCondition::Soft { weight } = opts.terminal {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::input("terminal relaxation weight must be >= 0"));
        }
    }
    Ok(ProblemInstance {
        day: day.clone(),
        bat: bat.clone(),
        penalty: PowerPenalty {
            exponent: bat.peukert_exponent,
            epsilon: opts.epsilon,
            c_life: bat.c_life,
        },
        weight: bat.penalty_weight(),
        terminal: opts.terminal,
    })
}

impl ProblemInstance {
    pub fn steps(&self) -> usize {
        self.day.steps()
    }

    /// Number of decision variables, `2T`.
    pub fn num_vars(&self) -> usize {
        2 * self.steps()
    }

    pub fn step_hours(&self) -> f64 {
        self.day.grid.step_hours()
    }

    /// SoC change per MW of charge and per MW of discharge over one step.
    /// Row `t` of the dynamics matrix is `gain` at column `t` and `-drain`
    /// at column `T + t`.
    pub fn dynamics(&self) -> (f64, f64) {
        let tau = self.step_hours();
        (self.bat.charge_gain(tau), self.bat.discharge_drain(tau))
    }

    pub fn upper_bound(&self) -> f64 {
        self.bat.p_max_mw
    }

    /// Linear cost coefficients `[p*tau, -p*tau]`.
    pub fn linear_costs(&self) -> Vec<f64> {
        let tau = self.step_hours();
        let p = self.day.prices.values();
        p.iter().map(|p| p * tau).chain(p.iter().map(|p| -p * tau)).collect()
    }

    /// Cost of serving the load with an idle battery.
    pub fn baseline_cost(&self) -> f64 {
        let tau = self.step_hours();
        self.day
            .prices
            .values()
            .iter()
            .zip(self.day.load.values())
            .map(|(p, d)| p * d * tau)
            .sum()
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        assert_eq!(x.len(), self.num_vars(), "decision vector has wrong length");
        x.split_at(self.steps())
    }

    /// Throughput surrogate `s_t` for each step.
    pub fn surrogate(&self, x: &[f64]) -> Vec<f64> {
        let (gain, drain) = self.dynamics();
        let (c, d) = self.split(x);
        c.iter().zip(d).map(|(c, d)| gain * c + drain * d).collect()
    }

    /// Terminal SoC reached by `x`.
    pub fn final_soc(&self, x: &[f64]) -> f64 {
        let (gain, drain) = self.dynamics();
        let (c, d) = self.split(x);
        c.iter()
            .zip(d)
            .fold(self.bat.soc_initial, |s, (c, d)| s + gain * c - drain * d)
    }

    pub fn energy_cost(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear_costs().iter().zip(x).map(|(c, x)| c * x).sum();
        lin + self.baseline_cost()
    }

    /// `sum_t phi(s_t)`: the capacity fraction the surrogate charges.
    pub fn surrogate_loss(&self, x: &[f64]) -> f64 {
        self.surrogate(x)
            .into_iter()
            .map(|s| self.penalty.value(s))
            .sum()
    }

    /// `W * sum_t phi(s_t)` in DKK.
    pub fn surrogate_penalty(&self, x: &[f64]) -> f64 {
        if self.weight == 0.0 {
            return 0.0;
        }
        self.weight * self.surrogate_loss(x)
    }

    fn terminal_penalty(&self, x: &[f64]) -> f64 {
        match self.terminal {
            TerminalCondition::Hard => 0.0,
            TerminalCondition::Soft { weight } => {
                weight * (self.final_soc(x) - self.bat.soc_final).abs()
            }
        }
    }
}

/// Energy cost plus surrogate penalty (plus the terminal penalty when the
/// terminal condition is soft).
pub fn objective_value(x: &[f64], inst: &ProblemInstance) -> f64 {
    inst.energy_cost(x) + inst.surrogate_penalty(x) + inst.terminal_penalty(x)
}

pub fn objective_gradient(x: &[f64], inst: &ProblemInstance) -> Vec<f64> {
    let t_len = inst.steps();
    let (gain, drain) = inst.dynamics();
    let mut g = inst.linear_costs();
    if inst.weight != 0.0 {
        for (t, s) in inst.surrogate(x).into_iter().enumerate() {
            let dphi = inst.weight * inst.penalty.derivative(s);
            g[t] += dphi * gain;
            g[t_len + t] += dphi * drain;
        }
    }
    if let TerminalCondition::Soft { weight } = inst.terminal {
        let gap = inst.final_soc(x) - inst.bat.soc_final;
        if gap != 0.0 {
            let sign = gap.signum();
            for t in 0..t_len {
                g[t] += weight * sign * gain;
                g[t_len + t] -= weight * sign * drain;
            }
        }
    }
    g
}

/// Realized cost decomposition of a schedule. The degradation term uses the
/// actual `|ΔSoC|`, not the surrogate.
pub fn cost_breakdown(
    schedule: &DispatchSchedule,
    day: &DayInputs,
    bat: &BatteryParams,
) -> Result<CostBreakdown> {
    let exchange = grid_exchange(schedule, &day.load)?;
    let traj = soc_trajectory(schedule, bat, &day.grid)?;
    let tau = day.grid.step_hours();
    let prices = day.prices.values();
    let energy_cost: f64 = exchange.net().zip(prices).map(|(g, p)| g * p * tau).sum();
    let baseline_cost: f64 = baseline(&day.load, prices, tau);
    let plet_loss = plet_accumulated_loss(&traj, bat).total_loss;
    let degradation_cost = bat.penalty_weight() * plet_loss;
    Ok(CostBreakdown {
        energy_cost,
        baseline_cost,
        arbitrage_revenue: baseline_cost - energy_cost,
        plet_loss,
        degradation_cost,
        total_objective: energy_cost + degradation_cost,
    })
}

fn baseline(load: &LoadProfile, prices: &[f64], tau: f64) -> f64 {
    load.values().iter().zip(prices).map(|(d, p)| d * p * tau).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tests::lossless;
    use crate::domain::PenaltyMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn day(prices: Vec<f64>, load: Vec<f64>, tau: f64) -> DayInputs {
        DayInputs::new(
            TimeGrid::new(prices.len(), tau).unwrap(),
            PriceSeries::new(prices).unwrap(),
            LoadProfile::new(load).unwrap(),
        )
        .unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, steps: usize, eps: f64) -> ProblemInstance {
        let prices = (0..steps).map(|_| rng.random_range(-50.0..600.0)).collect();
        let load = (0..steps).map(|_| rng.random_range(0.0..1.5)).collect();
        let mut bat = lossless(rng.random_range(0.0..1.0));
        bat.capacity_mwh = rng.random_range(0.5..4.0);
        bat.eta_charge = rng.random_range(0.85..1.0);
        bat.eta_discharge = rng.random_range(0.85..1.0);
        bat.a_k_dkk_per_kwh = rng.random_range(0.0..20.0);
        bat.penalty_mode = PenaltyMode::Capacity;
        let opts = ProblemOptions {
            epsilon: eps,
            ..Default::default()
        };
        build_problem(&day(prices, load, 0.5), &bat, &opts).unwrap()
    }

    #[test]
    fn full_day_horizon_has_96_variables() {
        let d = day(vec![300.0; 48], vec![0.2; 48], 0.5);
        let inst = build_problem(&d, &lossless(0.5), &ProblemOptions::default()).unwrap();
        assert_eq!(inst.num_vars(), 96);
    }

    #[test]
    fn zero_weight_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut inst = random_instance(&mut rng, 6, 0.0);
        inst.weight = 0.0;
        for _ in 0..20 {
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            assert_eq!(objective_value(&x, &inst), inst.energy_cost(&x));
            assert_eq!(objective_gradient(&x, &inst), inst.linear_costs());
        }
    }

    #[test]
    fn unsmoothed_penalty_is_plain_power_law() {
        let p = PowerPenalty {
            exponent: 1.15,
            epsilon: 0.0,
            c_life: 12500.0,
        };
        for s in [0.0, 0.1, 0.5, 1.0] {
            assert_eq!(p.value(s), s.powf(1.15) / 12500.0);
        }
        assert_eq!(p.derivative(0.0), 0.0);
    }

    #[test]
    fn idle_load_only_cost() {
        let d = day(vec![100.0, 200.0], vec![1.0, 1.0], 0.5);
        let inst = build_problem(&d, &lossless(0.5), &ProblemOptions::default()).unwrap();
        assert_eq!(objective_value(&[0.0; 4], &inst), 150.0);
    }

    #[test]
    fn penalty_gradient_vanishes_at_idle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = random_instance(&mut rng, 5, 0.0);
        assert!(inst.weight > 0.0);
        assert_eq!(objective_gradient(&[0.0; 10], &inst), inst.linear_costs());
    }

    #[test]
    fn nonpositive_capacity_rejected() {
        let d = day(vec![1.0], vec![0.0], 0.5);
        let mut bat = lossless(0.5);
        bat.capacity_mwh = 0.0;
        assert!(build_problem(&d, &bat, &ProblemOptions::default()).is_err());
    }

    #[test]
    fn breakdown_of_idle_and_arbitrage() {
        let d = day(vec![100.0, 300.0], vec![0.0, 0.0], 0.5);
        let bat = lossless(0.0);
        let idle = cost_breakdown(&DispatchSchedule::idle(2), &d, &bat).unwrap();
        assert_eq!(idle.arbitrage_revenue, 0.0);
        assert_eq!(idle.plet_loss, 0.0);
        let s = DispatchSchedule::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let b = cost_breakdown(&s, &d, &bat).unwrap();
        assert_eq!(b.arbitrage_revenue, 100.0);
        assert_eq!(b.energy_cost, -100.0);
        assert_eq!(b.total_objective, b.energy_cost + b.degradation_cost);
    }

    /// Central differences; the oracle for the analytic gradient.
    fn fd_gradient(x: &[f64], inst: &ProblemInstance) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * x[i].abs().max(1.0);
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (objective_value(&xp, inst) - objective_value(&xm, inst)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..40 {
            let eps = if round % 2 == 0 { 0.0 } else { 1e-6 };
            let inst = random_instance(&mut rng, 8, eps);
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(0.05..1.0)).collect();
            let g = objective_gradient(&x, &inst);
            let fd = fd_gradient(&x, &inst);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn soft_terminal_adds_abs_penalty() {
        let d = day(vec![0.0, 0.0], vec![0.0, 0.0], 0.5);
        let opts = ProblemOptions {
            epsilon: 0.0,
            terminal: TerminalCondition::Soft { weight: 1e6 },
        };
        let inst = build_problem(&d, &lossless(0.0), &opts).unwrap();
        let v = objective_value(&[1.0, 0.0, 0.0, 0.0], &inst);
        assert!((v - 0.5e6).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn objective_is_midpoint_convex(seed in 0u64..1000, eps in prop_oneof![Just(0.0), Just(1e-6)]) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng, 6, eps);
            let a: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            let m: Vec<f64> = a.iter().zip(&b).map(|(a, b)| 0.5 * (a + b)).collect();
            let fm = objective_value(&m, &inst);
            let avg = 0.5 * (objective_value(&a, &inst) + objective_value(&b, &inst));
            prop_assert!(fm <= avg + 1e-9 * avg.abs().max(1.0));
        }

        #[test]
        fn surrogate_dominates_soc_change(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng, 6, 0.0);
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            let sched = DispatchSchedule::from_flat(&x).unwrap();
            let traj = soc_trajectory(&sched, &inst.bat, &inst.day.grid).unwrap();
            for (s, d) in inst.surrogate(&x).iter().zip(traj.increments()) {
                prop_assert!(*s >= d.abs() - 1e-15);
            }
            let b = cost_breakdown(&sched, &inst.day, &inst.bat).unwrap();
            prop_assert!(inst.surrogate_penalty(&x) >= b.degradation_cost - 1e-12);
            prop_assert_eq!(b.arbitrage_revenue, b.baseline_cost - b.energy_cost);
            prop_assert_eq!(b.total_objective, b.energy_cost + b.degradation_cost);
        }

        #[test]
        fn surrogate_is_exact_without_overlap(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut inst = random_instance(&mut rng, 6, 0.0);
            inst.bat.eta_charge = 1.0;
            inst.bat.eta_discharge = 1.0;
            let mut x: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            for t in 0..6 {
                if rng.random_bool(0.5) { x[t] = 0.0 } else { x[6 + t] = 0.0 }
            }
            let sched = DispatchSchedule::from_flat(&x).unwrap();
            let traj = soc_trajectory(&sched, &inst.bat, &inst.day.grid).unwrap();
            for (s, d) in inst.surrogate(&x).iter().zip(traj.increments()) {
                prop_assert!((s - d.abs()).abs() <= 1e-15);
            }
        }
    }
}
