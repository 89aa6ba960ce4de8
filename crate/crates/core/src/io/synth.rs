//! Seeded synthetic day-ahead inputs shaped like a fast-charging station:
//! prices with morning and evening peaks around a midday trough, and a low
//! base load punctuated by short charging spikes.

use std::str::FromStr;

use chrono::TimeDelta;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{LoadProfile, PriceSeries, TimeGrid};
use crate::error::{Error, Result};
use crate::model::DayInputs;

use super::series::{parse_timestamp, TimeIndex};

pub const SYNTHETIC_STEPS: usize = 48;
pub const SYNTHETIC_STEP_MINUTES: i64 = 30;
const SYNTHETIC_START: &str = "2024-01-01T00:00:00";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Fcs,
    Flat,
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcs" => Ok(ProfileKind::Fcs),
            "flat" => Ok(ProfileKind::Flat),
            other => Err(Error::input(format!("unknown profile kind `{other}` (fcs|flat)"))),
        }
    }
}

pub fn synthetic_index() -> TimeIndex {
    TimeIndex {
        start: parse_timestamp(SYNTHETIC_START).expect("valid constant"),
        step: TimeDelta::minutes(SYNTHETIC_STEP_MINUTES),
        steps: SYNTHETIC_STEPS,
    }
}

fn bump(h: f64, centre: f64, width: f64) -> f64 {
    (-((h - centre) / width).powi(2)).exp()
}

pub fn gen_synthetic_day(seed: u64, kind: ProfileKind) -> (TimeIndex, DayInputs) {
    let index = synthetic_index();
    let tau = index.step_hours();
    let (prices, load) = match kind {
        ProfileKind::Flat => (vec![300.0; SYNTHETIC_STEPS], vec![0.3; SYNTHETIC_STEPS]),
        ProfileKind::Fcs => fcs_profile(seed, tau),
    };
    let day = DayInputs::new(
        TimeGrid::new(SYNTHETIC_STEPS, tau).expect("positive constants"),
        PriceSeries::new(prices).expect("finite prices"),
        LoadProfile::new(load).expect("non-negative load"),
    )
    .expect("matching lengths");
    (index, day)
}

fn fcs_profile(seed: u64, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let price_noise = Normal::new(0.0, 18.0).expect("valid sigma");
    let prices: Vec<f64> = (0..SYNTHETIC_STEPS)
        .map(|t| {
            let h = (t as f64 + 0.5) * tau;
            let shape = 380.0 + 260.0 * bump(h, 8.0, 1.6) + 320.0 * bump(h, 18.5, 1.8)
                - 170.0 * bump(h, 13.5, 2.6)
                - 120.0 * bump(h, 3.0, 2.5);
            let p = shape + price_noise.sample(&mut rng);
            // two decimals, like published day-ahead prices
            (p * 100.0).round() / 100.0
        })
        .collect();

    let base_noise = Normal::new(0.0, 0.02).expect("valid sigma");
    let mut load: Vec<f64> = (0..SYNTHETIC_STEPS)
        .map(|_| (0.12f64 + base_noise.sample(&mut rng)).max(0.02))
        .collect();

    // charging sessions: 5 to 8 short episodes, at least one idle step apart
    let episodes = rng.random_range(5..=8);
    let mut occupied = vec![false; SYNTHETIC_STEPS];
    let mut placed = 0;
    let mut attempts = 0;
    while placed < episodes && attempts < 1000 {
        attempts += 1;
        let len = rng.random_range(1..=3);
        let start = rng.random_range(1..SYNTHETIC_STEPS - len);
        if occupied[start - 1..=(start + len).min(SYNTHETIC_STEPS - 1)]
            .iter()
            .any(|&o| o)
        {
            continue;
        }
        let amplitude = rng.random_range(0.8..1.8);
        for slot in load.iter_mut().skip(start).take(len) {
            *slot += amplitude * rng.random_range(0.85..1.0);
        }
        occupied[start..start + len].iter_mut().for_each(|o| *o = true);
        placed += 1;
    }
    let load = load.into_iter().map(|v| (v * 1000.0).round() / 1000.0).collect();
    (prices, load)
}

/// Number of maximal runs of consecutive values strictly above `threshold`.
pub fn episodes_above(values: &[f64], threshold: f64) -> usize {
    let mut count = 0;
    let mut inside = false;
    for &v in values {
        let above = v > threshold;
        if above && !inside {
            count += 1;
        }
        inside = above;
    }
    count
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_day() {
        assert_eq!(gen_synthetic_day(5, ProfileKind::Fcs), gen_synthetic_day(5, ProfileKind::Fcs));
        assert_ne!(
            gen_synthetic_day(5, ProfileKind::Fcs).1,
            gen_synthetic_day(6, ProfileKind::Fcs).1
        );
    }

    #[test]
    fn seed_42_has_spike_episodes() {
        let (_, day) = gen_synthetic_day(42, ProfileKind::Fcs);
        let load = day.load.values();
        assert!(episodes_above(load, 2.0 * median(load)) >= 3);
    }

    #[test]
    fn fcs_prices_have_peaks_and_trough() {
        for seed in 0..20 {
            let (_, day) = gen_synthetic_day(seed, ProfileKind::Fcs);
            let p = day.prices.values();
            let mean = |r: std::ops::Range<usize>| p[r.clone()].iter().sum::<f64>() / r.len() as f64;
            let morning = mean(15..18);
            let midday = mean(26..28);
            let evening = mean(36..39);
            assert!(morning > midday + 100.0, "seed {seed}");
            assert!(evening > midday + 100.0, "seed {seed}");
            assert!(episodes_above(day.load.values(), 2.0 * median(day.load.values())) >= 3);
        }
    }

    #[test]
    fn flat_kind_is_constant() {
        let (idx, day) = gen_synthetic_day(1, ProfileKind::Flat);
        assert_eq!(idx.steps, 48);
        assert!(day.prices.values().iter().all(|&p| p == day.prices.values()[0]));
        assert!(day.load.values().iter().all(|&l| l == day.load.values()[0]));
    }

    #[test]
    fn helpers() {
        assert_eq!(episodes_above(&[0.0, 3.0, 3.0, 0.0, 5.0], 1.0), 2);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
        assert!("bogus".parse::<ProfileKind>().is_err());
    }
}
