//! The policy abstraction and the reference policies every experiment is
//! compared against: a guideline-style baseline (scheduled fertilizer plus
//! demand-driven irrigation), the do-nothing policy, and a uniform-random
//! policy over the action grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{decode_action, ActionAmounts, ActionIndex, N_MAX, NUM_ACTIONS, WATER_MAX};
use crate::env::{FullObservation, Stage};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;

/// Positions of the partially observable variables within a full observation.
/// These are the only indices a partial-observation policy may read.
pub mod obs_idx {
    pub const CUMSUMFERT: usize = 0;
    pub const DAP: usize = 1;
    pub const DTT: usize = 2;
    pub const ISTAGE: usize = 3;
    pub const VSTAGE: usize = 4;
    pub const PLTPOP: usize = 5;
    pub const RAIN: usize = 6;
    pub const SRAD: usize = 7;
    pub const TMAX: usize = 8;
    pub const TMIN: usize = 9;
    pub const SW: usize = 10;
    pub const XLAI: usize = 11;
}

/// Which observation vector a policy is allowed to condition on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsKind {
    Full,
    Partial,
}

impl std::fmt::Display for ObsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ObsKind::Full => write!(f, "full"),
            ObsKind::Partial => write!(f, "partial"),
        }
    }
}

/// A daily decision rule. Policies with internal state (schedules, RNG
/// streams) are reset through `begin_episode`, which the episode runner calls
/// once before the first decision of each episode.
///
/// `act` always receives the full observation; partial-observation policies
/// must restrict themselves to the partial projection (the prefix indexed by
/// [`obs_idx`]) and advertise that through `obs_kind`.
pub trait Policy {
    fn name(&self) -> &str;
    fn obs_kind(&self) -> ObsKind;
    fn begin_episode(&mut self, episode_seed: u64);
    fn act(&mut self, obs: &FullObservation) -> ActionAmounts;
}

/// Fertilizer schedule and irrigation rule of the guideline baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSchedule {
    /// (cumulative-GDD trigger, amount kg/ha), fired in order, once each.
    pub n_applications: Vec<(f64, f64)>,
    /// Irrigate when reported soil water falls below this fraction.
    pub sw_trigger: f64,
    /// Refill toward this fraction of capacity.
    pub refill_target: f64,
    /// Per-day irrigation cap, mm.
    pub irrigation_cap_mm: f64,
}

impl Default for BaselineSchedule {
    /// Four 90 kg/ha applications (360 total) spread from planting to
    /// flowering, with deficit irrigation triggered at half capacity.
    fn default() -> Self {
        BaselineSchedule {
            n_applications: vec![(0.0, 90.0), (200.0, 90.0), (500.0, 90.0), (800.0, 90.0)],
            sw_trigger: 0.5,
            refill_target: 0.9,
            irrigation_cap_mm: WATER_MAX,
        }
    }
}

impl BaselineSchedule {
    pub fn validate(&self) -> Result<()> {
        for pair in self.n_applications.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::invalid_argument(format!(
                    "GDD triggers must be strictly increasing, got {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        for &(trigger, amount) in &self.n_applications {
            if !trigger.is_finite() || trigger < 0.0 {
                return Err(Error::invalid_argument(format!("bad GDD trigger {trigger}")));
            }
            if !(0.0..=N_MAX).contains(&amount) {
                return Err(Error::invalid_argument(format!(
                    "application amount {amount} outside [0, {N_MAX}]"
                )));
            }
        }
        for (name, f) in [("sw_trigger", self.sw_trigger), ("refill_target", self.refill_target)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid_argument(format!("{name} {f} outside [0, 1]")));
            }
        }
        if !(0.0..=WATER_MAX).contains(&self.irrigation_cap_mm) {
            return Err(Error::invalid_argument(format!(
                "irrigation_cap_mm {} outside [0, {WATER_MAX}]",
                self.irrigation_cap_mm
            )));
        }
        Ok(())
    }

    pub fn total_n(&self) -> f64 {
        self.n_applications.iter().map(|&(_, a)| a).sum()
    }
}

/// The guideline baseline. Partial-observation: it reads only degree days,
/// stage, and soil water, and accumulates its own GDD tally from the daily
/// `dtt` it observes.
pub struct BaselinePolicy {
    schedule: BaselineSchedule,
    taw_mm: f64,
    cum_gdd: f64,
    next_application: usize,
}

impl BaselinePolicy {
    /// `taw_mm` converts the refill deficit from a fraction of capacity to mm;
    /// it is management knowledge (how much the soil holds), not a state peek.
    pub fn new(schedule: BaselineSchedule, taw_mm: f64) -> Result<Self> {
        schedule.validate()?;
        if !taw_mm.is_finite() || taw_mm <= 0.0 {
            return Err(Error::invalid_argument(format!("taw_mm {taw_mm} must be > 0")));
        }
        Ok(BaselinePolicy {
            schedule,
            taw_mm,
            cum_gdd: 0.0,
            next_application: 0,
        })
    }
}

impl Policy for BaselinePolicy {
    fn name(&self) -> &str {
        "baseline"
    }

    fn obs_kind(&self) -> ObsKind {
        ObsKind::Partial
    }

    fn begin_episode(&mut self, _episode_seed: u64) {
        self.cum_gdd = 0.0;
        self.next_application = 0;
    }

    fn act(&mut self, obs: &FullObservation) -> ActionAmounts {
        // The GDD tally at decision time covers days already simulated; the
        // observed dtt (today's, not yet elapsed) is added afterwards.
        let mut n_fert = 0.0;
        if let Some(&(trigger, amount)) = self.schedule.n_applications.get(self.next_application) {
            if self.cum_gdd >= trigger {
                n_fert = amount;
                self.next_application += 1;
            }
        }
        self.cum_gdd += obs.0[obs_idx::DTT];

        let sw = obs.0[obs_idx::SW];
        let pre_maturity = obs.0[obs_idx::ISTAGE] < Stage::Maturity.code() as f64;
        let water = if pre_maturity && sw < self.schedule.sw_trigger {
            let deficit_mm = (self.schedule.refill_target - sw).max(0.0) * self.taw_mm;
            deficit_mm.min(self.schedule.irrigation_cap_mm)
        } else {
            0.0
        };
        ActionAmounts::new(n_fert, water).expect("schedule validated against the action box")
    }
}

/// Always applies nothing.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn name(&self) -> &str {
        "zero"
    }

    fn obs_kind(&self) -> ObsKind {
        ObsKind::Partial
    }

    fn begin_episode(&mut self, _episode_seed: u64) {}

    fn act(&mut self, _obs: &FullObservation) -> ActionAmounts {
        ActionAmounts::zero()
    }
}

/// Uniform over the 25 grid actions; the stream is reseeded per episode from
/// the policy's base seed so replays are reproducible.
pub struct RandomPolicy {
    base_seed: u64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(base_seed: u64) -> Self {
        RandomPolicy {
            base_seed,
            rng: ChaCha8Rng::seed_from_u64(base_seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn obs_kind(&self) -> ObsKind {
        ObsKind::Partial
    }

    fn begin_episode(&mut self, episode_seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(self.base_seed, episode_seed));
    }

    fn act(&mut self, _obs: &FullObservation) -> ActionAmounts {
        let idx = ActionIndex::new(self.rng.random_range(0..NUM_ACTIONS)).unwrap();
        decode_action(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::encode_action;
    use crate::env::{CropEnv, SimConfig, FULL_OBS_LEN};
    use crate::weather::{generate_synthetic, ClimateParams, WeatherDay, WeatherSeries};

    fn obs_with(entries: &[(usize, f64)]) -> FullObservation {
        let mut v = [0.0; FULL_OBS_LEN];
        for &(i, x) in entries {
            v[i] = x;
        }
        FullObservation(v)
    }

    fn run_policy(policy: &mut dyn Policy, env: &mut CropEnv, seed: u64) -> Vec<ActionAmounts> {
        let mut obs = env.reset();
        policy.begin_episode(seed);
        let mut actions = Vec::new();
        while !env.is_done() {
            let action = policy.act(&obs);
            actions.push(action);
            obs = env.step(action).unwrap().observation;
        }
        actions
    }

    fn season_env(seed: u64) -> CropEnv {
        let weather = generate_synthetic(seed, 160, &ClimateParams::default()).unwrap();
        CropEnv::new(SimConfig::default(), weather).unwrap()
    }

    #[test]
    fn zero_policy_is_always_zero() {
        let mut p = ZeroPolicy;
        p.begin_episode(1);
        let obs = obs_with(&[(obs_idx::SW, 0.1), (obs_idx::DTT, 14.0)]);
        assert_eq!(p.act(&obs), ActionAmounts::zero());
    }

    #[test]
    fn random_policy_is_reproducible_per_seed() {
        let obs = obs_with(&[]);
        let mut a = RandomPolicy::new(42);
        let mut b = RandomPolicy::new(42);
        a.begin_episode(7);
        b.begin_episode(7);
        let seq_a: Vec<ActionAmounts> = (0..50).map(|_| a.act(&obs)).collect();
        let seq_b: Vec<ActionAmounts> = (0..50).map(|_| b.act(&obs)).collect();
        assert_eq!(seq_a, seq_b);
        b.begin_episode(8);
        let seq_c: Vec<ActionAmounts> = (0..50).map(|_| b.act(&obs)).collect();
        assert_ne!(seq_a, seq_c);
    }

    #[test]
    fn random_policy_mean_fertilizer_is_grid_mean() {
        let obs = obs_with(&[]);
        let mut p = RandomPolicy::new(3);
        p.begin_episode(0);
        let n = 100_000;
        let mut total = 0.0;
        for _ in 0..n {
            let a = p.act(&obs);
            encode_action(a).expect("random action must be on the grid");
            total += a.n_fert;
        }
        let mean = total / n as f64;
        assert!((mean - 80.0).abs() < 2.0, "mean N {mean}");
    }

    #[test]
    fn baseline_applies_exactly_360_by_default() {
        for seed in [1, 9, 33] {
            let mut env = season_env(seed);
            let mut policy =
                BaselinePolicy::new(BaselineSchedule::default(), env.config().soil.taw_mm).unwrap();
            let actions = run_policy(&mut policy, &mut env, seed);
            let total_n: f64 = actions.iter().map(|a| a.n_fert).sum();
            assert_eq!(total_n, 360.0, "seed {seed}");
            // Each trigger fires exactly once: four distinct application days.
            let days: Vec<usize> = actions
                .iter()
                .enumerate()
                .filter(|(_, a)| a.n_fert > 0.0)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(days.len(), 4, "seed {seed}: {days:?}");
            assert!(actions.iter().all(|a| a.n_fert == 0.0 || a.n_fert == 90.0));
        }
    }

    #[test]
    fn baseline_irrigation_follows_deficit_rule() {
        let schedule = BaselineSchedule::default();
        let mut policy = BaselinePolicy::new(schedule, 150.0).unwrap();
        policy.begin_episode(0);
        // Dry soil: deficit (0.9 - 0.3) * 150 = 90 mm, capped at 24.
        let dry = obs_with(&[(obs_idx::SW, 0.3), (obs_idx::ISTAGE, 1.0)]);
        assert_eq!(policy.act(&dry).water, 24.0);
        // Slightly dry: deficit (0.9 - 0.45) * 150 = 67.5, still capped.
        let damp = obs_with(&[(obs_idx::SW, 0.45), (obs_idx::ISTAGE, 2.0)]);
        assert_eq!(policy.act(&damp).water, 24.0);
        // Wet enough: trigger not crossed.
        let wet = obs_with(&[(obs_idx::SW, 0.55), (obs_idx::ISTAGE, 2.0)]);
        assert_eq!(policy.act(&wet).water, 0.0);
        // Mature crop: no irrigation regardless of dryness.
        let mature = obs_with(&[(obs_idx::SW, 0.1), (obs_idx::ISTAGE, 4.0)]);
        assert_eq!(policy.act(&mature).water, 0.0);
    }

    #[test]
    fn baseline_small_deficit_is_not_capped() {
        let schedule = BaselineSchedule {
            sw_trigger: 0.9,
            ..BaselineSchedule::default()
        };
        let mut policy = BaselinePolicy::new(schedule, 150.0).unwrap();
        policy.begin_episode(0);
        let obs = obs_with(&[(obs_idx::SW, 0.88), (obs_idx::ISTAGE, 1.0)]);
        let w = policy.act(&obs).water;
        assert!((w - 3.0).abs() < 1e-9, "deficit fill, got {w}");
    }

    #[test]
    fn baseline_never_irrigates_wet_seasons() {
        // Daily 30 mm of rain keeps the bucket at capacity all season.
        let days = vec![
            WeatherDay {
                srad: 18.0,
                tmax: 30.0,
                tmin: 20.0,
                rain: 30.0,
            };
            160
        ];
        let weather = WeatherSeries::new(60, days).unwrap();
        let mut env = CropEnv::new(SimConfig::default(), weather).unwrap();
        let mut policy =
            BaselinePolicy::new(BaselineSchedule::default(), env.config().soil.taw_mm).unwrap();
        let actions = run_policy(&mut policy, &mut env, 0);
        assert!(actions.iter().all(|a| a.water == 0.0));
    }

    #[test]
    fn baseline_is_deterministic() {
        let run = |seed: u64| {
            let mut env = season_env(seed);
            let mut policy =
                BaselinePolicy::new(BaselineSchedule::default(), env.config().soil.taw_mm).unwrap();
            run_policy(&mut policy, &mut env, seed)
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn all_reference_policies_stay_in_the_action_box() {
        for seed in 0..5u64 {
            let mut env = season_env(seed);
            let taw = env.config().soil.taw_mm;
            let mut policies: Vec<Box<dyn Policy>> = vec![
                Box::new(ZeroPolicy),
                Box::new(RandomPolicy::new(seed)),
                Box::new(BaselinePolicy::new(BaselineSchedule::default(), taw).unwrap()),
            ];
            for policy in &mut policies {
                let actions = run_policy(policy.as_mut(), &mut env, seed);
                for a in actions {
                    assert!((0.0..=N_MAX).contains(&a.n_fert), "{}", policy.name());
                    assert!((0.0..=WATER_MAX).contains(&a.water), "{}", policy.name());
                }
            }
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        let bad_triggers = BaselineSchedule {
            n_applications: vec![(0.0, 90.0), (0.0, 90.0)],
            ..BaselineSchedule::default()
        };
        assert!(bad_triggers.validate().is_err());
        let bad_amount = BaselineSchedule {
            n_applications: vec![(0.0, 200.0)],
            ..BaselineSchedule::default()
        };
        assert!(bad_amount.validate().is_err());
        let bad_fraction = BaselineSchedule {
            sw_trigger: 1.5,
            ..BaselineSchedule::default()
        };
        assert!(bad_fraction.validate().is_err());
        let bad_cap = BaselineSchedule {
            irrigation_cap_mm: 30.0,
            ..BaselineSchedule::default()
        };
        assert!(bad_cap.validate().is_err());
        assert!(BaselinePolicy::new(BaselineSchedule::default(), 0.0).is_err());
    }

    #[test]
    fn default_schedule_totals_360() {
        let s = BaselineSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.total_n(), 360.0);
    }
}
