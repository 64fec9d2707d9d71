//! Reward accounting: daily rewards, returns, and the five published presets.
//!
//! The daily reward prices a management step in $/ha: yield revenue on the
//! harvest day minus costs charged to fertilizer (per kg N), irrigation
//! (per mm), and nitrate leaching (per kg N). Because the expression is linear
//! in its inputs, an undiscounted season return can be recomputed exactly from
//! season totals, which is how the evaluation matrix is produced.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the daily reward, $/unit of each term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub name: String,
    /// Revenue per kg/ha of grain yield at harvest.
    pub w1: f64,
    /// Cost per kg/ha of fertilizer N applied.
    pub w2: f64,
    /// Cost per mm of irrigation water applied.
    pub w3: f64,
    /// Cost per kg/ha of nitrate N leached.
    pub w4: f64,
}

impl RewardConfig {
    pub fn new(name: impl Into<String>, w1: f64, w2: f64, w3: f64, w4: f64) -> Result<Self> {
        let cfg = RewardConfig {
            name: name.into(),
            w1,
            w2,
            w3,
            w4,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w1.is_finite() && self.w1 > 0.0) {
            return Err(Error::invalid_argument(format!(
                "w1 must be finite and > 0, got {}",
                self.w1
            )));
        }
        for (name, w) in [("w2", self.w2), ("w3", self.w3), ("w4", self.w4)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid_argument(format!(
                    "{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Names of the five built-in presets, in order.
pub const PRESET_NAMES: [&str; 5] = ["RF1", "RF2", "RF3", "RF4", "RF5"];

/// Returns one of the five published weight presets by name.
pub fn preset(name: &str) -> Result<RewardConfig> {
    let (w1, w2, w3, w4) = match name {
        "RF1" => (0.158, 0.79, 1.1, 0.0),
        "RF2" => (0.158, 0.79, 0.0, 0.0),
        "RF3" => (0.158, 0.79, 0.55, 0.0),
        "RF4" => (0.158, 1.58, 1.1, 0.0),
        "RF5" => (0.2, 1.0, 1.0, 5.0),
        other => {
            return Err(Error::invalid_argument(format!(
                "unknown reward preset `{other}` (expected RF1..RF5)"
            )))
        }
    };
    RewardConfig::new(name, w1, w2, w3, w4)
}

/// All five presets, in RF1..RF5 order.
pub fn all_presets() -> Vec<RewardConfig> {
    PRESET_NAMES.iter().map(|n| preset(n).unwrap()).collect()
}

/// Reward of one day, $/ha.
///
/// `harvest_yield` is `Some(grain kg/ha)` on the harvest day and `None` on
/// every other day, so revenue is credited exactly once per season.
pub fn daily_reward(
    harvest_yield: Option<f64>,
    n_applied: f64,
    water_applied: f64,
    n_leached: f64,
    cfg: &RewardConfig,
) -> Result<f64> {
    for (name, v) in [
        ("n_applied", n_applied),
        ("water_applied", water_applied),
        ("n_leached", n_leached),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid_argument(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    let revenue = match harvest_yield {
        Some(y) if y.is_finite() && y >= 0.0 => cfg.w1 * y,
        Some(y) => {
            return Err(Error::invalid_argument(format!(
                "harvest yield must be finite and >= 0, got {y}"
            )))
        }
        None => 0.0,
    };
    Ok(revenue - cfg.w2 * n_applied - cfg.w3 * water_applied - cfg.w4 * n_leached)
}

/// Discounted return Σ gamma^t r_t over a reward sequence.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid_argument(format!(
            "gamma {gamma} outside [0, 1]"
        )));
    }
    let mut factor = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += factor * r;
        factor *= gamma;
    }
    Ok(total)
}

/// Season aggregates of one simulated episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeasonTotals {
    /// Total fertilizer N applied, kg/ha.
    pub n_kg_ha: f64,
    /// Total irrigation applied, mm.
    pub water_mm: f64,
    /// Total nitrate N leached, kg/ha.
    pub leached_kg_ha: f64,
    /// Grain yield at harvest, kg/ha.
    pub yield_kg_ha: f64,
}

impl SeasonTotals {
    pub fn new(n_kg_ha: f64, water_mm: f64, leached_kg_ha: f64, yield_kg_ha: f64) -> Result<Self> {
        for (name, v) in [
            ("n_kg_ha", n_kg_ha),
            ("water_mm", water_mm),
            ("leached_kg_ha", leached_kg_ha),
            ("yield_kg_ha", yield_kg_ha),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid_argument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(SeasonTotals {
            n_kg_ha,
            water_mm,
            leached_kg_ha,
            yield_kg_ha,
        })
    }
}

/// Undiscounted season return recomputed from totals.
///
/// By linearity this equals the gamma = 1 sum of the episode's daily rewards.
pub fn season_return_from_totals(totals: &SeasonTotals, cfg: &RewardConfig) -> f64 {
    cfg.w1 * totals.yield_kg_ha
        - cfg.w2 * totals.n_kg_ha
        - cfg.w3 * totals.water_mm
        - cfg.w4 * totals.leached_kg_ha
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_weights() {
        let expect = [
            ("RF1", 0.158, 0.79, 1.1, 0.0),
            ("RF2", 0.158, 0.79, 0.0, 0.0),
            ("RF3", 0.158, 0.79, 0.55, 0.0),
            ("RF4", 0.158, 1.58, 1.1, 0.0),
            ("RF5", 0.2, 1.0, 1.0, 5.0),
        ];
        for (name, w1, w2, w3, w4) in expect {
            let cfg = preset(name).unwrap();
            assert_eq!((cfg.w1, cfg.w2, cfg.w3, cfg.w4), (w1, w2, w3, w4), "{name}");
        }
        assert_eq!(all_presets().len(), 5);
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(preset("RF6").is_err());
        assert!(preset("").is_err());
    }

    #[test]
    fn daily_reward_zero_action_is_zero() {
        let cfg = preset("RF1").unwrap();
        assert_eq!(daily_reward(None, 0.0, 0.0, 0.0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn daily_reward_prices_one_step() {
        let cfg = preset("RF1").unwrap();
        let r = daily_reward(None, 40.0, 6.0, 0.0, &cfg).unwrap();
        assert!((r - (-38.2)).abs() < 1e-9, "got {r}");
    }

    #[test]
    fn daily_reward_credits_harvest_revenue() {
        let cfg = preset("RF1").unwrap();
        let r = daily_reward(Some(10771.5), 0.0, 0.0, 0.0, &cfg).unwrap();
        assert!((r - 1701.897).abs() < 1e-9, "got {r}");
    }

    #[test]
    fn daily_reward_rejects_negative_inputs() {
        let cfg = preset("RF1").unwrap();
        assert!(daily_reward(None, -1.0, 0.0, 0.0, &cfg).is_err());
        assert!(daily_reward(None, 0.0, -1.0, 0.0, &cfg).is_err());
        assert!(daily_reward(None, 0.0, 0.0, -1.0, &cfg).is_err());
        assert!(daily_reward(Some(-5.0), 0.0, 0.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn discounted_return_limits() {
        let rs = [2.0, 3.0, 4.0];
        assert_eq!(discounted_return(&rs, 1.0).unwrap(), 9.0);
        assert_eq!(discounted_return(&rs, 0.0).unwrap(), 2.0);
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5).unwrap(), 1.75);
        assert_eq!(discounted_return(&[], 0.99).unwrap(), 0.0);
    }

    #[test]
    fn discounted_return_rejects_bad_gamma() {
        assert!(discounted_return(&[1.0], -0.1).is_err());
        assert!(discounted_return(&[1.0], 1.1).is_err());
    }

    // Season returns recomputed from the published evaluation totals. The
    // expected values and tolerances are the published cumulative rewards.
    #[test]
    fn season_return_reproduces_published_baseline_rows() {
        let baseline = SeasonTotals::new(360.0, 393.7, 212.6, 10771.5).unwrap();
        let rf1 = season_return_from_totals(&baseline, &preset("RF1").unwrap());
        assert!((rf1 - 984.4).abs() < 0.1, "got {rf1}");
        let rf5 = season_return_from_totals(&baseline, &preset("RF5").unwrap());
        assert!((rf5 - 337.6).abs() < 0.1, "got {rf5}");
    }

    #[test]
    fn season_return_reproduces_published_trained_rows() {
        let cases = [
            // (totals, preset, published return, tolerance)
            ((240.0, 156.0, 38.5, 10998.0), "RF1", 1376.5, 0.1),
            ((240.0, 156.0, 38.5, 10998.0), "RF5", 1611.1, 0.1),
            ((240.0, 594.0, 69.2, 11291.8), "RF2", 1595.0, 1.0),
            ((200.0, 138.0, 39.2, 10926.1), "RF5", 1651.2, 0.1),
            ((245.6, 238.9, 43.4, 11279.8), "RF1", 1325.5, 1.0),
        ];
        for ((n, w, l, y), name, expected, tol) in cases {
            let totals = SeasonTotals::new(n, w, l, y).unwrap();
            let got = season_return_from_totals(&totals, &preset(name).unwrap());
            assert!(
                (got - expected).abs() < tol,
                "{name} on ({n}, {w}, {l}, {y}): got {got}, want {expected} ± {tol}"
            );
        }
    }

    #[test]
    fn season_return_is_monotone_in_each_term() {
        let cfg = preset("RF5").unwrap();
        let base = SeasonTotals::new(100.0, 50.0, 10.0, 9000.0).unwrap();
        let r0 = season_return_from_totals(&base, &cfg);
        let more_yield = SeasonTotals {
            yield_kg_ha: 9100.0,
            ..base
        };
        assert!(season_return_from_totals(&more_yield, &cfg) > r0);
        for totals in [
            SeasonTotals {
                n_kg_ha: 140.0,
                ..base
            },
            SeasonTotals {
                water_mm: 80.0,
                ..base
            },
            SeasonTotals {
                leached_kg_ha: 20.0,
                ..base
            },
        ] {
            assert!(season_return_from_totals(&totals, &cfg) < r0);
        }
    }

    #[test]
    fn daily_sum_equals_totals_return() {
        // Linearity: pricing day by day and pricing the totals agree exactly.
        let cfg = preset("RF5").unwrap();
        let steps = [
            (40.0, 6.0, 0.3),
            (0.0, 12.0, 0.1),
            (80.0, 0.0, 1.4),
            (0.0, 0.0, 0.0),
            (40.0, 18.0, 2.2),
        ];
        let harvest_yield = 8342.7;
        let mut daily_sum = 0.0;
        let (mut n, mut w, mut l) = (0.0, 0.0, 0.0);
        for (i, &(dn, dw, dl)) in steps.iter().enumerate() {
            let y = (i == steps.len() - 1).then_some(harvest_yield);
            daily_sum += daily_reward(y, dn, dw, dl, &cfg).unwrap();
            n += dn;
            w += dw;
            l += dl;
        }
        let totals = SeasonTotals::new(n, w, l, harvest_yield).unwrap();
        let from_totals = season_return_from_totals(&totals, &cfg);
        assert!((daily_sum - from_totals).abs() <= 1e-9 * from_totals.abs().max(1.0));
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(RewardConfig::new("x", 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(RewardConfig::new("x", -0.1, 1.0, 1.0, 1.0).is_err());
        assert!(RewardConfig::new("x", 0.1, -1.0, 1.0, 1.0).is_err());
        assert!(SeasonTotals::new(-1.0, 0.0, 0.0, 0.0).is_err());
    }
}
