//! One TOML file describing a whole run: simulation, climate, training,
//! cloning, the guideline schedule, and experiment plumbing. Every section
//! is optional and falls back to defaults, so a minimal file is empty.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dqn::DqnConfig;
use crate::env::SimConfig;
use crate::error::{Error, Result};
use crate::imitation::BcConfig;
use crate::policies::BaselineSchedule;
use crate::reward::preset;
use crate::weather::ClimateParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Reward preset scoring the run (training and single-preset reports).
    pub reward_preset: String,
    /// Seed from which evaluation episode seeds are derived.
    pub eval_seed: u64,
    /// Number of evaluation seasons.
    pub eval_seeds: usize,
    /// Reuse one fixed weather draw for every training episode instead of a
    /// fresh seed-derived season per episode.
    pub fixed_weather: bool,
    /// Output directory; flag and `AGPL_OUT_DIR` may override.
    pub out_dir: Option<PathBuf>,
    /// Weather CSV to use instead of synthetic generation, where a command
    /// works on a single season.
    pub weather_path: Option<PathBuf>,
    pub sim: SimConfig,
    pub climate: ClimateParams,
    pub dqn: DqnConfig,
    pub bc: BcConfig,
    pub baseline: BaselineSchedule,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            reward_preset: "RF1".to_string(),
            eval_seed: 1000,
            eval_seeds: 20,
            fixed_weather: false,
            out_dir: None,
            weather_path: None,
            sim: SimConfig::default(),
            climate: ClimateParams::default(),
            dqn: DqnConfig::default(),
            bc: BcConfig::default(),
            baseline: BaselineSchedule::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        preset(&self.reward_preset)?;
        if self.eval_seeds == 0 {
            return Err(Error::invalid_argument("eval_seeds must be >= 1"));
        }
        self.sim.validate()?;
        self.climate.validate()?;
        self.dqn.validate()?;
        self.bc.validate()?;
        self.baseline.validate()?;
        Ok(())
    }
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::format(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    parse_run_config(&std::fs::read_to_string(path)?)
}

/// The default configuration rendered as TOML, for `--print-config` style
/// bootstrapping.
pub fn default_config_toml() -> String {
    toml::to_string_pretty(&RunConfig::default()).expect("default config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = parse_run_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let text = r#"
            reward_preset = "RF5"
            eval_seeds = 3

            [sim]
            max_season_days = 120

            [dqn]
            episodes = 7
            batch_size = 32
            replay_capacity = 1000

            [baseline]
            sw_trigger = 0.4
        "#;
        let cfg = parse_run_config(text).unwrap();
        assert_eq!(cfg.reward_preset, "RF5");
        assert_eq!(cfg.eval_seeds, 3);
        assert_eq!(cfg.sim.max_season_days, 120);
        assert_eq!(cfg.dqn.episodes, 7);
        assert_eq!(cfg.dqn.gamma, 0.99, "untouched fields keep defaults");
        assert_eq!(cfg.baseline.sw_trigger, 0.4);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(parse_run_config("reward_preset = \"RF9\"").is_err());
        assert!(parse_run_config("eval_seeds = 0").is_err());
        assert!(parse_run_config("[dqn]\ngamma = 2.0").is_err());
        assert!(parse_run_config("[sim]\nmax_season_days = 0").is_err());
        assert!(parse_run_config("no_such_key = 1").is_err());
    }

    #[test]
    fn default_render_parses_back() {
        let text = default_config_toml();
        let cfg = parse_run_config(&text).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }
}
