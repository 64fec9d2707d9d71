//! Deterministic daily-step maize growth surrogate.
//!
//! The environment follows the usual reset/step loop: each step consumes one
//! day of weather plus a fertilization/irrigation action and advances four
//! sub-models in a fixed order — phenology, water balance, nitrogen balance,
//! growth. Both the water and nitrogen ledgers are closed to rounding error
//! every day and audited per episode, which is what makes the model's numbers
//! trustworthy as training signal.
//!
//! Sub-model definitions, in update order:
//!
//! * Phenology: degree-days above a base temperature accumulate into a stage
//!   code (sowing → vegetative → flowering → grain fill → maturity), a leaf
//!   count (`vstage`), and rooting depth. Canopy LAI tracks leaf count scaled
//!   by a slow stress memory before flowering and senesces linearly to 20%
//!   of its flowering value by maturity.
//! * Water: a single bucket of plant-available capacity `taw_mm`. Inflow is
//!   rain plus irrigation; storage above saturation (1.2 × capacity) runs off
//!   immediately, storage above capacity drains at a fixed daily coefficient.
//!   Reference evapotranspiration is a Hargreaves-style function of radiation
//!   and mean temperature, split by canopy cover into transpiration (limited
//!   by the water-stress factor) and soil evaporation.
//! * Nitrogen: one mineral pool fed by constant mineralization and fertilizer;
//!   5% of each application volatilizes in equal parts over the following
//!   five days. Crop uptake meets a demand proportional to potential growth,
//!   leaching removes a fraction of the pool proportional to drainage, and
//!   wet days above field capacity denitrify 2% of the pool.
//! * Growth: radiation-use-efficiency biomass gain scaled by the binding
//!   stress (water or nitrogen); during grain fill a fixed fraction of each
//!   day's gain goes to grain, which caps harvest index by construction.

use serde::{Deserialize, Serialize};

use crate::action::ActionAmounts;
use crate::error::{Error, Result};
use crate::weather::WeatherSeries;

/// Soil bucket and nitrogen pool parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoilParams {
    /// Plant-available water capacity of the bucket, mm.
    pub taw_mm: f64,
    /// Initial storage as a fraction of capacity (may exceed 1 up to saturation).
    pub initial_fill: f64,
    /// Fraction of above-capacity storage drained per day.
    pub drainage_coef: f64,
    /// Initial mineral N, kg/ha.
    pub initial_n_kg_ha: f64,
    /// Net mineralization, kg/ha/day.
    pub mineralization_kg_ha_day: f64,
}

impl Default for SoilParams {
    fn default() -> Self {
        SoilParams {
            taw_mm: 150.0,
            initial_fill: 0.75,
            drainage_coef: 0.5,
            initial_n_kg_ha: 25.0,
            mineralization_kg_ha_day: 0.5,
        }
    }
}

/// Degree-day phenology parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhenologyParams {
    /// Base temperature for degree-day accumulation, deg C.
    pub tbase_c: f64,
    /// Cumulative GDD at emergence.
    pub emergence_gdd: f64,
    /// Cumulative GDD at flowering (end of vegetative growth).
    pub flowering_gdd: f64,
    /// Cumulative GDD at the start of grain fill.
    pub grain_fill_gdd: f64,
    /// Cumulative GDD at physiological maturity (harvest).
    pub maturity_gdd: f64,
    /// GDD per emerged leaf.
    pub phyllochron_gdd: f64,
    /// Leaf count ceiling.
    pub max_leaves: f64,
}

impl Default for PhenologyParams {
    fn default() -> Self {
        PhenologyParams {
            tbase_c: 8.0,
            emergence_gdd: 60.0,
            flowering_gdd: 800.0,
            grain_fill_gdd: 850.0,
            maturity_gdd: 1600.0,
            phyllochron_gdd: 50.0,
            max_leaves: 20.0,
        }
    }
}

/// Canopy and biomass-conversion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanopyParams {
    /// Beer-law light extinction coefficient.
    pub extinction_k: f64,
    /// Radiation-use efficiency, g dry matter per MJ intercepted.
    pub rue_g_mj: f64,
    /// Leaf area index ceiling.
    pub max_lai: f64,
    /// Fraction of each grain-fill day's growth routed to grain.
    pub grain_fraction: f64,
    /// Hard ceiling on grain as a fraction of total biomass.
    pub max_harvest_index: f64,
}

impl Default for CanopyParams {
    fn default() -> Self {
        CanopyParams {
            extinction_k: 0.6,
            rue_g_mj: 3.0,
            max_lai: 5.0,
            grain_fraction: 0.75,
            max_harvest_index: 0.5,
        }
    }
}

/// Full simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub planting_day_of_year: u16,
    /// Hard cap on episode length, days after planting.
    pub max_season_days: usize,
    pub soil: SoilParams,
    pub phenology: PhenologyParams,
    pub canopy: CanopyParams,
    /// Plant population, plants/m^2 (reported, not dynamic).
    pub plant_population: f64,
    /// Base seed for seeded experiment plumbing built on top of the
    /// environment; the daily dynamics themselves draw no random numbers.
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            planting_day_of_year: 60,
            max_season_days: 160,
            soil: SoilParams::default(),
            phenology: PhenologyParams::default(),
            canopy: CanopyParams::default(),
            plant_population: 7.0,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=366).contains(&self.planting_day_of_year) {
            return Err(Error::invalid_argument(format!(
                "planting_day_of_year {} outside 1..=366",
                self.planting_day_of_year
            )));
        }
        if self.max_season_days == 0 {
            return Err(Error::invalid_argument("max_season_days must be >= 1"));
        }
        let s = &self.soil;
        if !(0.0..=1.0).contains(&s.drainage_coef) {
            return Err(Error::invalid_argument(format!(
                "drainage_coef {} outside [0, 1]",
                s.drainage_coef
            )));
        }
        if !(0.0..=SATURATION_FACTOR).contains(&s.initial_fill) {
            return Err(Error::invalid_argument(format!(
                "initial_fill {} outside [0, {SATURATION_FACTOR}]",
                s.initial_fill
            )));
        }
        let p = &self.phenology;
        let thresholds = [
            p.emergence_gdd,
            p.flowering_gdd,
            p.grain_fill_gdd,
            p.maturity_gdd,
        ];
        if !thresholds.windows(2).all(|w| w[0] < w[1]) || thresholds[0] <= 0.0 {
            return Err(Error::invalid_argument(format!(
                "stage thresholds must be positive and strictly increasing, got {thresholds:?}"
            )));
        }
        let positives = [
            ("taw_mm", s.taw_mm),
            ("initial_n_kg_ha", s.initial_n_kg_ha),
            ("mineralization_kg_ha_day", s.mineralization_kg_ha_day),
            ("phyllochron_gdd", p.phyllochron_gdd),
            ("max_leaves", p.max_leaves),
            ("extinction_k", self.canopy.extinction_k),
            ("rue_g_mj", self.canopy.rue_g_mj),
            ("max_lai", self.canopy.max_lai),
            ("plant_population", self.plant_population),
        ];
        for (name, v) in positives {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid_argument(format!(
                    "{name} {v} must be finite and >= 0"
                )));
            }
        }
        for (name, v) in [("taw_mm", s.taw_mm), ("phyllochron_gdd", p.phyllochron_gdd)] {
            if v <= 0.0 {
                return Err(Error::invalid_argument(format!("{name} must be > 0")));
            }
        }
        for (name, f) in [
            ("grain_fraction", self.canopy.grain_fraction),
            ("max_harvest_index", self.canopy.max_harvest_index),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid_argument(format!("{name} {f} outside [0, 1]")));
            }
        }
        if !self.phenology.tbase_c.is_finite() {
            return Err(Error::invalid_argument("tbase_c must be finite"));
        }
        Ok(())
    }
}

/// Storage above `SATURATION_FACTOR * taw_mm` runs off the same day.
const SATURATION_FACTOR: f64 = 1.2;
/// Exponential-moving-average rate of the canopy stress memory.
const STRESS_MEMORY_RATE: f64 = 0.1;
/// Fraction of a fertilizer application lost to volatilization.
const VOLATILIZATION_FRACTION: f64 = 0.05;
/// Days over which that loss is spread, starting the day after application.
const VOLATILIZATION_DAYS: u8 = 5;
/// Denitrified fraction of the mineral pool on days above field capacity.
const DENITRIFICATION_FRACTION: f64 = 0.02;
/// N demand per kg of potential growth before flowering.
const N_DEMAND_FRAC_EARLY: f64 = 0.015;
/// N demand per kg of potential growth at maturity.
const N_DEMAND_FRAC_LATE: f64 = 0.010;
/// Canopy senescence floor as a fraction of the flowering LAI.
const SENESCENCE_FLOOR: f64 = 0.2;
/// Grain N content is this fraction of cumulative N uptake.
const GRAIN_N_SHARE: f64 = 0.6;

/// Growth stages in order; the numeric code is what observations report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Sowing = 0,
    Vegetative = 1,
    Flowering = 2,
    GrainFill = 3,
    Maturity = 4,
}

impl Stage {
    pub fn code(self) -> u8 {
        self as u8
    }

    fn from_gdd(cum_gdd: f64, p: &PhenologyParams) -> Stage {
        if cum_gdd >= p.maturity_gdd {
            Stage::Maturity
        } else if cum_gdd >= p.grain_fill_gdd {
            Stage::GrainFill
        } else if cum_gdd >= p.flowering_gdd {
            Stage::Flowering
        } else if cum_gdd >= p.emergence_gdd {
            Stage::Vegetative
        } else {
            Stage::Sowing
        }
    }
}

/// Degree-day accumulation for one day: max(0, (tmax + tmin)/2 - tbase).
pub fn gdd(tmax: f64, tmin: f64, tbase: f64) -> Result<f64> {
    if tmin > tmax {
        return Err(Error::invalid_argument(format!(
            "tmin {tmin} > tmax {tmax}"
        )));
    }
    Ok(((tmax + tmin) / 2.0 - tbase).max(0.0))
}

/// Number of reported state variables.
pub const FULL_OBS_LEN: usize = 28;
/// Number of variables available to partial-observation policies.
pub const PARTIAL_OBS_LEN: usize = 12;

/// Reported variable names, in fixed order. The first [`PARTIAL_OBS_LEN`]
/// entries form the partial observation.
pub const FULL_OBS_NAMES: [&str; FULL_OBS_LEN] = [
    "cumsumfert",
    "dap",
    "dtt",
    "istage",
    "vstage",
    "pltpop",
    "rain",
    "srad",
    "tmax",
    "tmin",
    "sw",
    "xlai",
    "nstres",
    "pcngrn",
    "swfac",
    "tleachd",
    "grnwt",
    "cleach",
    "cnox",
    "tnoxd",
    "trnu",
    "wtnup",
    "topwt",
    "es",
    "runoff",
    "wtdep",
    "rtdep",
    "totaml",
];

/// All reported variables, as a fixed-order vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FullObservation(pub [f64; FULL_OBS_LEN]);

/// The reduced vector available to partial-observation policies.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialObservation(pub [f64; PARTIAL_OBS_LEN]);

impl FullObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Projects onto the partially observable variables (a prefix by layout).
    pub fn partial(&self) -> PartialObservation {
        let mut out = [0.0; PARTIAL_OBS_LEN];
        out.copy_from_slice(&self.0[..PARTIAL_OBS_LEN]);
        PartialObservation(out)
    }
}

impl PartialObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Complete simulator state: reported variables plus internal pools.
#[derive(Debug, Clone, PartialEq)]
pub struct CropState {
    // Internal pools and carries (not reported directly).
    pub cum_gdd: f64,
    /// Soil water storage, mm (absolute, 0 ..= saturation).
    pub storage_mm: f64,
    /// Mineral N pool, kg/ha.
    pub soil_n_kg_ha: f64,
    stress_memory: f64,
    lai_at_flowering: Option<f64>,
    /// Pending volatilization: (days left, kg/ha released per day).
    volat_queue: Vec<(u8, f64)>,

    // Reported variables (same meaning as FULL_OBS_NAMES).
    pub cumsumfert: f64,
    pub dap: u32,
    pub dtt: f64,
    pub istage: Stage,
    pub vstage: f64,
    pub pltpop: f64,
    pub rain: f64,
    pub srad: f64,
    pub tmax: f64,
    pub tmin: f64,
    pub sw: f64,
    pub xlai: f64,
    pub nstres: f64,
    pub pcngrn: f64,
    pub swfac: f64,
    pub tleachd: f64,
    pub grnwt: f64,
    pub cleach: f64,
    pub cnox: f64,
    pub tnoxd: f64,
    pub trnu: f64,
    pub wtnup: f64,
    pub topwt: f64,
    pub es: f64,
    pub runoff: f64,
    pub wtdep: f64,
    pub rtdep: f64,
    pub totaml: f64,
}

impl CropState {
    /// The reported vector, in [`FULL_OBS_NAMES`] order.
    pub fn observe_full(&self) -> FullObservation {
        FullObservation([
            self.cumsumfert,
            self.dap as f64,
            self.dtt,
            self.istage.code() as f64,
            self.vstage,
            self.pltpop,
            self.rain,
            self.srad,
            self.tmax,
            self.tmin,
            self.sw,
            self.xlai,
            self.nstres,
            self.pcngrn,
            self.swfac,
            self.tleachd,
            self.grnwt,
            self.cleach,
            self.cnox,
            self.tnoxd,
            self.trnu,
            self.wtnup,
            self.topwt,
            self.es,
            self.runoff,
            self.wtdep,
            self.rtdep,
            self.totaml,
        ])
    }

    pub fn observe_partial(&self) -> PartialObservation {
        self.observe_full().partial()
    }
}

/// Per-step flux components; both ledgers close to rounding error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepAudit {
    // Water, mm.
    pub rain: f64,
    pub irrigation: f64,
    pub runoff: f64,
    pub drainage: f64,
    pub transpiration: f64,
    pub soil_evaporation: f64,
    pub storage_before: f64,
    pub storage_after: f64,
    // Nitrogen, kg/ha.
    pub fertilizer: f64,
    pub mineralization: f64,
    pub uptake: f64,
    pub leached: f64,
    pub denitrified: f64,
    pub volatilized: f64,
    pub n_before: f64,
    pub n_after: f64,
}

impl StepAudit {
    pub fn water_in(&self) -> f64 {
        self.rain + self.irrigation
    }

    pub fn water_out(&self) -> f64 {
        self.runoff + self.drainage + self.transpiration + self.soil_evaporation
    }

    pub fn water_residual(&self) -> f64 {
        self.water_in() - self.water_out() - (self.storage_after - self.storage_before)
    }

    pub fn n_in(&self) -> f64 {
        self.fertilizer + self.mineralization
    }

    pub fn n_out(&self) -> f64 {
        self.uptake + self.leached + self.denitrified + self.volatilized
    }

    pub fn n_residual(&self) -> f64 {
        self.n_in() - self.n_out() - (self.n_after - self.n_before)
    }
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: FullObservation,
    /// Fertilizer applied this step, kg/ha.
    pub n_applied: f64,
    /// Irrigation applied this step, mm.
    pub water_applied: f64,
    /// Nitrate leached this step, kg/ha.
    pub n_leached: f64,
    /// Grain yield, kg/ha; present only when the step reached maturity.
    pub harvest_yield: Option<f64>,
    pub done: bool,
    pub audit: StepAudit,
}

/// Season-level closure report over an episode's audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceReport {
    pub water_in: f64,
    pub water_out: f64,
    pub water_storage_delta: f64,
    /// |in - out - delta| / max(in, 1).
    pub water_residual_rel: f64,
    pub n_in: f64,
    pub n_out: f64,
    pub n_pool_delta: f64,
    pub n_residual_rel: f64,
}

/// Sums an episode's step audits and reports both closure residuals.
pub fn audit_episode(audits: &[StepAudit]) -> BalanceReport {
    let mut water_in = 0.0;
    let mut water_out = 0.0;
    let mut n_in = 0.0;
    let mut n_out = 0.0;
    for a in audits {
        water_in += a.water_in();
        water_out += a.water_out();
        n_in += a.n_in();
        n_out += a.n_out();
    }
    let (water_delta, n_delta) = match (audits.first(), audits.last()) {
        (Some(first), Some(last)) => (
            last.storage_after - first.storage_before,
            last.n_after - first.n_before,
        ),
        _ => (0.0, 0.0),
    };
    BalanceReport {
        water_in,
        water_out,
        water_storage_delta: water_delta,
        water_residual_rel: (water_in - water_out - water_delta).abs() / water_in.max(1.0),
        n_in,
        n_out,
        n_pool_delta: n_delta,
        n_residual_rel: (n_in - n_out - n_delta).abs() / n_in.max(1.0),
    }
}

/// The daily-step environment. One instance is single-threaded; independent
/// instances never share state.
#[derive(Debug, Clone)]
pub struct CropEnv {
    config: SimConfig,
    weather: WeatherSeries,
    state: CropState,
    done: bool,
}

impl CropEnv {
    /// Builds and resets an environment; the weather must cover a full season.
    pub fn new(config: SimConfig, weather: WeatherSeries) -> Result<Self> {
        config.validate()?;
        if weather.len() < config.max_season_days {
            return Err(Error::invalid_argument(format!(
                "weather has {} days, need at least max_season_days = {}",
                weather.len(),
                config.max_season_days
            )));
        }
        let state = Self::initial_state(&config, &weather);
        Ok(CropEnv {
            config,
            weather,
            state,
            done: false,
        })
    }

    fn initial_state(config: &SimConfig, weather: &WeatherSeries) -> CropState {
        let day0 = weather.day(0);
        let storage = config.soil.initial_fill * config.soil.taw_mm;
        let mut state = CropState {
            cum_gdd: 0.0,
            storage_mm: storage,
            soil_n_kg_ha: config.soil.initial_n_kg_ha,
            stress_memory: 1.0,
            lai_at_flowering: None,
            volat_queue: Vec::new(),
            cumsumfert: 0.0,
            dap: 0,
            dtt: gdd(day0.tmax, day0.tmin, config.phenology.tbase_c).unwrap_or(0.0),
            istage: Stage::Sowing,
            vstage: 0.0,
            pltpop: config.plant_population,
            rain: day0.rain,
            srad: day0.srad,
            tmax: day0.tmax,
            tmin: day0.tmin,
            sw: 0.0,
            xlai: 0.0,
            nstres: 1.0,
            pcngrn: 0.0,
            swfac: 1.0,
            tleachd: 0.0,
            grnwt: 0.0,
            cleach: 0.0,
            cnox: 0.0,
            tnoxd: 0.0,
            trnu: 0.0,
            wtnup: 0.0,
            topwt: 0.0,
            es: 0.0,
            runoff: 0.0,
            wtdep: 200.0,
            rtdep: 5.0,
            totaml: 0.0,
        };
        state.sw = (storage / config.soil.taw_mm).min(1.0);
        state.swfac = (storage / (0.5 * config.soil.taw_mm)).clamp(0.0, 1.0);
        state
    }

    /// Reinitializes to day 0 and returns the initial observation.
    pub fn reset(&mut self) -> FullObservation {
        self.state = Self::initial_state(&self.config, &self.weather);
        self.done = false;
        self.state.observe_full()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn state(&self) -> &CropState {
        &self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn observe_full(&self) -> FullObservation {
        self.state.observe_full()
    }

    pub fn observe_partial(&self) -> PartialObservation {
        self.state.observe_partial()
    }

    /// Day of year of the day the next step will simulate (or, once done,
    /// of the last simulated day).
    pub fn current_day_of_year(&self) -> u16 {
        let idx = (self.state.dap as usize).min(self.weather.len() - 1);
        self.weather.day_of_year(idx)
    }

    /// Advances one day under `action`.
    pub fn step(&mut self, action: ActionAmounts) -> Result<StepResult> {
        if self.done {
            return Err(Error::state("step called on a finished episode"));
        }
        let p = self.config.phenology.clone();
        let c = self.config.canopy.clone();
        let soil = self.config.soil.clone();
        let day = *self.weather.day(self.state.dap as usize);
        let s = &mut self.state;

        // --- Phenology and canopy ---------------------------------------
        let dtt = gdd(day.tmax, day.tmin, p.tbase_c)?;
        s.cum_gdd += dtt;
        s.istage = s.istage.max(Stage::from_gdd(s.cum_gdd, &p));
        s.vstage = (s.cum_gdd / p.phyllochron_gdd).min(p.max_leaves);
        s.rtdep = (5.0 + s.cum_gdd / 30.0).min(60.0);
        // Stress memory lags one day: it is fed by the stresses reported at
        // the end of the previous step.
        s.stress_memory = (1.0 - STRESS_MEMORY_RATE) * s.stress_memory
            + STRESS_MEMORY_RATE * s.swfac.min(s.nstres);
        if s.cum_gdd < p.flowering_gdd {
            s.xlai = c.max_lai * (s.vstage / p.max_leaves) * s.stress_memory;
        } else {
            let peak = *s.lai_at_flowering.get_or_insert(s.xlai);
            let frac = ((s.cum_gdd - p.flowering_gdd) / (p.maturity_gdd - p.flowering_gdd))
                .clamp(0.0, 1.0);
            s.xlai = peak * (1.0 - (1.0 - SENESCENCE_FLOOR) * frac);
        }
        let cover = 1.0 - (-c.extinction_k * s.xlai).exp();

        // --- Water balance ----------------------------------------------
        let mut audit = StepAudit {
            rain: day.rain,
            irrigation: action.water,
            storage_before: s.storage_mm,
            n_before: s.soil_n_kg_ha,
            fertilizer: action.n_fert,
            mineralization: soil.mineralization_kg_ha_day,
            ..StepAudit::default()
        };
        let saturation = SATURATION_FACTOR * soil.taw_mm;
        s.storage_mm += day.rain + action.water;
        audit.runoff = (s.storage_mm - saturation).max(0.0);
        s.storage_mm -= audit.runoff;
        audit.drainage = soil.drainage_coef * (s.storage_mm - soil.taw_mm).max(0.0);
        s.storage_mm -= audit.drainage;

        let tmean = (day.tmax + day.tmin) / 2.0;
        let et0 = (0.0135 * (day.srad / 2.45) * (tmean + 17.8)).max(0.0);
        s.swfac = (s.storage_mm / (0.5 * soil.taw_mm)).clamp(0.0, 1.0);
        audit.transpiration = (et0 * cover * s.swfac).min(s.storage_mm);
        s.storage_mm -= audit.transpiration;
        audit.soil_evaporation =
            (et0 * (1.0 - cover) * (s.storage_mm / soil.taw_mm).min(1.0)).min(s.storage_mm);
        s.storage_mm -= audit.soil_evaporation;
        audit.storage_after = s.storage_mm;

        // --- Nitrogen balance -------------------------------------------
        s.soil_n_kg_ha += soil.mineralization_kg_ha_day;
        let mut volat_due = 0.0;
        for entry in &mut s.volat_queue {
            volat_due += entry.1;
            entry.0 -= 1;
        }
        s.volat_queue.retain(|&(days_left, _)| days_left > 0);
        audit.volatilized = volat_due.min(s.soil_n_kg_ha);
        s.soil_n_kg_ha -= audit.volatilized;

        s.soil_n_kg_ha += action.n_fert;
        if action.n_fert > 0.0 {
            s.volat_queue.push((
                VOLATILIZATION_DAYS,
                VOLATILIZATION_FRACTION * action.n_fert / VOLATILIZATION_DAYS as f64,
            ));
        }

        let growth_potential = 10.0 * c.rue_g_mj * day.srad * cover;
        let late_frac = ((s.cum_gdd - p.flowering_gdd) / (p.maturity_gdd - p.flowering_gdd))
            .clamp(0.0, 1.0);
        let demand_frac =
            N_DEMAND_FRAC_EARLY + (N_DEMAND_FRAC_LATE - N_DEMAND_FRAC_EARLY) * late_frac;
        let demand = demand_frac * growth_potential;
        audit.uptake = demand.min(s.soil_n_kg_ha);
        s.soil_n_kg_ha -= audit.uptake;
        s.nstres = if demand > 0.0 {
            (audit.uptake / demand).clamp(0.0, 1.0)
        } else {
            1.0
        };

        audit.leached = s.soil_n_kg_ha * (audit.drainage / soil.taw_mm);
        s.soil_n_kg_ha -= audit.leached;
        audit.denitrified = if s.storage_mm > soil.taw_mm {
            DENITRIFICATION_FRACTION * s.soil_n_kg_ha
        } else {
            0.0
        };
        s.soil_n_kg_ha -= audit.denitrified;
        audit.n_after = s.soil_n_kg_ha;

        // --- Growth ------------------------------------------------------
        let growth = growth_potential * s.swfac.min(s.nstres);
        s.topwt += growth;
        if s.istage == Stage::GrainFill {
            // Route a fixed share of growth to grain, never letting the
            // harvest index exceed its ceiling.
            let headroom = (c.max_harvest_index * s.topwt - s.grnwt).max(0.0);
            s.grnwt += (c.grain_fraction * growth).min(headroom);
        }

        // --- Reporting ---------------------------------------------------
        s.dap += 1;
        s.cumsumfert += action.n_fert;
        s.tleachd = audit.leached;
        s.cleach += audit.leached;
        s.tnoxd = audit.denitrified;
        s.cnox += audit.denitrified;
        s.trnu = audit.uptake;
        s.wtnup += audit.uptake;
        s.totaml += audit.volatilized;
        s.es = audit.soil_evaporation;
        s.runoff = audit.runoff;
        s.sw = (s.storage_mm / soil.taw_mm).min(1.0);
        s.pcngrn = if s.grnwt > 0.0 {
            (GRAIN_N_SHARE * s.wtnup / s.grnwt).min(1.0)
        } else {
            0.0
        };
        let next_idx = (s.dap as usize).min(self.weather.len() - 1);
        let next_day = self.weather.day(next_idx);
        s.rain = next_day.rain;
        s.srad = next_day.srad;
        s.tmax = next_day.tmax;
        s.tmin = next_day.tmin;
        s.dtt = gdd(next_day.tmax, next_day.tmin, p.tbase_c).unwrap_or(0.0);

        let mature = s.cum_gdd >= p.maturity_gdd;
        self.done = mature || s.dap as usize >= self.config.max_season_days;
        let harvest_yield = mature.then_some(s.grnwt);

        Ok(StepResult {
            observation: s.observe_full(),
            n_applied: action.n_fert,
            water_applied: action.water,
            n_leached: audit.leached,
            harvest_yield,
            done: self.done,
            audit,
        })
    }
}
