//! Management actions: nitrogen fertilizer and irrigation amounts, and the
//! 25-element discrete grid used by the Q-learning agent.
//!
//! The discrete space is the Cartesian grid
//! `{0, 40, 80, 120, 160} kg/ha N x {0, 6, 12, 18, 24} mm water`,
//! indexed row-major by nitrogen level then water level.

use crate::error::{Error, Result};

/// Upper bound of the nitrogen component, kg/ha.
pub const N_MAX: f64 = 160.0;
/// Upper bound of the irrigation component, mm.
pub const WATER_MAX: f64 = 24.0;
/// Grid spacing of the nitrogen component, kg/ha.
pub const N_STEP: f64 = 40.0;
/// Grid spacing of the irrigation component, mm.
pub const WATER_STEP: f64 = 6.0;
/// Levels per component.
pub const LEVELS: usize = 5;
/// Size of the discrete action space.
pub const NUM_ACTIONS: usize = LEVELS * LEVELS;

/// A daily management action: fertilizer in kg/ha and irrigation in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionAmounts {
    pub n_fert: f64,
    pub water: f64,
}

impl ActionAmounts {
    /// Validates the closed box `[0, 160] x [0, 24]` and finiteness.
    pub fn new(n_fert: f64, water: f64) -> Result<Self> {
        if !n_fert.is_finite() || !water.is_finite() {
            return Err(Error::invalid_argument("action components must be finite"));
        }
        if !(0.0..=N_MAX).contains(&n_fert) {
            return Err(Error::invalid_argument(format!(
                "n_fert {n_fert} outside [0, {N_MAX}] kg/ha"
            )));
        }
        if !(0.0..=WATER_MAX).contains(&water) {
            return Err(Error::invalid_argument(format!(
                "water {water} outside [0, {WATER_MAX}] mm"
            )));
        }
        Ok(ActionAmounts { n_fert, water })
    }

    /// The do-nothing action.
    pub fn zero() -> Self {
        ActionAmounts {
            n_fert: 0.0,
            water: 0.0,
        }
    }
}

/// Index into the 25-element discrete action grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionIndex(u8);

impl ActionIndex {
    pub fn new(index: usize) -> Result<Self> {
        if index >= NUM_ACTIONS {
            return Err(Error::invalid_argument(format!(
                "action index {index} >= {NUM_ACTIONS}"
            )));
        }
        Ok(ActionIndex(index as u8))
    }

    pub fn value(self) -> usize {
        self.0 as usize
    }

    /// All 25 indices in order.
    pub fn all() -> impl Iterator<Item = ActionIndex> {
        (0..NUM_ACTIONS).map(|i| ActionIndex(i as u8))
    }
}

/// Maps index `5*i + j` to `(40*i kg/ha, 6*j mm)`.
pub fn decode_action(index: ActionIndex) -> ActionAmounts {
    let i = index.value() / LEVELS;
    let j = index.value() % LEVELS;
    ActionAmounts {
        n_fert: N_STEP * i as f64,
        water: WATER_STEP * j as f64,
    }
}

/// Inverse of [`decode_action`]; rejects off-grid amounts.
pub fn encode_action(action: ActionAmounts) -> Result<ActionIndex> {
    let i = action.n_fert / N_STEP;
    let j = action.water / WATER_STEP;
    if i.fract() != 0.0 || j.fract() != 0.0 {
        return Err(Error::invalid_argument(format!(
            "action ({}, {}) is not on the discrete grid",
            action.n_fert, action.water
        )));
    }
    ActionIndex::new(i as usize * LEVELS + j as usize)
}

/// Snaps each component independently to the nearest grid value.
///
/// Exact midpoints round down, toward the smaller input.
pub fn round_to_grid(action: ActionAmounts) -> ActionAmounts {
    ActionAmounts {
        n_fert: snap(action.n_fert, N_STEP, LEVELS),
        water: snap(action.water, WATER_STEP, LEVELS),
    }
}

fn snap(value: f64, step: f64, levels: usize) -> f64 {
    let clamped = value.clamp(0.0, step * (levels - 1) as f64);
    let lo = (clamped / step).floor();
    let frac = clamped / step - lo;
    let k = if frac > 0.5 { lo + 1.0 } else { lo };
    k * step
}
