//! Cluster profile parameters and the per-node-hour energy coefficient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Energy,
    Cost,
    Performance,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Energy, Profile::Cost, Profile::Performance];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Energy => "energy",
            Profile::Cost => "cost",
            Profile::Performance => "performance",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "energy" => Ok(Profile::Energy),
            "cost" => Ok(Profile::Cost),
            "performance" => Ok(Profile::Performance),
            other => Err(format!("unknown profile `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCoefficientInput {
    /// Average idle power per vCPU, watts.
    pub w_idle: f64,
    /// Average power at full load per vCPU, watts.
    pub w_max: f64,
    pub pue: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("w_idle ({w_idle}) exceeds w_max ({w_max})")]
    IdleAboveMax { w_idle: f64, w_max: f64 },
    #[error("pue must be at least 1, got {0}")]
    PueBelowOne(f64),
    #[error("power values must be finite and non-negative")]
    InvalidPower,
}

impl EnergyCoefficientInput {
    /// Amazon Web Services averages. The idle figure is carried to four
    /// decimals; the commonly quoted rounded 0.74 W gives 0.0024062 kWh.
    pub const AWS: EnergyCoefficientInput = EnergyCoefficientInput { w_idle: 0.7365, w_max: 3.5, pue: 1.135 };
    /// Google Cloud averages.
    pub const GCP: EnergyCoefficientInput = EnergyCoefficientInput { w_idle: 0.71, w_max: 4.26, pue: 1.1 };

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.w_idle.is_finite() && self.w_max.is_finite() && self.w_idle >= 0.0) {
            return Err(ParamError::InvalidPower);
        }
        if self.w_idle > self.w_max {
            return Err(ParamError::IdleAboveMax { w_idle: self.w_idle, w_max: self.w_max });
        }
        if self.pue.is_nan() || self.pue < 1.0 {
            return Err(ParamError::PueBelowOne(self.pue));
        }
        Ok(())
    }
}

/// Energy for one node-hour in kWh: `((w_idle + w_max) / 2) * pue * 1h / 1000`.
pub fn energy_coefficient(input: EnergyCoefficientInput) -> Result<f64, ParamError> {
    input.validate()?;
    Ok((input.w_idle + input.w_max) / 2.0 * input.pue / 1000.0)
}

pub fn midpoint(a: f64, b: f64) -> f64 {
    (a + b) / 2.0
}

/// Rounds half away from zero to `decimals` places, as published tables do.
pub fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    // nudge by a relative epsilon so exact decimal halves are not lost to binary representation
    let scaled = x * scale;
    (scaled + scaled.signum() * scaled.abs() * 1e-12).round() / scale
}

/// Per-node attributes assigned to one cluster profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    /// kWh per node-hour.
    pub energy: f64,
    /// EUR per hour.
    pub pricing: f64,
    /// Gbps.
    pub bandwidth: f64,
    pub cpu: f64,
    /// GiB.
    pub memory: f64,
    /// GiB.
    pub storage: f64,
}

pub const COST_MIN: f64 = 0.0042;
pub const COST_MAX: f64 = 32.7726;
pub const BANDWIDTH_MIN: f64 = 5.0;
pub const BANDWIDTH_MAX: f64 = 100.0;

/// Synthetic capacity of a performance-profile worker.
pub const BASELINE_CPU: f64 = 8.0;
pub const BASELINE_MEMORY: f64 = 16.0;
pub const BASELINE_STORAGE: f64 = 100.0;
/// Reserved resources deducted on energy and cost profile workers.
pub const RESERVED_CPU: f64 = 4.0;
pub const RESERVED_MEMORY: f64 = 5.0;
pub const RESERVED_STORAGE: f64 = 2.0;

/// The published parameter table, energy rounded to seven decimals.
pub fn table(profile: Profile) -> ProfileParams {
    let (energy, pricing, bandwidth) = match profile {
        Profile::Energy => (0.0024042, 16.3884, 52.5),
        Profile::Cost => (0.0025689, 0.0042, 5.0),
        Profile::Performance => (0.0027335, 32.7726, 100.0),
    };
    let (cpu, memory, storage) = capacity(profile);
    ProfileParams { energy, pricing, bandwidth, cpu, memory, storage }
}

pub fn capacity(profile: Profile) -> (f64, f64, f64) {
    match profile {
        Profile::Performance => (BASELINE_CPU, BASELINE_MEMORY, BASELINE_STORAGE),
        Profile::Energy | Profile::Cost => (
            BASELINE_CPU - RESERVED_CPU,
            BASELINE_MEMORY - RESERVED_MEMORY,
            BASELINE_STORAGE - RESERVED_STORAGE,
        ),
    }
}

/// Recomputes the table from its inputs: lowest, midpoint and highest
/// energy; midpoint, lowest and highest cost; midpoint, lowest and highest
/// bandwidth for energy, cost and performance profiles respectively.
pub fn derive(profile: Profile) -> Result<ProfileParams, ParamError> {
    let e_low = energy_coefficient(EnergyCoefficientInput::AWS)?;
    let e_high = energy_coefficient(EnergyCoefficientInput::GCP)?;
    let (energy, pricing, bandwidth) = match profile {
        Profile::Energy => (e_low, midpoint(COST_MIN, COST_MAX), midpoint(BANDWIDTH_MIN, BANDWIDTH_MAX)),
        Profile::Cost => (midpoint(round_to(e_low, 7), round_to(e_high, 7)), COST_MIN, BANDWIDTH_MIN),
        Profile::Performance => (e_high, COST_MAX, BANDWIDTH_MAX),
    };
    let (cpu, memory, storage) = capacity(profile);
    Ok(ProfileParams { energy, pricing, bandwidth, cpu, memory, storage })
}
