//! Experiment configuration.
//!
//! Files are TOML: one table per section, `section.key = value` semantics,
//! and every unknown key is rejected. Missing keys fall back to the
//! defaults below, which reproduce the reference experiment.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::adaptation::AdaptationGains;
use crate::controller::{ControlGains, Switching};
use crate::dnn::Activation;
use crate::error::{Error, Result};
use crate::plant::{RobotParams, TrajectoryMode, DOF};
use crate::skew_observer::SkewGains;

pub const SEED_ENV: &str = "SSLBPINN_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Skew-regularized adaptation.
    #[default]
    Developed,
    /// Tracking-error-only adaptation.
    Baseline,
    /// True model as feedforward, no adaptation.
    OracleFeedforward,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "developed" => Ok(Mode::Developed),
            "baseline" => Ok(Mode::Baseline),
            "oracle_feedforward" => Ok(Mode::OracleFeedforward),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub duration_s: f64,
    pub dt_s: f64,
    pub seed: u64,
    pub noise: bool,
    pub snr_db: f64,
    pub mode: Mode,
    pub trajectory: TrajectoryMode,
    pub initial_q: [f64; 2],
    pub initial_q_dot: [f64; 2],
    /// Start on the desired trajectory instead of `initial_q`/`initial_q_dot`.
    pub start_on_trajectory: bool,
    /// Radius of the monitored DNN input region for ‖q‖ and ‖q̇‖.
    pub excursion_radius: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            duration_s: 50.0,
            dt_s: 0.001,
            seed: 0,
            noise: true,
            snr_db: 60.0,
            mode: Mode::Developed,
            trajectory: TrajectoryMode::Literal,
            initial_q: [0.4, -0.3],
            initial_q_dot: [0.0, 0.0],
            start_on_trajectory: false,
            excursion_radius: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSettings {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            width: 7,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSettings {
    /// `0` keeps the discontinuous sign; `κ > 0` uses `tanh(κ·)`.
    pub sgn_smoothing: f64,
}

impl ControllerSettings {
    pub fn switching(&self) -> Switching {
        Switching::from_smoothing(self.sgn_smoothing)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub sim: SimSettings,
    pub plant: RobotParams,
    pub gains: ControlGains,
    pub controller: ControllerSettings,
    pub adaptation: AdaptationGains,
    pub skew: SkewGains,
    pub network: NetworkSettings,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Apply `SSLBPINN_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.sim.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Mode after folding in `skew.enabled = false`.
    pub fn effective_mode(&self) -> Mode {
        match self.sim.mode {
            Mode::Developed if !self.skew.enabled => Mode::Baseline,
            m => m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        if !(s.dt_s.is_finite() && s.dt_s > 0.0) {
            return Err(Error::Config("sim.dt_s must be positive".into()));
        }
        if !(s.duration_s.is_finite() && s.duration_s >= s.dt_s) {
            return Err(Error::Config("sim.duration_s must be at least sim.dt_s".into()));
        }
        if s.noise && !(s.snr_db.is_finite() && s.snr_db > 0.0) {
            return Err(Error::Config("sim.snr_db must be positive when noise is on".into()));
        }
        if s.excursion_radius.is_nan() || s.excursion_radius <= 0.0 {
            return Err(Error::Config("sim.excursion_radius must be positive".into()));
        }
        if s.initial_q.iter().chain(&s.initial_q_dot).any(|v| !v.is_finite()) {
            return Err(Error::Config("initial state must be finite".into()));
        }
        if self.network.width == 0 {
            return Err(Error::Config("network.width must be at least 1".into()));
        }
        if self.controller.sgn_smoothing.is_nan() || self.controller.sgn_smoothing < 0.0 {
            return Err(Error::Config("controller.sgn_smoothing must be >= 0".into()));
        }
        self.plant.validate()?;
        self.gains.validate()?;
        self.adaptation.validate()?;
        self.skew.validate(DOF)?;
        Ok(())
    }

    /// SHA-256 of the canonical serialized config, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
