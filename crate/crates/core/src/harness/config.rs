use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bifnoe::BifnoeConfig;
use crate::error::{Error, Result};
use crate::fusion::FilterModel;
use crate::protocol::Schedule;
use crate::sensing::NoiseCov;
use crate::tracking::TrackerConfig;
use crate::world::WorldConfig;

/// How per-vehicle errors are pooled into one fleet-level MSE per tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over every (CAV, target) pair in the fleet.
    Pairs,
    /// Mean over CAVs of each CAV's own MSE.
    Vehicles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    /// V2V broadcast frequency; defaults to `f_sim`.
    pub f_bdc: Option<f64>,
    pub f_upl: f64,
    /// Noise publish frequency; 0 disables the subscription.
    pub f_sub: f64,
    pub duration_s: f64,
    /// Per-axis std of the noise assumed when nothing better is known, m.
    pub default_sigma: f64,
    pub latency_ticks: u64,
    /// Run the true-R stacks that define the estimation limits.
    pub limits: bool,
    /// Worker threads for per-vehicle work; 0 lets the pool decide.
    pub workers: usize,
    /// Start times of the one-second improvement buckets, s.
    pub t0s: Vec<f64>,
    pub pooling: Pooling,
    /// Write every V2C message to `trace.msgs`.
    pub trace: bool,
    /// Tracker of every CAV's distributed filter.
    pub tracker: TrackerConfig,
    /// Tracker of the edge's centralized filters.
    pub edge_tracker: TrackerConfig,
    pub bifnoe: BifnoeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldConfig::default(),
            f_bdc: None,
            f_upl: 10.0,
            f_sub: 10.0,
            duration_s: 15.0,
            default_sigma: 2.5,
            latency_ticks: 0,
            limits: true,
            workers: 0,
            t0s: vec![1.0, 2.0, 5.0, 10.0],
            pooling: Pooling::Pairs,
            trace: false,
            tracker: TrackerConfig::default(),
            edge_tracker: TrackerConfig { birth_exclusion: 2.0, ..Default::default() },
            bifnoe: BifnoeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.schedule().validate()?;
        self.bifnoe.validate()?;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::config("duration_s", format!("must be positive, got {}", self.duration_s)));
        }
        if !(self.default_sigma.is_finite() && self.default_sigma > 0.0) {
            return Err(Error::config("default_sigma", format!("must be positive, got {}", self.default_sigma)));
        }
        if let Some(t0) = self.t0s.iter().find(|&&t0| !(t0 >= 0.0 && t0 + 1.0 <= self.duration_s + 1e-9)) {
            return Err(Error::config("t0s", format!("bucket [{t0}, {t0}+1) s is outside the run")));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            f_sim: self.world.f_sim,
            f_bdc: self.f_bdc.unwrap_or(self.world.f_sim),
            f_upl: self.f_upl,
            f_sub: self.f_sub,
        }
    }

    pub fn ticks(&self) -> u64 {
        (self.duration_s * self.world.f_sim).round() as u64
    }

    pub fn model(&self) -> FilterModel {
        FilterModel::constant_velocity(self.world.dt(), self.world.q)
    }

    pub fn default_noise(&self) -> Result<NoiseCov> {
        NoiseCov::isotropic(self.default_sigma)
    }

    /// Paper-scale fleet: 100 CAVs and 100 normal vehicles.
    pub fn full_scale(mut self) -> Self {
        self.world.n_cavs = 100;
        self.world.n_normal = 100;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
