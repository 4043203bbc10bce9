//! Ground truth for the fleet: scenario generation, constant-velocity motion
//! with process noise, boundary reflection, and V2V connectivity.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, SeedTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl VehicleId {
    /// Placeholder target identity for detections whose ground truth is not known.
    pub const UNKNOWN: VehicleId = VehicleId(u32::MAX);
}

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Kinematic state of one vehicle: position in meters, velocity in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
}

impl TargetState {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.px, self.py)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn is_finite(&self) -> bool {
        self.px.is_finite() && self.py.is_finite() && self.vx.is_finite() && self.vy.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Number of connected automated vehicles (N).
    pub n_cavs: u32,
    /// Number of normal vehicles (M).
    pub n_normal: u32,
    pub area_side: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// Bounds on the per-axis measurement noise standard deviation.
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub r_com: f64,
    pub f_sim: f64,
    /// Process-noise acceleration std, m/s² per axis.
    pub q: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_cavs: 20,
            n_normal: 20,
            area_side: 1000.0,
            v_min: 5.0,
            v_max: 15.0,
            d_min: 100.0,
            d_max: 300.0,
            sigma_min: 0.01,
            sigma_max: 5.0,
            r_com: 150.0,
            f_sim: 10.0,
            q: 0.5,
            seed: 1,
        }
    }
}

fn finite_non_negative(field: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::config(field, format!("must be finite and >= 0, got {value}")));
    }
    Ok(())
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cavs < 1 {
            return Err(Error::config("n_cavs", "must be at least 1"));
        }
        if !(self.area_side.is_finite() && self.area_side > 0.0) {
            return Err(Error::config("area_side", "must be finite and > 0"));
        }
        finite_non_negative("v_min", self.v_min)?;
        finite_non_negative("v_max", self.v_max)?;
        if self.v_min > self.v_max {
            return Err(Error::config("v_min", "must not exceed v_max"));
        }
        if !(self.d_min.is_finite() && self.d_min > 0.0) {
            return Err(Error::config("d_min", "must be finite and > 0"));
        }
        if !self.d_max.is_finite() || self.d_min > self.d_max {
            return Err(Error::config("d_max", "must be finite and >= d_min"));
        }
        finite_non_negative("sigma_min", self.sigma_min)?;
        finite_non_negative("sigma_max", self.sigma_max)?;
        if self.sigma_min > self.sigma_max {
            return Err(Error::config("sigma_min", "must not exceed sigma_max"));
        }
        finite_non_negative("r_com", self.r_com)?;
        if !(self.f_sim.is_finite() && self.f_sim > 0.0) {
            return Err(Error::config("f_sim", "must be finite and > 0"));
        }
        finite_non_negative("q", self.q)?;
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.f_sim
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: WorldConfig =
            serde_json::from_str(text).map_err(|e| Error::config("world", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Sensing capabilities of one CAV.
#[derive(Debug, Clone, PartialEq)]
pub struct CavProfile {
    pub id: VehicleId,
    pub detection_range: f64,
    /// True measurement-noise covariance. Diagonal at generation; a zero
    /// variance axis is allowed and means noiseless sensing on that axis.
    pub noise: Matrix2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub tick: u64,
    /// Indexed by `VehicleId`. Ids `0..n_cavs` are CAVs, the rest normal vehicles.
    pub states: Vec<TargetState>,
    pub cavs: Vec<CavProfile>,
}

impl World {
    pub fn vehicle_count(&self) -> usize {
        self.states.len()
    }

    pub fn is_cav(&self, id: VehicleId) -> bool {
        (id.0 as usize) < self.cavs.len()
    }

    pub fn cav(&self, id: VehicleId) -> Result<&CavProfile> {
        self.cavs
            .get(id.0 as usize)
            .ok_or_else(|| Error::Domain(format!("vehicle {id} is not a CAV")))
    }

    pub fn cav_ids(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.cavs.iter().map(|c| c.id)
    }

    pub fn state(&self, id: VehicleId) -> Option<&TargetState> {
        self.states.get(id.0 as usize)
    }

    pub fn position(&self, id: VehicleId) -> Option<Vector2<f64>> {
        self.state(id).map(TargetState::position)
    }

    /// Advances every vehicle by one tick in place.
    pub fn advance(&mut self, config: &WorldConfig, rng: &mut impl Rng) {
        let dt = config.dt();
        let side = config.area_side;
        for s in &mut self.states {
            // Piecewise-constant acceleration over the tick.
            let ax: f64 = config.q * rng.sample::<f64, _>(StandardNormal);
            let ay: f64 = config.q * rng.sample::<f64, _>(StandardNormal);
            s.px += s.vx * dt + 0.5 * ax * dt * dt;
            s.py += s.vy * dt + 0.5 * ay * dt * dt;
            s.vx += ax * dt;
            s.vy += ay * dt;
            reflect(&mut s.px, &mut s.vx, side);
            reflect(&mut s.py, &mut s.vy, side);
        }
        self.tick += 1;
    }
}

fn reflect(p: &mut f64, v: &mut f64, side: f64) {
    // Loops only when one tick spans more than the whole area.
    while *p < 0.0 || *p > side {
        if *p < 0.0 {
            *p = -*p;
        } else {
            *p = 2.0 * side - *p;
        }
        *v = -*v;
    }
}

/// Builds the initial fleet. Deterministic in `config.seed`.
pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = SeedTree::new(config.seed).stream(Domain::Generate, 0, 0);
    let total = (config.n_cavs + config.n_normal) as usize;
    let mut states = Vec::with_capacity(total);
    for _ in 0..total {
        let px = rng.random_range(0.0..=config.area_side);
        let py = rng.random_range(0.0..=config.area_side);
        let heading = rng.random_range(0.0..2.0 * PI);
        let speed = rng.random_range(config.v_min..=config.v_max);
        states.push(TargetState {
            px,
            py,
            vx: speed * heading.cos(),
            vy: speed * heading.sin(),
        });
    }
    let mut cavs = Vec::with_capacity(config.n_cavs as usize);
    for i in 0..config.n_cavs {
        let detection_range = rng.random_range(config.d_min..=config.d_max);
        let sx = rng.random_range(config.sigma_min..=config.sigma_max);
        let sy = rng.random_range(config.sigma_min..=config.sigma_max);
        cavs.push(CavProfile {
            id: VehicleId(i),
            detection_range,
            noise: Matrix2::new(sx * sx, 0.0, 0.0, sy * sy),
        });
    }
    Ok(World {
        tick: 0,
        states,
        cavs,
    })
}

/// Returns the world one tick later; `world` is left untouched.
pub fn step_world(world: &World, config: &WorldConfig, rng: &mut impl Rng) -> World {
    let mut next = world.clone();
    next.advance(config, rng);
    next
}

/// CAVs other than `i` within `r_com` meters (inclusive), sorted by id.
/// A zero radius means no V2V link at all.
pub fn neighbors(world: &World, i: VehicleId, r_com: f64) -> Result<Vec<VehicleId>> {
    world.cav(i)?;
    if r_com <= 0.0 {
        return Ok(Vec::new());
    }
    let me = world.states[i.0 as usize].position();
    Ok(world
        .cav_ids()
        .filter(|&j| j != i && (world.states[j.0 as usize].position() - me).norm() <= r_com)
        .collect())
}
