//! Per-CAV object-level measurements: positions of every other vehicle in
//! detection range, corrupted by the CAV's Gaussian measurement noise.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{VehicleId, World};

/// Relative asymmetry tolerated (and then removed) when building a `NoiseCov`.
const SYMMETRY_TOL: f64 = 1e-9;

/// 2×2 symmetric positive-definite measurement-noise covariance, m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCov(Matrix2<f64>);

impl NoiseCov {
    pub fn new(m: Matrix2<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite covariance {m:?}")));
        }
        let scale = m.abs().max().max(f64::MIN_POSITIVE);
        if (m[(0, 1)] - m[(1, 0)]).abs() > SYMMETRY_TOL * scale {
            return Err(Error::Numeric(format!("covariance not symmetric: {m:?}")));
        }
        let sym = (m + m.transpose()) * 0.5;
        if sym.cholesky().is_none() || min_eigenvalue(&sym) <= 0.0 {
            return Err(Error::Numeric(format!("covariance not positive definite: {m:?}")));
        }
        Ok(NoiseCov(sym))
    }

    pub fn from_entries(r11: f64, r12: f64, r22: f64) -> Result<Self> {
        Self::new(Matrix2::new(r11, r12, r12, r22))
    }

    pub fn diag(v1: f64, v2: f64) -> Result<Self> {
        Self::from_entries(v1, 0.0, v2)
    }

    pub fn isotropic(sigma: f64) -> Result<Self> {
        Self::diag(sigma * sigma, sigma * sigma)
    }

    /// Symmetrizes `m` and clamps its eigenvalues from below at `floor` (> 0).
    pub fn with_eigen_floor(m: Matrix2<f64>, floor: f64) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite covariance {m:?}")));
        }
        let sym = (m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let vals = eig.eigenvalues.map(|l| l.max(floor));
        let rebuilt = eig.eigenvectors * Matrix2::from_diagonal(&vals) * eig.eigenvectors.transpose();
        Self::new((rebuilt + rebuilt.transpose()) * 0.5)
    }

    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }

    pub fn entries(&self) -> (f64, f64, f64) {
        (self.0[(0, 0)], self.0[(0, 1)], self.0[(1, 1)])
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    pub fn inverse(&self) -> Matrix2<f64> {
        // Construction guarantees the factorization succeeds.
        let inv = self.0.cholesky().expect("NoiseCov is PD").inverse();
        (inv + inv.transpose()) * 0.5
    }
}

pub(crate) fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let mean = 0.5 * (a + c);
    let half_gap = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    mean - half_gap
}

/// One object-level measurement. `target` is ground truth and is read only
/// by evaluation code and by oracle-association mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub observer: VehicleId,
    pub target: VehicleId,
    pub z: [f64; 2],
    pub tick: u64,
}

impl Detection {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.z[0], self.z[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectList {
    pub observer: VehicleId,
    pub tick: u64,
    pub detections: Vec<Detection>,
}

/// Zero-mean sample with covariance `cov` via its Cholesky factor.
pub fn sample_gaussian(cov: &Matrix2<f64>, rng: &mut impl Rng) -> Result<Vector2<f64>> {
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numeric(format!("covariance not positive definite: {cov:?}")))?;
    let n = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    Ok(chol.l() * n)
}

/// Lower-triangular factor of a 2×2 positive-semidefinite matrix; a zero
/// leading variance is allowed.
fn psd_factor(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    if !(a.is_finite() && b.is_finite() && c.is_finite()) || a < 0.0 || c < 0.0 {
        return Err(Error::Numeric(format!("noise covariance not PSD: {m:?}")));
    }
    let l11 = a.sqrt();
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let rem = c - l21 * l21;
    if rem < -1e-12 * c.max(1.0) || (l11 == 0.0 && b != 0.0) {
        return Err(Error::Numeric(format!("noise covariance not PSD: {m:?}")));
    }
    Ok(Matrix2::new(l11, 0.0, l21, rem.max(0.0).sqrt()))
}

/// Object list of CAV `i` at the world's current tick.
pub fn sense(world: &World, i: VehicleId, rng: &mut impl Rng) -> Result<ObjectList> {
    let cav = world.cav(i)?;
    let factor = psd_factor(&cav.noise)?;
    let me = world.states[i.0 as usize].position();
    let mut detections = Vec::new();
    for (j, s) in world.states.iter().enumerate() {
        let target = VehicleId(j as u32);
        if target == i {
            continue;
        }
        let p = s.position();
        if (p - me).norm() > cav.detection_range {
            continue;
        }
        let n = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let z = p + factor * n;
        detections.push(Detection {
            observer: i,
            target,
            z: [z.x, z.y],
            tick: world.tick,
        });
    }
    Ok(ObjectList {
        observer: i,
        tick: world.tick,
        detections,
    })
}
