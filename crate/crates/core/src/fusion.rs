//! Kalman filter core shared by the edge (centralized) and every CAV
//! (distributed): constant-velocity prediction, information-form
//! multi-sensor update, and forward re-estimation over a cached window.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};

use crate::association::TrackId;
use crate::error::{Error, Result};
use crate::sensing::NoiseCov;
use crate::world::VehicleId;

/// Posterior (or predicted) estimate of one track: state `(px, py, vx, vy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackEstimate {
    pub track: TrackId,
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
    /// Tick the estimate refers to.
    pub last_update: u64,
}

impl TrackEstimate {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x[0], self.x[1])
    }

    pub fn position_cov(&self) -> Matrix2<f64> {
        self.p.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterModel {
    pub f: Matrix4<f64>,
    pub q: Matrix4<f64>,
    pub h: Matrix2x4<f64>,
}

impl FilterModel {
    /// Constant velocity over `dt` seconds with white acceleration of std
    /// `accel_std` per axis, held constant within the step.
    pub fn constant_velocity(dt: f64, accel_std: f64) -> Self {
        #[rustfmt::skip]
        let f = Matrix4::new(
            1.0, 0.0, dt, 0.0,
            0.0, 1.0, 0.0, dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        let s2 = accel_std * accel_std;
        let (pp, pv, vv) = (0.25 * dt.powi(4) * s2, 0.5 * dt.powi(3) * s2, dt * dt * s2);
        #[rustfmt::skip]
        let q = Matrix4::new(
            pp, 0.0, pv, 0.0,
            0.0, pp, 0.0, pv,
            pv, 0.0, vv, 0.0,
            0.0, pv, 0.0, vv,
        );
        FilterModel { f, q, h: position_observation() }
    }
}

pub fn position_observation() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleEntry {
    pub observer: VehicleId,
    pub z: Vector2<f64>,
    pub r: NoiseCov,
}

/// All measurements associated to one track at one tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementBundle {
    pub tick: u64,
    pub entries: Vec<BundleEntry>,
}

fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

/// One-tick prior: `x ← F x`, `P ← F P Fᵀ + Q`.
pub fn predict(est: &TrackEstimate, model: &FilterModel) -> TrackEstimate {
    TrackEstimate {
        track: est.track,
        x: model.f * est.x,
        p: symmetrize(&(model.f * est.p * model.f.transpose() + model.q)),
        last_update: est.last_update + 1,
    }
}

/// Repeated one-tick prediction up to `tick`. Estimates already at or past
/// `tick` are returned unchanged.
pub fn predict_to(est: &TrackEstimate, model: &FilterModel, tick: u64) -> TrackEstimate {
    let mut out = *est;
    while out.last_update < tick {
        out = predict(&out, model);
    }
    out
}

fn spd_inverse(m: &Matrix4<f64>, what: &str) -> Result<Matrix4<f64>> {
    let inv = m
        .cholesky()
        .ok_or_else(|| Error::Numeric(format!("{what} is not positive definite")))?
        .inverse();
    Ok(symmetrize(&inv))
}

/// Information-form fusion of every measurement in `bundle` against the
/// prior `est`:
///
/// `P⁺⁻¹ = P⁻¹ + Σ Hᵀ R_k⁻¹ H`, `P⁺⁻¹ x⁺ = P⁻¹ x + Σ Hᵀ R_k⁻¹ z_k`.
pub fn update_multi(
    est: &TrackEstimate,
    bundle: &MeasurementBundle,
    model: &FilterModel,
) -> Result<TrackEstimate> {
    if bundle.entries.is_empty() {
        return Ok(*est);
    }
    let mut info = spd_inverse(&est.p, "prior covariance")?;
    let mut info_state = info * est.x;
    let ht = model.h.transpose();
    for e in &bundle.entries {
        let r_inv = e.r.inverse();
        info += ht * r_inv * model.h;
        info_state += ht * (r_inv * e.z);
    }
    let info = symmetrize(&info);
    let chol = info
        .cholesky()
        .ok_or_else(|| Error::Numeric("information matrix is singular".into()))?;
    let x = chol.solve(&info_state);
    let p = symmetrize(&chol.inverse());
    Ok(TrackEstimate {
        track: est.track,
        x,
        p,
        last_update: bundle.tick.max(est.last_update),
    })
}

/// Forward pass of predict + `update_multi` across `window`, starting from
/// `init`. Returns the posterior at every bundle tick and the final
/// covariance.
pub fn batch_reestimate(
    window: &[MeasurementBundle],
    init: &TrackEstimate,
    model: &FilterModel,
) -> Result<(Vec<TrackEstimate>, Matrix4<f64>)> {
    if window.is_empty() {
        return Err(Error::Domain("re-estimation window is empty".into()));
    }
    let mut out = Vec::with_capacity(window.len());
    let mut cur = *init;
    for bundle in window {
        if bundle.tick < cur.last_update {
            return Err(Error::Domain(format!(
                "bundle tick {} precedes estimate tick {}",
                bundle.tick, cur.last_update
            )));
        }
        cur = update_multi(&predict_to(&cur, model, bundle.tick), bundle, model)?;
        out.push(cur);
    }
    Ok((out, cur.p))
}
