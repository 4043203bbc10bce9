#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix4, RowVector4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fleet_noise::association::{CostMatrix, TrackId};
use fleet_noise::bifnoe::NoiseParams;
use fleet_noise::fusion::{BundleEntry, FilterModel, MeasurementBundle, TrackEstimate};
use fleet_noise::sensing::NoiseCov;
use fleet_noise::world::VehicleId;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn spd4(rng: &mut ChaCha8Rng) -> Matrix4<f64> {
    let a = Matrix4::from_fn(|_, _| rng.random_range(-3.0..3.0));
    a * a.transpose() + Matrix4::identity() * rng.random_range(0.05..2.0)
}

pub fn spd2(rng: &mut ChaCha8Rng) -> Matrix2<f64> {
    let a = Matrix2::from_fn(|_, _| rng.random_range(-2.0..2.0));
    a * a.transpose() + Matrix2::identity() * rng.random_range(0.01..1.0)
}

pub fn case(rng: &mut ChaCha8Rng) -> (TrackEstimate, MeasurementBundle) {
    let est = TrackEstimate {
        track: TrackId(1),
        x: Vector4::from_fn(|_, _| rng.random_range(-50.0..50.0)),
        p: spd4(rng),
        last_update: 3,
    };
    let n = rng.random_range(1..=6);
    let entries = (0..n)
        .map(|k| BundleEntry {
            observer: VehicleId(k),
            z: Vector2::from_fn(|_, _| rng.random_range(-50.0..50.0)),
            r: NoiseCov::new(spd2(rng)).unwrap(),
        })
        .collect();
    (est, MeasurementBundle { tick: 3, entries })
}

/// Covariance-form Kalman filter fed one scalar at a time: each 2-D
/// measurement is whitened by the Cholesky factor of its R, giving two
/// independent unit-variance rows.
pub fn sequential_scalar(est: &TrackEstimate, bundle: &MeasurementBundle, model: &FilterModel) -> (Vector4<f64>, Matrix4<f64>) {
    let (mut x, mut p) = (est.x, est.p);
    for e in &bundle.entries {
        let l = e.r.matrix().cholesky().unwrap().l();
        let l_inv = l.try_inverse().unwrap();
        let h = l_inv * model.h;
        let z = l_inv * e.z;
        for row in 0..2 {
            let hr: RowVector4<f64> = h.row(row).into_owned();
            let s = (hr * p * hr.transpose())[(0, 0)] + 1.0;
            let k = p * hr.transpose() / s;
            x += k * (z[row] - (hr * x)[(0, 0)]);
            let a = Matrix4::identity() - k * hr;
            p = a * p * a.transpose() + k * k.transpose();
        }
    }
    (x, p)
}

pub fn rel(a: f64, scale: f64) -> f64 {
    a / scale.max(1.0)
}

/// Every assignment of `min(rows, cols)` pairs, as row-sorted pair lists.
pub fn all_assignments(rows: usize, cols: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(r: usize, rows: usize, cols: usize, need: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if cur.len() == need {
            out.push(cur.clone());
            return;
        }
        if r == rows || rows - r < need - cur.len() {
            return;
        }
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                cur.push((r, c));
                rec(r + 1, rows, cols, need, used, cur, out);
                cur.pop();
                used[c] = false;
            }
        }
        rec(r + 1, rows, cols, need, used, cur, out);
    }
    let mut out = Vec::new();
    rec(0, rows, cols, rows.min(cols), &mut vec![false; cols], &mut Vec::new(), &mut out);
    out
}

/// Minimum total, then lexicographically smallest pair list among optima.
pub fn brute_force(cost: &CostMatrix) -> (f64, Vec<(usize, usize)>) {
    let all = all_assignments(cost.rows(), cost.cols());
    let best = all.iter().map(|a| cost.total(a)).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * best.abs().max(1.0);
    let pick = all.into_iter().filter(|a| cost.total(a) <= best + tol).min().unwrap();
    (best, pick)
}

pub fn draw(cov: &Matrix2<f64>, rng: &mut ChaCha8Rng) -> Vector2<f64> {
    cov.cholesky().unwrap().l() * Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn params(subtract: bool) -> NoiseParams {
    NoiseParams {
        s_min: 200,
        eigen_floor: 1e-6,
        subtract_uncertainty: subtract,
        default_r: NoiseCov::isotropic(2.5).unwrap(),
    }
}

/// Entrywise closeness; off-diagonals are measured against `√(r11 r22)`.
pub fn within(got: &Matrix2<f64>, want: &Matrix2<f64>, tol: f64) -> bool {
    let cross = (want[(0, 0)] * want[(1, 1)]).sqrt();
    (got[(0, 0)] - want[(0, 0)]).abs() <= tol * want[(0, 0)]
        && (got[(1, 1)] - want[(1, 1)]).abs() <= tol * want[(1, 1)]
        && (got[(0, 1)] - want[(0, 1)]).abs() <= tol * cross
        && got[(0, 1)] == got[(1, 0)]
}

/// Largest entry error on the scale used by `within`.
pub fn relative_error(got: &Matrix2<f64>, want: &Matrix2<f64>) -> f64 {
    let cross = (want[(0, 0)] * want[(1, 1)]).sqrt();
    ((got[(0, 0)] - want[(0, 0)]).abs() / want[(0, 0)])
        .max((got[(1, 1)] - want[(1, 1)]).abs() / want[(1, 1)])
        .max((got[(0, 1)] - want[(0, 1)]).abs() / cross)
}
