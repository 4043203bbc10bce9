//! Edge-side bidirectional feedback noise estimation.
//!
//! Each step alternates two passes over the edge's centralized tracks:
//! targets are re-estimated over the short window II with the current
//! per-CAV noise estimates, then each CAV's noise covariance is re-estimated
//! from residuals against those fresh trajectories, pooled over the long
//! window I. Both window lengths adapt online.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Matrix2, Matrix4, Vector2};
use serde::{Deserialize, Serialize};

use crate::association::TrackId;
use crate::error::{Error, Result};
use crate::fusion::{batch_reestimate, predict_to, BundleEntry, FilterModel, MeasurementBundle};
use crate::sensing::{NoiseCov, ObjectList};
use crate::tracking::{StepReport, Tracker, TrackerConfig};
use crate::world::VehicleId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub vehicle: VehicleId,
    pub r: NoiseCov,
    pub sample_count: usize,
    pub updated_at: u64,
}

/// Window lengths in ticks with their bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowState {
    pub t1: u64,
    pub t1_bounds: (u64, u64),
    pub t2: u64,
    pub t2_bounds: (u64, u64),
    pub s_min: usize,
}

/// Window-II spread below which the window shrinks.
const DEVIATION_THRESHOLD: f64 = 0.01;
const ADAPT_RATE: f64 = 0.1;

fn grow(t: u64, (lo, hi): (u64, u64)) -> u64 {
    ((t as f64 * (1.0 + ADAPT_RATE)).round() as u64).max(t + 1).clamp(lo, hi)
}

fn shrink(t: u64, (lo, hi): (u64, u64)) -> u64 {
    ((t as f64 * (1.0 - ADAPT_RATE)).round() as u64).min(t.saturating_sub(1)).clamp(lo, hi)
}

/// Relative spread `(max − min)/min` of `trace(P)` over the window drives
/// window II: a settled spread shrinks it, anything else grows it.
pub fn update_window_ii(state: &WindowState, recent_p: &[Matrix4<f64>]) -> WindowState {
    let traces = recent_p.iter().map(|p| p.trace());
    let (lo, hi) = traces.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    if !lo.is_finite() || !hi.is_finite() {
        return *state;
    }
    let deviation = if lo > 0.0 { (hi - lo) / lo } else if hi > lo { f64::INFINITY } else { 0.0 };
    let t2 = if deviation < DEVIATION_THRESHOLD {
        shrink(state.t2, state.t2_bounds)
    } else {
        grow(state.t2, state.t2_bounds)
    };
    WindowState { t2, ..*state }
}

/// Grows window I while some CAV has fewer than `s_min` residuals in it and
/// shrinks it once every CAV has at least twice that many.
pub fn update_window_i(state: &WindowState, sample_counts: &[usize]) -> WindowState {
    let Some(&min) = sample_counts.iter().min() else {
        return *state;
    };
    let t1 = if min < state.s_min {
        grow(state.t1, state.t1_bounds)
    } else if min >= 2 * state.s_min {
        shrink(state.t1, state.t1_bounds)
    } else {
        state.t1.clamp(state.t1_bounds.0, state.t1_bounds.1)
    };
    WindowState { t1, ..*state }
}

/// Innovation of one associated measurement against the re-estimated state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub e: Vector2<f64>,
    /// Position block of the estimate covariance the residual was taken against.
    pub hph: Matrix2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub s_min: usize,
    pub eigen_floor: f64,
    pub subtract_uncertainty: bool,
    pub default_r: NoiseCov,
}

/// Sample covariance `(1/K) Σ e eᵀ` of the residuals, optionally minus the
/// mean estimate covariance, with eigenvalues floored. Fewer than `s_min`
/// residuals keep the prior (or the default when there is none).
pub fn estimate_noise(
    vehicle: VehicleId,
    residuals: &[Residual],
    prior: Option<&NoiseEstimate>,
    params: &NoiseParams,
    tick: u64,
) -> Result<NoiseEstimate> {
    let k = residuals.len();
    if k == 0 || k < params.s_min {
        return Ok(prior.copied().unwrap_or(NoiseEstimate {
            vehicle,
            r: params.default_r,
            sample_count: 0,
            updated_at: tick,
        }));
    }
    let n = k as f64;
    let mut s = residuals.iter().fold(Matrix2::zeros(), |acc, r| acc + r.e * r.e.transpose()) / n;
    if params.subtract_uncertainty {
        s -= residuals.iter().fold(Matrix2::zeros(), |acc, r| acc + r.hph) / n;
    }
    let r = NoiseCov::with_eigen_floor(s, params.eigen_floor)
        .map_err(|e| Error::Numeric(format!("noise estimate for vehicle {vehicle}: {e}")))?;
    Ok(NoiseEstimate { vehicle, r, sample_count: k, updated_at: tick })
}

/// What each residual is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// The re-estimated posterior at the measurement's tick.
    Posterior,
    /// The same posterior with the measurement itself removed from the
    /// position marginal.
    LeaveOneOut,
}

/// Position-marginal estimate at a tick with one measurement `z` (noise
/// `r`) taken back out. `None` when what remains is not positive definite.
pub fn leave_one_out(
    mean: &Vector2<f64>,
    cov: &Matrix2<f64>,
    z: &Vector2<f64>,
    r: &NoiseCov,
) -> Option<(Vector2<f64>, Matrix2<f64>)> {
    let info = cov.cholesky()?.inverse();
    let r_inv = r.inverse();
    let rest = info - r_inv;
    let rest = (rest + rest.transpose()) * 0.5;
    let rest_cov = rest.cholesky()?.inverse();
    let rest_cov = (rest_cov + rest_cov.transpose()) * 0.5;
    Some((rest_cov * (info * mean - r_inv * z), rest_cov))
}

/// Whether `res` lies within `gate` standard deviations of its predicted
/// spread: `R + C` for leave-one-out residuals, `R` for posterior ones.
fn within_gate(res: &Residual, r: &NoiseCov, mode: ResidualMode, gate: f64) -> bool {
    if gate == 0.0 {
        return true;
    }
    let spread = match mode {
        ResidualMode::Posterior => *r.matrix(),
        ResidualMode::LeaveOneOut => r.matrix() + res.hph,
    };
    spread.cholesky().is_none_or(|c| res.e.dot(&c.solve(&res.e)) <= gate * gate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BifnoeConfig {
    /// Window I bounds and initial length, seconds.
    pub window_i_min_s: f64,
    pub window_i_max_s: f64,
    pub window_i_init_s: f64,
    /// Window II bounds and initial length, seconds.
    pub window_ii_min_s: f64,
    pub window_ii_max_s: f64,
    pub window_ii_init_s: f64,
    /// Residuals per CAV that window I grows to collect.
    pub s_min: usize,
    /// Residuals per CAV required before its estimate is replaced.
    pub min_samples: usize,
    pub subtract_uncertainty: bool,
    pub eigen_floor: f64,
    /// Leading updates of each track whose residuals are discarded while its
    /// diffuse birth prior still dominates.
    pub residual_warmup: u32,
    pub residual_mode: ResidualMode,
    /// Residuals beyond this Mahalanobis radius under the current estimate
    /// are left out of window I; 0 keeps every residual.
    pub outlier_gate: f64,
}

impl Default for BifnoeConfig {
    fn default() -> Self {
        BifnoeConfig {
            window_i_min_s: 0.5,
            window_i_max_s: 50.0,
            window_i_init_s: 50.0,
            window_ii_min_s: 0.1,
            window_ii_max_s: 5.0,
            window_ii_init_s: 1.0,
            s_min: 200,
            min_samples: 20,
            subtract_uncertainty: false,
            eigen_floor: 1e-6,
            residual_warmup: 2,
            residual_mode: ResidualMode::LeaveOneOut,
            outlier_gate: 4.0,
        }
    }
}

impl BifnoeConfig {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("window_i_min_s", self.window_i_min_s),
            ("window_i_max_s", self.window_i_max_s),
            ("window_i_init_s", self.window_i_init_s),
            ("window_ii_min_s", self.window_ii_min_s),
            ("window_ii_max_s", self.window_ii_max_s),
            ("window_ii_init_s", self.window_ii_init_s),
            ("eigen_floor", self.eigen_floor),
        ];
        for (field, v) in pairs {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.outlier_gate.is_finite() && self.outlier_gate >= 0.0) {
            return Err(Error::config("outlier_gate", format!("must be >= 0, got {}", self.outlier_gate)));
        }
        if self.window_i_min_s > self.window_i_max_s {
            return Err(Error::config("window_i_min_s", "exceeds window_i_max_s"));
        }
        if self.window_ii_min_s > self.window_ii_max_s {
            return Err(Error::config("window_ii_min_s", "exceeds window_ii_max_s"));
        }
        Ok(())
    }

    /// Converts the second-based windows to ticks at `f_sim`, at least one tick each.
    pub fn windows(&self, f_sim: f64) -> WindowState {
        let ticks = |s: f64| ((s * f_sim).round() as u64).max(1);
        let t1_bounds = (ticks(self.window_i_min_s), ticks(self.window_i_max_s));
        let t2_bounds = (ticks(self.window_ii_min_s), ticks(self.window_ii_max_s));
        WindowState {
            t1: ticks(self.window_i_init_s).clamp(t1_bounds.0, t1_bounds.1),
            t1_bounds,
            t2: ticks(self.window_ii_init_s).clamp(t2_bounds.0, t2_bounds.1),
            t2_bounds,
            s_min: self.s_min,
        }
    }
}

type ResidualStore = BTreeMap<VehicleId, BTreeMap<(u64, TrackId), Residual>>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    pub tick: u64,
    pub windows: Option<WindowState>,
    pub report: StepReport,
}

/// The edge's centralized filter together with its noise estimator.
#[derive(Debug, Clone)]
pub struct Bifnoe {
    cfg: BifnoeConfig,
    params: NoiseParams,
    windows: WindowState,
    tracker: Tracker,
    estimates: BTreeMap<VehicleId, NoiseEstimate>,
    limit: BTreeMap<VehicleId, NoiseEstimate>,
    residuals: ResidualStore,
    truth_residuals: ResidualStore,
    /// Mean track covariance after each step, for the window-II rule.
    spread: VecDeque<(u64, Matrix4<f64>)>,
}

fn in_window(store: &BTreeMap<(u64, TrackId), Residual>, from: u64) -> impl Iterator<Item = &Residual> {
    store.range((from, TrackId(0))..).map(|(_, r)| r)
}

impl Bifnoe {
    pub fn new(
        cfg: BifnoeConfig,
        tracker_cfg: TrackerConfig,
        model: FilterModel,
        default_r: NoiseCov,
        f_sim: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        let windows = cfg.windows(f_sim);
        let params = NoiseParams {
            s_min: cfg.min_samples,
            eigen_floor: cfg.eigen_floor,
            subtract_uncertainty: cfg.subtract_uncertainty,
            default_r,
        };
        Ok(Bifnoe {
            tracker: Tracker::new(tracker_cfg, model).with_history(windows.t2_bounds.1 + 1),
            cfg,
            params,
            windows,
            estimates: BTreeMap::new(),
            limit: BTreeMap::new(),
            residuals: BTreeMap::new(),
            truth_residuals: BTreeMap::new(),
            spread: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &BifnoeConfig {
        &self.cfg
    }

    pub fn windows(&self) -> WindowState {
        self.windows
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    pub fn estimates(&self) -> &BTreeMap<VehicleId, NoiseEstimate> {
        &self.estimates
    }

    /// Estimates from residuals against ground truth instead of tracks.
    pub fn limit_estimates(&self) -> &BTreeMap<VehicleId, NoiseEstimate> {
        &self.limit
    }

    /// Current noise estimate for `v`, or the default before any estimate exists.
    pub fn noise(&self, v: VehicleId) -> NoiseCov {
        self.estimates.get(&v).map_or(self.params.default_r, |e| e.r)
    }

    pub fn residual_count(&self, v: VehicleId, from: u64) -> usize {
        self.residuals.get(&v).map_or(0, |s| in_window(s, from).count())
    }

    /// Stored residuals of `v` keyed by (tick, track), oldest first.
    pub fn residuals(&self, v: VehicleId) -> impl Iterator<Item = (&(u64, TrackId), &Residual)> {
        self.residuals.get(&v).into_iter().flatten()
    }

    /// One BiFNoE iteration on the object lists uploaded at `tick`.
    /// `vehicles` is the registered fleet; `truth` gives true target
    /// positions at `tick` for the ground-truth limit estimates.
    pub fn step(
        &mut self,
        tick: u64,
        lists: &[ObjectList],
        vehicles: &[VehicleId],
        truth: &dyn Fn(VehicleId) -> Option<Vector2<f64>>,
    ) -> Result<StepOutcome> {
        if lists.is_empty() {
            return Ok(StepOutcome { tick, windows: None, report: StepReport::default() });
        }

        let t2_from = tick.saturating_sub(self.windows.t2);
        let recent: Vec<Matrix4<f64>> =
            self.spread.iter().filter(|(t, _)| *t > t2_from).map(|(_, p)| *p).collect();
        if !recent.is_empty() {
            self.windows = update_window_ii(&self.windows, &recent);
        }

        let (estimates, default_r) = (&self.estimates, self.params.default_r);
        let noise = |v: VehicleId| estimates.get(&v).map_or(default_r, |e| e.r);
        let report = self.tracker.step(tick, lists, &noise)?;

        let mut observed: BTreeMap<(VehicleId, VehicleId), Vector2<f64>> = BTreeMap::new();
        for list in lists {
            for d in &list.detections {
                observed.insert((list.observer, d.target), d.position());
            }
        }
        for &(track, observer, target) in &report.associations {
            if let (Some(z), Some(p)) = (observed.get(&(observer, target)), truth(target)) {
                self.truth_residuals
                    .entry(observer)
                    .or_default()
                    .insert((tick, track), Residual { e: z - p, hph: Matrix2::zeros() });
            }
        }

        self.reestimate(tick)?;

        let confirmed: Vec<Matrix4<f64>> = self.tracker.confirmed().map(|t| t.est.p).collect();
        if !confirmed.is_empty() {
            let mean = confirmed.iter().sum::<Matrix4<f64>>() / confirmed.len() as f64;
            self.spread.push_back((tick, mean));
        }
        let keep_from = tick.saturating_sub(self.windows.t2_bounds.1);
        while self.spread.front().is_some_and(|(t, _)| *t < keep_from) {
            self.spread.pop_front();
        }

        let t1_from = tick.saturating_sub(self.windows.t1) + 1;
        let counts: Vec<usize> = vehicles
            .iter()
            .filter_map(|v| self.residuals.get(v))
            .map(|s| in_window(s, t1_from).count())
            .filter(|&n| n > 0)
            .collect();
        self.windows = update_window_i(&self.windows, &counts);

        let t1_from = tick.saturating_sub(self.windows.t1) + 1;
        let limit_params = NoiseParams { subtract_uncertainty: false, ..self.params };
        for &v in vehicles {
            let window: Vec<Residual> =
                self.residuals.get(&v).map_or_else(Vec::new, |s| in_window(s, t1_from).copied().collect());
            let est = estimate_noise(v, &window, self.estimates.get(&v), &self.params, tick)?;
            self.estimates.insert(v, est);
            let window: Vec<Residual> = self
                .truth_residuals
                .get(&v)
                .map_or_else(Vec::new, |s| in_window(s, t1_from).copied().collect());
            let est = estimate_noise(v, &window, self.limit.get(&v), &limit_params, tick)?;
            self.limit.insert(v, est);
        }

        let horizon = tick.saturating_sub(self.windows.t1_bounds.1);
        for store in [&mut self.residuals, &mut self.truth_residuals] {
            for s in store.values_mut() {
                *s = s.split_off(&(horizon, TrackId(0)));
            }
        }

        Ok(StepOutcome { tick, windows: Some(self.windows), report })
    }

    /// Re-runs every track over window II with the current noise estimates,
    /// commits the new trajectory and refreshes the residuals it produced.
    fn reestimate(&mut self, tick: u64) -> Result<()> {
        let from = tick.saturating_sub(self.windows.t2) + 1;
        let model = *self.tracker.model();
        let (estimates, default_r) = (&self.estimates, self.params.default_r);
        let noise = |v: VehicleId| estimates.get(&v).map_or(default_r, |e| e.r);
        let warmup = self.cfg.residual_warmup;
        let mode = self.cfg.residual_mode;
        let gate = self.cfg.outlier_gate;

        for track in self.tracker.tracks_mut() {
            let start = track.history.partition_point(|h| h.tick < from);
            if start == track.history.len() {
                continue;
            }
            let init = match start {
                0 if track.history[0].age == 0 => track.birth,
                0 => continue,
                _ => track.history[start - 1].posterior,
            };
            let bundles: Vec<MeasurementBundle> = track
                .history
                .range(start..)
                .map(|h| MeasurementBundle {
                    tick: h.tick,
                    entries: h
                        .measurements
                        .iter()
                        .map(|m| BundleEntry { observer: m.observer, z: m.z, r: noise(m.observer) })
                        .collect(),
                })
                .collect();
            let (trajectory, _) = batch_reestimate(&bundles, &init, &model).map_err(|e| {
                Error::Numeric(format!("re-estimating track {} at tick {tick}: {e}", track.id()))
            })?;
            let id = track.id();
            for (h, post) in track.history.range_mut(start..).zip(&trajectory) {
                h.posterior = *post;
                if h.age < warmup {
                    continue;
                }
                let x = post.position();
                let hph = post.position_cov();
                for m in &h.measurements {
                    let r = noise(m.observer);
                    let residual = match mode {
                        ResidualMode::Posterior => Some(Residual { e: m.z - x, hph }),
                        ResidualMode::LeaveOneOut => leave_one_out(&x, &hph, &m.z, &r)
                            .map(|(rest, rest_cov)| Residual { e: m.z - rest, hph: rest_cov }),
                    };
                    let residual = residual.filter(|res| within_gate(res, &r, mode, gate));
                    let store = self.residuals.entry(m.observer).or_default();
                    match residual {
                        Some(r) => store.insert((h.tick, id), r),
                        None => store.remove(&(h.tick, id)),
                    };
                }
            }
            if let Some(last) = trajectory.last() {
                track.est = predict_to(last, &model, tick);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> WindowState {
        BifnoeConfig::default().windows(50.0)
    }

    #[test]
    fn default_windows_in_ticks() {
        let w = state();
        assert_eq!(w.t1_bounds, (25, 2500));
        assert_eq!(w.t2_bounds, (5, 250));
        assert_eq!(w.s_min, 200);
    }

    #[test]
    fn constant_trace_shrinks_window_ii() {
        let w = WindowState { t2: 100, ..state() };
        let out = update_window_ii(&w, &[Matrix4::identity(); 4]);
        assert_eq!(out.t2, 90);
    }

    #[test]
    fn doubling_trace_grows_window_ii() {
        let w = WindowState { t2: 100, ..state() };
        let out = update_window_ii(&w, &[Matrix4::identity(), Matrix4::identity() * 2.0]);
        assert_eq!(out.t2, 110);
    }

    #[test]
    fn small_windows_still_move() {
        let w = WindowState { t2: 5, t2_bounds: (1, 250), ..state() };
        assert_eq!(update_window_ii(&w, &[Matrix4::identity()]).t2, 4);
        assert_eq!(update_window_ii(&w, &[Matrix4::identity(), Matrix4::zeros()]).t2, 6);
    }

    #[test]
    fn starved_window_i_grows() {
        let w = WindowState { t1: 100, ..state() };
        assert!(update_window_i(&w, &[0, 0]).t1 > w.t1);
        let mut w = WindowState { t1: 2000, ..w };
        for _ in 0..100 {
            w = update_window_i(&w, &[10_000, 10_000]);
        }
        assert_eq!(w.t1, 25);
    }

    #[test]
    fn zero_residuals_floor() {
        let params = NoiseParams {
            s_min: 3,
            eigen_floor: 1e-6,
            subtract_uncertainty: false,
            default_r: NoiseCov::isotropic(2.5).unwrap(),
        };
        let zeros = vec![Residual { e: Vector2::zeros(), hph: Matrix2::zeros() }; 5];
        let est = estimate_noise(VehicleId(0), &zeros, None, &params, 1).unwrap();
        assert!((est.r.matrix() - Matrix2::identity() * 1e-6).norm() < 1e-15);
        assert_eq!(est.sample_count, 5);
    }

    #[test]
    fn starvation_keeps_prior() {
        let params = NoiseParams {
            s_min: 10,
            eigen_floor: 1e-6,
            subtract_uncertainty: false,
            default_r: NoiseCov::isotropic(2.5).unwrap(),
        };
        let prior = NoiseEstimate { vehicle: VehicleId(4), r: NoiseCov::diag(1.0, 2.0).unwrap(), sample_count: 30, updated_at: 7 };
        let few = vec![Residual { e: Vector2::new(1.0, 1.0), hph: Matrix2::zeros() }; 9];
        assert_eq!(estimate_noise(VehicleId(4), &few, Some(&prior), &params, 9).unwrap(), prior);
        let none = estimate_noise(VehicleId(4), &[], None, &params, 9).unwrap();
        assert_eq!(none.r, params.default_r);
    }

    #[test]
    fn leave_one_out_inverts_fusion() {
        let prior_mean = Vector2::new(3.0, -1.0);
        let prior_cov = Matrix2::new(2.0, 0.3, 0.3, 1.5);
        let r = NoiseCov::from_entries(0.8, -0.1, 0.4).unwrap();
        let z = Vector2::new(4.0, 0.5);
        let info = prior_cov.try_inverse().unwrap() + r.inverse();
        let cov = info.try_inverse().unwrap();
        let mean = cov * (prior_cov.try_inverse().unwrap() * prior_mean + r.inverse() * z);
        let (m, c) = leave_one_out(&mean, &cov, &z, &r).unwrap();
        assert!((m - prior_mean).norm() < 1e-9);
        assert!((c - prior_cov).norm() < 1e-9);
    }

    #[test]
    fn leave_one_out_needs_remaining_information() {
        let r = NoiseCov::diag(1.0, 1.0).unwrap();
        let cov = Matrix2::identity();
        assert!(leave_one_out(&Vector2::zeros(), &cov, &Vector2::zeros(), &r).is_none());
    }

    #[test]
    fn outlier_gate_uses_predicted_spread() {
        let r = NoiseCov::diag(1.0, 4.0).unwrap();
        let near = Residual { e: Vector2::new(3.9, 0.0), hph: Matrix2::zeros() };
        let far = Residual { e: Vector2::new(4.1, 0.0), hph: Matrix2::zeros() };
        let wide = Residual { e: Vector2::new(0.0, 7.9), hph: Matrix2::zeros() };
        assert!(within_gate(&near, &r, ResidualMode::Posterior, 4.0));
        assert!(!within_gate(&far, &r, ResidualMode::Posterior, 4.0));
        assert!(within_gate(&wide, &r, ResidualMode::Posterior, 4.0));
        let uncertain = Residual { hph: Matrix2::identity() * 3.0, ..far };
        assert!(within_gate(&uncertain, &r, ResidualMode::LeaveOneOut, 4.0));
        assert!(!within_gate(&uncertain, &r, ResidualMode::Posterior, 4.0));
        assert!(within_gate(&Residual { e: Vector2::new(1e6, 0.0), ..far }, &r, ResidualMode::Posterior, 0.0));
    }
}
