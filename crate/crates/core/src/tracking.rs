//! Multi-observer track registry: per-observer Hungarian association against
//! predicted tracks, track birth/confirmation/deletion, and the
//! information-form update of every track that received measurements.
//!
//! The same registry backs each CAV's distributed filter and the edge's
//! centralized filter; they differ only in which object lists they feed in
//! and which noise covariance they assign to each observer.

use std::collections::{BTreeMap, VecDeque};
use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::{Matrix4, Vector2, Vector4};

use crate::association::{associate_gated, TrackId};
use crate::error::Result;
use crate::fusion::{predict_to, update_multi, BundleEntry, FilterModel, MeasurementBundle, TrackEstimate};
use crate::sensing::{NoiseCov, ObjectList};
use crate::world::VehicleId;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Gate radius is `gate_sigmas · √(tr(HPHᵀ) + tr(R))`, floored at `gate_floor` meters.
    pub gate_sigmas: f64,
    pub gate_floor: f64,
    pub confirm_hits: u32,
    pub max_misses: u32,
    pub birth_position_var: f64,
    pub birth_velocity_var: f64,
    /// An unmatched detection within this multiple of an established track's
    /// gate is treated as that track's outlier and spawns no track; 0 disables.
    pub birth_exclusion: f64,
    /// Match by ground-truth identity instead of the Hungarian step (tests only).
    pub oracle_association: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gate_sigmas: 3.0,
            gate_floor: 5.0,
            confirm_hits: 2,
            max_misses: 10,
            birth_position_var: 1e4,
            birth_velocity_var: 100.0,
            birth_exclusion: 0.0,
            oracle_association: false,
        }
    }
}

/// One associated measurement as stored by a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub observer: VehicleId,
    pub z: Vector2<f64>,
    /// Ground-truth target of the detection; evaluation only.
    pub target: VehicleId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub tick: u64,
    /// Number of updates the track had received before this one.
    pub age: u32,
    pub measurements: Vec<Measurement>,
    pub posterior: TrackEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    /// Estimate at the tick the registry was last stepped to.
    pub est: TrackEstimate,
    /// Diffuse prior the track was born with.
    pub birth: TrackEstimate,
    pub hits: u32,
    pub misses: u32,
    /// Total number of updates since birth.
    pub updates: u32,
    pub confirmed: bool,
    /// Majority ground-truth target of the latest measurements; evaluation only.
    pub truth: Option<VehicleId>,
    /// Per-update history, kept only when the registry is configured to.
    pub history: VecDeque<HistoryEntry>,
}

impl Track {
    pub fn id(&self) -> TrackId {
        self.est.track
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// (track, observer, ground-truth target) for every associated detection.
    pub associations: Vec<(TrackId, VehicleId, VehicleId)>,
    pub births: Vec<TrackId>,
    pub deaths: Vec<TrackId>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    model: FilterModel,
    tracks: Vec<Track>,
    next_id: u64,
    tick: u64,
    history_ticks: Option<u64>,
    hasher: DefaultHasher,
}

fn gate(cfg: &TrackerConfig, est: &TrackEstimate, r: &NoiseCov) -> f64 {
    let spread = est.position_cov().trace() + r.trace();
    (cfg.gate_sigmas * spread.max(0.0).sqrt()).max(cfg.gate_floor)
}

fn majority(targets: impl Iterator<Item = VehicleId>) -> Option<VehicleId> {
    let mut counts: BTreeMap<VehicleId, usize> = BTreeMap::new();
    for t in targets {
        *counts.entry(t).or_default() += 1;
    }
    // Ties go to the smallest id.
    counts
        .into_iter()
        .fold(None, |best: Option<(VehicleId, usize)>, (id, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((id, n)),
        })
        .map(|(id, _)| id)
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, model: FilterModel) -> Self {
        Tracker {
            cfg,
            model,
            tracks: Vec::new(),
            next_id: 0,
            tick: 0,
            history_ticks: None,
            hasher: DefaultHasher::new(),
        }
    }

    /// Keeps per-track update history covering at least `ticks` ticks.
    pub fn with_history(mut self, ticks: u64) -> Self {
        self.history_ticks = Some(ticks);
        self
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &FilterModel {
        &self.model
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn tracks_mut(&mut self) -> &mut [Track] {
        &mut self.tracks
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Digest of every measurement consumed so far, in consumption order.
    pub fn input_digest(&self) -> u64 {
        self.hasher.finish()
    }

    fn birth_prior(&mut self, z: Vector2<f64>, tick: u64) -> TrackEstimate {
        let id = TrackId(self.next_id);
        self.next_id += 1;
        let mut p = Matrix4::zeros();
        p[(0, 0)] = self.cfg.birth_position_var;
        p[(1, 1)] = self.cfg.birth_position_var;
        p[(2, 2)] = self.cfg.birth_velocity_var;
        p[(3, 3)] = self.cfg.birth_velocity_var;
        TrackEstimate {
            track: id,
            x: Vector4::new(z.x, z.y, 0.0, 0.0),
            p,
            last_update: tick,
        }
    }

    fn bundle(tick: u64, ms: &[Measurement], noise: &dyn Fn(VehicleId) -> NoiseCov) -> MeasurementBundle {
        MeasurementBundle {
            tick,
            entries: ms
                .iter()
                .map(|m| BundleEntry { observer: m.observer, z: m.z, r: noise(m.observer) })
                .collect(),
        }
    }

    /// Predicts every track to `tick` and fuses the given object lists.
    /// Lists are processed in observer order; each observer contributes at
    /// most one measurement per track.
    pub fn step(
        &mut self,
        tick: u64,
        lists: &[ObjectList],
        noise: &dyn Fn(VehicleId) -> NoiseCov,
    ) -> Result<StepReport> {
        let model = self.model;
        for t in &mut self.tracks {
            t.est = predict_to(&t.est, &model, tick);
        }
        self.tick = tick;

        let mut order: Vec<&ObjectList> = lists.iter().collect();
        order.sort_by_key(|l| l.observer);

        let existing = self.tracks.len();
        // Newborn tracks: birth prior plus the estimate used for association
        // by later observers in this tick.
        let mut newborn: Vec<(TrackEstimate, TrackEstimate)> = Vec::new();
        let mut pending: Vec<Vec<Measurement>> = vec![Vec::new(); existing];
        let mut report = StepReport::default();

        for list in order {
            let r = noise(list.observer);
            for d in &list.detections {
                list.observer.hash(&mut self.hasher);
                d.tick.hash(&mut self.hasher);
                d.z[0].to_bits().hash(&mut self.hasher);
                d.z[1].to_bits().hash(&mut self.hasher);
            }
            let views: Vec<TrackEstimate> = self
                .tracks
                .iter()
                .map(|t| t.est)
                .chain(newborn.iter().map(|(_, view)| *view))
                .collect();

            let matched: Vec<(usize, usize)> = if self.cfg.oracle_association {
                let labels: Vec<Option<VehicleId>> = self
                    .tracks
                    .iter()
                    .map(|t| t.truth)
                    .chain((0..newborn.len()).map(|k| pending[existing + k].first().map(|m| m.target)))
                    .collect();
                let mut used = vec![false; views.len()];
                let mut out = Vec::new();
                for (di, d) in list.detections.iter().enumerate() {
                    if let Some(ti) = (0..views.len()).find(|&ti| !used[ti] && labels[ti] == Some(d.target)) {
                        used[ti] = true;
                        out.push((ti, di));
                    }
                }
                out
            } else {
                let gates: Vec<f64> = views.iter().map(|v| gate(&self.cfg, v, &r)).collect();
                let assignment = associate_gated(&views, &list.detections, &gates);
                let index: BTreeMap<TrackId, usize> =
                    views.iter().enumerate().map(|(i, v)| (v.track, i)).collect();
                assignment.matched.iter().map(|(tid, di)| (index[tid], *di)).collect()
            };

            let mut det_used = vec![false; list.detections.len()];
            for (ti, di) in matched {
                det_used[di] = true;
                let d = &list.detections[di];
                pending[ti].push(Measurement { observer: list.observer, z: d.position(), target: d.target });
                report.associations.push((views[ti].track, list.observer, d.target));
            }
            for (d, _) in list.detections.iter().zip(&det_used).filter(|(_, used)| !**used) {
                let excluded = self.tracks.iter().any(|t| {
                    (t.est.position() - d.position()).norm() <= self.cfg.birth_exclusion * gate(&self.cfg, &t.est, &r)
                });
                if excluded {
                    continue;
                }
                let prior = self.birth_prior(d.position(), tick);
                let m = Measurement { observer: list.observer, z: d.position(), target: d.target };
                let view = update_multi(&prior, &Self::bundle(tick, &[m], noise), &model)?;
                report.births.push(prior.track);
                report.associations.push((prior.track, list.observer, d.target));
                newborn.push((prior, view));
                pending.push(vec![m]);
            }
        }

        for (prior, _) in &newborn {
            self.tracks.push(Track {
                est: *prior,
                birth: *prior,
                hits: 0,
                misses: 0,
                updates: 0,
                confirmed: false,
                truth: None,
                history: VecDeque::new(),
            });
        }

        let cfg = &self.cfg;
        let history_ticks = self.history_ticks;
        for (track, ms) in self.tracks.iter_mut().zip(pending) {
            if ms.is_empty() {
                track.hits = 0;
                track.misses += 1;
                continue;
            }
            let bundle = Self::bundle(tick, &ms, noise);
            track.est = update_multi(&track.est, &bundle, &model)?;
            let age = track.updates;
            track.updates += 1;
            track.hits += 1;
            track.misses = 0;
            if track.hits >= cfg.confirm_hits {
                track.confirmed = true;
            }
            track.truth = majority(ms.iter().map(|m| m.target));
            if let Some(depth) = history_ticks {
                track.history.push_back(HistoryEntry { tick, age, measurements: ms, posterior: track.est });
                // Keeps the newest entry older than the horizon as a seed
                // for re-estimation from the horizon's edge.
                while track.history.len() > 1 && track.history[1].tick + depth < tick {
                    track.history.pop_front();
                }
            }
        }

        let max_misses = self.cfg.max_misses;
        self.tracks.retain(|t| {
            let keep = t.misses < max_misses;
            if !keep {
                report.deaths.push(t.id());
            }
            keep
        });
        Ok(report)
    }

    /// Position estimates of confirmed tracks keyed by their ground-truth
    /// target. When two tracks claim one target the older track wins.
    pub fn confirmed_positions(&self) -> BTreeMap<VehicleId, Vector2<f64>> {
        let mut out = BTreeMap::new();
        for t in &self.tracks {
            if let (true, Some(target)) = (t.confirmed, t.truth) {
                out.entry(target).or_insert_with(|| t.est.position());
            }
        }
        out
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.confirmed)
    }
}
