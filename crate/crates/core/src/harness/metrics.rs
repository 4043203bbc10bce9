use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};

use crate::world::VehicleId;

use super::config::Pooling;

/// One per-tick metric. Distributed (`dkf_*`) families are defined every
/// tick; centralized (`ckf_*`), noise and window families only on upload ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    DkfMseGtSubscribed,
    DkfMseGtDefault,
    DkfMseGtLimit,
    DkfMseLimSubscribed,
    DkfMseLimDefault,
    DeltaGt,
    DeltaLim,
    CkfMseGtBifnoe,
    CkfMseGtDefault,
    CkfMseGtLimit,
    NoiseMse,
    NoiseMseLimit,
    WindowITicks,
    WindowIiTicks,
}

impl Family {
    pub const ALL: [Family; 14] = [
        Family::DkfMseGtSubscribed,
        Family::DkfMseGtDefault,
        Family::DkfMseGtLimit,
        Family::DkfMseLimSubscribed,
        Family::DkfMseLimDefault,
        Family::DeltaGt,
        Family::DeltaLim,
        Family::CkfMseGtBifnoe,
        Family::CkfMseGtDefault,
        Family::CkfMseGtLimit,
        Family::NoiseMse,
        Family::NoiseMseLimit,
        Family::WindowITicks,
        Family::WindowIiTicks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::DkfMseGtSubscribed => "dkf_mse_gt_subscribed",
            Family::DkfMseGtDefault => "dkf_mse_gt_default",
            Family::DkfMseGtLimit => "dkf_mse_gt_limit",
            Family::DkfMseLimSubscribed => "dkf_mse_lim_subscribed",
            Family::DkfMseLimDefault => "dkf_mse_lim_default",
            Family::DeltaGt => "delta_gt",
            Family::DeltaLim => "delta_lim",
            Family::CkfMseGtBifnoe => "ckf_mse_gt_bifnoe",
            Family::CkfMseGtDefault => "ckf_mse_gt_default",
            Family::CkfMseGtLimit => "ckf_mse_gt_limit",
            Family::NoiseMse => "noise_mse",
            Family::NoiseMseLimit => "noise_mse_limit",
            Family::WindowITicks => "window_i_ticks",
            Family::WindowIiTicks => "window_ii_ticks",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == name)
    }

    fn index(self) -> usize {
        Family::ALL.iter().position(|&f| f == self).expect("listed")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: u64,
    values: [Option<f64>; Family::ALL.len()],
}

impl TickRecord {
    pub fn new(tick: u64) -> Self {
        TickRecord { tick, values: [None; Family::ALL.len()] }
    }

    pub fn get(&self, f: Family) -> Option<f64> {
        self.values[f.index()]
    }

    pub fn set(&mut self, f: Family, v: Option<f64>) {
        self.values[f.index()] = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub f_sim: f64,
    pub records: Vec<TickRecord>,
}

impl MetricSeries {
    pub fn new(f_sim: f64) -> Self {
        MetricSeries { f_sim, records: Vec::new() }
    }

    pub fn time_of(&self, tick: u64) -> f64 {
        tick as f64 / self.f_sim
    }

    pub fn series(&self, f: Family) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.get(f)).collect()
    }

    /// Defined values of `f` on ticks in `[from_s, to_s)`.
    pub fn values_between(&self, f: Family, from_s: f64, to_s: f64) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| {
                let t = self.time_of(r.tick);
                t >= from_s - 1e-9 && t < to_s - 1e-9
            })
            .filter_map(|r| r.get(f))
            .collect()
    }

    /// Tick-wise mean of several equally long runs; a value is defined
    /// where at least one run defines it.
    pub fn average(runs: &[MetricSeries]) -> MetricSeries {
        let Some(first) = runs.first() else {
            return MetricSeries::new(1.0);
        };
        let mut out = MetricSeries::new(first.f_sim);
        for (i, rec) in first.records.iter().enumerate() {
            let mut avg = TickRecord::new(rec.tick);
            for f in Family::ALL {
                let vals: Vec<f64> = runs.iter().filter_map(|r| r.records.get(i).and_then(|x| x.get(f))).collect();
                if !vals.is_empty() {
                    avg.set(f, Some(vals.iter().sum::<f64>() / vals.len() as f64));
                }
            }
            out.records.push(avg);
        }
        out
    }
}

/// `δ = (without − with)/without` per tick; undefined where `without` is
/// zero or either side is missing.
pub fn improvement_rate(without: &[Option<f64>], with: &[Option<f64>]) -> Vec<Option<f64>> {
    without
        .iter()
        .zip(with)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) if *a > 0.0 => Some((a - b) / a),
            _ => None,
        })
        .collect()
}

/// Mean and population std, accumulated around the first value so a
/// constant series yields exactly that value and zero spread.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    let &first = values.first()?;
    let n = values.len() as f64;
    let shift = values.iter().map(|v| v - first).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - first - shift).powi(2)).sum::<f64>() / n;
    Some((first + shift, var.sqrt()))
}

/// Squared-error accumulator over (vehicle, target) pairs.
#[derive(Debug, Clone, Default)]
pub struct ErrorPool {
    per_vehicle: BTreeMap<VehicleId, (f64, usize)>,
}

impl ErrorPool {
    pub fn add(&mut self, vehicle: VehicleId, estimate: Vector2<f64>, reference: Vector2<f64>) {
        let e = self.per_vehicle.entry(vehicle).or_default();
        e.0 += (estimate - reference).norm_squared();
        e.1 += 1;
    }

    pub fn mse(&self, pooling: Pooling) -> Option<f64> {
        match pooling {
            Pooling::Pairs => {
                let (sum, n) = self.per_vehicle.values().fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
                (n > 0).then(|| sum / n as f64)
            }
            Pooling::Vehicles => {
                let per: Vec<f64> = self.per_vehicle.values().map(|(s, n)| s / *n as f64).collect();
                (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
            }
        }
    }
}

/// Squared Frobenius distance between two 2×2 matrices.
pub fn frobenius_sq(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    (a - b).norm_squared()
}
