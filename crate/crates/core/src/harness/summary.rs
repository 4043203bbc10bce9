use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::ledger::{kbps, BandwidthLedger};

use super::config::RunConfig;
use super::metrics::{mean_std, Family, MetricSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Stat> {
        mean_std(values).map(|(mean, std)| Stat { mean, std })
    }
}

/// Improvement rates over the one-second bucket `[t0, t0 + 1 s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub t0_s: f64,
    /// Ticks in the bucket with a defined rate.
    pub samples: usize,
    pub delta_gt: Option<Stat>,
    pub delta_lim: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSummary {
    pub r_com: f64,
    pub f_sub: f64,
    pub f_upl: f64,
    pub buckets: Vec<BucketStat>,
}

/// Mean and population std of δ over each one-second bucket.
pub fn summarize(series: &MetricSeries, t0s: &[f64]) -> Result<Vec<BucketStat>> {
    let span = series.records.len() as f64 / series.f_sim;
    t0s.iter()
        .map(|&t0| {
            if !(t0 >= 0.0 && t0 + 1.0 <= span + 1e-9) {
                return Err(Error::Domain(format!("bucket [{t0}, {t0}+1) s is outside the {span} s run")));
            }
            let gt = series.values_between(Family::DeltaGt, t0, t0 + 1.0);
            let lim = series.values_between(Family::DeltaLim, t0, t0 + 1.0);
            Ok(BucketStat { t0_s: t0, samples: gt.len(), delta_gt: Stat::of(&gt), delta_lim: Stat::of(&lim) })
        })
        .collect()
}

/// Fleet-average bit rates over the whole run, kbps per vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSummary {
    pub uplink_kbps: f64,
    pub downlink_kbps: f64,
    pub direct_sharing_downlink_kbps: f64,
}

impl BandwidthSummary {
    pub fn from_ledger(ledger: &BandwidthLedger, duration_s: f64) -> Self {
        let n = ledger.totals().len().max(1) as f64;
        let per = |f: fn(&crate::protocol::ledger::Counters) -> u64| {
            kbps(ledger.totals().values().map(f).sum()) / duration_s / n
        };
        BandwidthSummary {
            uplink_kbps: per(|c| c.uplink),
            downlink_kbps: per(|c| c.downlink),
            direct_sharing_downlink_kbps: per(|c| c.baseline_downlink),
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub repeats: usize,
    /// Every paired filter stack consumed byte-identical measurement streams.
    pub paired_inputs_identical: bool,
    pub improvement: ImprovementSummary,
    pub bandwidth: BandwidthSummary,
    /// Scenario config; the worker count is not recorded.
    pub config: RunConfig,
}
