//! Byte-exact bandwidth accounting of vehicle-to-edge traffic.

use std::collections::BTreeMap;

use crate::world::VehicleId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub uplink: u64,
    pub downlink: u64,
    /// Downlink a direct-sharing service would have needed instead.
    pub baseline_downlink: u64,
}

impl Counters {
    fn add(&mut self, dir: Direction, bytes: u64) {
        match dir {
            Direction::Uplink => self.uplink += bytes,
            Direction::Downlink => self.downlink += bytes,
        }
    }
}

/// Per-vehicle totals plus one-second buckets. Bucket `s` covers ticks
/// `[s·f_sim, (s+1)·f_sim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthLedger {
    f_sim: f64,
    totals: BTreeMap<VehicleId, Counters>,
    buckets: BTreeMap<(u64, VehicleId), Counters>,
    edge_received: u64,
    edge_sent: u64,
}

/// Bytes over one second as kilobits per second.
pub fn kbps(bytes: u64) -> f64 {
    bytes as f64 * 8.0 / 1000.0
}

impl BandwidthLedger {
    pub fn new(f_sim: f64) -> Self {
        BandwidthLedger {
            f_sim,
            totals: BTreeMap::new(),
            buckets: BTreeMap::new(),
            edge_received: 0,
            edge_sent: 0,
        }
    }

    pub fn bucket_of(&self, tick: u64) -> u64 {
        (tick as f64 / self.f_sim).floor() as u64
    }

    /// Records `bytes` sent by (`Uplink`) or to (`Downlink`) `vehicle`.
    pub fn account(&mut self, vehicle: VehicleId, dir: Direction, bytes: usize, tick: u64) {
        let bytes = bytes as u64;
        let bucket = self.bucket_of(tick);
        self.totals.entry(vehicle).or_default().add(dir, bytes);
        self.buckets.entry((bucket, vehicle)).or_default().add(dir, bytes);
        match dir {
            Direction::Uplink => self.edge_received += bytes,
            Direction::Downlink => self.edge_sent += bytes,
        }
    }

    pub fn account_baseline(&mut self, vehicle: VehicleId, bytes: usize, tick: u64) {
        let bucket = self.bucket_of(tick);
        self.totals.entry(vehicle).or_default().baseline_downlink += bytes as u64;
        self.buckets.entry((bucket, vehicle)).or_default().baseline_downlink += bytes as u64;
    }

    /// Makes `vehicle` appear in every bucket up to `seconds`, so silent
    /// seconds report zero.
    pub fn register(&mut self, vehicle: VehicleId, seconds: u64) {
        self.totals.entry(vehicle).or_default();
        for s in 0..seconds {
            self.buckets.entry((s, vehicle)).or_default();
        }
    }

    pub fn totals(&self) -> &BTreeMap<VehicleId, Counters> {
        &self.totals
    }

    pub fn bucket(&self, second: u64, vehicle: VehicleId) -> Counters {
        self.buckets.get(&(second, vehicle)).copied().unwrap_or_default()
    }

    /// `((second, vehicle), counters)` in ascending order.
    pub fn buckets(&self) -> impl Iterator<Item = (&(u64, VehicleId), &Counters)> {
        self.buckets.iter()
    }

    pub fn edge_received(&self) -> u64 {
        self.edge_received
    }

    pub fn edge_sent(&self) -> u64 {
        self.edge_sent
    }
}
