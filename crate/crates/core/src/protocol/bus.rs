//! In-process message bus with constant per-link latency and no loss.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::world::VehicleId;

use super::codec::ProtocolMessage;

/// A bus address. Vehicles are addressed by their world identity, which
/// exists before the edge assigns a registered id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Edge,
    Vehicle(VehicleId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub from: Endpoint,
    pub to: Endpoint,
    pub sent_at: u64,
    pub msg: ProtocolMessage,
    /// Encoded length in bytes.
    pub len: usize,
    /// Ground-truth targets of an object list, in detection order. Travels
    /// beside the message for evaluation and is never encoded.
    pub truth: Option<Arc<Vec<VehicleId>>>,
}

#[derive(Debug, Clone, Default)]
pub struct Bus {
    latency: u64,
    seq: u64,
    /// Keyed by (delivery tick, send order).
    queue: BTreeMap<(u64, u64), Envelope>,
}

impl Bus {
    pub fn new(latency: u64) -> Self {
        Bus { latency, ..Default::default() }
    }

    pub fn latency(&self) -> u64 {
        self.latency
    }

    pub fn send(&mut self, env: Envelope) {
        let due = env.sent_at + self.latency;
        self.queue.insert((due, self.seq), env);
        self.seq += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Removes and returns every envelope due by `tick`, ordered by
    /// recipient, then sender, then send order.
    pub fn deliver(&mut self, tick: u64) -> Vec<Envelope> {
        let later = self.queue.split_off(&(tick + 1, 0));
        let due = std::mem::replace(&mut self.queue, later);
        let mut out: Vec<((Endpoint, Endpoint, u64, u64), Envelope)> =
            due.into_iter().map(|((t, s), e)| ((e.to, e.from, t, s), e)).collect();
        out.sort_by_key(|(k, _)| *k);
        out.into_iter().map(|(_, e)| e).collect()
    }
}
