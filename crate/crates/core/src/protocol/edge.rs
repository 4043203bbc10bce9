//! Edge side of the noise-estimation service: registration, upload
//! caching, BiFNoE, and noise publishing.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector2;

use crate::bifnoe::{Bifnoe, StepOutcome};
use crate::error::{Error, Result};
use crate::sensing::ObjectList;
use crate::world::VehicleId;

use super::codec::{FusedTrack, FusedTrackList, NoiseEntry, ProtocolMessage};
use super::upload_to_list;

#[derive(Debug, Clone)]
pub struct Edge {
    next_id: u32,
    registered: BTreeSet<VehicleId>,
    subscribers: BTreeSet<VehicleId>,
    /// One uploaded list per (tick, vehicle); a replayed upload overwrites.
    cache: BTreeMap<(u64, VehicleId), ObjectList>,
    bifnoe: Bifnoe,
}

impl Edge {
    pub fn new(bifnoe: Bifnoe) -> Self {
        Edge {
            next_id: 0,
            registered: BTreeSet::new(),
            subscribers: BTreeSet::new(),
            cache: BTreeMap::new(),
            bifnoe,
        }
    }

    pub fn registered(&self) -> &BTreeSet<VehicleId> {
        &self.registered
    }

    pub fn subscribers(&self) -> &BTreeSet<VehicleId> {
        &self.subscribers
    }

    pub fn bifnoe(&self) -> &Bifnoe {
        &self.bifnoe
    }

    pub fn cache(&self) -> &BTreeMap<(u64, VehicleId), ObjectList> {
        &self.cache
    }

    /// Applies one inbound message. `truth` holds the ground-truth targets
    /// of an upload's detections, when the caller knows them.
    pub fn handle(&mut self, msg: &ProtocolMessage, truth: Option<&[VehicleId]>) -> Result<Option<ProtocolMessage>> {
        match msg {
            ProtocolMessage::Register { .. } => {
                let assigned = VehicleId(self.next_id);
                self.next_id += 1;
                self.registered.insert(assigned);
                Ok(Some(ProtocolMessage::RegisterAck { assigned }))
            }
            ProtocolMessage::Upload { vehicle, tick, .. } => {
                if !self.registered.contains(vehicle) {
                    return Err(Error::Protocol(format!("upload from unregistered vehicle {vehicle}")));
                }
                let list = upload_to_list(msg, truth).expect("message is an upload");
                self.cache.insert((*tick, *vehicle), list);
                Ok(None)
            }
            ProtocolMessage::Subscribe { vehicle } => {
                if !self.registered.contains(vehicle) {
                    return Err(Error::Protocol(format!("subscribe from unregistered vehicle {vehicle}")));
                }
                self.subscribers.insert(*vehicle);
                Ok(None)
            }
            ProtocolMessage::RegisterAck { .. } | ProtocolMessage::NoisePublish { .. } => {
                Err(Error::Protocol(format!("edge does not accept {}", msg.kind())))
            }
        }
    }

    pub fn uploads_at(&self, tick: u64) -> Vec<ObjectList> {
        self.cache
            .range((tick, VehicleId(0))..=(tick, VehicleId(u32::MAX)))
            .map(|(_, l)| l.clone())
            .collect()
    }

    /// Runs BiFNoE on the uploads cached for `tick` and drops cache entries
    /// older than the longest window. `truth` maps targets to their true
    /// positions at `tick`.
    pub fn process(&mut self, tick: u64, truth: &dyn Fn(VehicleId) -> Option<Vector2<f64>>) -> Result<StepOutcome> {
        let lists = self.uploads_at(tick);
        let vehicles: Vec<VehicleId> = self.registered.iter().copied().collect();
        let outcome = self.bifnoe.step(tick, &lists, &vehicles, truth)?;
        let w = self.bifnoe.windows();
        let depth = w.t1_bounds.1.max(w.t2_bounds.1);
        let keep = tick.saturating_sub(depth);
        self.cache = self.cache.split_off(&(keep, VehicleId(0)));
        Ok(outcome)
    }

    /// The full noise table: one entry per registered vehicle.
    pub fn publish(&self, tick: u64) -> ProtocolMessage {
        let entries = self
            .registered
            .iter()
            .map(|&v| NoiseEntry::from_cov(v, &self.bifnoe.noise(v)))
            .collect();
        ProtocolMessage::NoisePublish { tick, entries }
    }

    /// The confirmed centralized tracks, as a direct-sharing service would send them.
    pub fn fused_tracks(&self, tick: u64) -> FusedTrackList {
        let tracks = self
            .bifnoe
            .tracker()
            .confirmed()
            .map(|t| {
                let (x, p) = (t.est.x, t.est.p);
                let mut upper = [0.0; 10];
                let mut k = 0;
                for r in 0..4 {
                    for c in r..4 {
                        upper[k] = p[(r, c)];
                        k += 1;
                    }
                }
                FusedTrack(t.id().0, [x[0], x[1], x[2], x[3]], upper)
            })
            .collect();
        FusedTrackList { tick, tracks }
    }
}
