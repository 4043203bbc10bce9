//! Vehicle side of the noise-estimation service and the three distributed
//! filter stacks each CAV runs on identical inputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::fusion::FilterModel;
use crate::sensing::{sense, NoiseCov, ObjectList};
use crate::tracking::{Tracker, TrackerConfig};
use crate::world::{VehicleId, World};

use super::bus::{Endpoint, Envelope};
use super::codec::ProtocolMessage;
use super::schedule::Schedule;
use super::{list_to_upload, upload_to_list};

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: Endpoint,
    pub msg: ProtocolMessage,
    pub truth: Option<Arc<Vec<VehicleId>>>,
}

#[derive(Debug, Clone)]
pub struct VehicleAgent {
    id: VehicleId,
    token: u64,
    wants_subscription: bool,
    register_sent: bool,
    registered: Option<VehicleId>,
    /// Latest published noise table, keyed by registered id.
    table: BTreeMap<VehicleId, NoiseCov>,
    default_r: NoiseCov,
    subscribed: Tracker,
    default: Tracker,
    limit: Option<Tracker>,
    local: Option<ObjectList>,
    received: Vec<ObjectList>,
}

impl VehicleAgent {
    /// `id` is the vehicle's world identity; `token` its ephemeral
    /// registration token.
    pub fn new(
        id: VehicleId,
        token: u64,
        wants_subscription: bool,
        default_r: NoiseCov,
        tracker: TrackerConfig,
        model: FilterModel,
        with_limit: bool,
    ) -> Self {
        let stack = Tracker::new(tracker, model);
        VehicleAgent {
            id,
            token,
            wants_subscription,
            register_sent: false,
            registered: None,
            table: BTreeMap::new(),
            default_r,
            limit: with_limit.then(|| stack.clone()),
            default: stack.clone(),
            subscribed: stack,
            local: None,
            received: Vec::new(),
        }
    }

    pub fn id(&self) -> VehicleId {
        self.id
    }

    pub fn registered(&self) -> Option<VehicleId> {
        self.registered
    }

    pub fn noise_table(&self) -> &BTreeMap<VehicleId, NoiseCov> {
        &self.table
    }

    /// Distributed filter using subscribed noise estimates (default R
    /// until the first publish arrives).
    pub fn subscribed_stack(&self) -> &Tracker {
        &self.subscribed
    }

    pub fn default_stack(&self) -> &Tracker {
        &self.default
    }

    /// Distributed filter using every observer's true R.
    pub fn limit_stack(&self) -> Option<&Tracker> {
        self.limit.as_ref()
    }

    fn to_edge(&self, msg: ProtocolMessage) -> Outgoing {
        Outgoing { to: Endpoint::Edge, msg, truth: None }
    }

    /// Registration request, sent once.
    pub fn control(&mut self) -> Vec<Outgoing> {
        if self.registered.is_some() || self.register_sent {
            return Vec::new();
        }
        self.register_sent = true;
        vec![self.to_edge(ProtocolMessage::Register { token: self.token })]
    }

    /// Handles one delivered message; returns any replies.
    pub fn receive(&mut self, env: &Envelope) -> Vec<Outgoing> {
        match &env.msg {
            ProtocolMessage::RegisterAck { assigned } if self.registered.is_none() => {
                self.registered = Some(*assigned);
                if self.wants_subscription {
                    vec![self.to_edge(ProtocolMessage::Subscribe { vehicle: *assigned })]
                } else {
                    Vec::new()
                }
            }
            ProtocolMessage::Upload { .. } => {
                if let Some(list) = upload_to_list(&env.msg, env.truth.as_deref().map(|v| v.as_slice())) {
                    self.received.push(list);
                }
                Vec::new()
            }
            ProtocolMessage::NoisePublish { entries, .. } => {
                // Decoding already rejected indefinite entries.
                self.table = entries.iter().filter_map(|e| e.cov().ok().map(|r| (e.0, r))).collect();
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    /// Senses, then uploads and broadcasts on schedule. Unregistered
    /// vehicles stay idle.
    pub fn begin_tick(
        &mut self,
        tick: u64,
        world: &World,
        neighbors: &[VehicleId],
        schedule: &Schedule,
        rng: &mut impl Rng,
    ) -> Result<Vec<Outgoing>> {
        let Some(me) = self.registered else {
            return Ok(Vec::new());
        };
        let mut list = sense(world, self.id, rng)?;
        list.observer = me;
        for d in &mut list.detections {
            d.observer = me;
        }
        list.tick = tick;
        let upload = schedule.upload_at(tick);
        let broadcast = schedule.broadcast_at(tick) && !neighbors.is_empty();
        let mut out = Vec::new();
        if upload || broadcast {
            let msg = list_to_upload(&list);
            let truth = Arc::new(list.detections.iter().map(|d| d.target).collect::<Vec<_>>());
            if upload {
                out.push(Outgoing { to: Endpoint::Edge, msg: msg.clone(), truth: Some(truth.clone()) });
            }
            if broadcast {
                for &n in neighbors {
                    out.push(Outgoing { to: Endpoint::Vehicle(n), msg: msg.clone(), truth: Some(truth.clone()) });
                }
            }
        }
        self.local = Some(list);
        Ok(out)
    }

    /// Runs the three filter stacks on the local list plus every neighbor
    /// list received this tick. `true_noise` resolves registered ids to
    /// their true covariance for the limit stack.
    pub fn finish_tick(&mut self, tick: u64, true_noise: &dyn Fn(VehicleId) -> Option<NoiseCov>) -> Result<()> {
        if self.registered.is_none() {
            self.received.clear();
            return Ok(());
        }
        let mut lists: Vec<ObjectList> = self.local.take().into_iter().collect();
        lists.append(&mut self.received);
        let default_r = self.default_r;
        let table = &self.table;
        self.subscribed.step(tick, &lists, &|v| table.get(&v).copied().unwrap_or(default_r))?;
        self.default.step(tick, &lists, &|_| default_r)?;
        if let Some(limit) = &mut self.limit {
            limit.step(tick, &lists, &|v| true_noise(v).unwrap_or(default_r))?;
        }
        Ok(())
    }
}
