//! The four-stage noise-estimation service: registration, upload,
//! publishing, and subscription, over a simulated bus with byte-exact
//! bandwidth accounting.

pub mod bus;
pub mod codec;
pub mod edge;
pub mod ledger;
pub mod schedule;
pub mod vehicle;

pub use bus::{Bus, Endpoint, Envelope};
pub use codec::{decode, decode_lines, encode, encode_fused, FusedTrackList, NoiseEntry, ProtocolMessage, WireDetection};
pub use edge::Edge;
pub use ledger::{BandwidthLedger, Direction};
pub use schedule::Schedule;
pub use vehicle::{Outgoing, VehicleAgent};

use crate::sensing::{Detection, ObjectList};
use crate::world::VehicleId;

/// Wire form of an object list; detections are numbered by position.
pub fn list_to_upload(list: &ObjectList) -> ProtocolMessage {
    ProtocolMessage::Upload {
        vehicle: list.observer,
        tick: list.tick,
        detections: list
            .detections
            .iter()
            .enumerate()
            .map(|(i, d)| WireDetection(i as u32, d.z[0], d.z[1]))
            .collect(),
    }
}

/// Object list carried by an `Upload`; `None` for any other message.
/// Detections without a known ground-truth target get `VehicleId::UNKNOWN`.
pub fn upload_to_list(msg: &ProtocolMessage, truth: Option<&[VehicleId]>) -> Option<ObjectList> {
    let ProtocolMessage::Upload { vehicle, tick, detections } = msg else {
        return None;
    };
    let detections = detections
        .iter()
        .map(|d| Detection {
            observer: *vehicle,
            target: truth.and_then(|t| t.get(d.0 as usize)).copied().unwrap_or(VehicleId::UNKNOWN),
            z: [d.1, d.2],
            tick: *tick,
        })
        .collect();
    Some(ObjectList { observer: *vehicle, tick: *tick, detections })
}
