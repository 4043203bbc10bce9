//! Wire messages and their canonical JSON-lines encoding.
//!
//! Every message is one UTF-8 line: a JSON object whose first field is the
//! `type` tag, remaining fields in declaration order, floats printed as the
//! shortest decimal that round-trips, terminated by `\n`. Detections and
//! noise entries are encoded as positional arrays to keep uploads compact.
//!
//! ```text
//! {"type":"Register","token":7}
//! {"type":"RegisterAck","assigned":3}
//! {"type":"Upload","vehicle":3,"tick":12,"detections":[[0,10.5,-2.0]]}
//! {"type":"Subscribe","vehicle":3}
//! {"type":"NoisePublish","tick":12,"entries":[[3,4.0,0.0,1.0]]}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::NoiseCov;
use crate::world::VehicleId;

/// `[local_id, px, py]`; `local_id` is the detection's index in the list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireDetection(pub u32, pub f64, pub f64);

/// `[vehicle, r11, r12, r22]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEntry(pub VehicleId, pub f64, pub f64, pub f64);

impl NoiseEntry {
    pub fn from_cov(vehicle: VehicleId, r: &NoiseCov) -> Self {
        let (r11, r12, r22) = r.entries();
        NoiseEntry(vehicle, r11, r12, r22)
    }

    pub fn cov(&self) -> Result<NoiseCov> {
        NoiseCov::from_entries(self.1, self.2, self.3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum ProtocolMessage {
    Register { token: u64 },
    RegisterAck { assigned: VehicleId },
    Upload { vehicle: VehicleId, tick: u64, detections: Vec<WireDetection> },
    Subscribe { vehicle: VehicleId },
    NoisePublish { tick: u64, entries: Vec<NoiseEntry> },
}

impl ProtocolMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolMessage::Register { .. } => "Register",
            ProtocolMessage::RegisterAck { .. } => "RegisterAck",
            ProtocolMessage::Upload { .. } => "Upload",
            ProtocolMessage::Subscribe { .. } => "Subscribe",
            ProtocolMessage::NoisePublish { .. } => "NoisePublish",
        }
    }

    fn floats(&self) -> Vec<f64> {
        match self {
            ProtocolMessage::Upload { detections, .. } => detections.iter().flat_map(|d| [d.1, d.2]).collect(),
            ProtocolMessage::NoisePublish { entries, .. } => entries.iter().flat_map(|e| [e.1, e.2, e.3]).collect(),
            _ => Vec::new(),
        }
    }
}

/// One track of the edge's fused list as a direct-sharing service would
/// send it: `[track, [px, py, vx, vy], [upper triangle of P, row-major]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedTrack(pub u64, pub [f64; 4], pub [f64; 10]);

/// Direct-sharing alternative to `NoisePublish`; used only for bandwidth comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusedTrackList {
    pub tick: u64,
    pub tracks: Vec<FusedTrack>,
}

fn encode_line<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(value).map_err(|e| Error::Encode(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Canonical encoding of one message, newline included.
pub fn encode(msg: &ProtocolMessage) -> Result<Vec<u8>> {
    if let Some(v) = msg.floats().into_iter().find(|v| !v.is_finite()) {
        return Err(Error::Encode(format!("{} carries non-finite value {v}", msg.kind())));
    }
    encode_line(msg)
}

pub fn encode_fused(list: &FusedTrackList) -> Result<Vec<u8>> {
    let finite = list.tracks.iter().all(|t| t.1.iter().chain(&t.2).all(|v| v.is_finite()));
    if !finite {
        return Err(Error::Encode("fused track list carries non-finite values".into()));
    }
    encode_line(list)
}

fn decode_at(line: &[u8], start: usize) -> Result<ProtocolMessage> {
    let msg: ProtocolMessage = serde_json::from_slice(line).map_err(|e| {
        let column = e.column().max(1);
        // Columns count bytes within the offending line of the slice.
        let line_offset: usize = line
            .split(|&b| b == b'\n')
            .take(e.line().saturating_sub(1))
            .map(|l| l.len() + 1)
            .sum();
        Error::Decode { offset: start + line_offset + column - 1, reason: e.to_string() }
    })?;
    if let ProtocolMessage::NoisePublish { entries, .. } = &msg {
        if let Some(bad) = entries.iter().find(|e| e.cov().is_err()) {
            return Err(Error::Decode {
                offset: start,
                reason: format!("noise entry for vehicle {} is not positive definite", bad.0),
            });
        }
    }
    Ok(msg)
}

/// Decodes exactly one newline-terminated message.
pub fn decode(bytes: &[u8]) -> Result<ProtocolMessage> {
    match bytes.iter().position(|&b| b == b'\n') {
        None => Err(Error::Decode { offset: bytes.len(), reason: "truncated line: missing newline".into() }),
        Some(end) if end + 1 != bytes.len() => {
            Err(Error::Decode { offset: end + 1, reason: "trailing bytes after message".into() })
        }
        Some(end) => decode_at(&bytes[..end], 0),
    }
}

/// Decodes a stream of messages; fails on the first malformed or
/// unterminated line without returning the messages before it.
pub fn decode_lines(bytes: &[u8]) -> Result<Vec<ProtocolMessage>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < bytes.len() {
        let Some(len) = bytes[start..].iter().position(|&b| b == b'\n') else {
            return Err(Error::Decode { offset: bytes.len(), reason: "truncated line: missing newline".into() });
        };
        out.push(decode_at(&bytes[start..start + len], start)?);
        start += len + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_bytes() {
        let msg = ProtocolMessage::Upload {
            vehicle: VehicleId(3),
            tick: 12,
            detections: vec![WireDetection(0, 10.5, -2.0), WireDetection(1, 0.1, 1e21)],
        };
        let bytes = encode(&msg).unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes).unwrap(),
            "{\"type\":\"Upload\",\"vehicle\":3,\"tick\":12,\"detections\":[[0,10.5,-2.0],[1,0.1,1e+21]]}\n"
        );
        assert_eq!(decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn non_finite_rejected() {
        let msg = ProtocolMessage::Upload { vehicle: VehicleId(0), tick: 0, detections: vec![WireDetection(0, f64::NAN, 0.0)] };
        assert!(matches!(encode(&msg), Err(Error::Encode(_))));
    }

    #[test]
    fn offsets_point_into_stream() {
        let mut bytes = encode(&ProtocolMessage::Register { token: 1 }).unwrap();
        let first = bytes.len();
        bytes.extend_from_slice(b"{\"type\":\"Register\",\"token\":x}\n");
        match decode_lines(&bytes) {
            Err(Error::Decode { offset, .. }) => assert_eq!(bytes[offset], b'x', "offset {offset} (line at {first})"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn indefinite_noise_rejected() {
        let bytes = b"{\"type\":\"NoisePublish\",\"tick\":0,\"entries\":[[0,1.0,2.0,1.0]]}\n";
        assert!(matches!(decode(bytes), Err(Error::Decode { .. })));
    }
}
