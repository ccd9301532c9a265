//! End-to-end packets carried by MAC frames.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernel::Asn;
use crate::phy::NodeId;
use crate::sdn::codec::SdnMessage;
use crate::track::TrackSignal;

/// Traffic class of a packet, also used as the first header byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowClass {
    App,
    Nsu,
    Ftq,
    SdnDown,
    Join,
    Reservation,
    Rpl,
}

impl FlowClass {
    pub const ALL: [FlowClass; 7] = [
        FlowClass::App,
        FlowClass::Nsu,
        FlowClass::Ftq,
        FlowClass::SdnDown,
        FlowClass::Join,
        FlowClass::Reservation,
        FlowClass::Rpl,
    ];

    pub fn code(self) -> u8 {
        match self {
            FlowClass::App => 0x11,
            FlowClass::Nsu => 0x21,
            FlowClass::Ftq => 0x22,
            FlowClass::SdnDown => 0x23,
            FlowClass::Join => 0x24,
            FlowClass::Reservation => 0x31,
            FlowClass::Rpl => 0x3a,
        }
    }

    pub fn from_code(code: u8) -> Option<FlowClass> {
        FlowClass::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::App => "App",
            FlowClass::Nsu => "Nsu",
            FlowClass::Ftq => "Ftq",
            FlowClass::SdnDown => "SdnDown",
            FlowClass::Join => "Join",
            FlowClass::Reservation => "Reservation",
            FlowClass::Rpl => "Rpl",
        }
    }

    /// Upward SDN control: the traffic a control-plane track carries.
    pub fn is_upward_control(self) -> bool {
        matches!(self, FlowClass::Nsu | FlowClass::Ftq)
    }
}

impl fmt::Display for FlowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlowClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FlowClass::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown flow class `{s}`"))
    }
}

/// Terminal reason for a packet that never reached its destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropReason {
    QueueOverflow,
    RetryLimit,
    TrackStale,
    QueryBufferOverflow,
    QueryTimeout,
    FlowDrop,
    NoRoute,
    Unfinished,
}

impl DropReason {
    pub const ALL: [DropReason; 8] = [
        DropReason::QueueOverflow,
        DropReason::RetryLimit,
        DropReason::TrackStale,
        DropReason::QueryBufferOverflow,
        DropReason::QueryTimeout,
        DropReason::FlowDrop,
        DropReason::NoRoute,
        DropReason::Unfinished,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::QueueOverflow => "QueueOverflow",
            DropReason::RetryLimit => "RetryLimit",
            DropReason::TrackStale => "TrackStale",
            DropReason::QueryBufferOverflow => "QueryBufferOverflow",
            DropReason::QueryTimeout => "QueryTimeout",
            DropReason::FlowDrop => "FlowDrop",
            DropReason::NoRoute => "NoRoute",
            DropReason::Unfinished => "Unfinished",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DropReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DropReason::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown drop reason `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PacketId(pub u64);

/// Abstract header image the flowtable matches on.
///
/// | offset | width | field          |
/// |--------|-------|----------------|
/// | 0      | 1     | class code     |
/// | 1      | 2     | source node    |
/// | 3      | 2     | destination    |
/// | 5      | 2     | source port    |
/// | 7      | 2     | dest port      |
/// | 9      | 2     | sequence       |
/// | 11..   |       | zero padding   |
pub mod header {
    use super::FlowClass;
    use crate::phy::NodeId;

    pub const CLASS: usize = 0;
    pub const SRC: usize = 1;
    pub const DST: usize = 3;
    pub const SPORT: usize = 5;
    pub const DPORT: usize = 7;
    pub const SEQ: usize = 9;
    pub const DEFAULT_LEN: usize = 40;
    pub const APP_PORT: u16 = 5683;

    pub fn build(class: FlowClass, src: NodeId, dst: NodeId, seq: u16, len: usize) -> Vec<u8> {
        let mut h = vec![0u8; len.max(SEQ + 2)];
        h[CLASS] = class.code();
        h[SRC..SRC + 2].copy_from_slice(&src.0.to_be_bytes());
        h[DST..DST + 2].copy_from_slice(&dst.0.to_be_bytes());
        h[SPORT..SPORT + 2].copy_from_slice(&APP_PORT.to_be_bytes());
        h[DPORT..DPORT + 2].copy_from_slice(&APP_PORT.to_be_bytes());
        h[SEQ..SEQ + 2].copy_from_slice(&seq.to_be_bytes());
        h
    }

    pub fn dst(h: &[u8]) -> Option<NodeId> {
        h.get(DST..DST + 2).map(|b| NodeId(u16::from_be_bytes([b[0], b[1]])))
    }

    pub fn src(h: &[u8]) -> Option<NodeId> {
        h.get(SRC..SRC + 2).map(|b| NodeId(u16::from_be_bytes([b[0], b[1]])))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    App { bytes: u16 },
    Sdn(SdnMessage),
    Track(TrackSignal),
}

/// Source routing header: the hop list below the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRouteHeader {
    pub route: Vec<NodeId>,
}

impl SourceRouteHeader {
    /// Next hop after `at`. A node that is not on the route (the node that
    /// pushed the header) sends to the first entry; the last entry gets
    /// `None`.
    pub fn next_after(&self, at: NodeId) -> Option<NodeId> {
        match self.route.iter().position(|&n| n == at) {
            Some(pos) => self.route.get(pos + 1).copied(),
            None => self.route.first().copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: PacketId,
    pub class: FlowClass,
    pub origin: NodeId,
    pub dst: NodeId,
    pub created_asn: Asn,
    pub header: Vec<u8>,
    pub payload: Payload,
    pub srh: Option<SourceRouteHeader>,
    /// Link traversals so far.
    pub hops: u32,
    /// Link traversals made on track-labeled cells.
    pub track_hops: u32,
}

impl Packet {
    /// Bytes on air above the MAC header.
    pub fn size_bytes(&self) -> usize {
        let body = match &self.payload {
            Payload::App { bytes } => usize::from(*bytes),
            Payload::Sdn(m) => m.encoded_len(),
            Payload::Track(s) => s.encoded_len(),
        };
        body + self.srh.as_ref().map_or(0, |s| 1 + 2 * s.route.len())
    }
}
