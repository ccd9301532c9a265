//! Byte layouts of the SDN control messages.
//!
//! All integers are big-endian. The first byte is the message kind; bit 7
//! of that byte is a per-kind flag.
//!
//! | kind  | code | layout                                                         |
//! |-------|------|----------------------------------------------------------------|
//! | CJOIN | 1    | node 2                                                         |
//! | CACK  | 2    | node 2                                                         |
//! | CONF  | 3    | nsu_period_s 2, flow_lifetime_s 2 (flag: report flow stats)    |
//! | NSU   | 4    | node 2, energy 2, queue 1, n 1, n x (id 2, link 1) [stats]     |
//! | FTQ   | 5    | node 2, seq 2, header prefix (rest of message)                 |
//! | FTS   | 6    | node 2, seq 2, n 1, n x entry, r 1, r x refresh id 2           |
//!
//! NSU flow stats (flag set): m 1, m x (entry id 2, hits 1).
//!
//! FTS entry: id 2, lifetime_s 2, matches 1, per match (offset 1, len 1,
//! value len, mask len), then the action: 1 Forward (node 2), 2 Drop,
//! 3 SrhPush (n 1, n x node 2), 4 Query.

use thiserror::Error;

use super::flowtable::{Action, Match};
use crate::mac::PAYLOAD_BUDGET_BYTES;
use crate::phy::NodeId;

const FLAG: u8 = 0x80;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("message of {0} bytes exceeds the {PAYLOAD_BUDGET_BYTES}-byte payload budget")]
    Oversize(usize),
    #[error("message truncated")]
    Truncated,
    #[error("unknown message kind {0:#04x}")]
    UnknownKind(u8),
    #[error("unknown action type {0}")]
    UnknownAction(u8),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeStatus {
    pub node: NodeId,
    pub energy: u16,
    pub queue: u8,
    /// (neighbor, link estimate 0..=255)
    pub neighbors: Vec<(NodeId, u8)>,
    /// (entry id, hits since the previous report)
    pub flow_stats: Option<Vec<(u16, u8)>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FtsEntry {
    pub id: u16,
    pub lifetime_s: u16,
    pub matches: Vec<Match>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SdnMessage {
    Cjoin {
        node: NodeId,
    },
    Cack {
        node: NodeId,
    },
    Conf {
        nsu_period_s: u16,
        flow_lifetime_s: u16,
        report_flow_stats: bool,
    },
    Nsu(NodeStatus),
    Ftq {
        node: NodeId,
        seq: u16,
        header: Vec<u8>,
    },
    Fts {
        node: NodeId,
        seq: u16,
        entries: Vec<FtsEntry>,
        refresh: Vec<u16>,
    },
}

fn action_len(a: &Action) -> usize {
    match a {
        Action::Forward(_) => 3,
        Action::Drop | Action::Query => 1,
        Action::SrhPush(r) => 2 + 2 * r.len(),
    }
}

fn entry_len(e: &FtsEntry) -> usize {
    5 + e.matches.iter().map(|m| 2 + 2 * m.len()).sum::<usize>() + action_len(&e.action)
}

impl SdnMessage {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SdnMessage::Cjoin { .. } => "CJOIN",
            SdnMessage::Cack { .. } => "CACK",
            SdnMessage::Conf { .. } => "CONF",
            SdnMessage::Nsu(_) => "NSU",
            SdnMessage::Ftq { .. } => "FTQ",
            SdnMessage::Fts { .. } => "FTS",
        }
    }

    /// Size of the message as given, before any truncation.
    pub fn encoded_len(&self) -> usize {
        match self {
            SdnMessage::Cjoin { .. } | SdnMessage::Cack { .. } => 3,
            SdnMessage::Conf { .. } => 5,
            SdnMessage::Nsu(s) => 7 + 3 * s.neighbors.len() + s.flow_stats.as_ref().map_or(0, |f| 1 + 3 * f.len()),
            SdnMessage::Ftq { header, .. } => 5 + header.len(),
            SdnMessage::Fts { entries, refresh, .. } => {
                7 + entries.iter().map(entry_len).sum::<usize>() + 2 * refresh.len()
            }
        }
    }

    /// Copy trimmed to the payload budget: NSU neighbor lists first, then
    /// flow stats. Other kinds are returned unchanged.
    pub fn fit(&self) -> SdnMessage {
        let mut m = self.clone();
        if let SdnMessage::Nsu(s) = &mut m {
            s.neighbors.truncate(255);
            if let Some(f) = &mut s.flow_stats {
                f.truncate(255);
            }
            let base = 7 + s.flow_stats.as_ref().map_or(0, |f| 1 + 3 * f.len());
            if base + 3 * s.neighbors.len() > PAYLOAD_BUDGET_BYTES {
                let room = PAYLOAD_BUDGET_BYTES.saturating_sub(base) / 3;
                s.neighbors.truncate(room);
            }
            if let Some(f) = &mut s.flow_stats {
                let room = PAYLOAD_BUDGET_BYTES.saturating_sub(7 + 1 + 3 * s.neighbors.len()) / 3;
                f.truncate(room);
            }
        }
        m
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let m = self.fit();
        let mut b = Vec::with_capacity(m.encoded_len());
        match &m {
            SdnMessage::Cjoin { node } => {
                b.push(1);
                put_node(&mut b, *node);
            }
            SdnMessage::Cack { node } => {
                b.push(2);
                put_node(&mut b, *node);
            }
            SdnMessage::Conf {
                nsu_period_s,
                flow_lifetime_s,
                report_flow_stats,
            } => {
                b.push(3 | if *report_flow_stats { FLAG } else { 0 });
                b.extend_from_slice(&nsu_period_s.to_be_bytes());
                b.extend_from_slice(&flow_lifetime_s.to_be_bytes());
            }
            SdnMessage::Nsu(s) => {
                b.push(4 | if s.flow_stats.is_some() { FLAG } else { 0 });
                put_node(&mut b, s.node);
                b.extend_from_slice(&s.energy.to_be_bytes());
                b.push(s.queue);
                b.push(s.neighbors.len() as u8);
                for &(n, q) in &s.neighbors {
                    put_node(&mut b, n);
                    b.push(q);
                }
                if let Some(f) = &s.flow_stats {
                    b.push(f.len() as u8);
                    for &(id, hits) in f {
                        b.extend_from_slice(&id.to_be_bytes());
                        b.push(hits);
                    }
                }
            }
            SdnMessage::Ftq { node, seq, header } => {
                b.push(5);
                put_node(&mut b, *node);
                b.extend_from_slice(&seq.to_be_bytes());
                b.extend_from_slice(header);
            }
            SdnMessage::Fts {
                node,
                seq,
                entries,
                refresh,
            } => {
                b.push(6);
                put_node(&mut b, *node);
                b.extend_from_slice(&seq.to_be_bytes());
                b.push(u8::try_from(entries.len()).map_err(|_| CodecError::Oversize(m.encoded_len()))?);
                for e in entries {
                    b.extend_from_slice(&e.id.to_be_bytes());
                    b.extend_from_slice(&e.lifetime_s.to_be_bytes());
                    b.push(e.matches.len() as u8);
                    for mt in &e.matches {
                        b.push(mt.offset);
                        b.push(mt.len() as u8);
                        b.extend_from_slice(&mt.value);
                        b.extend_from_slice(&mt.mask);
                    }
                    match &e.action {
                        Action::Forward(n) => {
                            b.push(1);
                            put_node(&mut b, *n);
                        }
                        Action::Drop => b.push(2),
                        Action::SrhPush(r) => {
                            b.push(3);
                            b.push(r.len() as u8);
                            for &n in r {
                                put_node(&mut b, n);
                            }
                        }
                        Action::Query => b.push(4),
                    }
                }
                b.push(refresh.len() as u8);
                for id in refresh {
                    b.extend_from_slice(&id.to_be_bytes());
                }
            }
        }
        if b.len() > PAYLOAD_BUDGET_BYTES {
            return Err(CodecError::Oversize(b.len()));
        }
        Ok(b)
    }

    pub fn decode(bytes: &[u8]) -> Result<SdnMessage, CodecError> {
        let mut r = Reader { b: bytes, at: 0 };
        let first = r.u8()?;
        let flag = first & FLAG != 0;
        let m = match first & !FLAG {
            1 => SdnMessage::Cjoin { node: r.node()? },
            2 => SdnMessage::Cack { node: r.node()? },
            3 => SdnMessage::Conf {
                nsu_period_s: r.u16()?,
                flow_lifetime_s: r.u16()?,
                report_flow_stats: flag,
            },
            4 => {
                let node = r.node()?;
                let energy = r.u16()?;
                let queue = r.u8()?;
                let n = r.u8()?;
                let neighbors = (0..n)
                    .map(|_| Ok((r.node()?, r.u8()?)))
                    .collect::<Result<_, CodecError>>()?;
                let flow_stats = if flag {
                    let m = r.u8()?;
                    Some(
                        (0..m)
                            .map(|_| Ok((r.u16()?, r.u8()?)))
                            .collect::<Result<_, CodecError>>()?,
                    )
                } else {
                    None
                };
                SdnMessage::Nsu(NodeStatus {
                    node,
                    energy,
                    queue,
                    neighbors,
                    flow_stats,
                })
            }
            5 => SdnMessage::Ftq {
                node: r.node()?,
                seq: r.u16()?,
                header: r.rest().to_vec(),
            },
            6 => {
                let node = r.node()?;
                let seq = r.u16()?;
                let n = r.u8()?;
                let mut entries = Vec::with_capacity(usize::from(n));
                for _ in 0..n {
                    let id = r.u16()?;
                    let lifetime_s = r.u16()?;
                    let nm = r.u8()?;
                    let mut matches = Vec::new();
                    for _ in 0..nm {
                        let offset = r.u8()?;
                        let len = usize::from(r.u8()?);
                        let value = r.take(len)?.to_vec();
                        let mask = r.take(len)?.to_vec();
                        matches.push(Match { offset, value, mask });
                    }
                    let action = match r.u8()? {
                        1 => Action::Forward(r.node()?),
                        2 => Action::Drop,
                        3 => {
                            let k = r.u8()?;
                            Action::SrhPush((0..k).map(|_| r.node()).collect::<Result<_, _>>()?)
                        }
                        4 => Action::Query,
                        t => return Err(CodecError::UnknownAction(t)),
                    };
                    entries.push(FtsEntry {
                        id,
                        lifetime_s,
                        matches,
                        action,
                    });
                }
                let k = r.u8()?;
                let refresh = (0..k).map(|_| r.u16()).collect::<Result<_, _>>()?;
                SdnMessage::Fts {
                    node,
                    seq,
                    entries,
                    refresh,
                }
            }
            k => return Err(CodecError::UnknownKind(k)),
        };
        match r.b.len() - r.at {
            0 => Ok(m),
            n => Err(CodecError::Trailing(n)),
        }
    }
}

fn put_node(b: &mut Vec<u8>, n: NodeId) {
    b.extend_from_slice(&n.0.to_be_bytes());
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let s = self.b.get(self.at..self.at + n).ok_or(CodecError::Truncated)?;
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        let s = self.take(2)?;
        Ok(u16::from_be_bytes([s[0], s[1]]))
    }

    fn node(&mut self) -> Result<NodeId, CodecError> {
        self.u16().map(NodeId)
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.b[self.at..];
        self.at = self.b.len();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::header;
    use proptest::prelude::*;

    fn nsu(n: usize) -> SdnMessage {
        SdnMessage::Nsu(NodeStatus {
            node: NodeId(3),
            energy: 900,
            queue: 2,
            neighbors: (0..n).map(|i| (NodeId(i as u16), 200)).collect(),
            flow_stats: None,
        })
    }

    #[test]
    fn nsu_with_five_neighbors() {
        // kind 1 + node 2 + energy 2 + queue 1 + count 1 + 5 x 3
        let expect = 1 + 2 + 2 + 1 + 1 + 5 * 3;
        assert_eq!(expect, 22);
        assert_eq!(nsu(5).encode().unwrap().len(), expect);
    }

    #[test]
    fn ftq_with_partial_header() {
        let h = header::build(crate::packet::FlowClass::App, NodeId(4), NodeId(0), 1, 60);
        let m = SdnMessage::Ftq {
            node: NodeId(4),
            seq: 1,
            header: h[..24].to_vec(),
        };
        assert_eq!(m.encode().unwrap().len(), 1 + 2 + 2 + 24);
    }

    #[test]
    fn conf_size() {
        let m = SdnMessage::Conf {
            nsu_period_s: 10,
            flow_lifetime_s: 60,
            report_flow_stats: false,
        };
        assert_eq!(m.encode().unwrap().len(), 1 + 2 + 2);
    }

    #[test]
    fn nsu_neighbors_truncated_to_budget() {
        let big = nsu(60);
        let bytes = big.encode().unwrap();
        assert!(bytes.len() <= PAYLOAD_BUDGET_BYTES);
        // (102 - 7) / 3 = 31 neighbors survive.
        match SdnMessage::decode(&bytes).unwrap() {
            SdnMessage::Nsu(s) => assert_eq!(s.neighbors.len(), 31),
            other => panic!("decoded {other:?}"),
        }
    }

    #[test]
    fn oversize_fts_is_an_error() {
        let m = SdnMessage::Fts {
            node: NodeId(1),
            seq: 0,
            entries: vec![FtsEntry {
                id: 1,
                lifetime_s: 60,
                matches: vec![],
                action: Action::SrhPush((0..60).map(NodeId).collect()),
            }],
            refresh: vec![],
        };
        assert!(matches!(m.encode(), Err(CodecError::Oversize(_))));
    }

    #[test]
    fn decode_rejects_garbage() {
        assert_eq!(SdnMessage::decode(&[]), Err(CodecError::Truncated));
        assert_eq!(SdnMessage::decode(&[9]), Err(CodecError::UnknownKind(9)));
        assert_eq!(SdnMessage::decode(&[1, 0, 1, 7]), Err(CodecError::Trailing(1)));
    }

    fn node() -> impl Strategy<Value = NodeId> {
        any::<u16>().prop_map(NodeId)
    }

    fn action() -> impl Strategy<Value = Action> {
        prop_oneof![
            node().prop_map(Action::Forward),
            Just(Action::Drop),
            Just(Action::Query),
            prop::collection::vec(node(), 0..8).prop_map(Action::SrhPush),
        ]
    }

    fn a_match() -> impl Strategy<Value = Match> {
        (any::<u8>(), 0usize..4).prop_flat_map(|(offset, len)| {
            (
                Just(offset),
                prop::collection::vec(any::<u8>(), len),
                prop::collection::vec(any::<u8>(), len),
            )
                .prop_map(|(offset, value, mask)| Match { offset, value, mask })
        })
    }

    fn message() -> impl Strategy<Value = SdnMessage> {
        prop_oneof![
            node().prop_map(|node| SdnMessage::Cjoin { node }),
            node().prop_map(|node| SdnMessage::Cack { node }),
            (any::<u16>(), any::<u16>(), any::<bool>()).prop_map(|(a, b, f)| SdnMessage::Conf {
                nsu_period_s: a,
                flow_lifetime_s: b,
                report_flow_stats: f,
            }),
            (
                node(),
                any::<u16>(),
                any::<u8>(),
                prop::collection::vec((node(), any::<u8>()), 0..64),
                prop::option::of(prop::collection::vec((any::<u16>(), any::<u8>()), 0..40)),
            )
                .prop_map(|(node, energy, queue, neighbors, flow_stats)| {
                    SdnMessage::Nsu(NodeStatus {
                        node,
                        energy,
                        queue,
                        neighbors,
                        flow_stats,
                    })
                }),
            (node(), any::<u16>(), prop::collection::vec(any::<u8>(), 0..=97))
                .prop_map(|(node, seq, header)| SdnMessage::Ftq { node, seq, header }),
            (
                node(),
                any::<u16>(),
                prop::collection::vec(
                    (
                        any::<u16>(),
                        any::<u16>(),
                        prop::collection::vec(a_match(), 0..2),
                        action()
                    )
                        .prop_map(|(id, lifetime_s, matches, action)| FtsEntry {
                            id,
                            lifetime_s,
                            matches,
                            action,
                        }),
                    0..3
                ),
                prop::collection::vec(any::<u16>(), 0..4),
            )
                .prop_map(|(node, seq, entries, refresh)| SdnMessage::Fts {
                    node,
                    seq,
                    entries,
                    refresh,
                }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn round_trip_within_budget(m in message()) {
            match m.encode() {
                Ok(bytes) => {
                    prop_assert!(bytes.len() <= PAYLOAD_BUDGET_BYTES);
                    prop_assert_eq!(bytes.len(), m.fit().encoded_len());
                    prop_assert_eq!(SdnMessage::decode(&bytes).unwrap(), m.fit());
                }
                Err(CodecError::Oversize(n)) => {
                    prop_assert!(n > PAYLOAD_BUDGET_BYTES);
                    prop_assert!(!matches!(m, SdnMessage::Nsu(_)));
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
