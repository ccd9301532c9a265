//! SDN controller at the DAG root: join admission, configuration, the
//! network view built from NSUs, flowtable answers and entry refreshes.

use std::collections::BTreeMap;

use crate::packet::header;
use crate::phy::NodeId;
use crate::rpl::Dag;
use crate::sdn::codec::{FtsEntry, NodeStatus, SdnMessage};
use crate::sdn::flowtable::{Action, Match};

/// Sequence number used for FTS messages the controller sends unprompted.
pub const UNSOLICITED_SEQ: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerPolicy {
    pub nsu_period_s: u16,
    pub flow_lifetime_s: u16,
    pub afr_enabled: bool,
    pub afr_hit_threshold: u32,
}

impl Default for ControllerPolicy {
    fn default() -> Self {
        ControllerPolicy {
            nsu_period_s: 10,
            flow_lifetime_s: 60,
            afr_enabled: false,
            afr_hit_threshold: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeView {
    pub joined: bool,
    pub last_nsu_ms: Option<u64>,
    pub energy: u16,
    pub queue: u8,
    pub neighbors: Vec<(NodeId, u8)>,
    pub nsu_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PushedEntry {
    pub refreshed_ms: u64,
    pub lifetime_s: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogLine {
    pub time_ms: u64,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone)]
pub struct Controller {
    policy: ControllerPolicy,
    dag: Dag,
    view: BTreeMap<NodeId, NodeView>,
    pushed: BTreeMap<(NodeId, u16), PushedEntry>,
    next_entry_id: u16,
    log: Vec<LogLine>,
    pub ignored_nsu: u64,
    pub refreshes_sent: u64,
}

impl Controller {
    pub fn new(policy: ControllerPolicy, dag: Dag) -> Self {
        Controller {
            policy,
            dag,
            view: BTreeMap::new(),
            pushed: BTreeMap::new(),
            next_entry_id: 1,
            log: Vec::new(),
            ignored_nsu: 0,
            refreshes_sent: 0,
        }
    }

    pub fn policy(&self) -> &ControllerPolicy {
        &self.policy
    }

    pub fn view(&self, n: NodeId) -> Option<&NodeView> {
        self.view.get(&n)
    }

    pub fn log(&self) -> &[LogLine] {
        &self.log
    }

    /// CSV rendering of the decision log.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("time_ms,input,output\n");
        for l in &self.log {
            s.push_str(&format!("{},{},{}\n", l.time_ms, l.input, l.output));
        }
        s
    }

    fn record(&mut self, now_ms: u64, input: String, out: &[(NodeId, SdnMessage)]) {
        let output = out
            .iter()
            .map(|(n, m)| format!("{}>{}", m.kind_name(), n))
            .collect::<Vec<_>>()
            .join(" ");
        self.log.push(LogLine {
            time_ms: now_ms,
            input,
            output,
        });
    }

    /// Dispatches any inbound control message. Returns messages to send,
    /// each addressed to a node.
    pub fn handle(&mut self, from: NodeId, msg: &SdnMessage, now_ms: u64) -> Vec<(NodeId, SdnMessage)> {
        let out = match msg {
            SdnMessage::Cjoin { node } => self.handle_cjoin(*node),
            SdnMessage::Ftq { node, seq, header } => vec![(*node, self.handle_ftq(*node, *seq, header, now_ms))],
            SdnMessage::Nsu(s) => self.handle_nsu(s, now_ms).into_iter().map(|m| (s.node, m)).collect(),
            _ => Vec::new(),
        };
        self.record(now_ms, format!("{}<{}", msg.kind_name(), from), &out);
        out
    }

    /// Admits a node. Repeats are answered identically.
    pub fn handle_cjoin(&mut self, node: NodeId) -> Vec<(NodeId, SdnMessage)> {
        self.view.entry(node).or_default().joined = true;
        vec![
            (node, SdnMessage::Cack { node }),
            (
                node,
                SdnMessage::Conf {
                    nsu_period_s: self.policy.nsu_period_s,
                    flow_lifetime_s: self.policy.flow_lifetime_s,
                    report_flow_stats: self.policy.afr_enabled,
                },
            ),
        ]
    }

    /// Answers a flowtable query from `node` about the destination found
    /// in the partial header.
    pub fn handle_ftq(&mut self, node: NodeId, seq: u16, hdr: &[u8], now_ms: u64) -> SdnMessage {
        let dst = header::dst(hdr);
        let action = match dst {
            Some(d) if self.dag.rank(d).is_some() => {
                if node == self.dag.root() || self.dag.is_descendant(d, node) {
                    let full = self.dag.compute_source_route(d).unwrap_or_default();
                    let below: Vec<NodeId> = match full.iter().position(|&n| n == node) {
                        Some(p) => full[p + 1..].to_vec(),
                        None => full,
                    };
                    Action::SrhPush(below)
                } else {
                    match self.dag.parent(node) {
                        Some(p) => Action::Forward(p),
                        None => Action::Drop,
                    }
                }
            }
            _ => Action::Drop,
        };
        let d = dst.unwrap_or(NodeId(u16::MAX));
        let id = self.next_entry_id;
        self.next_entry_id = self.next_entry_id.wrapping_add(1).max(1);
        self.pushed.insert(
            (node, id),
            PushedEntry {
                refreshed_ms: now_ms,
                lifetime_s: self.policy.flow_lifetime_s,
            },
        );
        SdnMessage::Fts {
            node,
            seq,
            entries: vec![FtsEntry {
                id,
                lifetime_s: self.policy.flow_lifetime_s,
                matches: vec![Match::exact(header::DST, &d.0.to_be_bytes())],
                action,
            }],
            refresh: Vec::new(),
        }
    }

    /// Updates the view; may answer with a refresh for busy entries about
    /// to expire.
    pub fn handle_nsu(&mut self, s: &NodeStatus, now_ms: u64) -> Option<SdnMessage> {
        let Some(v) = self.view.get_mut(&s.node).filter(|v| v.joined) else {
            self.ignored_nsu += 1;
            return None;
        };
        v.last_nsu_ms = Some(now_ms);
        v.energy = s.energy;
        v.queue = s.queue;
        v.neighbors = s.neighbors.clone();
        v.nsu_count += 1;
        self.pushed
            .retain(|_, e| now_ms.saturating_sub(e.refreshed_ms) <= u64::from(e.lifetime_s) * 1000);
        if !self.policy.afr_enabled {
            return None;
        }
        let period_ms = u64::from(self.policy.nsu_period_s) * 1000;
        let mut refresh = Vec::new();
        for &(id, hits) in s.flow_stats.as_deref().unwrap_or(&[]) {
            let Some(e) = self.pushed.get_mut(&(s.node, id)) else {
                continue;
            };
            let expires = e.refreshed_ms + u64::from(e.lifetime_s) * 1000;
            if u32::from(hits) >= self.policy.afr_hit_threshold && expires.saturating_sub(now_ms) < period_ms {
                e.refreshed_ms = now_ms;
                refresh.push(id);
            }
        }
        if refresh.is_empty() {
            return None;
        }
        self.refreshes_sent += refresh.len() as u64;
        Some(SdnMessage::Fts {
            node: s.node,
            seq: UNSOLICITED_SEQ,
            entries: Vec::new(),
            refresh,
        })
    }

    /// Time since the last NSU from `n`, or since `since_ms` if none arrived.
    pub fn staleness_ms(&self, n: NodeId, now_ms: u64, since_ms: u64) -> u64 {
        let last = self.view.get(&n).and_then(|v| v.last_nsu_ms).unwrap_or(since_ms);
        now_ms.saturating_sub(last)
    }

    /// Joined nodes whose view is older than three update periods.
    pub fn stale_nodes(&self, now_ms: u64) -> Vec<(NodeId, u64)> {
        let limit = 3 * u64::from(self.policy.nsu_period_s) * 1000;
        self.view
            .iter()
            .filter(|(_, v)| v.joined)
            .filter_map(|(&n, v)| {
                let s = now_ms.saturating_sub(v.last_nsu_ms?);
                (s > limit).then_some((n, s))
            })
            .collect()
    }

    /// Entries the controller believes are still installed.
    pub fn live_entries(&self, now_ms: u64) -> usize {
        self.pushed
            .values()
            .filter(|e| now_ms.saturating_sub(e.refreshed_ms) <= u64::from(e.lifetime_s) * 1000)
            .count()
    }
}
