//! SDN layer of one mesh node: packet pipeline, query suppression with
//! partial-header queries, node state updates and the controller join.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::codec::{FtsEntry, NodeStatus, SdnMessage};
use super::flowtable::{Action, FlowEntry, FlowTable, Match};
use crate::packet::{header, DropReason, FlowClass, Packet, SourceRouteHeader};
use crate::phy::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct SdnConfig {
    pub flowtable_capacity: usize,
    pub nsu_period_s: u16,
    pub flow_lifetime_s: u16,
    pub ppq_bytes: usize,
    pub query_buffer: usize,
    pub query_timeout_s: u16,
    pub query_retries: u8,
    pub cjoin_interval_s: u16,
    pub cjoin_retries: u8,
}

impl Default for SdnConfig {
    fn default() -> Self {
        SdnConfig {
            flowtable_capacity: 10,
            nsu_period_s: 10,
            flow_lifetime_s: 60,
            ppq_bytes: 24,
            query_buffer: 4,
            query_timeout_s: 15,
            query_retries: 1,
            cjoin_interval_s: 8,
            cjoin_retries: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JoinState {
    Discovering,
    Joining,
    Joined,
    TrackReady,
    /// CJOIN retries exhausted.
    Unjoined,
}

impl JoinState {
    pub fn is_joined(self) -> bool {
        matches!(self, JoinState::Joined | JoinState::TrackReady)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Disposition {
    DeliveredLocal(Packet),
    ForwardedL3(Packet),
    ForwardedSdn {
        packet: Packet,
        next: NodeId,
    },
    Dropped(Packet, DropReason),
    /// The packet waits for a flowtable answer. `ftq` is set only for the
    /// first miss of a flow; `evicted` is an older buffered packet pushed
    /// out by this one.
    Queried {
        key: NodeId,
        ftq: Option<SdnMessage>,
        evicted: Option<Packet>,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct PendingQuery {
    seqs: Vec<u16>,
    header: Vec<u8>,
    buffer: VecDeque<Packet>,
    retries_left: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeCounters {
    pub ftq_sent: u64,
    pub ftq_retries: u64,
    /// First query for a destination never answered before.
    pub ftq_first_miss: u64,
    /// Query for a destination whose earlier entry expired or was evicted.
    pub ftq_after_expiry: u64,
    pub nsu_sent: u64,
    pub cjoin_sent: u64,
    pub refresh_ignored: u64,
    pub query_timeouts: u64,
    pub buffered: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryTimeoutOutcome {
    pub retry: Option<SdnMessage>,
    pub dropped: Vec<Packet>,
}

#[derive(Debug, Clone)]
pub struct SdnNode {
    id: NodeId,
    cfg: SdnConfig,
    state: JoinState,
    table: FlowTable,
    pending: BTreeMap<NodeId, PendingQuery>,
    answered: BTreeSet<NodeId>,
    nsu_period_ms: u64,
    report_flow_stats: bool,
    got_cack: bool,
    got_conf: bool,
    cjoin_attempts: u8,
    ftq_seq: u16,
    last_nsu_ms: Option<u64>,
    next_nsu_ms: Option<u64>,
    pub counters: NodeCounters,
}

/// Every class other than application data is handled by Layer-3.
pub fn default_blacklist() -> Vec<Match> {
    FlowClass::ALL
        .into_iter()
        .filter(|&c| c != FlowClass::App)
        .map(|c| Match::exact(header::CLASS, &[c.code()]))
        .collect()
}

impl SdnNode {
    pub fn new(id: NodeId, cfg: SdnConfig) -> Self {
        let mut table = FlowTable::new(cfg.flowtable_capacity);
        for m in default_blacklist() {
            table.add_blacklist(m);
        }
        SdnNode {
            id,
            nsu_period_ms: u64::from(cfg.nsu_period_s) * 1000,
            cfg,
            state: JoinState::Discovering,
            table,
            pending: BTreeMap::new(),
            answered: BTreeSet::new(),
            report_flow_stats: false,
            got_cack: false,
            got_conf: false,
            cjoin_attempts: 0,
            ftq_seq: 0,
            last_nsu_ms: None,
            next_nsu_ms: None,
            counters: NodeCounters::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn state(&self) -> JoinState {
        self.state
    }

    pub fn config(&self) -> &SdnConfig {
        &self.cfg
    }

    pub fn table(&self) -> &FlowTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut FlowTable {
        &mut self.table
    }

    pub fn nsu_period_ms(&self) -> u64 {
        self.nsu_period_ms
    }

    pub fn next_nsu_ms(&self) -> Option<u64> {
        self.next_nsu_ms
    }

    pub fn cjoin_attempts(&self) -> u8 {
        self.cjoin_attempts
    }

    /// Queries in flight (one per flow key at most).
    pub fn pending_queries(&self) -> usize {
        self.pending.len()
    }

    pub fn buffered_packets(&self) -> usize {
        self.pending.values().map(|p| p.buffer.len()).sum()
    }

    /// All packets still buffered, removing them.
    pub fn drain_buffers(&mut self) -> Vec<Packet> {
        std::mem::take(&mut self.pending)
            .into_values()
            .flat_map(|p| p.buffer)
            .collect()
    }

    pub fn handle_packet(&mut self, mut packet: Packet, now_ms: u64) -> Disposition {
        if packet.dst == self.id {
            return Disposition::DeliveredLocal(packet);
        }
        if self.table.is_blacklisted(&packet.header) || !self.state.is_joined() {
            return Disposition::ForwardedL3(packet);
        }
        let action = self.table.lookup(&packet.header, now_ms).map(|e| e.action.clone());
        match action {
            Some(Action::Forward(next)) => Disposition::ForwardedSdn { packet, next },
            Some(Action::Drop) => Disposition::Dropped(packet, DropReason::FlowDrop),
            Some(Action::SrhPush(route)) => {
                let srh = SourceRouteHeader { route };
                match srh.next_after(self.id) {
                    Some(next) => {
                        packet.srh = Some(srh);
                        Disposition::ForwardedSdn { packet, next }
                    }
                    None => Disposition::Dropped(packet, DropReason::NoRoute),
                }
            }
            Some(Action::Query) | None => self.send_ftq(packet),
        }
    }

    /// Flowtable miss: query once per flow key, buffer the rest.
    pub fn send_ftq(&mut self, packet: Packet) -> Disposition {
        let key = header::dst(&packet.header).unwrap_or(packet.dst);
        self.counters.buffered += 1;
        if let Some(p) = self.pending.get_mut(&key) {
            p.buffer.push_back(packet);
            let evicted = if p.buffer.len() > self.cfg.query_buffer {
                p.buffer.pop_front()
            } else {
                None
            };
            return Disposition::Queried {
                key,
                ftq: None,
                evicted,
            };
        }
        let seq = self.next_seq();
        let cut = self.cfg.ppq_bytes.min(packet.header.len());
        let prefix = packet.header[..cut].to_vec();
        self.pending.insert(
            key,
            PendingQuery {
                seqs: vec![seq],
                header: prefix.clone(),
                buffer: VecDeque::from([packet]),
                retries_left: self.cfg.query_retries,
            },
        );
        self.counters.ftq_sent += 1;
        if self.answered.contains(&key) {
            self.counters.ftq_after_expiry += 1;
        } else {
            self.counters.ftq_first_miss += 1;
        }
        Disposition::Queried {
            key,
            ftq: Some(SdnMessage::Ftq {
                node: self.id,
                seq,
                header: prefix,
            }),
            evicted: None,
        }
    }

    fn next_seq(&mut self) -> u16 {
        // u16::MAX marks unsolicited controller pushes.
        let s = self.ftq_seq;
        self.ftq_seq = (self.ftq_seq + 1) % u16::MAX;
        s
    }

    /// Sequence number of the latest query for `key`, if one is pending.
    pub fn pending_seq(&self, key: NodeId) -> Option<u16> {
        self.pending.get(&key).and_then(|p| p.seqs.last().copied())
    }

    /// Query timer for `key` fired. Retries once, then gives up and drops
    /// the buffer.
    pub fn on_query_timeout(&mut self, key: NodeId, seq: u16) -> QueryTimeoutOutcome {
        let none = QueryTimeoutOutcome {
            retry: None,
            dropped: Vec::new(),
        };
        let Some(p) = self.pending.get(&key) else {
            return none;
        };
        if p.seqs.last() != Some(&seq) {
            return none;
        }
        if p.retries_left > 0 {
            let new_seq = self.next_seq();
            let p = self.pending.get_mut(&key).expect("checked above");
            p.retries_left -= 1;
            p.seqs.push(new_seq);
            self.counters.ftq_retries += 1;
            self.counters.ftq_sent += 1;
            return QueryTimeoutOutcome {
                retry: Some(SdnMessage::Ftq {
                    node: self.id,
                    seq: new_seq,
                    header: p.header.clone(),
                }),
                dropped: Vec::new(),
            };
        }
        self.counters.query_timeouts += 1;
        let p = self.pending.remove(&key).expect("checked above");
        QueryTimeoutOutcome {
            retry: None,
            dropped: p.buffer.into(),
        }
    }

    /// Installs entries, applies refreshes and returns packets released
    /// from the matching query buffer, in arrival order.
    pub fn apply_fts(&mut self, seq: u16, entries: &[FtsEntry], refresh: &[u16], now_ms: u64) -> Vec<Packet> {
        for e in entries {
            self.table.insert(
                FlowEntry::new(e.id, e.matches.clone(), e.action.clone(), e.lifetime_s),
                now_ms,
            );
        }
        for &id in refresh {
            if !self.table.refresh(id, now_ms) {
                self.counters.refresh_ignored += 1;
            }
        }
        let key = self
            .pending
            .iter()
            .find(|(_, p)| p.seqs.contains(&seq))
            .map(|(&k, _)| k);
        match key.and_then(|k| self.pending.remove(&k).map(|p| (k, p))) {
            Some((k, p)) => {
                self.answered.insert(k);
                p.buffer.into()
            }
            None => Vec::new(),
        }
    }

    /// Controller address learned: send the first CJOIN.
    pub fn start_join(&mut self) -> Option<SdnMessage> {
        if self.state != JoinState::Discovering {
            return None;
        }
        self.state = JoinState::Joining;
        self.cjoin_attempts = 1;
        self.counters.cjoin_sent += 1;
        Some(SdnMessage::Cjoin { node: self.id })
    }

    /// CJOIN timer for attempt `attempt` fired.
    pub fn on_cjoin_timeout(&mut self, attempt: u8) -> Option<SdnMessage> {
        if self.state != JoinState::Joining || attempt != self.cjoin_attempts {
            return None;
        }
        if self.cjoin_attempts > self.cfg.cjoin_retries {
            self.state = JoinState::Unjoined;
            return None;
        }
        self.cjoin_attempts += 1;
        self.counters.cjoin_sent += 1;
        Some(SdnMessage::Cjoin { node: self.id })
    }

    /// Returns true when this CACK completes the join.
    pub fn on_cack(&mut self, now_ms: u64) -> bool {
        self.got_cack = true;
        self.maybe_joined(now_ms)
    }

    /// Applies controller configuration. Returns true when this CONF
    /// completes the join.
    pub fn on_conf(&mut self, nsu_period_s: u16, flow_lifetime_s: u16, report_flow_stats: bool, now_ms: u64) -> bool {
        let _ = flow_lifetime_s;
        self.report_flow_stats = report_flow_stats;
        let period = u64::from(nsu_period_s.max(1)) * 1000;
        if period != self.nsu_period_ms {
            self.nsu_period_ms = period;
            if let Some(last) = self.last_nsu_ms {
                self.next_nsu_ms = Some((last + period).max(now_ms));
            } else if self.next_nsu_ms.is_some() {
                self.next_nsu_ms = Some(now_ms + period);
            }
        }
        self.got_conf = true;
        self.maybe_joined(now_ms)
    }

    fn maybe_joined(&mut self, now_ms: u64) -> bool {
        if self.state == JoinState::Joining && self.got_cack && self.got_conf {
            self.state = JoinState::Joined;
            self.next_nsu_ms = Some(now_ms + self.nsu_period_ms);
            return true;
        }
        false
    }

    pub fn set_track_ready(&mut self) {
        if self.state == JoinState::Joined {
            self.state = JoinState::TrackReady;
        }
    }

    /// Emits an NSU when one is due. The status fields come from the MAC.
    pub fn tick_nsu(
        &mut self,
        now_ms: u64,
        energy: u16,
        queue: u8,
        neighbors: Vec<(NodeId, u8)>,
    ) -> Option<SdnMessage> {
        if !self.state.is_joined() {
            return None;
        }
        let due = self.next_nsu_ms?;
        if now_ms < due {
            return None;
        }
        self.last_nsu_ms = Some(now_ms);
        self.next_nsu_ms = Some(now_ms + self.nsu_period_ms);
        self.counters.nsu_sent += 1;
        let flow_stats = self.report_flow_stats.then(|| {
            self.table
                .take_recent_hits(now_ms)
                .into_iter()
                .map(|(id, h)| (id, h.min(255) as u8))
                .collect()
        });
        Some(SdnMessage::Nsu(NodeStatus {
            node: self.id,
            energy,
            queue,
            neighbors,
            flow_stats,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{PacketId, Payload};

    fn app(id: u64, src: u16, dst: u16) -> Packet {
        Packet {
            id: PacketId(id),
            class: FlowClass::App,
            origin: NodeId(src),
            dst: NodeId(dst),
            created_asn: 0,
            header: header::build(FlowClass::App, NodeId(src), NodeId(dst), id as u16, 60),
            payload: Payload::App { bytes: 60 },
            srh: None,
            hops: 0,
            track_hops: 0,
        }
    }

    fn joined(id: u16) -> SdnNode {
        let mut n = SdnNode::new(NodeId(id), SdnConfig::default());
        n.start_join();
        n.on_cack(0);
        assert!(n.on_conf(10, 60, false, 0));
        n
    }

    fn to_dst(id: u16, dst: u16, action: Action) -> FtsEntry {
        FtsEntry {
            id,
            lifetime_s: 60,
            matches: vec![Match::exact(header::DST, &dst.to_be_bytes())],
            action,
        }
    }

    #[test]
    fn blacklisted_class_skips_flowtable() {
        let mut n = joined(4);
        let mut p = app(1, 4, 0);
        p.class = FlowClass::Rpl;
        p.header[header::CLASS] = FlowClass::Rpl.code();
        assert!(matches!(n.handle_packet(p, 0), Disposition::ForwardedL3(_)));
        assert_eq!(n.counters.ftq_sent, 0);
    }

    #[test]
    fn live_entry_forwards() {
        let mut n = joined(4);
        n.apply_fts(0, &[to_dst(1, 0, Action::Forward(NodeId(3)))], &[], 0);
        match n.handle_packet(app(1, 4, 0), 1000) {
            Disposition::ForwardedSdn { next, .. } => assert_eq!(next, NodeId(3)),
            d => panic!("{d:?}"),
        }
    }

    #[test]
    fn expired_entry_triggers_query() {
        let mut n = joined(4);
        n.apply_fts(0, &[to_dst(1, 0, Action::Forward(NodeId(3)))], &[], 0);
        match n.handle_packet(app(1, 4, 0), 61_000) {
            Disposition::Queried { ftq: Some(_), .. } => {}
            d => panic!("{d:?}"),
        }
    }

    #[test]
    fn query_causes_counted_apart() {
        let mut n = joined(4);
        let Disposition::Queried {
            ftq: Some(SdnMessage::Ftq { seq, .. }),
            ..
        } = n.handle_packet(app(1, 4, 0), 0)
        else {
            panic!("no query");
        };
        n.apply_fts(seq, &[to_dst(1, 0, Action::Forward(NodeId(3)))], &[], 0);
        n.handle_packet(app(2, 4, 0), 61_000);
        n.handle_packet(app(3, 4, 2), 61_000);
        assert_eq!((n.counters.ftq_first_miss, n.counters.ftq_after_expiry), (2, 1));
    }

    #[test]
    fn query_suppression_buffers_repeats() {
        let mut n = joined(4);
        let mut ftqs = 0;
        for i in 0..5 {
            if let Disposition::Queried {
                ftq: Some(_), evicted, ..
            } = n.handle_packet(app(i, 4, 0), 0)
            {
                assert!(evicted.is_none());
                ftqs += 1;
            }
        }
        assert_eq!(ftqs, 1);
        assert_eq!(n.pending_queries(), 1);
        assert_eq!(n.buffered_packets(), 4);
    }

    #[test]
    fn partial_header_query() {
        let mut n = joined(4);
        match n.handle_packet(app(1, 4, 0), 0) {
            Disposition::Queried {
                ftq: Some(SdnMessage::Ftq { header, .. }),
                ..
            } => assert_eq!(header.len(), 24),
            d => panic!("{d:?}"),
        }
    }

    #[test]
    fn reply_flushes_buffer() {
        let mut n = joined(4);
        for i in 0..3 {
            n.handle_packet(app(i, 4, 0), 0);
        }
        let seq = n.pending_seq(NodeId(0)).unwrap();
        let out = n.apply_fts(seq, &[to_dst(1, 0, Action::Forward(NodeId(3)))], &[], 500);
        assert_eq!(out.iter().map(|p| p.id.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        for p in out {
            assert!(matches!(n.handle_packet(p, 500), Disposition::ForwardedSdn { .. }));
        }
    }

    #[test]
    fn timeout_retries_once_then_drops() {
        let mut n = joined(4);
        n.handle_packet(app(0, 4, 0), 0);
        let s0 = n.pending_seq(NodeId(0)).unwrap();
        let r = n.on_query_timeout(NodeId(0), s0);
        assert!(r.retry.is_some());
        let s1 = n.pending_seq(NodeId(0)).unwrap();
        assert_ne!(s0, s1);
        // A stale timer is ignored.
        assert_eq!(n.on_query_timeout(NodeId(0), s0).dropped.len(), 0);
        let r = n.on_query_timeout(NodeId(0), s1);
        assert!(r.retry.is_none());
        assert_eq!(r.dropped.len(), 1);
        assert_eq!(n.counters.ftq_sent, 2);
    }

    #[test]
    fn srh_push_attaches_route() {
        let mut n = joined(0);
        let route = vec![NodeId(1), NodeId(2), NodeId(3)];
        n.apply_fts(0, &[to_dst(1, 3, Action::SrhPush(route.clone()))], &[], 0);
        match n.handle_packet(app(1, 0, 3), 10) {
            Disposition::ForwardedSdn { packet, next } => {
                assert_eq!(next, NodeId(1));
                assert_eq!(packet.srh.unwrap().route, route);
            }
            d => panic!("{d:?}"),
        }
    }

    #[test]
    fn refresh_keeps_entry_alive() {
        let mut n = joined(4);
        n.apply_fts(0, &[to_dst(7, 0, Action::Forward(NodeId(3)))], &[], 0);
        n.apply_fts(99, &[], &[7], 59_000);
        assert!(matches!(
            n.handle_packet(app(1, 4, 0), 100_000),
            Disposition::ForwardedSdn { .. }
        ));
        n.apply_fts(99, &[], &[8], 100_000);
        assert_eq!(n.counters.refresh_ignored, 1);
    }

    #[test]
    fn nsu_every_period_after_join() {
        let mut n = joined(2);
        let sent = (1..=60u64)
            .filter(|s| n.tick_nsu(s * 1000, 0, 0, vec![]).is_some())
            .count();
        assert_eq!(sent, 6);
    }

    #[test]
    fn conf_reconfigures_period() {
        let mut n = joined(2);
        let mut at = vec![];
        for s in 1..=100u64 {
            if s == 15 {
                n.on_conf(30, 60, false, 15_000);
            }
            if n.tick_nsu(s * 1000, 0, 0, vec![]).is_some() {
                at.push(s);
            }
        }
        assert_eq!(at, vec![10, 40, 70, 100]);
    }

    #[test]
    fn unjoined_node_is_silent() {
        let mut n = SdnNode::new(NodeId(2), SdnConfig::default());
        assert!(n.tick_nsu(100_000, 0, 0, vec![]).is_none());
        assert!(matches!(n.handle_packet(app(1, 2, 0), 0), Disposition::ForwardedL3(_)));
    }

    #[test]
    fn cjoin_retry_budget() {
        let mut n = SdnNode::new(NodeId(2), SdnConfig::default());
        assert!(n.start_join().is_some());
        let mut resent = 0;
        for attempt in 1..=10 {
            if n.on_cjoin_timeout(attempt).is_some() {
                resent += 1;
            }
        }
        assert_eq!(resent, 5);
        assert_eq!(n.state(), JoinState::Unjoined);
    }
}
