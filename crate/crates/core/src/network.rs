//! One simulation run: the event loop tying the MAC, tracks, routing, the
//! per-node SDN layers and the controller together.
//!
//! Each step handles every event due at the current slot, then executes
//! the slot's cells. Slots with no active cell, or with every queue empty,
//! are skipped.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::controller::{Controller, ControllerPolicy};
use crate::kernel::{Asn, Kernel, RngStreams, SimClock};
use crate::mac::{Frame, FrameFilter, Mac, NoFaults, QueueClass, ScheduleError, SlotOutcome, Slotframe, TrackId};
use crate::metrics::{Outcome, PacketRecord, Phase};
use crate::packet::{header, DropReason, FlowClass, Packet, PacketId, Payload, SourceRouteHeader};
use crate::phy::{NodeId, Topology, TopologyError};
use crate::rpl::{build_dag, Dag, RplError};
use crate::scenario::{Mode, Scenario};
use crate::sdn::{Disposition, JoinState, SdnMessage, SdnNode};
use crate::track::{select_candidate_cells, SwitchResult, TrackAction, TrackError, TrackState};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Routing(#[from] RplError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("base schedule does not fit: link {0}->{1}: {2}")]
    BaseLayout(NodeId, NodeId, TrackError),
}

/// Shared slots spread evenly over the slotframe, plus one best-effort
/// cell per DAG link and direction. Upward cells are placed deepest link
/// first so a frame can climb the chain within one slotframe; downward
/// cells are placed from the root out for the same reason.
pub fn build_base_schedule(dag: &Dag, length: u16, channels: u16, shared: u16) -> Result<Slotframe, NetworkError> {
    let mut sf = Slotframe::new(length, channels)?;
    for i in 0..shared {
        sf.add_shared((u32::from(i) * u32::from(length) / u32::from(shared)) as u16)?;
    }
    let root = dag.root();
    let mut nodes: Vec<NodeId> = dag.nodes().filter(|&n| n != root).collect();

    nodes.sort_by_key(|&n| (Reverse(dag.rank(n)), n));
    let mut up: BTreeMap<NodeId, u16> = BTreeMap::new();
    for &n in &nodes {
        let p = dag.parent(n).expect("non-root node has a parent");
        let ingress = dag
            .children(n)
            .iter()
            .filter_map(|c| up.get(c).copied())
            .max()
            .unwrap_or(length - 1);
        let slot = place(&mut sf, n, p, ingress)?;
        up.insert(n, slot);
    }

    nodes.sort_by_key(|&n| (dag.rank(n), n));
    let mut down: BTreeMap<NodeId, u16> = BTreeMap::new();
    for &n in &nodes {
        let p = dag.parent(n).expect("non-root node has a parent");
        let ingress = down.get(&p).copied().unwrap_or(length - 1);
        let slot = place(&mut sf, p, n, ingress)?;
        down.insert(n, slot);
    }
    Ok(sf)
}

fn place(sf: &mut Slotframe, a: NodeId, b: NodeId, ingress: u16) -> Result<u16, NetworkError> {
    let cells =
        select_candidate_cells(&sf.view(a), &sf.view(b), ingress, 1).map_err(|e| NetworkError::BaseLayout(a, b, e))?;
    let (slot, ch) = cells[0];
    sf.add_link_cell(slot, ch, (a, b), None, false)?;
    Ok(slot)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Ev {
    DagJoin(NodeId),
    AppGenerate(NodeId),
    CjoinTimeout { node: NodeId, attempt: u8 },
    NsuTick { node: NodeId, gen: u64 },
    QueryTimeout { node: NodeId, key: NodeId, seq: u16 },
    HoldExpiry { node: NodeId, track: TrackId },
    TrackStart(NodeId),
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub mode: Mode,
    pub slot_ms: f64,
    /// Sorted by packet id.
    pub records: Vec<PacketRecord>,
    pub warmup_end_asn: Asn,
    /// True when the warm-up hit its cap before every node settled.
    pub warmup_capped: bool,
    pub measure_end_asn: Asn,
    pub end_asn: Asn,
    pub join_states: Vec<(NodeId, JoinState)>,
    pub control_tracks: Vec<(NodeId, TrackId)>,
    /// Nodes with two radio roles in one executed slot.
    pub slot_violations: u64,
    /// Slotframe audit findings, summed over every schedule change.
    pub audit_violations: u64,
    /// Cells claimed by two tracks, summed over every schedule change.
    pub track_overlaps: u64,
    pub track_queue_overflows: u64,
    pub track_failures: u64,
    /// Queries for destinations never resolved before, summed over nodes.
    pub ftq_first_miss: u64,
    /// Queries re-issued after an entry expired or was evicted.
    pub ftq_after_expiry: u64,
    pub slots_executed: u64,
    pub schedule_dump: String,
    pub track_dump: String,
    pub controller_log: String,
    pub stale_nodes: Vec<(NodeId, u64)>,
}

pub struct Network {
    sc: Scenario,
    seed: u64,
    topo: Topology,
    dag: Dag,
    kernel: Kernel<Ev>,
    mac: Mac,
    tracks: crate::track::TrackEngine,
    nodes: Vec<Option<SdnNode>>,
    controller: Option<Controller>,
    rng: RngStreams,
    filter: Box<dyn FrameFilter>,
    records: Vec<PacketRecord>,
    in_flight: Vec<bool>,
    own_track: Vec<Option<TrackId>>,
    track_tries: Vec<u8>,
    track_gave_up: Vec<bool>,
    dag_joined: Vec<bool>,
    nsu_gen: Vec<u64>,
    generating: bool,
    warmup_end: Option<Asn>,
    active: Vec<bool>,
    next_slot: Asn,
    slot_violations: u64,
    audit_violations: u64,
    track_overlaps: u64,
    track_queue_overflows: u64,
    track_failures: u64,
    slots_executed: u64,
}

impl Network {
    pub fn new(sc: &Scenario, seed: u64) -> Result<Self, NetworkError> {
        let topo = sc.build_topology()?;
        let n = topo.len();
        let clock = SimClock::new(sc.tsch.slot_duration_ms);
        let dag = build_dag(&topo, NodeId::ROOT)?.with_route_lifetime(clock.secs_to_slots(sc.run.route_lifetime_s));
        let sf = build_base_schedule(&dag, sc.tsch.slotframe_length, sc.tsch.channels, sc.tsch.shared_slots)?;
        let mac = Mac::new(sf, n, sc.mac_config());
        let hold = u64::from(sc.tsch.hold_slotframes) * u64::from(sc.tsch.slotframe_length);
        let nodes = topo
            .nodes()
            .map(|id| (sc.mode.has_sdn() && id != NodeId::ROOT).then(|| SdnNode::new(id, sc.sdn_config())))
            .collect();
        let controller = sc.mode.has_sdn().then(|| {
            Controller::new(
                ControllerPolicy {
                    nsu_period_s: sc.sdn.nsu_period_s,
                    flow_lifetime_s: sc.sdn.flow_lifetime_s,
                    afr_enabled: sc.sdn.afr,
                    afr_hit_threshold: sc.sdn.afr_threshold,
                },
                dag.clone(),
            )
        });
        let mut kernel = Kernel::new(clock);
        for id in topo.nodes().filter(|&id| id != NodeId::ROOT) {
            let rank = dag.rank(id).expect("connected topology");
            let at = clock.secs_to_slots(f64::from(rank) * sc.run.join_stagger_s);
            kernel
                .schedule(at, Ev::DagJoin(id))
                .expect("start time is not in the past");
        }
        let mut net = Network {
            sc: sc.clone(),
            seed,
            topo,
            dag,
            kernel,
            mac,
            tracks: crate::track::TrackEngine::new(hold),
            nodes,
            controller,
            rng: RngStreams::new(seed),
            filter: Box::new(NoFaults),
            records: Vec::new(),
            in_flight: Vec::new(),
            own_track: vec![None; n],
            track_tries: vec![0; n],
            track_gave_up: vec![false; n],
            dag_joined: vec![false; n],
            nsu_gen: vec![0; n],
            generating: true,
            warmup_end: None,
            active: Vec::new(),
            next_slot: 0,
            slot_violations: 0,
            audit_violations: 0,
            track_overlaps: 0,
            track_queue_overflows: 0,
            track_failures: 0,
            slots_executed: 0,
        };
        net.schedule_changed();
        Ok(net)
    }

    /// Replaces the fault filter consulted on every transmission attempt.
    pub fn with_filter(mut self, filter: Box<dyn FrameFilter>) -> Self {
        self.filter = filter;
        self
    }

    pub fn mac(&self) -> &Mac {
        &self.mac
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn tracks(&self) -> &crate::track::TrackEngine {
        &self.tracks
    }

    pub fn now(&self) -> Asn {
        self.kernel.now()
    }

    fn now_ms(&self) -> u64 {
        self.kernel.clock().time_ms(self.now()).round() as u64
    }

    fn ms_to_asn(&self, ms: u64) -> Asn {
        (ms as f64 / self.sc.tsch.slot_duration_ms).ceil() as Asn
    }

    fn secs(&self, s: f64) -> u64 {
        self.kernel.clock().secs_to_slots(s)
    }

    fn sdn(&mut self, n: NodeId) -> Option<&mut SdnNode> {
        self.nodes[n.index()].as_mut()
    }

    /// Warm-up, the measurement window, then a drain with generation
    /// stopped. Packets still in flight at the end stay `Unfinished`.
    pub fn run(mut self) -> RunOutput {
        let cap = self.secs(self.sc.run.warmup_max_s);
        self.run_to(cap, |n| n.warmup_end.is_some());
        let warmup_capped = self.warmup_end.is_none();
        let warmup_end = *self.warmup_end.get_or_insert(self.now());
        let measure_end = warmup_end + self.secs(self.sc.run.duration_s);
        self.run_to(measure_end, |_| false);
        self.generating = false;
        let end = measure_end + self.secs(self.sc.run.drain_s);
        self.run_to(end, |_| false);
        self.finish(warmup_end, warmup_capped, measure_end, end)
    }

    /// Runs until `end` or until `stop` holds between two steps.
    pub fn run_to(&mut self, end: Asn, stop: impl Fn(&Self) -> bool) {
        loop {
            if stop(self) {
                return;
            }
            let ev_at = self.kernel.peek_asn();
            let slot_at = if self.mac.all_queues_empty() {
                None
            } else {
                self.next_active_slot(self.next_slot)
            };
            let t = match (ev_at, slot_at) {
                (Some(a), Some(b)) => a.min(b),
                (a, b) => match a.or(b) {
                    Some(t) => t,
                    None => {
                        self.kernel.advance_to(end);
                        return;
                    }
                },
            };
            if t > end {
                self.kernel.advance_to(end);
                return;
            }
            while let Some(ev) = self.kernel.pop_until(t) {
                self.handle(ev.kind);
            }
            self.kernel.advance_to(t);
            if t >= self.next_slot {
                let len = u64::from(self.mac.slotframe.length());
                if self.active[(t % len) as usize] && !self.mac.all_queues_empty() {
                    self.execute(t);
                }
                self.next_slot = t + 1;
            }
        }
    }

    fn next_active_slot(&self, from: Asn) -> Option<Asn> {
        let len = self.active.len() as u64;
        (from..from + len).find(|&a| self.active[(a % len) as usize])
    }

    fn schedule_changed(&mut self) {
        let sf = &self.mac.slotframe;
        let mut active = vec![false; usize::from(sf.length())];
        for s in sf.active_slots() {
            active[usize::from(s)] = true;
        }
        self.active = active;
        self.audit_violations += sf.audit(usize::from(self.sc.tsch.shared_slots)).len() as u64;
        self.track_overlaps += self.tracks.overlapping_cells() as u64;
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::DagJoin(n) => self.on_dag_join(n),
            Ev::AppGenerate(n) => {
                if !self.generating {
                    return;
                }
                let bytes = self.sc.traffic.app_bytes;
                let p = self.new_packet(FlowClass::App, n, NodeId::ROOT, Payload::App { bytes });
                self.route_packet(n, p);
                self.schedule_app(n);
            }
            Ev::CjoinTimeout { node, attempt } => {
                let Some(sdn) = self.sdn(node) else { return };
                match sdn.on_cjoin_timeout(attempt) {
                    Some(m) => {
                        let next = sdn.cjoin_attempts();
                        self.send_control(node, m);
                        let wait = self.secs(f64::from(self.sc.sdn.cjoin_interval_s));
                        self.kernel.schedule_in(wait, Ev::CjoinTimeout { node, attempt: next });
                    }
                    None => self.check_settled(),
                }
            }
            Ev::NsuTick { node, gen } => {
                if gen != self.nsu_gen[node.index()] || !self.generating {
                    return;
                }
                let now_ms = self.now_ms();
                let radio = self.mac.radio(node);
                let energy =
                    u16::MAX.saturating_sub((radio.tx_attempts + radio.rx_frames).min(u64::from(u16::MAX)) as u16);
                let neighbors = self
                    .topo
                    .neighbors(node)
                    .iter()
                    .map(|&m| (m, radio.link_estimate(m)))
                    .collect();
                let queue = self.mac.queues(node).total().min(255) as u8;
                let msg = self
                    .sdn(node)
                    .and_then(|s| s.tick_nsu(now_ms, energy, queue, neighbors));
                if let Some(m) = msg {
                    self.send_control(node, m);
                }
                self.schedule_nsu(node);
            }
            Ev::QueryTimeout { node, key, seq } => {
                let Some(sdn) = self.sdn(node) else { return };
                let out = sdn.on_query_timeout(key, seq);
                if let Some(m @ SdnMessage::Ftq { seq, .. }) = out.retry {
                    let wait = self.secs(f64::from(self.sc.sdn.query_timeout_s));
                    self.kernel.schedule_in(wait, Ev::QueryTimeout { node, key, seq });
                    self.send_control(node, m);
                }
                for p in out.dropped {
                    self.drop_packet(&p, DropReason::QueryTimeout);
                }
            }
            Ev::HoldExpiry { node, track } => {
                let actions = self.tracks.on_hold_expiry(&mut self.mac.slotframe, node, track);
                self.apply_track_actions(actions);
            }
            Ev::TrackStart(n) => {
                let joined = self.nodes[n.index()]
                    .as_ref()
                    .is_some_and(|s| s.state() == JoinState::Joined);
                if joined && self.own_track[n.index()].is_none() {
                    self.start_track(n);
                }
            }
        }
    }

    fn on_dag_join(&mut self, n: NodeId) {
        self.dag_joined[n.index()] = true;
        self.schedule_app(n);
        if let Some(m) = self.sdn(n).and_then(SdnNode::start_join) {
            self.send_control(n, m);
            let wait = self.secs(f64::from(self.sc.sdn.cjoin_interval_s));
            self.kernel.schedule_in(wait, Ev::CjoinTimeout { node: n, attempt: 1 });
        }
        self.check_settled();
    }

    fn schedule_app(&mut self, n: NodeId) {
        let (lo, hi) = self.sc.traffic.app_interval_s;
        let wait = self.rng.app_interval.uniform(lo, hi);
        let slots = self.secs(wait).max(1);
        self.kernel.schedule_in(slots, Ev::AppGenerate(n));
    }

    fn schedule_nsu(&mut self, n: NodeId) {
        self.nsu_gen[n.index()] += 1;
        let gen = self.nsu_gen[n.index()];
        let Some(due) = self.nodes[n.index()].as_ref().and_then(SdnNode::next_nsu_ms) else {
            return;
        };
        let at = self.ms_to_asn(due).max(self.now());
        self.kernel
            .schedule(at, Ev::NsuTick { node: n, gen })
            .expect("not in the past");
    }

    fn settled(&self, n: NodeId) -> bool {
        if !self.dag_joined[n.index()] {
            return false;
        }
        let Some(sdn) = self.nodes[n.index()].as_ref() else {
            return true;
        };
        match (self.sc.mode, sdn.state()) {
            (_, JoinState::Unjoined | JoinState::TrackReady) => true,
            (Mode::SdnTracks, JoinState::Joined) => self.track_gave_up[n.index()],
            (_, JoinState::Joined) => true,
            _ => false,
        }
    }

    fn check_settled(&mut self) {
        if self.warmup_end.is_none()
            && self
                .topo
                .nodes()
                .filter(|&n| n != NodeId::ROOT)
                .all(|n| self.settled(n))
        {
            self.warmup_end = Some(self.now());
        }
    }

    fn new_packet(&mut self, class: FlowClass, origin: NodeId, dst: NodeId, payload: Payload) -> Packet {
        let id = self.records.len() as u64;
        let now = self.now();
        self.records.push(PacketRecord {
            packet_id: id,
            flow_class: class,
            src: origin,
            dst,
            enqueue_asn: now,
            deliver_asn: None,
            outcome: Outcome::Dropped(DropReason::Unfinished),
            hop_count: 0,
            on_track: false,
            phase: Phase::Measure,
        });
        self.in_flight.push(true);
        Packet {
            id: PacketId(id),
            class,
            origin,
            dst,
            created_asn: now,
            header: header::build(class, origin, dst, id as u16, header::DEFAULT_LEN),
            payload,
            srh: None,
            hops: 0,
            track_hops: 0,
        }
    }

    /// Sends a node-originated control message towards the controller.
    fn send_control(&mut self, node: NodeId, msg: SdnMessage) {
        let class = match msg {
            SdnMessage::Cjoin { .. } => FlowClass::Join,
            SdnMessage::Nsu(_) => FlowClass::Nsu,
            SdnMessage::Ftq { .. } => FlowClass::Ftq,
            _ => FlowClass::SdnDown,
        };
        let root = self.dag.root();
        let p = self.new_packet(class, node, root, Payload::Sdn(msg.fit()));
        self.route_packet(node, p);
    }

    fn close(&mut self, p: &Packet, outcome: Outcome) {
        let i = p.id.0 as usize;
        debug_assert!(self.in_flight[i], "packet {} closed twice", p.id.0);
        self.in_flight[i] = false;
        let now = self.now();
        let r = &mut self.records[i];
        r.outcome = outcome;
        r.hop_count = p.hops;
        r.on_track = p.track_hops > 0;
        if outcome == Outcome::Delivered {
            r.deliver_asn = Some(now);
        }
    }

    fn drop_packet(&mut self, p: &Packet, reason: DropReason) {
        self.close(p, Outcome::Dropped(reason));
    }

    fn execute(&mut self, asn: Asn) {
        self.slots_executed += 1;
        let report = self.mac.execute_slot(
            asn,
            &self.topo,
            &mut self.rng.link_loss,
            &mut self.rng.shared_backoff,
            self.filter.as_mut(),
        );
        self.slot_violations += u64::from(report.violations);
        for o in report.outcomes {
            match o {
                SlotOutcome::Delivered {
                    mut frame, cell_track, ..
                } => {
                    frame.packet.hops += 1;
                    let rx = frame.mac_dst;
                    match cell_track {
                        Some(id) => {
                            frame.packet.track_hops += 1;
                            match self.tracks.forward_on_track(&mut self.mac, rx, frame, id, asn) {
                                SwitchResult::Switched => {}
                                SwitchResult::Arrived(f) => self.route_packet(rx, f.packet),
                                SwitchResult::Dropped(f, reason) => {
                                    if reason == DropReason::QueueOverflow {
                                        self.track_queue_overflows += 1;
                                    }
                                    self.drop_packet(&f.packet, reason);
                                }
                            }
                        }
                        None => self.route_packet(rx, frame.packet),
                    }
                }
                SlotOutcome::Dropped { frame, reason } => self.drop_packet(&frame.packet, reason),
                SlotOutcome::Idle { .. } | SlotOutcome::Lost { .. } => {}
            }
        }
    }

    /// A packet is at `node`, either just created there or just received.
    fn route_packet(&mut self, node: NodeId, p: Packet) {
        if p.dst == node {
            self.close(&p, Outcome::Delivered);
            self.consume(node, p);
            return;
        }
        let now_ms = self.now_ms();
        let disp = match self.sdn(node) {
            Some(sdn) => sdn.handle_packet(p, now_ms),
            None => Disposition::ForwardedL3(p),
        };
        match disp {
            Disposition::DeliveredLocal(p) => {
                self.close(&p, Outcome::Delivered);
                self.consume(node, p);
            }
            Disposition::ForwardedL3(p) => self.forward_l3(node, p),
            Disposition::ForwardedSdn { packet, next } => self.send_frame(node, packet, next),
            Disposition::Dropped(p, reason) => self.drop_packet(&p, reason),
            Disposition::Queried { key, ftq, evicted } => {
                if let Some(e) = evicted {
                    self.drop_packet(&e, DropReason::QueryBufferOverflow);
                }
                if let Some(m @ SdnMessage::Ftq { seq, .. }) = ftq {
                    let wait = self.secs(f64::from(self.sc.sdn.query_timeout_s));
                    self.kernel.schedule_in(wait, Ev::QueryTimeout { node, key, seq });
                    self.send_control(node, m);
                }
            }
        }
    }

    /// Legacy routing: source route if present, root attaches one, DAG
    /// neighbors directly, otherwise up the default route.
    fn forward_l3(&mut self, node: NodeId, mut p: Packet) {
        if p.srh.is_none() && node == self.dag.root() {
            match self.dag.compute_source_route(p.dst) {
                Ok(route) if !route.is_empty() => p.srh = Some(SourceRouteHeader { route }),
                _ => return self.drop_packet(&p, DropReason::NoRoute),
            }
        }
        let next = if let Some(srh) = &p.srh {
            srh.next_after(node)
        } else if self.dag.parent(node) == Some(p.dst) || self.dag.parent(p.dst) == Some(node) {
            Some(p.dst)
        } else if self.dag.is_descendant(p.dst, node) {
            let route = self.dag.compute_source_route(p.dst).unwrap_or_default();
            route
                .iter()
                .position(|&n| n == node)
                .and_then(|i| route.get(i + 1).copied())
        } else {
            self.dag.next_hop_default(node).ok()
        };
        match next {
            Some(n) => self.send_frame(node, p, n),
            None => self.drop_packet(&p, DropReason::NoRoute),
        }
    }

    /// Upward control traffic rides the node's own track once it is
    /// active; everything else is best effort.
    fn send_frame(&mut self, node: NodeId, p: Packet, next: NodeId) {
        let mut class = QueueClass::BestEffort;
        let mut mac_dst = next;
        if self.sc.mode == Mode::SdnTracks && p.class.is_upward_control() && p.dst == self.dag.root() {
            if let Some(id) = self.own_track[node.index()] {
                if let Some(t) = self.tracks.get(id).filter(|t| t.state == TrackState::Active) {
                    class = QueueClass::Track(id);
                    mac_dst = t.egress(node).expect("source has an egress bundle").dst;
                }
            }
        }
        let frame = Frame::new(p, node, mac_dst, self.now());
        if let Err(f) = self.mac.enqueue_frame(node, frame, class) {
            if class != QueueClass::BestEffort {
                self.track_queue_overflows += 1;
            }
            self.drop_packet(&f.packet, DropReason::QueueOverflow);
        }
    }

    fn consume(&mut self, node: NodeId, p: Packet) {
        let now_ms = self.now_ms();
        match p.payload {
            Payload::App { .. } => {}
            Payload::Sdn(msg) if node == self.dag.root() => {
                let Some(ctrl) = self.controller.as_mut() else { return };
                for (to, m) in ctrl.handle(p.origin, &msg, now_ms) {
                    let down = self.new_packet(FlowClass::SdnDown, node, to, Payload::Sdn(m));
                    self.route_packet(node, down);
                }
            }
            Payload::Sdn(msg) => self.on_sdn_message(node, msg, now_ms),
            Payload::Track(sig) => {
                let now = self.now();
                let actions = self.tracks.on_signal(&mut self.mac.slotframe, node, &sig, now);
                self.apply_track_actions(actions);
            }
        }
    }

    fn on_sdn_message(&mut self, node: NodeId, msg: SdnMessage, now_ms: u64) {
        let Some(sdn) = self.sdn(node) else { return };
        match msg {
            SdnMessage::Cack { .. } => {
                if sdn.on_cack(now_ms) {
                    self.on_joined(node);
                }
            }
            SdnMessage::Conf {
                nsu_period_s,
                flow_lifetime_s,
                report_flow_stats,
            } => {
                if sdn.on_conf(nsu_period_s, flow_lifetime_s, report_flow_stats, now_ms) {
                    self.on_joined(node);
                } else {
                    self.schedule_nsu(node);
                }
            }
            SdnMessage::Fts {
                seq, entries, refresh, ..
            } => {
                for p in sdn.apply_fts(seq, &entries, &refresh, now_ms) {
                    self.route_packet(node, p);
                }
            }
            _ => {}
        }
    }

    fn on_joined(&mut self, n: NodeId) {
        self.schedule_nsu(n);
        if self.sc.mode == Mode::SdnTracks {
            self.start_track(n);
        }
        self.check_settled();
    }

    fn start_track(&mut self, n: NodeId) {
        let route = self.dag.path_to_root(n).expect("node is in the DAG");
        let now = self.now();
        match self
            .tracks
            .begin(&mut self.mac.slotframe, route, self.sc.tsch.track_bandwidth, now)
        {
            Ok((_, actions)) => self.apply_track_actions(actions),
            Err(_) => {
                self.track_gave_up[n.index()] = true;
                self.check_settled();
            }
        }
    }

    fn apply_track_actions(&mut self, actions: Vec<TrackAction>) {
        for a in actions {
            match a {
                TrackAction::Send { from, to, signal } => {
                    let p = self.new_packet(FlowClass::Reservation, from, to, Payload::Track(signal));
                    self.send_frame(from, p, to);
                }
                TrackAction::ArmHold { node, track, delay } => {
                    self.kernel.schedule_in(delay, Ev::HoldExpiry { node, track });
                }
                TrackAction::Activated(id) => {
                    let src = self.tracks.get(id).expect("known track").source();
                    self.own_track[src.index()] = Some(id);
                    if let Some(s) = self.sdn(src) {
                        s.set_track_ready();
                    }
                    self.check_settled();
                }
                TrackAction::Failed(id) => {
                    let src = self.tracks.get(id).expect("known track").source();
                    self.track_failures += 1;
                    self.track_tries[src.index()] += 1;
                    if self.track_tries[src.index()] < self.sc.run.track_attempts {
                        let wait = 2 * self.tracks.hold_slots();
                        self.kernel.schedule_in(wait, Ev::TrackStart(src));
                    } else {
                        self.track_gave_up[src.index()] = true;
                        self.check_settled();
                    }
                }
            }
        }
        self.schedule_changed();
    }

    fn finish(self, warmup_end: Asn, warmup_capped: bool, measure_end: Asn, end: Asn) -> RunOutput {
        let mut records = self.records;
        for r in &mut records {
            r.phase = if r.enqueue_asn < warmup_end {
                Phase::Warmup
            } else if r.enqueue_asn < measure_end {
                Phase::Measure
            } else {
                Phase::Drain
            };
        }
        let end_ms = (self.kernel.clock().time_ms(end)).round() as u64;
        RunOutput {
            seed: self.seed,
            mode: self.sc.mode,
            slot_ms: self.sc.tsch.slot_duration_ms,
            records,
            warmup_end_asn: warmup_end,
            warmup_capped,
            measure_end_asn: measure_end,
            end_asn: end,
            join_states: self.nodes.iter().flatten().map(|s| (s.id(), s.state())).collect(),
            control_tracks: self
                .own_track
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.map(|t| (NodeId(i as u16), t)))
                .collect(),
            slot_violations: self.slot_violations,
            audit_violations: self.audit_violations,
            track_overlaps: self.track_overlaps,
            track_queue_overflows: self.track_queue_overflows,
            track_failures: self.track_failures,
            ftq_first_miss: self.nodes.iter().flatten().map(|n| n.counters.ftq_first_miss).sum(),
            ftq_after_expiry: self.nodes.iter().flatten().map(|n| n.counters.ftq_after_expiry).sum(),
            slots_executed: self.slots_executed,
            schedule_dump: self.mac.slotframe.dump_grid(),
            track_dump: self.tracks.dump(),
            controller_log: self.controller.as_ref().map(Controller::log_csv).unwrap_or_default(),
            stale_nodes: self
                .controller
                .as_ref()
                .map(|c| c.stale_nodes(end_ms))
                .unwrap_or_default(),
        }
    }
}

/// Builds and runs one seed.
pub fn simulate(sc: &Scenario, seed: u64) -> Result<RunOutput, NetworkError> {
    Ok(Network::new(sc, seed)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(mode: Mode) -> Scenario {
        let mut s = Scenario::with_mode(mode);
        s.run.duration_s = 300.0;
        s.run.drain_s = 60.0;
        s
    }

    #[test]
    fn base_schedule_chain_order() {
        let topo = crate::phy::build_linear_topology(5, 90.0, 100.0, 0.9).unwrap();
        let dag = build_dag(&topo, NodeId::ROOT).unwrap();
        let sf = build_base_schedule(&dag, 17, 16, 4).unwrap();
        assert!(sf.audit(4).is_empty());
        let slot_of = |a: u16, b: u16| {
            sf.cells()
                .find(|c| c.owner_link == Some((NodeId(a), NodeId(b))))
                .map(|c| c.slot_offset)
                .unwrap()
        };
        let up: Vec<u16> = (1..=5).rev().map(|n| slot_of(n, n - 1)).collect();
        assert!(up.windows(2).all(|w| w[0] < w[1]), "{up:?}");
        let down: Vec<u16> = (1..=5).map(|n| slot_of(n - 1, n)).collect();
        assert!(down.windows(2).all(|w| w[0] < w[1]), "{down:?}");
    }

    #[test]
    fn rpl_mode_has_no_control_records() {
        let out = simulate(&short(Mode::NoSdnRpl), 3).unwrap();
        assert!(out.records.iter().all(|r| r.flow_class == FlowClass::App));
        assert!(out.records.iter().any(|r| r.outcome == Outcome::Delivered));
        assert!(out.controller_log.is_empty());
    }

    #[test]
    fn every_record_has_one_outcome_and_sane_latency() {
        let out = simulate(&short(Mode::SdnShared), 5).unwrap();
        for r in &out.records {
            match r.outcome {
                Outcome::Delivered => assert!(r.deliver_asn.unwrap() >= r.enqueue_asn),
                Outcome::Dropped(_) => assert!(r.deliver_asn.is_none()),
            }
        }
        assert!(out.join_states.iter().all(|(_, s)| s.is_joined()));
    }

    #[test]
    fn tracks_mode_reaches_track_ready() {
        let out = simulate(&short(Mode::SdnTracks), 1).unwrap();
        assert!(!out.warmup_capped);
        assert!(
            out.join_states.iter().all(|(_, s)| *s == JoinState::TrackReady),
            "{:?}",
            out.join_states
        );
        assert_eq!(out.control_tracks.len(), 5);
        assert_eq!(out.slot_violations + out.audit_violations + out.track_overlaps, 0);
    }
}
