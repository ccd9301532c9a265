//! TSCH medium access: the slotframe, per-neighbor transmit queues, channel
//! hopping and slot-by-slot execution of dedicated and shared cells.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{Asn, RngStream};
use crate::packet::{DropReason, FlowClass, Packet};
use crate::phy::{NodeId, Topology};

/// IEEE 802.15.4 PHY frame limit.
pub const MAX_FRAME_BYTES: usize = 127;
/// MAC header, security and FCS bytes assumed per frame.
pub const MAC_OVERHEAD_BYTES: usize = 25;
/// Room left for the payload of one unfragmented frame.
pub const PAYLOAD_BUDGET_BYTES: usize = MAX_FRAME_BYTES - MAC_OVERHEAD_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrackId(pub u16);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    TxDedicated,
    RxDedicated,
    Shared,
    Sleep,
}

/// One `(slot_offset, channel_offset)` scheduling unit.
///
/// The global slotframe stores every dedicated link cell once, as
/// `TxDedicated` seen from the owner link's transmitter. Per-node views
/// flip it to `RxDedicated` for the receiver.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cell {
    pub slot_offset: u16,
    pub channel_offset: u16,
    pub kind: CellKind,
    pub owner_link: Option<(NodeId, NodeId)>,
    pub track_label: Option<TrackId>,
    /// Reserved by an in-progress track allocation; never used for traffic.
    pub tentative: bool,
}

impl Cell {
    pub fn involves(&self, n: NodeId) -> bool {
        self.owner_link.is_some_and(|(a, b)| a == n || b == n)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("cell ({slot}, {channel}) outside a {length}x{channels} slotframe")]
    OutOfBounds {
        slot: u16,
        channel: u16,
        length: u16,
        channels: u16,
    },
    #[error("cell ({slot}, {channel}) already allocated")]
    Occupied { slot: u16, channel: u16 },
    #[error("node {node} already active at slot {slot}")]
    HalfDuplex { node: NodeId, slot: u16 },
    #[error("slot {0} already holds a shared cell")]
    SharedSlot(u16),
    #[error("slotframe needs at least one slot and one channel")]
    Empty,
}

/// Static schedule invariant violation found by [`Slotframe::audit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleViolation {
    NodeDoubleBooked { node: NodeId, slot: u16 },
    DedicatedOnSharedSlot { slot: u16, channel: u16 },
    SharedCellWithOwner { slot: u16 },
    SharedCountMismatch { expected: usize, found: usize },
}

/// What one node knows about cell occupancy when choosing new cells.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScheduleView {
    pub length: u16,
    pub channel_count: u16,
    /// Slot offsets where this node already has an active cell.
    pub busy_slots: BTreeSet<u16>,
    /// Cells in use anywhere in interference reach.
    pub used_cells: BTreeSet<(u16, u16)>,
}

impl ScheduleView {
    pub fn new(length: u16, channel_count: u16) -> Self {
        ScheduleView {
            length,
            channel_count,
            ..Default::default()
        }
    }
}

/// Repeating matrix of slot offsets by channel offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slotframe {
    length: u16,
    channel_count: u16,
    cells: BTreeMap<(u16, u16), Cell>,
    shared_slots: BTreeSet<u16>,
}

impl Slotframe {
    pub fn new(length: u16, channel_count: u16) -> Result<Self, ScheduleError> {
        if length == 0 || channel_count == 0 {
            return Err(ScheduleError::Empty);
        }
        Ok(Slotframe {
            length,
            channel_count,
            cells: BTreeMap::new(),
            shared_slots: BTreeSet::new(),
        })
    }

    pub fn length(&self) -> u16 {
        self.length
    }

    pub fn channel_count(&self) -> u16 {
        self.channel_count
    }

    pub fn shared_slot_count(&self) -> usize {
        self.shared_slots.len()
    }

    pub fn shared_slots(&self) -> impl Iterator<Item = u16> + '_ {
        self.shared_slots.iter().copied()
    }

    pub fn is_shared_slot(&self, slot: u16) -> bool {
        self.shared_slots.contains(&slot)
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.values()
    }

    pub fn cell(&self, slot: u16, channel: u16) -> Option<&Cell> {
        self.cells.get(&(slot, channel))
    }

    pub fn cells_at(&self, slot: u16) -> impl Iterator<Item = &Cell> {
        self.cells.range((slot, 0)..=(slot, u16::MAX)).map(|(_, c)| c)
    }

    /// Slot offsets holding at least one non-tentative cell.
    pub fn active_slots(&self) -> BTreeSet<u16> {
        self.cells
            .values()
            .filter(|c| !c.tentative)
            .map(|c| c.slot_offset)
            .collect()
    }

    fn check_bounds(&self, slot: u16, channel: u16) -> Result<(), ScheduleError> {
        if slot >= self.length || channel >= self.channel_count {
            return Err(ScheduleError::OutOfBounds {
                slot,
                channel,
                length: self.length,
                channels: self.channel_count,
            });
        }
        Ok(())
    }

    /// Whether `node` has any cell (dedicated, tentative or shared) at `slot`.
    pub fn node_busy(&self, node: NodeId, slot: u16) -> bool {
        self.is_shared_slot(slot) || self.cells_at(slot).any(|c| c.involves(node))
    }

    pub fn add_shared(&mut self, slot: u16) -> Result<(), ScheduleError> {
        self.check_bounds(slot, 0)?;
        if self.is_shared_slot(slot) {
            return Err(ScheduleError::SharedSlot(slot));
        }
        if let Some(c) = self.cells_at(slot).next() {
            return Err(ScheduleError::Occupied {
                slot,
                channel: c.channel_offset,
            });
        }
        self.shared_slots.insert(slot);
        self.cells.insert(
            (slot, 0),
            Cell {
                slot_offset: slot,
                channel_offset: 0,
                kind: CellKind::Shared,
                owner_link: None,
                track_label: None,
                tentative: false,
            },
        );
        Ok(())
    }

    /// Adds a dedicated cell for link `src -> dst`.
    pub fn add_link_cell(
        &mut self,
        slot: u16,
        channel: u16,
        link: (NodeId, NodeId),
        track_label: Option<TrackId>,
        tentative: bool,
    ) -> Result<(), ScheduleError> {
        self.check_bounds(slot, channel)?;
        if self.cells.contains_key(&(slot, channel)) {
            return Err(ScheduleError::Occupied { slot, channel });
        }
        for n in [link.0, link.1] {
            if self.node_busy(n, slot) {
                return Err(ScheduleError::HalfDuplex { node: n, slot });
            }
        }
        self.cells.insert(
            (slot, channel),
            Cell {
                slot_offset: slot,
                channel_offset: channel,
                kind: CellKind::TxDedicated,
                owner_link: Some(link),
                track_label,
                tentative,
            },
        );
        Ok(())
    }

    pub fn remove(&mut self, slot: u16, channel: u16) -> Option<Cell> {
        let c = self.cells.remove(&(slot, channel))?;
        if c.kind == CellKind::Shared {
            self.shared_slots.remove(&slot);
        }
        Some(c)
    }

    /// Flips a tentative cell to committed. Returns false if absent.
    pub fn commit(&mut self, slot: u16, channel: u16) -> bool {
        match self.cells.get_mut(&(slot, channel)) {
            Some(c) if c.tentative => {
                c.tentative = false;
                true
            }
            _ => false,
        }
    }

    /// Occupancy knowledge of `node`: its own busy slots plus every used
    /// cell (the channel matrix is shared by the whole mesh).
    pub fn view(&self, node: NodeId) -> ScheduleView {
        let mut v = ScheduleView::new(self.length, self.channel_count);
        v.busy_slots.extend(self.shared_slots.iter().copied());
        for c in self.cells.values() {
            v.used_cells.insert((c.slot_offset, c.channel_offset));
            if c.involves(node) {
                v.busy_slots.insert(c.slot_offset);
            }
        }
        v
    }

    /// Cells as seen by `node`, including `Sleep` for idle slot offsets.
    pub fn node_cells(&self, node: NodeId) -> Vec<Cell> {
        let mut out = Vec::new();
        for slot in 0..self.length {
            let mut any = false;
            for c in self.cells_at(slot) {
                match c.owner_link {
                    Some((src, dst)) if src == node || dst == node => {
                        let mut c = c.clone();
                        if dst == node {
                            c.kind = CellKind::RxDedicated;
                        }
                        out.push(c);
                        any = true;
                    }
                    None => {
                        out.push(c.clone());
                        any = true;
                    }
                    _ => {}
                }
            }
            if !any {
                out.push(Cell {
                    slot_offset: slot,
                    channel_offset: 0,
                    kind: CellKind::Sleep,
                    owner_link: None,
                    track_label: None,
                    tentative: false,
                });
            }
        }
        out
    }

    pub fn audit(&self, expected_shared: usize) -> Vec<ScheduleViolation> {
        let mut v = Vec::new();
        if self.shared_slots.len() != expected_shared {
            v.push(ScheduleViolation::SharedCountMismatch {
                expected: expected_shared,
                found: self.shared_slots.len(),
            });
        }
        for slot in 0..self.length {
            let mut seen = BTreeSet::new();
            for c in self.cells_at(slot) {
                match (c.kind, c.owner_link) {
                    (CellKind::Shared, Some(_)) => v.push(ScheduleViolation::SharedCellWithOwner { slot }),
                    (CellKind::Shared, None) => {}
                    (_, Some((a, b))) => {
                        if self.is_shared_slot(slot) {
                            v.push(ScheduleViolation::DedicatedOnSharedSlot {
                                slot,
                                channel: c.channel_offset,
                            });
                        }
                        for n in [a, b] {
                            if !seen.insert(n) {
                                v.push(ScheduleViolation::NodeDoubleBooked { node: n, slot });
                            }
                        }
                    }
                    (_, None) => {}
                }
            }
        }
        v
    }

    /// Text grid: one row per channel offset, one column per slot offset.
    /// Dedicated cells read `src>dst`, with `#track` for track cells and a
    /// trailing `?` while tentative. Shared cells read `SH`.
    pub fn dump_grid(&self) -> String {
        const W: usize = 9;
        let mut s = String::new();
        let _ = write!(s, "{:>5}", "ch\\sl");
        for slot in 0..self.length {
            let _ = write!(s, "{:>W$}", slot);
        }
        s.push('\n');
        for ch in 0..self.channel_count {
            let _ = write!(s, "{:>5}", ch);
            for slot in 0..self.length {
                let label = match self.cells.get(&(slot, ch)) {
                    None => ".".to_string(),
                    Some(c) => cell_label(c),
                };
                let _ = write!(s, "{:>W$}", label);
            }
            s.push('\n');
        }
        s
    }

    /// Deterministic byte image used to compare schedule snapshots.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.length.to_be_bytes());
        out.extend_from_slice(&self.channel_count.to_be_bytes());
        for c in self.cells.values() {
            out.extend_from_slice(&c.slot_offset.to_be_bytes());
            out.extend_from_slice(&c.channel_offset.to_be_bytes());
            out.push(match c.kind {
                CellKind::TxDedicated => 1,
                CellKind::RxDedicated => 2,
                CellKind::Shared => 3,
                CellKind::Sleep => 4,
            });
            let (a, b) = c.owner_link.unwrap_or((NodeId(u16::MAX), NodeId(u16::MAX)));
            out.extend_from_slice(&a.0.to_be_bytes());
            out.extend_from_slice(&b.0.to_be_bytes());
            out.extend_from_slice(&c.track_label.map_or(u16::MAX, |t| t.0).to_be_bytes());
            out.push(u8::from(c.tentative));
        }
        out
    }
}

fn cell_label(c: &Cell) -> String {
    match c.owner_link {
        None => "SH".to_string(),
        Some((a, b)) => {
            let mut l = format!("{a}>{b}");
            if let Some(t) = c.track_label {
                let _ = write!(l, "#{t}");
            }
            if c.tentative {
                l.push('?');
            }
            l
        }
    }
}

/// Physical channel for a cell: `hop_sequence[(asn + channel_offset) mod n]`.
pub fn hop_channel(asn: Asn, channel_offset: u16, hop_sequence: &[u16]) -> u16 {
    assert!(!hop_sequence.is_empty(), "hop sequence must not be empty");
    let n = hop_sequence.len() as u64;
    hop_sequence[((asn + u64::from(channel_offset)) % n) as usize]
}

/// Identity hop sequence `0..channel_count`.
pub fn identity_hop_sequence(channel_count: u16) -> Vec<u16> {
    (0..channel_count).collect()
}

/// Queue a frame waits in: best-effort or one track's dedicated buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueueClass {
    BestEffort,
    Track(TrackId),
}

/// A packet on one hop.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub packet: Packet,
    pub mac_src: NodeId,
    pub mac_dst: NodeId,
    pub retry_count: u8,
    pub enqueued_asn: Asn,
}

impl Frame {
    pub fn new(packet: Packet, mac_src: NodeId, mac_dst: NodeId, enqueued_asn: Asn) -> Self {
        Frame {
            packet,
            mac_src,
            mac_dst,
            retry_count: 0,
            enqueued_asn,
        }
    }

    pub fn payload_bytes(&self) -> usize {
        self.packet.size_bytes()
    }

    pub fn flow_class(&self) -> FlowClass {
        self.packet.class
    }
}

/// Per-(neighbor, class) FIFO queues of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct TxQueues {
    capacity: usize,
    queues: BTreeMap<(NodeId, QueueClass), VecDeque<Frame>>,
}

impl TxQueues {
    pub fn new(capacity: usize) -> Self {
        TxQueues {
            capacity,
            queues: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends to the `(frame.mac_dst, class)` queue; hands the frame back
    /// when that queue is full.
    #[allow(clippy::result_large_err)]
    pub fn enqueue(&mut self, frame: Frame, class: QueueClass) -> Result<(), Frame> {
        let q = self.queues.entry((frame.mac_dst, class)).or_default();
        if q.len() >= self.capacity {
            return Err(frame);
        }
        q.push_back(frame);
        Ok(())
    }

    pub fn len(&self, neighbor: NodeId, class: QueueClass) -> usize {
        self.queues.get(&(neighbor, class)).map_or(0, VecDeque::len)
    }

    pub fn total(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn head_mut(&mut self, neighbor: NodeId, class: QueueClass) -> Option<&mut Frame> {
        self.queues.get_mut(&(neighbor, class))?.front_mut()
    }

    pub fn pop(&mut self, neighbor: NodeId, class: QueueClass) -> Option<Frame> {
        self.queues.get_mut(&(neighbor, class))?.pop_front()
    }

    /// Best-effort queue whose head frame has waited longest.
    pub fn oldest_best_effort(&self) -> Option<NodeId> {
        self.queues
            .iter()
            .filter(|((_, c), q)| *c == QueueClass::BestEffort && !q.is_empty())
            .min_by_key(|((n, _), q)| (q.front().map(|f| f.enqueued_asn), *n))
            .map(|((n, _), _)| *n)
    }

    pub fn has_best_effort(&self) -> bool {
        self.oldest_best_effort().is_some()
    }

    /// Removes every frame of `class`, in queue order.
    pub fn drain_class(&mut self, class: QueueClass) -> Vec<Frame> {
        let keys: Vec<_> = self.queues.keys().filter(|(_, c)| *c == class).copied().collect();
        keys.into_iter()
            .flat_map(|k| self.queues.remove(&k).unwrap_or_default())
            .collect()
    }

    pub fn frames(&self) -> impl Iterator<Item = (&QueueClass, &Frame)> {
        self.queues.iter().flat_map(|((_, c), q)| q.iter().map(move |f| (c, f)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacConfig {
    pub max_retries: u8,
    pub p_shared: f64,
    pub queue_capacity: usize,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            max_retries: 4,
            p_shared: 0.5,
            queue_capacity: 8,
        }
    }
}

/// Radio activity counters of one node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RadioCounters {
    pub tx_attempts: u64,
    pub rx_frames: u64,
    /// Per neighbor: (attempts, successes).
    pub links: BTreeMap<NodeId, (u64, u64)>,
}

impl RadioCounters {
    /// Success ratio towards `n` scaled to 0..=255; 255 before any attempt.
    pub fn link_estimate(&self, n: NodeId) -> u8 {
        match self.links.get(&n) {
            Some(&(a, s)) if a > 0 => ((s * 255) / a) as u8,
            _ => 255,
        }
    }
}

/// Hook for scripted losses in tests and experiments.
pub trait FrameFilter {
    /// Returning true turns this transmission attempt into a loss.
    fn force_loss(&mut self, asn: Asn, frame: &Frame) -> bool;
}

/// Filter that never interferes.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoFaults;

impl FrameFilter for NoFaults {
    fn force_loss(&mut self, _asn: Asn, _frame: &Frame) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlotOutcome {
    Idle {
        slot_offset: u16,
        channel_offset: u16,
    },
    Delivered {
        frame: Frame,
        /// Track label of the cell it arrived on.
        cell_track: Option<TrackId>,
        channel: u16,
        shared: bool,
    },
    Lost {
        from: NodeId,
        to: NodeId,
        retry_count: u8,
        shared: bool,
        collided: bool,
    },
    Dropped {
        frame: Frame,
        reason: DropReason,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotReport {
    pub outcomes: Vec<SlotOutcome>,
    /// Nodes that ended up with two roles in this slot.
    pub violations: u32,
}

/// Schedule, queues and radio counters for every node.
#[derive(Debug, Clone)]
pub struct Mac {
    pub slotframe: Slotframe,
    cfg: MacConfig,
    hop_sequence: Vec<u16>,
    queues: Vec<TxQueues>,
    radio: Vec<RadioCounters>,
}

impl Mac {
    pub fn new(slotframe: Slotframe, node_count: usize, cfg: MacConfig) -> Self {
        let hop_sequence = identity_hop_sequence(slotframe.channel_count());
        Mac {
            slotframe,
            cfg,
            hop_sequence,
            queues: vec![TxQueues::new(cfg.queue_capacity); node_count],
            radio: vec![RadioCounters::default(); node_count],
        }
    }

    pub fn config(&self) -> &MacConfig {
        &self.cfg
    }

    pub fn queues(&self, node: NodeId) -> &TxQueues {
        &self.queues[node.index()]
    }

    pub fn queues_mut(&mut self, node: NodeId) -> &mut TxQueues {
        &mut self.queues[node.index()]
    }

    pub fn radio(&self, node: NodeId) -> &RadioCounters {
        &self.radio[node.index()]
    }

    pub fn node_count(&self) -> usize {
        self.queues.len()
    }

    /// Queues `frame` at `node` towards `frame.mac_dst`. A full queue hands
    /// the frame back so the caller can record a `QueueOverflow` drop.
    #[allow(clippy::result_large_err)]
    pub fn enqueue_frame(&mut self, node: NodeId, frame: Frame, class: QueueClass) -> Result<(), Frame> {
        debug_assert_eq!(frame.mac_src, node);
        self.queues[node.index()].enqueue(frame, class)
    }

    pub fn all_queues_empty(&self) -> bool {
        self.queues.iter().all(TxQueues::is_empty)
    }

    /// Executes every cell active at `asn`.
    pub fn execute_slot(
        &mut self,
        asn: Asn,
        topo: &Topology,
        link_rng: &mut RngStream,
        shared_rng: &mut RngStream,
        filter: &mut dyn FrameFilter,
    ) -> SlotReport {
        let slot = (asn % u64::from(self.slotframe.length())) as u16;
        let mut report = SlotReport::default();
        let cells: Vec<Cell> = self
            .slotframe
            .cells_at(slot)
            .filter(|c| !c.tentative)
            .cloned()
            .collect();
        let mut roles: BTreeMap<NodeId, u32> = BTreeMap::new();

        for cell in &cells {
            match cell.owner_link {
                Some(link) => {
                    for n in [link.0, link.1] {
                        *roles.entry(n).or_default() += 1;
                    }
                    self.run_dedicated(asn, cell, link, topo, link_rng, filter, &mut report);
                }
                None => {
                    self.run_shared(asn, cell, topo, link_rng, shared_rng, filter, &mut report);
                }
            }
        }
        report.violations = roles.values().filter(|&&r| r > 1).count() as u32;
        report
    }

    #[allow(clippy::too_many_arguments)]
    fn run_dedicated(
        &mut self,
        asn: Asn,
        cell: &Cell,
        (src, dst): (NodeId, NodeId),
        topo: &Topology,
        link_rng: &mut RngStream,
        filter: &mut dyn FrameFilter,
        report: &mut SlotReport,
    ) {
        let class = cell.track_label.map_or(QueueClass::BestEffort, QueueClass::Track);
        if self.queues[src.index()].len(dst, class) == 0 {
            report.outcomes.push(SlotOutcome::Idle {
                slot_offset: cell.slot_offset,
                channel_offset: cell.channel_offset,
            });
            return;
        }
        let channel = hop_channel(asn, cell.channel_offset, &self.hop_sequence);
        let outcome = self.transmit(asn, src, dst, class, false, false, topo, link_rng, filter);
        report.outcomes.push(match outcome {
            SlotOutcome::Delivered { frame, shared, .. } => SlotOutcome::Delivered {
                frame,
                cell_track: cell.track_label,
                channel,
                shared,
            },
            other => other,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn run_shared(
        &mut self,
        asn: Asn,
        cell: &Cell,
        topo: &Topology,
        link_rng: &mut RngStream,
        shared_rng: &mut RngStream,
        filter: &mut dyn FrameFilter,
        report: &mut SlotReport,
    ) {
        let mut txs: Vec<(NodeId, NodeId)> = Vec::new();
        for (i, q) in self.queues.iter().enumerate() {
            if let Some(dst) = q.oldest_best_effort() {
                if shared_rng.draw() < self.cfg.p_shared {
                    txs.push((NodeId(i as u16), dst));
                }
            }
        }
        if txs.is_empty() {
            report.outcomes.push(SlotOutcome::Idle {
                slot_offset: cell.slot_offset,
                channel_offset: cell.channel_offset,
            });
            return;
        }
        let channel = hop_channel(asn, cell.channel_offset, &self.hop_sequence);
        for &(src, dst) in &txs {
            let collided = txs
                .iter()
                .any(|&(w, _)| w != src && (w == dst || topo.in_range(w, dst) || topo.in_range(w, src)));
            let outcome = self.transmit(
                asn,
                src,
                dst,
                QueueClass::BestEffort,
                true,
                collided,
                topo,
                link_rng,
                filter,
            );
            report.outcomes.push(match outcome {
                SlotOutcome::Delivered { frame, .. } => SlotOutcome::Delivered {
                    frame,
                    cell_track: None,
                    channel,
                    shared: true,
                },
                other => other,
            });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn transmit(
        &mut self,
        asn: Asn,
        src: NodeId,
        dst: NodeId,
        class: QueueClass,
        shared: bool,
        collided: bool,
        topo: &Topology,
        link_rng: &mut RngStream,
        filter: &mut dyn FrameFilter,
    ) -> SlotOutcome {
        let max_retries = self.cfg.max_retries;
        let head = self.queues[src.index()]
            .head_mut(dst, class)
            .expect("caller checked a frame is queued");
        let forced = filter.force_loss(asn, head);
        let delivered = !collided
            && topo
                .attempt_delivery(src, dst, link_rng)
                .expect("scheduled link endpoints exist")
            && !forced;
        let counters = &mut self.radio[src.index()];
        counters.tx_attempts += 1;
        let link = counters.links.entry(dst).or_default();
        link.0 += 1;
        if delivered {
            link.1 += 1;
            self.radio[dst.index()].rx_frames += 1;
            let frame = self.queues[src.index()].pop(dst, class).expect("head exists");
            return SlotOutcome::Delivered {
                frame,
                cell_track: None,
                channel: 0,
                shared,
            };
        }
        head.retry_count += 1;
        if head.retry_count > max_retries {
            let frame = self.queues[src.index()].pop(dst, class).expect("head exists");
            return SlotOutcome::Dropped {
                frame,
                reason: DropReason::RetryLimit,
            };
        }
        SlotOutcome::Lost {
            from: src,
            to: dst,
            retry_count: head.retry_count,
            shared,
            collided,
        }
    }
}
