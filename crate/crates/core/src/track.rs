//! Tracks: per-hop cell bundles reserved hop by hop towards a destination,
//! and Layer-2 switching from an ingress bundle to its paired egress bundle.
//!
//! The engine is driven by signals that the network carries as ordinary
//! best-effort frames. It mutates the shared slotframe and returns the
//! actions (frames to send, timers to arm) the caller must perform.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::kernel::Asn;
use crate::mac::{Frame, Mac, QueueClass, ScheduleView, Slotframe, TrackId};
use crate::packet::DropReason;
use crate::phy::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrackError {
    #[error("only {found} mutually free cells, {needed} needed")]
    InsufficientCells { needed: usize, found: usize },
    #[error("unknown track {0}")]
    UnknownTrack(TrackId),
    #[error("track {0} already released")]
    AlreadyReleased(TrackId),
    #[error("route must contain at least two distinct nodes")]
    BadRoute,
    #[error("bandwidth must be at least one cell")]
    ZeroBandwidth,
}

/// Picks `count` cells free for both ends of a link, closest after
/// `ingress_slot`. At most one cell per slot offset is returned since both
/// endpoints are half-duplex.
pub fn select_candidate_cells(
    local: &ScheduleView,
    neighbor: &ScheduleView,
    ingress_slot: u16,
    count: usize,
) -> Result<Vec<(u16, u16)>, TrackError> {
    let len = local.length;
    let mut free: Vec<(u16, u16, u16)> = Vec::new();
    for slot in 0..len {
        if local.busy_slots.contains(&slot) || neighbor.busy_slots.contains(&slot) {
            continue;
        }
        let channel = (0..local.channel_count)
            .find(|&ch| !local.used_cells.contains(&(slot, ch)) && !neighbor.used_cells.contains(&(slot, ch)));
        if let Some(ch) = channel {
            let gap = match (slot + len - ingress_slot % len) % len {
                0 => len,
                g => g,
            };
            free.push((gap, slot, ch));
        }
    }
    if free.len() < count {
        return Err(TrackError::InsufficientCells {
            needed: count,
            found: free.len(),
        });
    }
    free.sort_unstable();
    Ok(free.into_iter().take(count).map(|(_, s, c)| (s, c)).collect())
}

/// Forward gap from `from` to `to` inside a slotframe of `len`, in `1..=len`.
pub fn forward_gap(from: u16, to: u16, len: u16) -> u16 {
    match (to + len - from % len) % len {
        0 => len,
        g => g,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellBundle {
    pub src: NodeId,
    pub dst: NodeId,
    pub track: TrackId,
    pub cells: Vec<(u16, u16)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Allocating,
    Active,
    Failed,
    Released,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LinkState {
    Tentative,
    Committed,
    Released,
}

/// A chain of bundles from `route[0]` to the last route entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    pub route: Vec<NodeId>,
    pub bandwidth: usize,
    pub state: TrackState,
    /// `bundles[i]` serves link `route[i] -> route[i + 1]`; filled as the
    /// request advances.
    pub bundles: Vec<CellBundle>,
    links: Vec<LinkState>,
    pub requested_asn: Asn,
    pub active_asn: Option<Asn>,
}

impl Track {
    pub fn source(&self) -> NodeId {
        self.route[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.route.last().expect("route is non-empty")
    }

    pub fn hop_count(&self) -> usize {
        self.route.len() - 1
    }

    fn position(&self, n: NodeId) -> Option<usize> {
        self.route.iter().position(|&r| r == n)
    }

    pub fn ingress(&self, n: NodeId) -> Option<&CellBundle> {
        let i = self.position(n)?;
        i.checked_sub(1).and_then(|j| self.bundles.get(j))
    }

    pub fn egress(&self, n: NodeId) -> Option<&CellBundle> {
        let i = self.position(n)?;
        self.bundles.get(i)
    }

    /// Per-hop forward gaps: the first entry is the egress slot of the
    /// source, the rest are gaps between consecutive bundles.
    pub fn bundle_slots(&self) -> Vec<u16> {
        self.bundles.iter().map(|b| b.cells[0].0).collect()
    }
}

/// Reservation request as carried hop by hop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReservationRequest {
    pub track: TrackId,
    pub requester: NodeId,
    pub destination: NodeId,
    pub route: Vec<NodeId>,
    pub candidates: Vec<(u16, u16)>,
    pub bandwidth: u8,
    pub hold_slots: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrackSignal {
    Request(ReservationRequest),
    Confirm { track: TrackId },
    Failure { track: TrackId },
    Teardown { track: TrackId },
}

impl TrackSignal {
    pub fn track(&self) -> TrackId {
        match self {
            TrackSignal::Request(r) => r.track,
            TrackSignal::Confirm { track } | TrackSignal::Failure { track } | TrackSignal::Teardown { track } => *track,
        }
    }

    /// Bytes on air: kind 1 + track 2, plus for a request requester 2,
    /// destination 2, bandwidth 1, hold 2, route count 1 + 2 per node and
    /// cell count 1 + 3 per cell.
    pub fn encoded_len(&self) -> usize {
        match self {
            TrackSignal::Request(r) => 3 + 2 + 2 + 1 + 2 + 1 + 2 * r.route.len() + 1 + 3 * r.candidates.len(),
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrackAction {
    /// Send `signal` from `from` to its route neighbor `to`.
    Send {
        from: NodeId,
        to: NodeId,
        signal: TrackSignal,
    },
    /// Arm the hold timer of `node` for `track`, `delay` slots from now.
    ArmHold {
        node: NodeId,
        track: TrackId,
        delay: u64,
    },
    Activated(TrackId),
    Failed(TrackId),
}

/// Result of switching a frame received on a track cell.
#[derive(Debug, Clone, PartialEq)]
pub enum SwitchResult {
    /// Moved to the egress queue of the same track.
    Switched,
    /// This node is the track's destination.
    Arrived(Frame),
    Dropped(Frame, DropReason),
}

#[derive(Debug, Clone, Default)]
pub struct TrackEngine {
    tracks: BTreeMap<TrackId, Track>,
    next_id: u16,
    hold_slots: u64,
    teardowns: u64,
}

impl TrackEngine {
    pub fn new(hold_slots: u64) -> Self {
        TrackEngine {
            tracks: BTreeMap::new(),
            next_id: 1,
            hold_slots,
            teardowns: 0,
        }
    }

    pub fn hold_slots(&self) -> u64 {
        self.hold_slots
    }

    pub fn get(&self, id: TrackId) -> Option<&Track> {
        self.tracks.get(&id)
    }

    pub fn tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values()
    }

    pub fn teardowns_sent(&self) -> u64 {
        self.teardowns
    }

    /// Starts a reservation at `route[0]`. The source picks cells for its
    /// first link and sends the request on.
    pub fn begin(
        &mut self,
        sf: &mut Slotframe,
        route: Vec<NodeId>,
        bandwidth: usize,
        now: Asn,
    ) -> Result<(TrackId, Vec<TrackAction>), TrackError> {
        if route.len() < 2 || route[0] == route[route.len() - 1] {
            return Err(TrackError::BadRoute);
        }
        if bandwidth == 0 {
            return Err(TrackError::ZeroBandwidth);
        }
        let id = TrackId(self.next_id);
        self.next_id = self.next_id.wrapping_add(1).max(1);
        let mut track = Track {
            id,
            route,
            bandwidth,
            state: TrackState::Allocating,
            bundles: Vec::new(),
            links: Vec::new(),
            requested_asn: now,
            active_asn: None,
        };
        let ingress = sf.length() - 1;
        let mut actions = Vec::new();
        match reserve_link(sf, &mut track, 0, ingress) {
            Ok(()) => {
                actions.push(TrackAction::ArmHold {
                    node: track.route[0],
                    track: id,
                    delay: self.hold_slots,
                });
                actions.push(TrackAction::Send {
                    from: track.route[0],
                    to: track.route[1],
                    signal: TrackSignal::Request(self.request_for(&track, 0)),
                });
            }
            Err(_) => {
                track.state = TrackState::Failed;
                actions.push(TrackAction::Failed(id));
            }
        }
        self.tracks.insert(id, track);
        Ok((id, actions))
    }

    fn request_for(&self, track: &Track, link: usize) -> ReservationRequest {
        ReservationRequest {
            track: track.id,
            requester: track.route[0],
            destination: track.destination(),
            route: track.route.clone(),
            candidates: track.bundles[link].cells.clone(),
            bandwidth: track.bandwidth as u8,
            hold_slots: self.hold_slots.min(u64::from(u16::MAX)) as u16,
        }
    }

    /// Processes a signal delivered at `at`.
    pub fn on_signal(&mut self, sf: &mut Slotframe, at: NodeId, signal: &TrackSignal, now: Asn) -> Vec<TrackAction> {
        let id = signal.track();
        let hold = self.hold_slots;
        let Some(track) = self.tracks.get_mut(&id) else {
            return Vec::new();
        };
        let Some(i) = track.position(at) else {
            return Vec::new();
        };
        let k = track.hop_count();
        let mut out = Vec::new();
        match signal {
            TrackSignal::Request(_) => {
                if i == 0 || track.links.get(i - 1) != Some(&LinkState::Tentative) {
                    // Upstream gave up before the request arrived.
                    return out;
                }
                if i == k {
                    commit_link(sf, track, i - 1);
                    out.push(send(track, i, i - 1, TrackSignal::Confirm { track: id }));
                    return out;
                }
                let ingress = track.bundles[i - 1].cells[0].0;
                match reserve_link(sf, track, i, ingress) {
                    Ok(()) => {
                        out.push(TrackAction::ArmHold {
                            node: at,
                            track: id,
                            delay: hold,
                        });
                        let req = ReservationRequest {
                            track: id,
                            requester: track.route[0],
                            destination: track.destination(),
                            route: track.route.clone(),
                            candidates: track.bundles[i].cells.clone(),
                            bandwidth: track.bandwidth as u8,
                            hold_slots: hold.min(u64::from(u16::MAX)) as u16,
                        };
                        out.push(send(track, i, i + 1, TrackSignal::Request(req)));
                    }
                    Err(_) => {
                        release_link(sf, track, i - 1);
                        out.push(send(track, i, i - 1, TrackSignal::Failure { track: id }));
                    }
                }
            }
            TrackSignal::Confirm { .. } => {
                if i == 0 {
                    if track.state == TrackState::Allocating {
                        track.state = TrackState::Active;
                        track.active_asn = Some(now);
                        out.push(TrackAction::Activated(id));
                    } else if track.state == TrackState::Failed {
                        self.teardowns += 1;
                        out.push(send(track, 0, 1, TrackSignal::Teardown { track: id }));
                    }
                } else if track.links.get(i - 1) == Some(&LinkState::Tentative) {
                    commit_link(sf, track, i - 1);
                    out.push(send(track, i, i - 1, TrackSignal::Confirm { track: id }));
                } else if track.links.get(i - 1) == Some(&LinkState::Released) {
                    // Our ingress expired meanwhile: undo everything downstream.
                    release_link(sf, track, i);
                    if i + 1 < k {
                        self.teardowns += 1;
                        out.push(send(track, i, i + 1, TrackSignal::Teardown { track: id }));
                    }
                }
            }
            TrackSignal::Failure { .. } => {
                if i == 0 {
                    release_link(sf, track, 0);
                    if track.state == TrackState::Allocating {
                        track.state = TrackState::Failed;
                        out.push(TrackAction::Failed(id));
                    }
                } else {
                    release_link(sf, track, i - 1);
                    release_link(sf, track, i);
                    out.push(send(track, i, i - 1, TrackSignal::Failure { track: id }));
                }
            }
            TrackSignal::Teardown { .. } => {
                if i > 0 {
                    release_link(sf, track, i - 1);
                }
                release_link(sf, track, i);
                // The last link is released by its sender, so the sweep
                // stops one hop short of the destination.
                if i + 1 < k {
                    out.push(send(track, i, i + 1, TrackSignal::Teardown { track: id }));
                }
            }
        }
        out
    }

    /// Hold timer of `node` for `track` fired.
    pub fn on_hold_expiry(&mut self, sf: &mut Slotframe, node: NodeId, id: TrackId) -> Vec<TrackAction> {
        let Some(track) = self.tracks.get_mut(&id) else {
            return Vec::new();
        };
        let Some(i) = track.position(node) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if i == 0 {
            if track.state == TrackState::Allocating {
                release_link(sf, track, 0);
                track.state = TrackState::Failed;
                out.push(TrackAction::Failed(id));
                if track.hop_count() > 1 {
                    self.teardowns += 1;
                    out.push(send(track, 0, 1, TrackSignal::Teardown { track: id }));
                }
            }
        } else if track.links.get(i) == Some(&LinkState::Tentative) {
            release_link(sf, track, i);
        }
        out
    }

    /// Removes every cell of `id` and marks it released. The caller drains
    /// the matching queues as `TrackStale` drops.
    pub fn release_track(&mut self, sf: &mut Slotframe, id: TrackId) -> Result<(), TrackError> {
        let track = self.tracks.get_mut(&id).ok_or(TrackError::UnknownTrack(id))?;
        if track.state == TrackState::Released {
            return Err(TrackError::AlreadyReleased(id));
        }
        for l in 0..track.links.len() {
            release_link(sf, track, l);
        }
        track.state = TrackState::Released;
        Ok(())
    }

    /// Switches a frame that arrived at `node` on a cell of track `ingress`.
    pub fn forward_on_track(
        &self,
        mac: &mut Mac,
        node: NodeId,
        mut frame: Frame,
        ingress: TrackId,
        now: Asn,
    ) -> SwitchResult {
        let Some(track) = self.tracks.get(&ingress) else {
            return SwitchResult::Dropped(frame, DropReason::TrackStale);
        };
        if track.state != TrackState::Active || track.ingress(node).is_none() {
            return SwitchResult::Dropped(frame, DropReason::TrackStale);
        }
        let Some(egress) = track.egress(node) else {
            return SwitchResult::Arrived(frame);
        };
        frame.mac_src = node;
        frame.mac_dst = egress.dst;
        frame.retry_count = 0;
        frame.enqueued_asn = now;
        match mac.enqueue_frame(node, frame, QueueClass::Track(ingress)) {
            Ok(()) => SwitchResult::Switched,
            Err(f) => SwitchResult::Dropped(f, DropReason::QueueOverflow),
        }
    }

    /// Labeled cells must be disjoint across tracks.
    pub fn overlapping_cells(&self) -> usize {
        let mut owner: BTreeMap<(u16, u16), TrackId> = BTreeMap::new();
        let mut clashes = 0;
        for t in self.tracks.values() {
            for (l, b) in t.bundles.iter().enumerate() {
                if t.links.get(l) == Some(&LinkState::Released) {
                    continue;
                }
                for &c in &b.cells {
                    if owner.insert(c, t.id).is_some_and(|o| o != t.id) {
                        clashes += 1;
                    }
                }
            }
        }
        clashes
    }

    /// One line per track: id, state, route and bundle slots.
    pub fn dump(&self) -> String {
        let mut s = String::from("track,state,route,cells\n");
        for t in self.tracks.values() {
            let route: Vec<String> = t.route.iter().map(|n| n.to_string()).collect();
            let cells: Vec<String> = t
                .bundles
                .iter()
                .zip(&t.links)
                .filter(|(_, l)| **l != LinkState::Released)
                .map(|(b, _)| {
                    let c: Vec<String> = b.cells.iter().map(|(s, c)| format!("{s}/{c}")).collect();
                    format!("{}>{}@{}", b.src, b.dst, c.join("+"))
                })
                .collect();
            s.push_str(&format!(
                "{},{:?},{},{}\n",
                t.id,
                t.state,
                route.join("-"),
                cells.join(" ")
            ));
        }
        s
    }
}

fn send(track: &Track, from: usize, to: usize, signal: TrackSignal) -> TrackAction {
    TrackAction::Send {
        from: track.route[from],
        to: track.route[to],
        signal,
    }
}

fn reserve_link(sf: &mut Slotframe, track: &mut Track, link: usize, ingress: u16) -> Result<(), TrackError> {
    let (a, b) = (track.route[link], track.route[link + 1]);
    let cells = select_candidate_cells(&sf.view(a), &sf.view(b), ingress, track.bandwidth)?;
    for (n, &(slot, ch)) in cells.iter().enumerate() {
        if sf.add_link_cell(slot, ch, (a, b), Some(track.id), true).is_err() {
            for &(s, c) in &cells[..n] {
                sf.remove(s, c);
            }
            return Err(TrackError::InsufficientCells {
                needed: track.bandwidth,
                found: n,
            });
        }
    }
    let bundle = CellBundle {
        src: a,
        dst: b,
        track: track.id,
        cells,
    };
    if link < track.bundles.len() {
        track.bundles[link] = bundle;
        track.links[link] = LinkState::Tentative;
    } else {
        track.bundles.push(bundle);
        track.links.push(LinkState::Tentative);
    }
    Ok(())
}

fn commit_link(sf: &mut Slotframe, track: &mut Track, link: usize) {
    if track.links.get(link) == Some(&LinkState::Tentative) {
        for &(s, c) in &track.bundles[link].cells {
            sf.commit(s, c);
        }
        track.links[link] = LinkState::Committed;
    }
}

fn release_link(sf: &mut Slotframe, track: &mut Track, link: usize) {
    if let Some(state) = track.links.get_mut(link) {
        if *state != LinkState::Released {
            for &(s, c) in &track.bundles[link].cells {
                if sf.cell(s, c).is_some_and(|cell| cell.track_label == Some(track.id)) {
                    sf.remove(s, c);
                }
            }
            *state = LinkState::Released;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn view(len: u16, busy: &[u16]) -> ScheduleView {
        let mut v = ScheduleView::new(len, 1);
        v.busy_slots = busy.iter().copied().collect();
        v.used_cells = busy.iter().map(|&s| (s, 0)).collect();
        v
    }

    fn busy_except(len: u16, free: &[u16]) -> Vec<u16> {
        (0..len).filter(|s| !free.contains(s)).collect()
    }

    #[test]
    fn picks_smallest_forward_gap() {
        let v = view(10, &busy_except(10, &[5, 9, 1]));
        let empty = view(10, &[]);
        assert_eq!(select_candidate_cells(&v, &empty, 3, 1).unwrap(), vec![(5, 0)]);
    }

    #[test]
    fn same_slot_as_ingress_wraps_to_full_frame() {
        let v = view(10, &busy_except(10, &[3]));
        let empty = view(10, &[]);
        assert_eq!(select_candidate_cells(&v, &empty, 3, 1).unwrap(), vec![(3, 0)]);
        assert_eq!(forward_gap(3, 3, 10), 10);
        let v = view(10, &busy_except(10, &[3, 8]));
        assert_eq!(select_candidate_cells(&v, &empty, 3, 1).unwrap(), vec![(8, 0)]);
    }

    #[test]
    fn exact_count_returns_everything() {
        let v = view(10, &busy_except(10, &[2, 7]));
        let empty = view(10, &[]);
        let got: BTreeSet<_> = select_candidate_cells(&v, &empty, 8, 2).unwrap().into_iter().collect();
        assert_eq!(got, BTreeSet::from([(2, 0), (7, 0)]));
        assert_eq!(
            select_candidate_cells(&v, &empty, 8, 3),
            Err(TrackError::InsufficientCells { needed: 3, found: 2 })
        );
    }

    #[test]
    fn neighbor_busy_slots_excluded() {
        let a = view(10, &[]);
        let b = view(10, &[4, 5]);
        assert_eq!(select_candidate_cells(&a, &b, 3, 1).unwrap(), vec![(6, 0)]);
    }

    fn chain_route(k: u16) -> Vec<NodeId> {
        (0..=k).rev().map(NodeId).collect()
    }

    /// Delivers every signal instantly, in order, with no loss.
    fn settle(eng: &mut TrackEngine, sf: &mut Slotframe, mut pending: Vec<TrackAction>) -> Vec<TrackAction> {
        let mut done = Vec::new();
        while !pending.is_empty() {
            let mut next = Vec::new();
            for a in pending {
                match &a {
                    TrackAction::Send { to, signal, .. } => {
                        next.extend(eng.on_signal(sf, *to, signal, 0));
                    }
                    _ => done.push(a.clone()),
                }
            }
            pending = next;
        }
        done
    }

    #[test]
    fn one_hop_track() {
        let mut sf = Slotframe::new(13, 4).unwrap();
        let mut eng = TrackEngine::new(52);
        let (id, acts) = eng.begin(&mut sf, chain_route(1), 1, 0).unwrap();
        let done = settle(&mut eng, &mut sf, acts);
        assert!(done.contains(&TrackAction::Activated(id)));
        let t = eng.get(id).unwrap();
        assert_eq!(t.bundles.len(), 1);
        assert_eq!(t.egress(NodeId(1)), t.ingress(NodeId(0)));
        assert!(sf.cells().all(|c| !c.tentative));
    }

    #[test]
    fn five_hop_track_chain() {
        let mut sf = Slotframe::new(17, 16).unwrap();
        for s in [0, 4, 8, 12] {
            sf.add_shared(s).unwrap();
        }
        let mut eng = TrackEngine::new(68);
        let (id, acts) = eng.begin(&mut sf, chain_route(5), 1, 0).unwrap();
        settle(&mut eng, &mut sf, acts);
        let t = eng.get(id).unwrap();
        assert_eq!(t.state, TrackState::Active);
        assert_eq!(t.bundles.len(), 5);
        for w in t.bundles.windows(2) {
            assert_eq!(w[0].dst, w[1].src);
        }
        // Schedule inspection: each labeled cell belongs to the right link.
        for b in &t.bundles {
            let c = sf.cell(b.cells[0].0, b.cells[0].1).unwrap();
            assert_eq!(c.owner_link, Some((b.src, b.dst)));
            assert_eq!(c.track_label, Some(id));
        }
        let slots = t.bundle_slots();
        for w in slots.windows(2) {
            assert!(forward_gap(w[0], w[1], 17) >= 1);
        }
        assert!(sf.audit(4).is_empty());
    }

    #[test]
    fn failure_at_hop_three_rolls_back() {
        let mut sf = Slotframe::new(8, 2).unwrap();
        // Node 2 (third hop's sender on the 5..0 chain) has no free slot.
        for s in 0..8 {
            sf.add_link_cell(s, 0, (NodeId(2), NodeId(9 + s)), None, false).ok();
        }
        let before = sf.snapshot_bytes();
        let mut eng = TrackEngine::new(32);
        let (id, acts) = eng.begin(&mut sf, chain_route(5), 1, 0).unwrap();
        let done = settle(&mut eng, &mut sf, acts);
        assert!(done.contains(&TrackAction::Failed(id)));
        assert_eq!(sf.snapshot_bytes(), before);
    }

    #[test]
    fn lost_request_released_by_hold() {
        let mut sf = Slotframe::new(13, 4).unwrap();
        let before = sf.snapshot_bytes();
        let mut eng = TrackEngine::new(52);
        let (id, acts) = eng.begin(&mut sf, chain_route(3), 1, 0).unwrap();
        assert!(sf.cells().any(|c| c.tentative));
        // Request never delivered.
        let out = eng.on_hold_expiry(&mut sf, NodeId(3), id);
        assert!(out.contains(&TrackAction::Failed(id)));
        assert!(acts.iter().any(|a| matches!(a, TrackAction::ArmHold { .. })));
        assert_eq!(sf.snapshot_bytes(), before);
    }

    #[test]
    fn release_is_full_inverse_and_not_repeatable() {
        let mut sf = Slotframe::new(13, 4).unwrap();
        let before = sf.snapshot_bytes();
        let mut eng = TrackEngine::new(52);
        let (id, acts) = eng.begin(&mut sf, chain_route(4), 1, 0).unwrap();
        settle(&mut eng, &mut sf, acts);
        let first = eng.get(id).unwrap().bundle_slots();
        eng.release_track(&mut sf, id).unwrap();
        assert_eq!(sf.snapshot_bytes(), before);
        assert_eq!(eng.release_track(&mut sf, id), Err(TrackError::AlreadyReleased(id)));
        let (id2, acts) = eng.begin(&mut sf, chain_route(4), 1, 0).unwrap();
        settle(&mut eng, &mut sf, acts);
        assert_eq!(eng.get(id2).unwrap().bundle_slots(), first);
    }

    #[test]
    fn request_size_accounting() {
        let sig = TrackSignal::Request(ReservationRequest {
            track: TrackId(1),
            requester: NodeId(5),
            destination: NodeId(0),
            route: chain_route(5),
            candidates: vec![(1, 0)],
            bandwidth: 1,
            hold_slots: 52,
        });
        assert_eq!(sig.encoded_len(), 3 + 2 + 2 + 1 + 2 + 1 + 12 + 1 + 3);
        assert!(sig.encoded_len() <= crate::mac::PAYLOAD_BUDGET_BYTES);
    }
}
