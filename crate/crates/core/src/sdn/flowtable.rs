//! Protocol-oblivious flowtable: byte-range matches over the abstract header
//! image, lifetimers, and least-recently-hit eviction.

use crate::phy::NodeId;

/// `(header[offset..offset+len] & mask) == (value & mask)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Match {
    pub offset: u8,
    pub value: Vec<u8>,
    pub mask: Vec<u8>,
}

impl Match {
    pub fn exact(offset: usize, value: &[u8]) -> Self {
        Match {
            offset: offset as u8,
            value: value.to_vec(),
            mask: vec![0xff; value.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn matches(&self, header: &[u8]) -> bool {
        let start = usize::from(self.offset);
        let Some(bytes) = header.get(start..start + self.len()) else {
            return false;
        };
        bytes
            .iter()
            .zip(&self.value)
            .zip(&self.mask)
            .all(|((h, v), m)| h & m == v & m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Forward(NodeId),
    Drop,
    SrhPush(Vec<NodeId>),
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub id: u16,
    pub matches: Vec<Match>,
    pub action: Action,
    pub lifetime_s: u16,
    pub last_refresh_ms: u64,
    pub hit_count: u64,
    pub last_hit_ms: u64,
    /// Hits since the last flow-stats report.
    pub recent_hits: u32,
}

impl FlowEntry {
    pub fn new(id: u16, matches: Vec<Match>, action: Action, lifetime_s: u16) -> Self {
        FlowEntry {
            id,
            matches,
            action,
            lifetime_s,
            last_refresh_ms: 0,
            hit_count: 0,
            last_hit_ms: 0,
            recent_hits: 0,
        }
    }

    pub fn is_live(&self, now_ms: u64) -> bool {
        now_ms.saturating_sub(self.last_refresh_ms) <= u64::from(self.lifetime_s) * 1000
    }

    pub fn matches(&self, header: &[u8]) -> bool {
        self.matches.iter().all(|m| m.matches(header))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    capacity: usize,
    entries: Vec<FlowEntry>,
    blacklist: Vec<Match>,
    evictions: u64,
}

impl FlowTable {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "flowtable needs room for one entry");
        FlowTable {
            capacity,
            entries: Vec::new(),
            blacklist: Vec::new(),
            evictions: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    pub fn add_blacklist(&mut self, m: Match) {
        self.blacklist.push(m);
    }

    pub fn is_blacklisted(&self, header: &[u8]) -> bool {
        self.blacklist.iter().any(|m| m.matches(header))
    }

    /// First live matching entry; counts the hit.
    pub fn lookup(&mut self, header: &[u8], now_ms: u64) -> Option<&FlowEntry> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.is_live(now_ms) && e.matches(header))?;
        e.hit_count += 1;
        e.recent_hits += 1;
        e.last_hit_ms = now_ms;
        Some(e)
    }

    /// Inserts `entry` stamped at `now_ms`, replacing one with the same id.
    /// When full, dead entries go first, then the least recently hit.
    pub fn insert(&mut self, mut entry: FlowEntry, now_ms: u64) -> Option<FlowEntry> {
        entry.last_refresh_ms = now_ms;
        entry.last_hit_ms = now_ms;
        if let Some(slot) = self.entries.iter_mut().find(|e| e.id == entry.id) {
            *slot = entry;
            return None;
        }
        self.entries.retain(|e| e.is_live(now_ms));
        let mut evicted = None;
        if self.entries.len() >= self.capacity {
            let victim = self
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(i, e)| (e.last_hit_ms, *i))
                .map(|(i, _)| i)
                .expect("table is full");
            evicted = Some(self.entries.remove(victim));
            self.evictions += 1;
        }
        self.entries.push(entry);
        evicted
    }

    /// Resets the lifetimer of a live entry. Returns false when the id is
    /// absent or already dead.
    pub fn refresh(&mut self, id: u16, now_ms: u64) -> bool {
        match self.entries.iter_mut().find(|e| e.id == id) {
            Some(e) if e.is_live(now_ms) => {
                e.last_refresh_ms = now_ms;
                true
            }
            _ => false,
        }
    }

    /// Live entries with their hit counts since the previous call.
    pub fn take_recent_hits(&mut self, now_ms: u64) -> Vec<(u16, u32)> {
        self.entries
            .iter_mut()
            .filter(|e| e.is_live(now_ms))
            .map(|e| (e.id, std::mem::take(&mut e.recent_hits)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{header, FlowClass};

    fn to_dst(id: u16, dst: u16, action: Action) -> FlowEntry {
        FlowEntry::new(id, vec![Match::exact(header::DST, &dst.to_be_bytes())], action, 60)
    }

    fn app_header(dst: u16) -> Vec<u8> {
        header::build(FlowClass::App, NodeId(4), NodeId(dst), 1, 40)
    }

    #[test]
    fn masked_match() {
        let h = app_header(0x0102);
        let m = Match {
            offset: header::DST as u8,
            value: vec![0x01, 0xff],
            mask: vec![0xff, 0x00],
        };
        assert!(m.matches(&h));
        assert!(!Match::exact(header::DST, &[0x01, 0x03]).matches(&h));
        assert!(!Match::exact(39, &[0, 0]).matches(&h));
    }

    #[test]
    fn blacklist_checked_independently() {
        let mut t = FlowTable::new(4);
        t.add_blacklist(Match::exact(header::CLASS, &[FlowClass::Rpl.code()]));
        let rpl = header::build(FlowClass::Rpl, NodeId(1), NodeId(0), 0, 40);
        assert!(t.is_blacklisted(&rpl));
        assert!(!t.is_blacklisted(&app_header(0)));
    }

    #[test]
    fn entry_dies_after_lifetime() {
        let mut t = FlowTable::new(4);
        t.insert(to_dst(1, 0, Action::Forward(NodeId(3))), 0);
        assert!(t.lookup(&app_header(0), 60_000).is_some());
        assert!(t.lookup(&app_header(0), 61_000).is_none());
    }

    #[test]
    fn hits_counted_once_per_lookup() {
        let mut t = FlowTable::new(4);
        t.insert(to_dst(1, 0, Action::Forward(NodeId(3))), 0);
        for i in 0..3 {
            t.lookup(&app_header(0), i);
        }
        assert_eq!(t.entries()[0].hit_count, 3);
        assert_eq!(t.take_recent_hits(5), vec![(1, 3)]);
        assert_eq!(t.take_recent_hits(5), vec![(1, 0)]);
    }

    #[test]
    fn refresh_extends_life() {
        let mut t = FlowTable::new(4);
        t.insert(to_dst(1, 0, Action::Forward(NodeId(3))), 0);
        assert!(t.refresh(1, 59_000));
        assert!(t.lookup(&app_header(0), 100_000).is_some());
        assert!(!t.refresh(9, 100_000));
        assert!(!t.refresh(1, 200_000));
    }

    #[test]
    fn full_table_evicts_least_recently_hit() {
        let mut t = FlowTable::new(3);
        for id in 0..3 {
            t.insert(to_dst(id, id + 10, Action::Drop), u64::from(id));
        }
        t.lookup(&app_header(10), 100);
        t.lookup(&app_header(12), 101);
        let gone = t.insert(to_dst(7, 20, Action::Drop), 200).unwrap();
        assert_eq!(gone.id, 1);
        assert_eq!(t.len(), 3);
        assert_eq!(t.evictions(), 1);
    }
}
