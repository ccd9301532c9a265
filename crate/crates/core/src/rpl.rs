//! Shortest-hop routing DAG rooted at the controller. Upward traffic follows
//! parents; downward traffic carries a source route from the root.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::kernel::Asn;
use crate::phy::{NodeId, Topology};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RplError {
    #[error("node {0} cannot reach the root")]
    Disconnected(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("the root has no parent")]
    RootHasNoParent,
    #[error("no live route to {0}")]
    RouteExpired(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    root: NodeId,
    parent: BTreeMap<NodeId, NodeId>,
    rank: BTreeMap<NodeId, u16>,
    route_lifetime_slots: u64,
    /// Non-default downward entries: destination -> (next hop, installed at).
    routes: BTreeMap<NodeId, (NodeId, Asn)>,
}

/// Breadth-first parent selection; among equally ranked candidates the
/// lowest id wins.
pub fn build_dag(topo: &Topology, root: NodeId) -> Result<Dag, RplError> {
    if !topo.contains(root) {
        return Err(RplError::UnknownNode(root));
    }
    let mut rank = BTreeMap::from([(root, 0u16)]);
    let mut parent = BTreeMap::new();
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        let r = rank[&n];
        // Neighbors are sorted, and the frontier is processed in rank then
        // id order, so the first parent claiming a node has the lowest id.
        for &m in topo.neighbors(n) {
            if let std::collections::btree_map::Entry::Vacant(e) = rank.entry(m) {
                e.insert(r + 1);
                parent.insert(m, n);
                queue.push_back(m);
            }
        }
    }
    if let Some(lost) = topo.nodes().find(|n| !rank.contains_key(n)) {
        return Err(RplError::Disconnected(lost));
    }
    Ok(Dag {
        root,
        parent,
        rank,
        route_lifetime_slots: u64::MAX,
        routes: BTreeMap::new(),
    })
}

impl Dag {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn with_route_lifetime(mut self, slots: u64) -> Self {
        self.route_lifetime_slots = slots;
        self
    }

    pub fn rank(&self, n: NodeId) -> Option<u16> {
        self.rank.get(&n).copied()
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent.get(&n).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.rank.keys().copied()
    }

    pub fn children(&self, n: NodeId) -> Vec<NodeId> {
        self.parent.iter().filter(|(_, &p)| p == n).map(|(&c, _)| c).collect()
    }

    pub fn max_rank(&self) -> u16 {
        self.rank.values().copied().max().unwrap_or(0)
    }

    /// Upward default route. Never expires.
    pub fn next_hop_default(&self, n: NodeId) -> Result<NodeId, RplError> {
        if n == self.root {
            return Err(RplError::RootHasNoParent);
        }
        self.parent(n).ok_or(RplError::UnknownNode(n))
    }

    /// Nodes from the root's first hop down to `dest`; empty for the root.
    pub fn compute_source_route(&self, dest: NodeId) -> Result<Vec<NodeId>, RplError> {
        if !self.rank.contains_key(&dest) {
            return Err(RplError::UnknownNode(dest));
        }
        let mut route = Vec::new();
        let mut n = dest;
        while n != self.root {
            route.push(n);
            n = self.parent[&n];
        }
        route.reverse();
        Ok(route)
    }

    /// Path from `n` up to the root, both ends included.
    pub fn path_to_root(&self, n: NodeId) -> Result<Vec<NodeId>, RplError> {
        let mut path = self.compute_source_route(n)?;
        path.reverse();
        path.push(self.root);
        Ok(path)
    }

    /// Whether `n` lies strictly below `ancestor`.
    pub fn is_descendant(&self, n: NodeId, ancestor: NodeId) -> bool {
        let mut cur = n;
        while let Some(p) = self.parent(cur) {
            if p == ancestor {
                return true;
            }
            cur = p;
        }
        false
    }

    /// Installs a non-default downward entry learned at `now`.
    pub fn install_route(&mut self, dest: NodeId, next_hop: NodeId, now: Asn) {
        self.routes.insert(dest, (next_hop, now));
    }

    /// Downward entry lookup; fails once the entry outlived the route
    /// lifetime.
    pub fn lookup_route(&self, dest: NodeId, now: Asn) -> Result<NodeId, RplError> {
        match self.routes.get(&dest) {
            Some(&(hop, at)) if now.saturating_sub(at) <= self.route_lifetime_slots => Ok(hop),
            Some(_) => Err(RplError::RouteExpired(dest)),
            None => Err(RplError::UnknownNode(dest)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::build_linear_topology;

    fn ids(v: &[u16]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn two_node_chain() {
        let t = build_linear_topology(1, 90.0, 100.0, 0.9).unwrap();
        let d = build_dag(&t, NodeId::ROOT).unwrap();
        assert_eq!(d.parent(NodeId(1)), Some(NodeId(0)));
        assert_eq!(d.rank(NodeId(1)), Some(1));
    }

    #[test]
    fn chain_ranks_match_bfs() {
        let t = build_linear_topology(5, 90.0, 100.0, 0.9).unwrap();
        let d = build_dag(&t, NodeId::ROOT).unwrap();
        // Independent oracle: on a strict chain the hop distance is the index.
        for i in 0..=5u16 {
            assert_eq!(d.rank(NodeId(i)), Some(i));
            assert_eq!(d.compute_source_route(NodeId(i)).unwrap().len(), usize::from(i));
        }
        assert_eq!(d.next_hop_default(NodeId(3)), Ok(NodeId(2)));
        assert_eq!(d.compute_source_route(NodeId(5)).unwrap(), ids(&[1, 2, 3, 4, 5]));
        assert_eq!(d.compute_source_route(NodeId(0)).unwrap(), vec![]);
        assert_eq!(d.compute_source_route(NodeId(1)).unwrap(), ids(&[1]));
        assert_eq!(d.next_hop_default(NodeId(0)), Err(RplError::RootHasNoParent));
        assert_eq!(d.path_to_root(NodeId(2)).unwrap(), ids(&[2, 1, 0]));
    }

    #[test]
    fn tie_breaks_on_lowest_id() {
        // Node 3 hears both 2 and 4, which both hear the root.
        let pos = BTreeMap::from([
            (NodeId(0), (0.0, 0.0)),
            (NodeId(1), (-80.0, 0.0)),
            (NodeId(2), (60.0, 60.0)),
            (NodeId(3), (120.0, 0.0)),
            (NodeId(4), (60.0, -60.0)),
        ]);
        let t = Topology::new(pos, 100.0, 0.9).unwrap();
        let d = build_dag(&t, NodeId::ROOT).unwrap();
        assert_eq!(d.rank(NodeId(2)), Some(1));
        assert_eq!(d.rank(NodeId(4)), Some(1));
        assert_eq!(d.parent(NodeId(3)), Some(NodeId(2)));
    }

    #[test]
    fn downward_entries_expire_default_does_not() {
        let t = build_linear_topology(3, 90.0, 100.0, 0.9).unwrap();
        let lifetime = 60_000; // 600 s at 10 ms
        let mut d = build_dag(&t, NodeId::ROOT).unwrap().with_route_lifetime(lifetime);
        d.install_route(NodeId(3), NodeId(1), 0);
        assert_eq!(d.lookup_route(NodeId(3), lifetime), Ok(NodeId(1)));
        assert_eq!(
            d.lookup_route(NodeId(3), lifetime + 1),
            Err(RplError::RouteExpired(NodeId(3)))
        );
        assert_eq!(d.next_hop_default(NodeId(3)), Ok(NodeId(2)));
    }

    #[test]
    fn descendant_relation() {
        let t = build_linear_topology(4, 90.0, 100.0, 0.9).unwrap();
        let d = build_dag(&t, NodeId::ROOT).unwrap();
        assert!(d.is_descendant(NodeId(4), NodeId(2)));
        assert!(!d.is_descendant(NodeId(2), NodeId(4)));
        assert_eq!(d.children(NodeId(2)), ids(&[3]));
    }
}
