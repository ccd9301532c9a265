//! Node placement and the unit-disk radio model with a flat per-attempt
//! success probability.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::RngStream;

/// Node identifier. Node 0 hosts the controller and the DAG root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct NodeId(pub u16);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("transmission range must be positive, got {0}")]
    InvalidRange(f64),
    #[error("link quality must lie in [0, 1], got {0}")]
    InvalidLinkQuality(f64),
    #[error("hop count must be at least 1")]
    InvalidHopCount,
    #[error("spacing {spacing} m must lie in (0, {range}] m")]
    InvalidSpacing { spacing: f64, range: f64 },
    #[error("topology has no nodes")]
    Empty,
    #[error("node ids must be dense 0..n; missing {0}")]
    SparseIds(NodeId),
    #[error("topology is disconnected: node {0} unreachable from node 0")]
    Disconnected(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("source and destination are both {0}")]
    SelfLink(NodeId),
}

/// Static radio topology. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    positions: BTreeMap<NodeId, (f64, f64)>,
    tx_range: f64,
    link_quality: f64,
    neighbors: Vec<Vec<NodeId>>,
}

impl Topology {
    pub fn new(
        positions: BTreeMap<NodeId, (f64, f64)>,
        tx_range: f64,
        link_quality: f64,
    ) -> Result<Self, TopologyError> {
        if !tx_range.is_finite() || tx_range <= 0.0 {
            return Err(TopologyError::InvalidRange(tx_range));
        }
        if !(0.0..=1.0).contains(&link_quality) {
            return Err(TopologyError::InvalidLinkQuality(link_quality));
        }
        if positions.is_empty() {
            return Err(TopologyError::Empty);
        }
        for (i, id) in positions.keys().enumerate() {
            if id.index() != i {
                return Err(TopologyError::SparseIds(NodeId(i as u16)));
            }
        }
        let ids: Vec<NodeId> = positions.keys().copied().collect();
        let neighbors = ids
            .iter()
            .map(|&a| {
                ids.iter()
                    .copied()
                    .filter(|&b| b != a && dist(positions[&a], positions[&b]) <= tx_range)
                    .collect()
            })
            .collect();
        let topo = Topology {
            positions,
            tx_range,
            link_quality,
            neighbors,
        };
        if let Some(lost) = topo.unreachable_from(NodeId::ROOT).into_iter().next() {
            return Err(TopologyError::Disconnected(lost));
        }
        Ok(topo)
    }

    fn unreachable_from(&self, start: NodeId) -> Vec<NodeId> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &m in &self.neighbors[n.index()] {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        self.nodes().filter(|n| !seen.contains(n)).collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.positions.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.positions.contains_key(&n)
    }

    pub fn position(&self, n: NodeId) -> Option<(f64, f64)> {
        self.positions.get(&n).copied()
    }

    pub fn tx_range(&self) -> f64 {
        self.tx_range
    }

    pub fn link_quality(&self) -> f64 {
        self.link_quality
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> Result<f64, TopologyError> {
        let pa = self.position(a).ok_or(TopologyError::UnknownNode(a))?;
        let pb = self.position(b).ok_or(TopologyError::UnknownNode(b))?;
        Ok(dist(pa, pb))
    }

    /// Whether `a` and `b` are distinct nodes within radio range.
    pub fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        a != b
            && self
                .neighbors
                .get(a.index())
                .is_some_and(|ns| ns.binary_search(&b).is_ok())
    }

    /// Neighbors of `n`, ascending by id.
    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        self.neighbors.get(n.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of distinct in-range pairs.
    pub fn link_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// One transmission attempt from `src` to `dst`. Out of range never
    /// succeeds; in range succeeds with probability `link_quality`.
    pub fn attempt_delivery(&self, src: NodeId, dst: NodeId, rng: &mut RngStream) -> Result<bool, TopologyError> {
        if src == dst {
            return Err(TopologyError::SelfLink(src));
        }
        let d = self.distance(src, dst)?;
        if d > self.tx_range {
            return Ok(false);
        }
        Ok(rng.draw() < self.link_quality)
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// `hop_count + 1` nodes on the x axis, node 0 at the origin.
pub fn build_linear_topology(
    hop_count: u16,
    spacing: f64,
    tx_range: f64,
    link_quality: f64,
) -> Result<Topology, TopologyError> {
    if hop_count < 1 {
        return Err(TopologyError::InvalidHopCount);
    }
    if tx_range.is_nan() || tx_range <= 0.0 {
        return Err(TopologyError::InvalidRange(tx_range));
    }
    if spacing.is_nan() || spacing <= 0.0 || spacing > tx_range {
        return Err(TopologyError::InvalidSpacing {
            spacing,
            range: tx_range,
        });
    }
    let positions = (0..=hop_count)
        .map(|i| (NodeId(i), (f64::from(i) * spacing, 0.0)))
        .collect();
    Topology::new(positions, tx_range, link_quality)
}
