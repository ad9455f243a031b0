//! Overlay network domain types: relays, links, circuits and rate vectors.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Relay identifier. Sixteen bits so it fits the control-message header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Dense circuit index `0..p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CircuitId(pub usize);

impl fmt::Display for CircuitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec<T> {
    pub id: NodeId,
    /// Packets per second the relay can take in.
    pub capacity_in: T,
    /// Packets per second the relay can send out.
    pub capacity_out: T,
    /// Per-circuit queue limit in packets.
    pub queue_limit: T,
}

impl<T: Scalar> NodeSpec<T> {
    /// The single capacity used by the feasibility definition.
    pub fn capacity(&self) -> T {
        self.capacity_in.min(self.capacity_out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec<T> {
    pub from: NodeId,
    pub to: NodeId,
    /// Propagation delay in seconds.
    pub delay: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Circuit {
    pub id: CircuitId,
    /// Relays in data order, entry first.
    pub path: Vec<NodeId>,
}

impl Circuit {
    pub fn entry(&self) -> NodeId {
        self.path[0]
    }

    pub fn exit(&self) -> NodeId {
        *self.path.last().expect("validated circuit has a node")
    }

    pub fn position(&self, node: NodeId) -> Option<usize> {
        self.path.iter().position(|n| *n == node)
    }

    pub fn predecessor(&self, node: NodeId) -> Option<NodeId> {
        self.position(node)
            .and_then(|i| i.checked_sub(1))
            .map(|i| self.path[i])
    }

    pub fn successor(&self, node: NodeId) -> Option<NodeId> {
        self.position(node).and_then(|i| self.path.get(i + 1).copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node {node}: {what} must be positive")]
    NonPositive { node: NodeId, what: &'static str },
    #[error("link {from}->{to} references a missing node")]
    DanglingLink { from: NodeId, to: NodeId },
    #[error("link {from}->{to} has non-positive delay")]
    NonPositiveDelay { from: NodeId, to: NodeId },
    #[error("circuit ids must be dense 0..p; found {found} at position {position}")]
    CircuitIds { position: usize, found: CircuitId },
    #[error("circuit {0} has an empty path")]
    EmptyPath(CircuitId),
    #[error("circuit {circuit} references missing node {node}")]
    UnknownNode { circuit: CircuitId, node: NodeId },
    #[error("circuit {circuit} visits node {node} twice")]
    RepeatedNode { circuit: CircuitId, node: NodeId },
    #[error("circuit {circuit} hops {from}->{to} without a link")]
    MissingLink {
        circuit: CircuitId,
        from: NodeId,
        to: NodeId,
    },
}

/// Capacitated overlay graph with fixed-delay links and circuit paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology<T> {
    pub nodes: Vec<NodeSpec<T>>,
    pub links: Vec<LinkSpec<T>>,
    pub circuits: Vec<Circuit>,
}

impl<T: Scalar> NetworkTopology<T> {
    /// Checks every structural invariant and returns the topology unchanged,
    /// or the first violation found.
    pub fn validate(self) -> Result<Self, TopologyError> {
        self.check()?;
        Ok(self)
    }

    pub fn check(&self) -> Result<(), TopologyError> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                return Err(TopologyError::DuplicateNode(n.id));
            }
            for (v, what) in [
                (n.capacity_in, "capacity_in"),
                (n.capacity_out, "capacity_out"),
                (n.queue_limit, "queue_limit"),
            ] {
                if !(v > T::zero()) {
                    return Err(TopologyError::NonPositive { node: n.id, what });
                }
            }
        }
        for l in &self.links {
            if !seen.contains(&l.from) || !seen.contains(&l.to) {
                return Err(TopologyError::DanglingLink {
                    from: l.from,
                    to: l.to,
                });
            }
            if !(l.delay > T::zero()) {
                return Err(TopologyError::NonPositiveDelay {
                    from: l.from,
                    to: l.to,
                });
            }
        }
        for (i, c) in self.circuits.iter().enumerate() {
            if c.id.0 != i {
                return Err(TopologyError::CircuitIds {
                    position: i,
                    found: c.id,
                });
            }
            if c.path.is_empty() {
                return Err(TopologyError::EmptyPath(c.id));
            }
            let mut on_path = BTreeSet::new();
            for node in &c.path {
                if !seen.contains(node) {
                    return Err(TopologyError::UnknownNode {
                        circuit: c.id,
                        node: *node,
                    });
                }
                if !on_path.insert(*node) {
                    return Err(TopologyError::RepeatedNode {
                        circuit: c.id,
                        node: *node,
                    });
                }
            }
            for hop in c.path.windows(2) {
                if self.link(hop[0], hop[1]).is_none() {
                    return Err(TopologyError::MissingLink {
                        circuit: c.id,
                        from: hop[0],
                        to: hop[1],
                    });
                }
            }
        }
        Ok(())
    }

    pub fn num_circuits(&self) -> usize {
        self.circuits.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec<T>> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn link(&self, from: NodeId, to: NodeId) -> Option<&LinkSpec<T>> {
        self.links.iter().find(|l| l.from == from && l.to == to)
    }

    /// Circuits traversing `node`, in circuit-id order.
    pub fn circuits_at(&self, node: NodeId) -> Vec<CircuitId> {
        self.circuits
            .iter()
            .filter(|c| c.path.contains(&node))
            .map(|c| c.id)
            .collect()
    }

    /// Sum of link delays along a circuit.
    pub fn path_delay(&self, circuit: CircuitId) -> T {
        let c = &self.circuits[circuit.0];
        c.path.windows(2).fold(T::zero(), |acc, hop| {
            acc + self.link(hop[0], hop[1]).map_or(T::zero(), |l| l.delay)
        })
    }

    /// Six relays and three circuits that all cross relay `n2`. Circuits 0
    /// and 1 also share the entry `n0` and the link `n0 -> n2`.
    pub fn shared_relay(capacity: T, queue_limit: T, delay: T) -> Self {
        let nodes = (0..6)
            .map(|i| NodeSpec {
                id: NodeId(i),
                capacity_in: capacity,
                capacity_out: capacity,
                queue_limit,
            })
            .collect();
        let hops = [(0, 2), (1, 2), (2, 3), (2, 4), (2, 5)];
        let links = hops
            .iter()
            .map(|(a, b)| LinkSpec {
                from: NodeId(*a),
                to: NodeId(*b),
                delay,
            })
            .collect();
        let paths = [[0, 2, 3], [0, 2, 4], [1, 2, 5]];
        let circuits = paths
            .iter()
            .enumerate()
            .map(|(i, p)| Circuit {
                id: CircuitId(i),
                path: p.iter().map(|n| NodeId(*n)).collect(),
            })
            .collect();
        Self {
            nodes,
            links,
            circuits,
        }
    }
}

/// Per-circuit rates `r_i` in packets per second, indexed by circuit id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateVector<T> {
    pub rates: Vec<T>,
}

impl<T: Scalar> RateVector<T> {
    pub fn new(rates: Vec<T>) -> Self {
        Self { rates }
    }

    pub fn get(&self, c: CircuitId) -> T {
        self.rates[c.0]
    }

    /// Load on `node`: the sum of rates of circuits crossing it.
    pub fn load(&self, t: &NetworkTopology<T>, node: NodeId) -> T {
        t.circuits_at(node)
            .iter()
            .fold(T::zero(), |s, c| s + self.get(*c))
    }

    /// Largest absolute coordinate difference.
    pub fn linf_distance(&self, other: &Self) -> T {
        self.rates
            .iter()
            .zip(&other.rates)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
}

/// Feasibility: nonnegative rates and no node loaded beyond `min(C_in, C_out)`.
pub fn is_feasible<T: Scalar>(r: &RateVector<T>, t: &NetworkTopology<T>) -> bool {
    assert_eq!(r.rates.len(), t.num_circuits(), "rate vector must cover every circuit");
    r.rates.iter().all(|v| *v >= T::zero())
        && t.nodes.iter().all(|n| r.load(t, n.id) <= n.capacity())
}

/// Queue levels at one relay, aligned with `circuits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState<T> {
    pub node: NodeId,
    pub circuits: Vec<CircuitId>,
    /// Packets queued per circuit.
    pub queues: Vec<T>,
    /// Predecessor-queue offsets per circuit.
    pub offsets: Vec<T>,
}

impl<T: Scalar> NodeState<T> {
    pub fn empty(node: NodeId, circuits: Vec<CircuitId>) -> Self {
        let n = circuits.len();
        Self {
            node,
            circuits,
            queues: vec![T::zero(); n],
            offsets: vec![T::zero(); n],
        }
    }
}

/// Total data backlog: every queued packet at every relay.
pub fn total_backlog<T: Scalar>(states: &[NodeState<T>]) -> T {
    states
        .iter()
        .flat_map(|s| s.queues.iter())
        .fold(T::zero(), |acc, q| acc + q.max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(cap: f64, circuits: usize) -> NetworkTopology<f64> {
        NetworkTopology {
            nodes: vec![NodeSpec {
                id: NodeId(0),
                capacity_in: cap,
                capacity_out: cap,
                queue_limit: 50.0,
            }],
            links: vec![],
            circuits: (0..circuits)
                .map(|i| Circuit {
                    id: CircuitId(i),
                    path: vec![NodeId(0)],
                })
                .collect(),
        }
    }

    #[test]
    fn shared_relay_is_valid() {
        let t = NetworkTopology::<f64>::shared_relay(750.0, 50.0, 0.04);
        let t = t.validate().unwrap();
        assert_eq!(t.circuits_at(NodeId(2)).len(), 3);
        assert_eq!(t.circuits_at(NodeId(0)), vec![CircuitId(0), CircuitId(1)]);
        assert!((t.path_delay(CircuitId(2)) - 0.08).abs() < 1e-12);
    }

    #[test]
    fn smallest_instance_is_valid() {
        assert!(single(10.0, 1).validate().is_ok());
    }

    #[test]
    fn dangling_circuit_node_is_reported() {
        let mut t = single(10.0, 1);
        t.circuits[0].path.push(NodeId(7));
        assert_eq!(
            t.validate(),
            Err(TopologyError::UnknownNode {
                circuit: CircuitId(0),
                node: NodeId(7)
            })
        );
    }

    #[test]
    fn missing_hop_link_is_reported() {
        let mut t = NetworkTopology::shared_relay(10.0, 5.0, 0.04);
        t.links.retain(|l| !(l.from == NodeId(2) && l.to == NodeId(5)));
        assert!(matches!(t.check(), Err(TopologyError::MissingLink { .. })));
    }

    #[test]
    fn non_positive_capacity_is_reported() {
        let mut t = single(10.0, 1);
        t.nodes[0].capacity_out = 0.0;
        assert!(matches!(t.check(), Err(TopologyError::NonPositive { what: "capacity_out", .. })));
    }

    #[test]
    fn feasibility_boundary_and_violations() {
        let t = single(10.0, 2);
        assert!(is_feasible(&RateVector::new(vec![5.0, 5.0]), &t));
        assert!(!is_feasible(&RateVector::new(vec![6.0, 5.0]), &t));
        assert!(!is_feasible(&RateVector::new(vec![-1.0, 2.0]), &t));
    }

    #[test]
    fn feasibility_uses_smaller_capacity() {
        let mut t = single(10.0, 1);
        t.nodes[0].capacity_out = 4.0;
        assert!(!is_feasible(&RateVector::new(vec![5.0]), &t));
    }

    #[test]
    fn backlog_sums_all_queues() {
        assert_eq!(total_backlog::<f64>(&[]), 0.0);
        let a = NodeState {
            node: NodeId(0),
            circuits: vec![CircuitId(0), CircuitId(1)],
            queues: vec![3.0, 2.0],
            offsets: vec![0.0, 0.0],
        };
        let b = NodeState {
            node: NodeId(1),
            circuits: vec![CircuitId(0), CircuitId(1)],
            queues: vec![0.0, 7.0],
            offsets: vec![0.0, 0.0],
        };
        assert_eq!(total_backlog(&[a, b]), 12.0);
    }

    proptest! {
        #[test]
        fn feasibility_is_monotone(
            caps in prop::collection::vec(1.0f64..100.0, 3),
            fracs in prop::collection::vec(0.0f64..1.0, 3),
            shrink in prop::collection::vec(0.0f64..1.0, 3),
        ) {
            let t = NetworkTopology::shared_relay(caps[0], 10.0, 0.04);
            // Scale a random direction onto the feasible set.
            let raw = RateVector::new(fracs.clone());
            let worst = t.nodes.iter().map(|n| raw.load(&t, n.id) / n.capacity()).fold(0.0, f64::max);
            let scale = if worst > 0.0 { 1.0 / worst } else { 1.0 };
            let r = RateVector::new(fracs.iter().map(|f| f * scale).collect());
            prop_assume!(is_feasible(&r, &t));
            let lower = RateVector::new(r.rates.iter().zip(&shrink).map(|(v, s)| v * s).collect());
            prop_assert!(is_feasible(&lower, &t));
        }
    }
}
