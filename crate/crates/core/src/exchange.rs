//! Control-plane messages between adjacent relays.
//!
//! Downstream messages travel with the data and are usable by the receiver
//! in the step they are sent. Upstream messages travel against the data and
//! arrive one control step later.
//!
//! Wire encoding, big-endian:
//!
//! ```text
//! sender u16 | step u32 | circuit count u8 | horizon u8 | entries u32 …
//! ```
//!
//! Entries are fixed-point values (×100, so 0.01 resolution) ordered by
//! trajectory, then circuit, then step. A downstream message carries the
//! outgoing-rate trajectories followed by the queue trajectories; an upstream
//! message carries the incoming-rate trajectories. Circuit ids are implied:
//! they are the circuits the two neighbours share, in id order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CircuitId, NetworkTopology, NodeId};
use crate::ocp::OcpSolution;

pub const HEADER_BYTES: usize = 8;
pub const ENTRY_BYTES: usize = 4;
/// Fixed-point scale of encoded entries.
pub const FIXED_POINT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Downstream,
    Upstream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamMsg {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub step: u64,
    pub circuits: Vec<CircuitId>,
    /// Planned outgoing rate per circuit, steps `0..N`.
    pub r_out: Vec<Vec<f64>>,
    /// Planned queue per circuit after each step.
    pub s_queue: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpstreamMsg {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub step: u64,
    pub circuits: Vec<CircuitId>,
    /// Planned incoming rate per circuit, steps `0..N`.
    pub r_in: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageLogEntry {
    pub direction: Direction,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub size: usize,
    pub send_step: u64,
    pub deliver_step: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("{what} {value} does not fit the header field")]
    HeaderOverflow { what: &'static str, value: u64 },
    #[error("message length {got} bytes, expected {want}")]
    Length { got: usize, want: usize },
    #[error("message names {got} circuits, receiver expects {want}")]
    CircuitCount { got: usize, want: usize },
    #[error("entry {0} is negative, not finite or out of range")]
    Entry(f64),
}

/// Rounds to the wire resolution, clamping solver round-off below zero.
pub fn quantize(v: f64) -> f64 {
    (v.max(0.0) * FIXED_POINT_SCALE).round() / FIXED_POINT_SCALE
}

fn quantize_all(t: &[f64]) -> Vec<f64> {
    t.iter().map(|v| quantize(*v)).collect()
}

fn horizon_of(traj: &[Vec<f64>]) -> usize {
    traj.first().map_or(0, Vec::len)
}

fn payload_size(trajectories: usize, circuits: usize, horizon: usize) -> usize {
    HEADER_BYTES + trajectories * circuits * horizon * ENTRY_BYTES
}

impl DownstreamMsg {
    pub fn horizon(&self) -> usize {
        horizon_of(&self.r_out)
    }

    pub fn wire_size(&self) -> usize {
        payload_size(2, self.circuits.len(), self.horizon())
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = header(self.sender, self.step, self.circuits.len(), self.horizon())?;
        for t in self.r_out.iter().chain(&self.s_queue) {
            put_entries(&mut out, t)?;
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], receiver: NodeId, circuits: &[CircuitId]) -> Result<Self, WireError> {
        let (sender, step, mut entries) = read(bytes, 2, circuits.len())?;
        let p = circuits.len();
        let s_queue = entries.split_off(p);
        Ok(Self {
            sender,
            receiver,
            step,
            circuits: circuits.to_vec(),
            r_out: entries,
            s_queue,
        })
    }
}

impl UpstreamMsg {
    pub fn horizon(&self) -> usize {
        horizon_of(&self.r_in)
    }

    pub fn wire_size(&self) -> usize {
        payload_size(1, self.circuits.len(), self.horizon())
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = header(self.sender, self.step, self.circuits.len(), self.horizon())?;
        for t in &self.r_in {
            put_entries(&mut out, t)?;
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], receiver: NodeId, circuits: &[CircuitId]) -> Result<Self, WireError> {
        let (sender, step, r_in) = read(bytes, 1, circuits.len())?;
        Ok(Self {
            sender,
            receiver,
            step,
            circuits: circuits.to_vec(),
            r_in,
        })
    }
}

fn header(sender: NodeId, step: u64, circuits: usize, horizon: usize) -> Result<Vec<u8>, WireError> {
    let step = u32::try_from(step).map_err(|_| WireError::HeaderOverflow { what: "step", value: step })?;
    let count = u8::try_from(circuits).map_err(|_| WireError::HeaderOverflow {
        what: "circuit count",
        value: circuits as u64,
    })?;
    let horizon = u8::try_from(horizon).map_err(|_| WireError::HeaderOverflow {
        what: "horizon",
        value: horizon as u64,
    })?;
    let mut out = Vec::with_capacity(HEADER_BYTES);
    out.extend_from_slice(&sender.0.to_be_bytes());
    out.extend_from_slice(&step.to_be_bytes());
    out.push(count);
    out.push(horizon);
    Ok(out)
}

fn put_entries(out: &mut Vec<u8>, t: &[f64]) -> Result<(), WireError> {
    for v in t {
        let scaled = (v * FIXED_POINT_SCALE).round();
        if !(scaled >= 0.0 && scaled <= u32::MAX as f64) {
            return Err(WireError::Entry(*v));
        }
        out.extend_from_slice(&(scaled as u32).to_be_bytes());
    }
    Ok(())
}

type Decoded = (NodeId, u64, Vec<Vec<f64>>);

fn read(bytes: &[u8], trajectories: usize, expected_circuits: usize) -> Result<Decoded, WireError> {
    if bytes.len() < HEADER_BYTES {
        return Err(WireError::Length {
            got: bytes.len(),
            want: HEADER_BYTES,
        });
    }
    let sender = NodeId(u16::from_be_bytes([bytes[0], bytes[1]]));
    let step = u32::from_be_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]) as u64;
    let p = bytes[6] as usize;
    let n = bytes[7] as usize;
    if p != expected_circuits {
        return Err(WireError::CircuitCount {
            got: p,
            want: expected_circuits,
        });
    }
    let want = payload_size(trajectories, p, n);
    if bytes.len() != want {
        return Err(WireError::Length { got: bytes.len(), want });
    }
    let mut chunks = bytes[HEADER_BYTES..]
        .chunks_exact(ENTRY_BYTES)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64 / FIXED_POINT_SCALE);
    let traj = (0..trajectories * p)
        .map(|_| chunks.by_ref().take(n).collect())
        .collect();
    Ok((sender, step, traj))
}

/// Builds the messages for every neighbour of `node` from its current plan:
/// one downstream message per successor relay and one upstream message per
/// predecessor relay, each restricted to the circuits the two share.
/// Circuits entering or leaving the overlay at `node` produce no message.
pub fn emit_messages(
    topology: &NetworkTopology<f64>,
    node: NodeId,
    plan: &OcpSolution<f64>,
    step: u64,
) -> (Vec<DownstreamMsg>, Vec<UpstreamMsg>) {
    let mut down: BTreeMap<NodeId, DownstreamMsg> = BTreeMap::new();
    let mut up: BTreeMap<NodeId, UpstreamMsg> = BTreeMap::new();
    for (idx, cid) in plan.circuits.iter().enumerate() {
        let circuit = &topology.circuits[cid.0];
        if let Some(succ) = circuit.successor(node) {
            let m = down.entry(succ).or_insert_with(|| DownstreamMsg {
                sender: node,
                receiver: succ,
                step,
                circuits: Vec::new(),
                r_out: Vec::new(),
                s_queue: Vec::new(),
            });
            m.circuits.push(*cid);
            m.r_out.push(quantize_all(&plan.r_out[idx]));
            m.s_queue.push(quantize_all(&plan.s_pred[idx][1..]));
        }
        if let Some(pred) = circuit.predecessor(node) {
            let m = up.entry(pred).or_insert_with(|| UpstreamMsg {
                sender: node,
                receiver: pred,
                step,
                circuits: Vec::new(),
                r_in: Vec::new(),
            });
            m.circuits.push(*cid);
            m.r_in.push(quantize_all(&plan.r_in[idx]));
        }
    }
    (down.into_values().collect(), up.into_values().collect())
}

/// Messages available to one node at one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inbox {
    pub downstream: Vec<DownstreamMsg>,
    pub upstream: Vec<UpstreamMsg>,
}

impl Inbox {
    pub fn is_empty(&self) -> bool {
        self.downstream.is_empty() && self.upstream.is_empty()
    }
}

/// In-flight control messages and the log of everything sent.
#[derive(Debug, Clone, Default)]
pub struct MessageBus {
    pending: BTreeMap<NodeId, Vec<(u64, Pending)>>,
    log: Vec<MessageLogEntry>,
}

#[derive(Debug, Clone)]
enum Pending {
    Down(DownstreamMsg),
    Up(UpstreamMsg),
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send_downstream(&mut self, msg: DownstreamMsg) {
        let deliver = msg.step;
        self.log.push(MessageLogEntry {
            direction: Direction::Downstream,
            sender: msg.sender,
            receiver: msg.receiver,
            size: msg.wire_size(),
            send_step: msg.step,
            deliver_step: deliver,
        });
        self.pending.entry(msg.receiver).or_default().push((deliver, Pending::Down(msg)));
    }

    pub fn send_upstream(&mut self, msg: UpstreamMsg) {
        let deliver = msg.step + 1;
        self.log.push(MessageLogEntry {
            direction: Direction::Upstream,
            sender: msg.sender,
            receiver: msg.receiver,
            size: msg.wire_size(),
            send_step: msg.step,
            deliver_step: deliver,
        });
        self.pending.entry(msg.receiver).or_default().push((deliver, Pending::Up(msg)));
    }

    /// Removes and returns the messages for `node` due by `step`, in send order.
    pub fn deliver(&mut self, node: NodeId, step: u64) -> Inbox {
        let mut inbox = Inbox::default();
        if let Some(queue) = self.pending.get_mut(&node) {
            let (due, later): (Vec<_>, Vec<_>) = queue.drain(..).partition(|(d, _)| *d <= step);
            *queue = later;
            for (_, m) in due {
                match m {
                    Pending::Down(m) => inbox.downstream.push(m),
                    Pending::Up(m) => inbox.upstream.push(m),
                }
            }
        }
        inbox
    }

    pub fn log(&self) -> &[MessageLogEntry] {
        &self.log
    }

    pub fn total_bytes(&self) -> usize {
        self.log.iter().map(|e| e.size).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Received {
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Latest neighbour trajectories per circuit, as seen by one node.
#[derive(Debug, Clone, Default)]
pub struct NeighborCache {
    predecessor: BTreeMap<CircuitId, Received>,
    successor: BTreeMap<CircuitId, Received>,
}

/// Drops the first `shift` entries and repeats the final one to keep the length.
pub fn shift_and_pad(t: &[f64], shift: usize) -> Vec<f64> {
    let n = t.len();
    let last = t.last().copied().unwrap_or(0.0);
    (0..n).map(|k| t.get(k + shift).copied().unwrap_or(last)).collect()
}

impl NeighborCache {
    pub fn absorb(&mut self, inbox: &Inbox) {
        for m in &inbox.downstream {
            for (i, c) in m.circuits.iter().enumerate() {
                self.predecessor.insert(
                    *c,
                    Received {
                        step: m.step,
                        first: m.r_out[i].clone(),
                        second: m.s_queue[i].clone(),
                    },
                );
            }
        }
        for m in &inbox.upstream {
            for (i, c) in m.circuits.iter().enumerate() {
                self.successor.insert(
                    *c,
                    Received {
                        step: m.step,
                        first: m.r_in[i].clone(),
                        second: Vec::new(),
                    },
                );
            }
        }
    }

    /// Predecessor's outgoing rate and queue, aligned to `step`. A message
    /// from the current step is used as is; older ones are shifted by their
    /// age. Zeros when nothing was ever received.
    pub fn predecessor_plan(&self, circuit: CircuitId, step: u64, horizon: usize) -> (Vec<f64>, Vec<f64>) {
        match self.predecessor.get(&circuit) {
            Some(r) if r.first.len() == horizon => {
                let age = step.saturating_sub(r.step) as usize;
                (shift_and_pad(&r.first, age), shift_and_pad(&r.second, age))
            }
            _ => (vec![0.0; horizon], vec![0.0; horizon]),
        }
    }

    /// Successor's incoming rate used as the outgoing cap at `step`. The plan
    /// sent in the previous step applies element by element; older plans are
    /// shifted by the extra delay. Zeros when nothing was ever received.
    pub fn successor_allowance(&self, circuit: CircuitId, step: u64, horizon: usize) -> Vec<f64> {
        match self.successor.get(&circuit) {
            Some(r) if r.first.len() == horizon => {
                let age = step.saturating_sub(r.step) as usize;
                shift_and_pad(&r.first, age.saturating_sub(1))
            }
            _ => vec![0.0; horizon],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::KktResiduals;
    use proptest::prelude::*;

    fn down(p: usize, n: usize) -> DownstreamMsg {
        DownstreamMsg {
            sender: NodeId(2),
            receiver: NodeId(3),
            step: 5,
            circuits: (0..p).map(CircuitId).collect(),
            r_out: (0..p).map(|c| (0..n).map(|k| quantize((c * 7 + k) as f64 * 1.37)).collect()).collect(),
            s_queue: (0..p).map(|c| (0..n).map(|k| quantize((c + k) as f64 * 0.51)).collect()).collect(),
        }
    }

    fn plan(circuits: Vec<CircuitId>, n: usize, rate: f64) -> OcpSolution<f64> {
        let p = circuits.len();
        OcpSolution {
            circuits,
            r_in: vec![vec![rate; n]; p],
            r_out: vec![vec![rate; n]; p],
            s_pred: vec![vec![1.0; n + 1]; p],
            delta_s: vec![vec![0.0; n + 1]; p],
            objective: 0.0,
            residuals: KktResiduals {
                stationarity: 0.0,
                primal: 0.0,
                dual: 0.0,
                complementarity: 0.0,
            },
            iterations: 0,
            x: Vec::new(),
        }
    }

    #[test]
    fn sizes_follow_the_encoding() {
        let m = down(3, 20);
        assert_eq!(m.wire_size(), 488);
        assert_eq!(m.encode().unwrap().len(), 488);
        let u = UpstreamMsg {
            sender: NodeId(3),
            receiver: NodeId(2),
            step: 1,
            circuits: vec![CircuitId(0)],
            r_in: vec![vec![12.5]],
        };
        assert_eq!(u.wire_size(), 12);
        assert_eq!(u.encode().unwrap().len(), 12);
        let (short, long) = (down(2, 10), down(2, 20));
        assert_eq!(long.wire_size() - HEADER_BYTES, 2 * (short.wire_size() - HEADER_BYTES));
    }

    #[test]
    fn zero_plan_gives_zero_rates() {
        let t = NetworkTopology::<f64>::shared_relay(750.0, 50.0, 0.04);
        let p = plan(t.circuits_at(NodeId(2)), 4, 0.0);
        let (d, u) = emit_messages(&t, NodeId(2), &p, 0);
        assert!(d.iter().all(|m| m.r_out.iter().flatten().all(|v| *v == 0.0)));
        assert_eq!(u.len(), 2);
    }

    #[test]
    fn middle_node_addresses_every_neighbour_once() {
        let t = NetworkTopology::<f64>::shared_relay(750.0, 50.0, 0.04);
        let p = plan(t.circuits_at(NodeId(2)), 4, 10.0);
        let (d, u) = emit_messages(&t, NodeId(2), &p, 9);
        let receivers: Vec<_> = d.iter().map(|m| m.receiver).collect();
        assert_eq!(receivers, vec![NodeId(3), NodeId(4), NodeId(5)]);
        let senders_to: Vec<_> = u.iter().map(|m| (m.receiver, m.circuits.clone())).collect();
        assert_eq!(
            senders_to,
            vec![(NodeId(0), vec![CircuitId(0), CircuitId(1)]), (NodeId(1), vec![CircuitId(2)])]
        );
        // Entry relays have no predecessor relay to address.
        let p0 = plan(t.circuits_at(NodeId(0)), 4, 10.0);
        let (d0, u0) = emit_messages(&t, NodeId(0), &p0, 9);
        assert_eq!(d0.len(), 1);
        assert!(u0.is_empty());
    }

    #[test]
    fn upstream_is_delayed_one_step() {
        let mut bus = MessageBus::new();
        bus.send_upstream(UpstreamMsg {
            sender: NodeId(3),
            receiver: NodeId(2),
            step: 5,
            circuits: vec![CircuitId(0)],
            r_in: vec![vec![1.0]],
        });
        bus.send_downstream(DownstreamMsg {
            step: 5,
            ..down(1, 1)
        });
        assert!(bus.deliver(NodeId(2), 5).is_empty());
        assert_eq!(bus.deliver(NodeId(3), 5).downstream.len(), 1);
        assert_eq!(bus.deliver(NodeId(2), 6).upstream.len(), 1);
        assert!(bus.deliver(NodeId(2), 7).is_empty());
        let log = bus.log();
        assert!(log.iter().all(|e| match e.direction {
            Direction::Upstream => e.deliver_step > e.send_step,
            Direction::Downstream => e.deliver_step >= e.send_step,
        }));
        assert_eq!(bus.total_bytes(), 12 + 16);
    }

    #[test]
    fn cache_falls_back_to_zeros_then_shifts() {
        let mut cache = NeighborCache::default();
        assert_eq!(cache.successor_allowance(CircuitId(0), 3, 3), vec![0.0; 3]);
        assert_eq!(cache.predecessor_plan(CircuitId(0), 3, 3), (vec![0.0; 3], vec![0.0; 3]));
        cache.absorb(&Inbox {
            downstream: vec![],
            upstream: vec![UpstreamMsg {
                sender: NodeId(3),
                receiver: NodeId(2),
                step: 4,
                circuits: vec![CircuitId(0)],
                r_in: vec![vec![1.0, 2.0, 3.0]],
            }],
        });
        assert_eq!(cache.successor_allowance(CircuitId(0), 5, 3), vec![1.0, 2.0, 3.0]);
        assert_eq!(cache.successor_allowance(CircuitId(0), 6, 3), vec![2.0, 3.0, 3.0]);
        assert_eq!(shift_and_pad(&[1.0, 2.0], 5), vec![2.0, 2.0]);
    }

    #[test]
    fn json_dump_names_fields() {
        let j = serde_json::to_string(&down(1, 2)).unwrap();
        assert!(j.contains("\"r_out\"") && j.contains("\"s_queue\""));
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            p in 1usize..5,
            n in 1usize..25,
            seed in prop::collection::vec(0.0f64..5000.0, 200),
            step in 0u64..1_000_000,
        ) {
            let take = |off: usize| -> Vec<Vec<f64>> {
                (0..p).map(|c| (0..n).map(|k| quantize(seed[(off + c * n + k) % seed.len()])).collect()).collect()
            };
            let m = DownstreamMsg {
                sender: NodeId(7),
                receiver: NodeId(8),
                step,
                circuits: (0..p).map(CircuitId).collect(),
                r_out: take(0),
                s_queue: take(101),
            };
            let bytes = m.encode().unwrap();
            prop_assert_eq!(bytes.len(), m.wire_size());
            let back = DownstreamMsg::decode(&bytes, NodeId(8), &m.circuits).unwrap();
            prop_assert_eq!(&back, &m);
            let u = UpstreamMsg { sender: NodeId(8), receiver: NodeId(7), step, circuits: m.circuits.clone(), r_in: take(37) };
            let back = UpstreamMsg::decode(&u.encode().unwrap(), NodeId(7), &u.circuits).unwrap();
            prop_assert_eq!(back, u);
        }
    }
}
