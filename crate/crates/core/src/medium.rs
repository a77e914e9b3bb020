//! Shared medium: who hears whom, channel layout, carrier sense and
//! receiver-centric collision resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Time;
use crate::frame::{ChannelId, Frame, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MediumError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("node {0} is already transmitting")]
    AlreadyTransmitting(NodeId),
    #[error("adjacency is not symmetric between {0} and {1}")]
    Asymmetric(NodeId, NodeId),
    #[error("node {0} hears itself")]
    SelfLoop(NodeId),
    #[error("primary channel {primary} outside {count} channels")]
    BadPrimary { primary: ChannelId, count: usize },
}

/// Binary hearing relation between nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    hears: Vec<Vec<bool>>,
}

impl Topology {
    pub fn new(adjacency: Vec<Vec<bool>>) -> Result<Self, MediumError> {
        let n = adjacency.len();
        for (a, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(MediumError::UnknownNode(row.len().min(n)));
            }
            if row[a] {
                return Err(MediumError::SelfLoop(a));
            }
            for b in 0..n {
                if row[b] != adjacency[b][a] {
                    return Err(MediumError::Asymmetric(a, b));
                }
            }
        }
        Ok(Self { hears: adjacency })
    }

    pub fn from_links(n: usize, links: &[(NodeId, NodeId)]) -> Result<Self, MediumError> {
        let mut adj = vec![vec![false; n]; n];
        for &(a, b) in links {
            if a >= n {
                return Err(MediumError::UnknownNode(a));
            }
            if b >= n {
                return Err(MediumError::UnknownNode(b));
            }
            if a == b {
                return Err(MediumError::SelfLoop(a));
            }
            adj[a][b] = true;
            adj[b][a] = true;
        }
        Self::new(adj)
    }

    pub fn full_mesh(n: usize) -> Self {
        let adj = (0..n).map(|a| (0..n).map(|b| a != b).collect()).collect();
        Self { hears: adj }
    }

    /// Nodes in a line, each hearing only its immediate neighbours.
    pub fn chain(n: usize) -> Self {
        let links: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_links(n, &links).expect("chain links are valid")
    }

    pub fn len(&self) -> usize {
        self.hears.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hears.is_empty()
    }

    pub fn hears(&self, a: NodeId, b: NodeId) -> bool {
        self.hears.get(a).and_then(|r| r.get(b)).copied().unwrap_or(false)
    }

    pub fn neighbors(&self, a: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.hears[a].iter().enumerate().filter(|(_, h)| **h).map(|(b, _)| b)
    }

    /// Hop distance by breadth-first search; `None` if disconnected.
    pub fn hops(&self, a: NodeId, b: NodeId) -> Option<usize> {
        let n = self.len();
        let mut dist = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::from([a]);
        dist[a] = 0;
        while let Some(u) = queue.pop_front() {
            if u == b {
                return Some(dist[u]);
            }
            for v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        None
    }
}

/// Ordered 20 MHz channels with one primary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub count: usize,
    pub primary: ChannelId,
}

impl ChannelSet {
    pub fn new(count: usize, primary: ChannelId) -> Result<Self, MediumError> {
        if primary >= count {
            return Err(MediumError::BadPrimary { primary, count });
        }
        Ok(Self { count, primary })
    }

    pub fn contains(&self, ch: ChannelId) -> bool {
        ch < self.count
    }

    /// The aligned `width_mhz` block containing `anchor`, if it fits in the set.
    pub fn aligned_block(&self, anchor: ChannelId, width_mhz: u32) -> Option<Vec<ChannelId>> {
        let k = (width_mhz / 20) as usize;
        if k == 0 {
            return None;
        }
        let start = anchor / k * k;
        if start + k > self.count {
            return None;
        }
        Some((start..start + k).collect())
    }

    /// Bonding block of the given width around the primary.
    pub fn primary_block(&self, width_mhz: u32) -> Option<Vec<ChannelId>> {
        self.aligned_block(self.primary, width_mhz)
    }

    pub fn secondaries(&self) -> impl Iterator<Item = ChannelId> + '_ {
        (0..self.count).filter(move |c| *c != self.primary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Idle,
    Busy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InFlight {
    /// Equal to the frame id.
    pub tx_id: u64,
    pub frame: Frame,
    pub sender: NodeId,
    pub channels: Vec<ChannelId>,
    pub t_start: Time,
    pub t_end: Time,
}

impl InFlight {
    fn shares_channel(&self, other: &InFlight) -> bool {
        self.channels.iter().any(|c| other.channels.contains(c))
    }

    fn overlaps(&self, other: &InFlight) -> bool {
        self.t_start < other.t_end && other.t_start < self.t_end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reception {
    Delivered,
    /// Lost; holds the tx ids that destroyed it (the receiver's own frames included).
    Collided { colliders: Vec<u64> },
    NotHeard,
}

/// In-flight transmissions plus the recent history needed to resolve overlaps.
pub struct Medium {
    topology: Topology,
    channels: ChannelSet,
    active: Vec<InFlight>,
    finished: Vec<InFlight>,
}

impl Medium {
    pub fn new(topology: Topology, channels: ChannelSet) -> Self {
        Self { topology, channels, active: Vec::new(), finished: Vec::new() }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    fn check(&self, node: NodeId, ch: ChannelId) -> Result<(), MediumError> {
        if node >= self.topology.len() {
            return Err(MediumError::UnknownNode(node));
        }
        if !self.channels.contains(ch) {
            return Err(MediumError::UnknownChannel(ch));
        }
        Ok(())
    }

    /// Physical carrier sense. Busy iff a heard or own transmission covers `t` on `ch`.
    pub fn sense(&self, node: NodeId, ch: ChannelId, t: Time) -> Result<Sense, MediumError> {
        self.check(node, ch)?;
        let busy = self.active.iter().chain(self.finished.iter()).any(|f| {
            f.t_start <= t
                && t < f.t_end
                && f.channels.contains(&ch)
                && (f.sender == node || self.topology.hears(f.sender, node))
        });
        Ok(if busy { Sense::Busy } else { Sense::Idle })
    }

    pub fn is_transmitting(&self, node: NodeId) -> bool {
        self.active.iter().any(|f| f.sender == node)
    }

    pub fn active(&self) -> &[InFlight] {
        &self.active
    }

    pub fn begin_transmission(
        &mut self,
        sender: NodeId,
        frame: Frame,
        channels: Vec<ChannelId>,
        t: Time,
    ) -> Result<InFlight, MediumError> {
        if sender >= self.topology.len() {
            return Err(MediumError::UnknownNode(sender));
        }
        if let Some(&bad) = channels.iter().find(|c| !self.channels.contains(**c)) {
            return Err(MediumError::UnknownChannel(bad));
        }
        if self.is_transmitting(sender) {
            return Err(MediumError::AlreadyTransmitting(sender));
        }
        let t_end = t + frame.airtime();
        let tx = InFlight { tx_id: frame.id, frame, sender, channels, t_start: t, t_end };
        self.active.push(tx.clone());
        Ok(tx)
    }

    /// Moves a transmission from active to history. Call at its end time before resolving.
    pub fn end_transmission(&mut self, tx_id: u64) -> Option<InFlight> {
        let idx = self.active.iter().position(|f| f.tx_id == tx_id)?;
        let tx = self.active.remove(idx);
        let now = tx.t_end;
        self.finished.push(tx.clone());
        self.prune(now);
        Some(tx)
    }

    fn prune(&mut self, now: Time) {
        // Frames ending now are resolved after this call, so anything overlapping
        // them or any active frame must stay.
        let horizon = self
            .active
            .iter()
            .chain(self.finished.iter().filter(|f| f.t_end == now))
            .map(|f| f.t_start)
            .min()
            .unwrap_or(now);
        self.finished.retain(|f| f.t_end > horizon || f.t_end == now);
    }

    /// Receiver-centric outcome of `tx` at `receiver`, evaluated at its end.
    pub fn resolve_reception(&self, receiver: NodeId, tx: &InFlight) -> Reception {
        if !self.topology.hears(tx.sender, receiver) {
            return Reception::NotHeard;
        }
        let mut colliders: Vec<u64> = self
            .active
            .iter()
            .chain(self.finished.iter())
            .filter(|o| o.tx_id != tx.tx_id)
            .filter(|o| o.overlaps(tx) && o.shares_channel(tx))
            .filter(|o| o.sender == receiver || self.topology.hears(o.sender, receiver))
            .map(|o| o.tx_id)
            .collect();
        colliders.sort_unstable();
        colliders.dedup();
        if colliders.is_empty() {
            Reception::Delivered
        } else {
            Reception::Collided { colliders }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{Frame, FrameType, Modulation};

    fn rts(id: u64, src: NodeId, dst: NodeId) -> Frame {
        Frame::control(id, FrameType::Rts, src, Some(dst), 0)
    }

    #[test]
    fn chain_hears_only_neighbours() {
        let t = Topology::chain(4);
        assert!(t.hears(0, 1) && t.hears(1, 2) && t.hears(2, 3));
        assert!(!t.hears(0, 2) && !t.hears(0, 3) && !t.hears(1, 3) && !t.hears(0, 0));
        assert_eq!(t.hops(0, 3), Some(3));
    }

    #[test]
    fn adjacency_validation() {
        assert_eq!(
            Topology::new(vec![vec![false, true], vec![false, false]]),
            Err(MediumError::Asymmetric(0, 1))
        );
        assert_eq!(Topology::new(vec![vec![true]]), Err(MediumError::SelfLoop(0)));
    }

    #[test]
    fn sense_in_chain() {
        let mut m = Medium::new(Topology::chain(4), ChannelSet::new(2, 0).unwrap());
        assert_eq!(m.sense(1, 0, 0).unwrap(), Sense::Idle);
        m.begin_transmission(0, rts(1, 0, 1), vec![0], 0).unwrap();
        assert_eq!(m.sense(1, 0, 10).unwrap(), Sense::Busy);
        assert_eq!(m.sense(2, 0, 10).unwrap(), Sense::Idle);
        assert_eq!(m.sense(3, 0, 10).unwrap(), Sense::Idle);
        assert_eq!(m.sense(0, 0, 10).unwrap(), Sense::Busy);
        assert_eq!(m.sense(0, 1, 10).unwrap(), Sense::Idle);
        assert_eq!(m.sense(9, 0, 10), Err(MediumError::UnknownNode(9)));
        assert_eq!(m.sense(0, 5, 10), Err(MediumError::UnknownChannel(5)));
    }

    #[test]
    fn bonded_transmission_occupies_block() {
        let mut m = Medium::new(Topology::full_mesh(2), ChannelSet::new(4, 0).unwrap());
        let block = m.channels().primary_block(80).unwrap();
        let f = Frame::data(1, 0, Some(1), 1500, Modulation::Qam256, 80, 1, 0);
        let tx = m.begin_transmission(0, f, block, 0).unwrap();
        assert_eq!(tx.channels, vec![0, 1, 2, 3]);
        assert_eq!(tx.t_end, tx.t_start + tx.frame.airtime());
        let again = m.begin_transmission(0, rts(2, 0, 1), vec![0], 1);
        assert_eq!(again, Err(MediumError::AlreadyTransmitting(0)));
    }

    #[test]
    fn hidden_terminal_collision_at_common_receiver() {
        // B (1) sends CTS to A while D (3) sends RTS to C: both lost at C (2).
        let mut m = Medium::new(Topology::chain(4), ChannelSet::new(1, 0).unwrap());
        let cts = m.begin_transmission(1, Frame::control(1, FrameType::Cts, 1, Some(0), 0), vec![0], 100).unwrap();
        let rts = m.begin_transmission(3, rts(2, 3, 2), vec![0], 120).unwrap();
        m.end_transmission(cts.tx_id);
        assert!(matches!(m.resolve_reception(2, &cts), Reception::Collided { .. }));
        assert_eq!(m.resolve_reception(0, &cts), Reception::Delivered);
        m.end_transmission(rts.tx_id);
        assert_eq!(m.resolve_reception(2, &rts), Reception::Collided { colliders: vec![cts.tx_id] });
        assert_eq!(m.resolve_reception(0, &rts), Reception::NotHeard);
    }

    #[test]
    fn lone_frame_delivered() {
        let mut m = Medium::new(Topology::full_mesh(2), ChannelSet::new(1, 0).unwrap());
        let tx = m.begin_transmission(0, rts(1, 0, 1), vec![0], 0).unwrap();
        m.end_transmission(tx.tx_id);
        assert_eq!(m.resolve_reception(1, &tx), Reception::Delivered);
    }

    #[test]
    fn frames_on_disjoint_channels_do_not_collide() {
        let mut m = Medium::new(Topology::full_mesh(3), ChannelSet::new(2, 0).unwrap());
        let a = m.begin_transmission(0, rts(1, 0, 2), vec![0], 0).unwrap();
        let b = m.begin_transmission(1, rts(2, 1, 2), vec![1], 0).unwrap();
        m.end_transmission(a.tx_id);
        m.end_transmission(b.tx_id);
        assert_eq!(m.resolve_reception(2, &a), Reception::Delivered);
        assert_eq!(m.resolve_reception(2, &b), Reception::Delivered);
    }

    #[test]
    fn receiver_transmitting_loses_frame() {
        let mut m = Medium::new(Topology::full_mesh(2), ChannelSet::new(1, 0).unwrap());
        let a = m.begin_transmission(0, rts(1, 0, 1), vec![0], 0).unwrap();
        let b = m.begin_transmission(1, rts(2, 1, 0), vec![0], 10).unwrap();
        m.end_transmission(a.tx_id);
        assert_eq!(m.resolve_reception(1, &a), Reception::Collided { colliders: vec![b.tx_id] });
    }

    #[test]
    fn back_to_back_frames_do_not_overlap() {
        let mut m = Medium::new(Topology::full_mesh(3), ChannelSet::new(1, 0).unwrap());
        let a = m.begin_transmission(0, rts(1, 0, 2), vec![0], 0).unwrap();
        let end = a.t_end;
        m.end_transmission(a.tx_id);
        let b = m.begin_transmission(1, rts(2, 1, 2), vec![0], end).unwrap();
        assert_eq!(m.resolve_reception(2, &a), Reception::Delivered);
        assert_eq!(m.sense(2, 0, end).unwrap(), Sense::Busy);
        m.end_transmission(b.tx_id);
        assert_eq!(m.resolve_reception(2, &b), Reception::Delivered);
    }
}
