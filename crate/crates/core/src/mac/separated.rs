//! Plane boundaries and the reservation scheduler used by the separated MAC.
//!
//! The control plane keeps contention; the data plane only transmits inside
//! reservations from a conflict-free table kept by the scheduling node.

use serde::{Deserialize, Serialize};

use crate::engine::Time;
use crate::frame::{airtime, ChannelId, Modulation, NodeId, BANDWIDTHS_MHZ};
use crate::medium::ChannelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryMode {
    ChannelSplit { control_channel: ChannelId },
    TimeSplit { epoch_us: Time, cp_window_us: Time },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaneRegion {
    CpRegion,
    DpRegion,
}

impl BoundaryMode {
    pub fn is_valid(&self, channels: &ChannelSet) -> bool {
        match *self {
            BoundaryMode::ChannelSplit { control_channel } => {
                channels.contains(control_channel) && channels.count >= 2
            }
            BoundaryMode::TimeSplit { epoch_us, cp_window_us } => 0 < cp_window_us && cp_window_us < epoch_us,
        }
    }

    /// Channels the data plane may use.
    pub fn data_channels(&self, channels: &ChannelSet) -> Vec<ChannelId> {
        match *self {
            BoundaryMode::ChannelSplit { control_channel } => {
                (0..channels.count).filter(|c| *c != control_channel).collect()
            }
            BoundaryMode::TimeSplit { .. } => (0..channels.count).collect(),
        }
    }

    /// Channel on which control-plane contention runs.
    pub fn contention_channel(&self, channels: &ChannelSet) -> ChannelId {
        match *self {
            BoundaryMode::ChannelSplit { control_channel } => control_channel,
            BoundaryMode::TimeSplit { .. } => channels.primary,
        }
    }

    /// Data-plane window of the epoch containing `t`.
    pub fn dp_window_at(&self, t: Time) -> (Time, Time) {
        match *self {
            BoundaryMode::ChannelSplit { .. } => (0, Time::MAX),
            BoundaryMode::TimeSplit { epoch_us, cp_window_us } => {
                let base = t / epoch_us * epoch_us;
                (base + cp_window_us, base + epoch_us)
            }
        }
    }

    /// Control-plane window containing `t`, or the next one.
    pub fn cp_window_at(&self, t: Time) -> (Time, Time) {
        match *self {
            BoundaryMode::ChannelSplit { .. } => (0, Time::MAX),
            BoundaryMode::TimeSplit { epoch_us, cp_window_us } => {
                let base = t / epoch_us * epoch_us;
                if t < base + cp_window_us {
                    (base, base + cp_window_us)
                } else {
                    (base + epoch_us, base + epoch_us + cp_window_us)
                }
            }
        }
    }

    pub fn dp_window_len(&self) -> Option<Time> {
        match *self {
            BoundaryMode::ChannelSplit { .. } => None,
            BoundaryMode::TimeSplit { epoch_us, cp_window_us } => Some(epoch_us - cp_window_us),
        }
    }
}

pub fn plane_region(t: Time, channel: ChannelId, boundary: &BoundaryMode) -> PlaneRegion {
    let cp = match *boundary {
        BoundaryMode::ChannelSplit { control_channel } => channel == control_channel,
        BoundaryMode::TimeSplit { epoch_us, cp_window_us } => t % epoch_us < cp_window_us,
    };
    if cp {
        PlaneRegion::CpRegion
    } else {
        PlaneRegion::DpRegion
    }
}

/// Airtime of a scheduled data burst: each frame back to back with one SIFS between.
pub fn burst_duration(sizes: &[u32], mcs: Modulation, width_mhz: u32, nss: u32, sifs_us: Time) -> Time {
    let frames: Time = sizes.iter().map(|s| airtime(*s, mcs, width_mhz, nss).expect("valid width")).sum();
    frames + sifs_us * sizes.len().saturating_sub(1) as Time
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub grant_id: u64,
    pub src: NodeId,
    /// `None` for broadcast standing reservations (beacons).
    pub dst: Option<NodeId>,
    pub channels: Vec<ChannelId>,
    pub t_start: Time,
    pub t_end: Time,
    pub kind: ReservationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationKind {
    Granted,
    Beacon,
    ServicePeriod,
}

impl Reservation {
    pub fn width_mhz(&self) -> u32 {
        self.channels.len() as u32 * 20
    }

    pub fn conflicts(&self, start: Time, end: Time, channels: &[ChannelId]) -> bool {
        self.t_start < end && start < self.t_end && self.channels.iter().any(|c| channels.contains(c))
    }

    /// Whether `node` sends or receives in this reservation.
    pub fn involves(&self, node: NodeId) -> bool {
        self.src == node || self.dst == Some(node)
    }
}

/// A reservation request as decoded by the scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservationRequest {
    pub src: NodeId,
    pub dst: NodeId,
    pub sizes: Vec<u32>,
    pub mcs: Modulation,
    pub nss: u32,
    pub max_width_mhz: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GrantOutcome {
    Granted(Reservation),
    Rejected,
}

/// Conflict-free reservation table owned by the scheduling node.
#[derive(Debug, Clone)]
pub struct Scheduler {
    boundary: BoundaryMode,
    channels: ChannelSet,
    data_channels: Vec<ChannelId>,
    horizon_us: Time,
    sifs_us: Time,
    table: Vec<Reservation>,
    next_grant: u64,
}

impl Scheduler {
    pub fn new(
        boundary: BoundaryMode,
        channels: ChannelSet,
        excluded: &[ChannelId],
        horizon_us: Time,
        sifs_us: Time,
    ) -> Self {
        let data_channels =
            boundary.data_channels(&channels).into_iter().filter(|c| !excluded.contains(c)).collect();
        Self { boundary, channels, data_channels, horizon_us, sifs_us, table: Vec::new(), next_grant: 0 }
    }

    pub fn boundary(&self) -> &BoundaryMode {
        &self.boundary
    }

    pub fn data_channels(&self) -> &[ChannelId] {
        &self.data_channels
    }

    pub fn table(&self) -> &[Reservation] {
        &self.table
    }

    pub fn get(&self, grant_id: u64) -> Option<&Reservation> {
        self.table.iter().find(|r| r.grant_id == grant_id)
    }

    /// Drops reservations that ended before `t`.
    pub fn prune(&mut self, t: Time) {
        self.table.retain(|r| r.t_end >= t);
    }

    /// Aligned blocks of `width` made only of data channels.
    pub fn blocks(&self, width_mhz: u32) -> Vec<Vec<ChannelId>> {
        let k = (width_mhz / 20) as usize;
        let mut out = Vec::new();
        let mut start = 0;
        while start + k <= self.channels.count {
            let block: Vec<_> = (start..start + k).collect();
            if block.iter().all(|c| self.data_channels.contains(c)) {
                out.push(block);
            }
            start += k;
        }
        out
    }

    /// Earliest start >= `earliest` for `duration` on `block`, inside the horizon, that
    /// keeps each of `nodes` in at most one reservation at a time.
    fn earliest_fit(&self, block: &[ChannelId], nodes: &[NodeId], earliest: Time, duration: Time) -> Option<Time> {
        let limit = earliest.saturating_add(self.horizon_us);
        if let Some(len) = self.boundary.dp_window_len() {
            if duration > len {
                return None;
            }
        }
        let mut candidates: Vec<Time> = vec![earliest];
        candidates.extend(self.table.iter().filter(|r| r.t_end > earliest).map(|r| r.t_end));
        if let BoundaryMode::TimeSplit { epoch_us, .. } = self.boundary {
            let mut t = earliest;
            while t <= limit {
                let (ws, _) = self.boundary.dp_window_at(t);
                if ws >= earliest {
                    candidates.push(ws);
                }
                t = (t / epoch_us + 1) * epoch_us;
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        for mut s in candidates {
            if s > limit {
                break;
            }
            if let BoundaryMode::TimeSplit { .. } = self.boundary {
                let (ws, we) = self.boundary.dp_window_at(s);
                if s < ws {
                    s = ws;
                }
                if s + duration > we {
                    continue;
                }
            }
            if s > limit {
                continue;
            }
            let clash = self.table.iter().any(|r| {
                r.conflicts(s, s + duration, block)
                    || (r.t_start < s + duration && s < r.t_end && nodes.iter().any(|n| r.involves(*n)))
            });
            if !clash {
                return Some(s);
            }
        }
        None
    }

    /// First-fit earliest interval on the widest admissible block.
    pub fn grant_schedule(&mut self, req: &ReservationRequest, earliest: Time) -> GrantOutcome {
        match self.plan(req, &req.sizes, earliest) {
            Some((s, block, duration)) => {
                GrantOutcome::Granted(self.insert(req.src, Some(req.dst), block, s, s + duration, ReservationKind::Granted))
            }
            None => GrantOutcome::Rejected,
        }
    }

    /// Widest block first, then earliest start, then lowest channel.
    fn plan(&self, req: &ReservationRequest, sizes: &[u32], earliest: Time) -> Option<(Time, Vec<ChannelId>, Time)> {
        let widths: Vec<u32> =
            BANDWIDTHS_MHZ.iter().rev().copied().filter(|w| *w <= req.max_width_mhz).collect();
        for w in widths {
            let duration = burst_duration(sizes, req.mcs, w, req.nss, self.sifs_us);
            let best = self
                .blocks(w)
                .into_iter()
                .filter_map(|b| self.earliest_fit(&b, &[req.src, req.dst], earliest, duration).map(|s| (s, b)))
                .min_by_key(|(s, b)| (*s, b[0]));
            if let Some((s, block)) = best {
                return Some((s, block, duration));
            }
        }
        None
    }

    /// Grants the longest prefix of the requested burst that fits within the
    /// horizon. Returns the reservation and the number of frames it covers.
    pub fn grant_prefix(&mut self, req: &ReservationRequest, earliest: Time) -> Option<(Reservation, usize)> {
        // A shorter burst fits wherever a longer one does, so fitting is monotone in length.
        let n = req.sizes.len();
        let k = if self.plan(req, &req.sizes, earliest).is_some() {
            n
        } else {
            let (mut lo, mut hi) = (0usize, n);
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if self.plan(req, &req.sizes[..mid], earliest).is_some() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        if k == 0 {
            return None;
        }
        let (s, block, duration) = self.plan(req, &req.sizes[..k], earliest)?;
        Some((self.insert(req.src, Some(req.dst), block, s, s + duration, ReservationKind::Granted), k))
    }

    /// Places a standing reservation at the first conflict-free instant >= `at`.
    pub fn standing(
        &mut self,
        src: NodeId,
        dst: Option<NodeId>,
        channels: Vec<ChannelId>,
        at: Time,
        duration: Time,
        kind: ReservationKind,
    ) -> Option<Reservation> {
        let s = self.earliest_fit(&channels, &[src], at, duration)?;
        Some(self.insert(src, dst, channels, s, s + duration, kind))
    }

    /// Records a fixed interval without searching (service periods are not movable).
    pub fn pinned(
        &mut self,
        src: NodeId,
        dst: Option<NodeId>,
        channels: Vec<ChannelId>,
        t_start: Time,
        t_end: Time,
        kind: ReservationKind,
    ) -> Reservation {
        self.insert(src, dst, channels, t_start, t_end, kind)
    }

    fn insert(
        &mut self,
        src: NodeId,
        dst: Option<NodeId>,
        channels: Vec<ChannelId>,
        t_start: Time,
        t_end: Time,
        kind: ReservationKind,
    ) -> Reservation {
        let res = Reservation { grant_id: self.next_grant, src, dst, channels, t_start, t_end, kind };
        self.next_grant += 1;
        self.table.push(res.clone());
        res
    }

    /// Reservations in which `node` transmits, overlapping [from, to).
    pub fn sender_busy(&self, node: NodeId, from: Time, to: Time) -> Option<&Reservation> {
        self.table
            .iter()
            .filter(|r| r.src == node && r.t_start < to && from < r.t_end)
            .min_by_key(|r| r.t_start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIFS: Time = 16;

    fn req(src: NodeId, bytes: u32, width: u32) -> ReservationRequest {
        ReservationRequest { src, dst: src + 10, sizes: vec![bytes], mcs: Modulation::Qam256, nss: 1, max_width_mhz: width }
    }

    #[test]
    fn region_examples() {
        let cs = BoundaryMode::ChannelSplit { control_channel: 0 };
        assert_eq!(plane_region(12345, 0, &cs), PlaneRegion::CpRegion);
        assert_eq!(plane_region(12345, 3, &cs), PlaneRegion::DpRegion);
        let ts = BoundaryMode::TimeSplit { epoch_us: 10_000, cp_window_us: 2_000 };
        assert_eq!(plane_region(1500, 0, &ts), PlaneRegion::CpRegion);
        assert_eq!(plane_region(2000, 0, &ts), PlaneRegion::DpRegion);
        assert_eq!(plane_region(10_001, 0, &ts), PlaneRegion::CpRegion);
    }

    #[test]
    fn boundary_validity() {
        let ch = ChannelSet::new(4, 0).unwrap();
        assert!(BoundaryMode::ChannelSplit { control_channel: 0 }.is_valid(&ch));
        assert!(!BoundaryMode::ChannelSplit { control_channel: 4 }.is_valid(&ch));
        assert!(!BoundaryMode::TimeSplit { epoch_us: 100, cp_window_us: 100 }.is_valid(&ch));
        assert!(!BoundaryMode::TimeSplit { epoch_us: 100, cp_window_us: 0 }.is_valid(&ch));
        assert_eq!(BoundaryMode::ChannelSplit { control_channel: 0 }.data_channels(&ch), vec![1, 2, 3]);
    }

    #[test]
    fn empty_table_grants_earliest_instant() {
        let ch = ChannelSet::new(3, 0).unwrap();
        let mut s = Scheduler::new(BoundaryMode::ChannelSplit { control_channel: 0 }, ch, &[], 50_000, SIFS);
        let GrantOutcome::Granted(r) = s.grant_schedule(&req(1, 1500, 40), 500) else { panic!() };
        assert_eq!(r.t_start, 500);
        assert_eq!(r.channels, vec![1]);
    }

    #[test]
    fn parallel_grant_on_disjoint_block() {
        let ch = ChannelSet::new(6, 0).unwrap();
        let mut s = Scheduler::new(BoundaryMode::ChannelSplit { control_channel: 0 }, ch, &[], 50_000, SIFS);
        let GrantOutcome::Granted(a) = s.grant_schedule(&req(1, 1500, 40), 100) else { panic!() };
        let GrantOutcome::Granted(b) = s.grant_schedule(&req(2, 1500, 40), 100) else { panic!() };
        assert_eq!(a.channels, vec![2, 3]);
        assert_eq!(b.channels, vec![4, 5]);
        assert_eq!(a.t_start, b.t_start);
        // a shared receiver cannot take both at once
        let mut same_dst = req(3, 1500, 40);
        same_dst.dst = a.dst.unwrap();
        let GrantOutcome::Granted(c) = s.grant_schedule(&same_dst, 100) else { panic!() };
        assert!(c.t_start >= a.t_end);
        let table = s.table();
        for (i, x) in table.iter().enumerate() {
            for y in &table[i + 1..] {
                assert!(!x.conflicts(y.t_start, y.t_end, &y.channels));
            }
        }
    }

    #[test]
    fn timesplit_rejects_oversized_request() {
        let ch = ChannelSet::new(1, 0).unwrap();
        let ts = BoundaryMode::TimeSplit { epoch_us: 10_000, cp_window_us: 2_000 };
        let mut s = Scheduler::new(ts, ch, &[], 40_000, SIFS);
        let big = ReservationRequest {
            src: 1,
            dst: 0,
            sizes: vec![1500; 50],
            mcs: Modulation::Qam64,
            nss: 1,
            max_width_mhz: 20,
        };
        assert_eq!(s.grant_schedule(&big, 100), GrantOutcome::Rejected);
        let GrantOutcome::Granted(r) = s.grant_schedule(&req(1, 1500, 20), 100) else { panic!() };
        assert_eq!(r.t_start, 2_000);
        assert!(r.t_end <= 10_000);
    }

    #[test]
    fn burst_arithmetic() {
        let one = burst_duration(&[1500], Modulation::Qam256, 40, 1, SIFS);
        assert_eq!(one, airtime(1500, Modulation::Qam256, 40, 1).unwrap());
        let two = burst_duration(&[1500, 1500], Modulation::Qam256, 40, 1, SIFS);
        assert_eq!(two, 2 * one + SIFS);
    }
}
