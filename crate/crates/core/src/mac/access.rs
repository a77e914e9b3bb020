//! Contention primitives of the hybrid MAC: handshake choice, binary
//! exponential backoff, NAV update, channel bonding and service-period gating.

use serde::{Deserialize, Serialize};

use crate::engine::{RngStream, Time, NEVER};
use crate::frame::{NodeId, BANDWIDTHS_MHZ};
use crate::medium::ChannelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Handshake {
    Direct,
    RtsCts,
}

/// RTS/CTS only for payloads strictly above the threshold.
pub fn select_handshake(payload_bytes: u32, rts_threshold_bytes: u32) -> Handshake {
    if payload_bytes > rts_threshold_bytes {
        Handshake::RtsCts
    } else {
        Handshake::Direct
    }
}

/// Contention window after `retry` failures: min(cwmax, (cwmin+1)·2^retry − 1).
pub fn contention_window(retry: u32, cwmin: u32, cwmax: u32) -> u32 {
    let base = cwmin as u64 + 1;
    let grown = if retry >= 32 { u64::MAX } else { base.saturating_mul(1u64 << retry) - 1 };
    grown.min(cwmax as u64).max(cwmin.min(cwmax) as u64) as u32
}

/// Uniform backoff slot count in [0, cw(retry)].
pub fn backoff_draw(retry: u32, cwmin: u32, cwmax: u32, rng: &mut RngStream) -> u32 {
    let cw = contention_window(retry, cwmin, cwmax);
    rng.uniform_int(0, cw as i64).expect("0 <= cw") as u32
}

pub fn update_nav(nav_until: Time, duration_field_us: Time, t: Time) -> Time {
    nav_until.max(t + duration_field_us)
}

/// Widest bonded width: at most both capabilities, every 20 MHz channel of the
/// aligned block containing the primary idle. The primary itself is assumed won.
pub fn bond_width(channels: &ChannelSet, idle: &[bool], cap_tx_mhz: u32, cap_rx_mhz: u32) -> u32 {
    let cap = cap_tx_mhz.min(cap_rx_mhz);
    let mut best = 20;
    for &w in BANDWIDTHS_MHZ.iter().filter(|w| **w <= cap) {
        let Some(block) = channels.primary_block(w) else { break };
        let all_idle = block
            .iter()
            .all(|&c| c == channels.primary || idle.get(c).copied().unwrap_or(false));
        if !all_idle {
            break;
        }
        best = w;
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServicePeriod {
    pub owner_src: NodeId,
    pub owner_dst: NodeId,
    pub start_us: Time,
    pub duration_us: Time,
    pub period_us: Time,
}

impl ServicePeriod {
    pub fn owns(&self, node: NodeId) -> bool {
        node == self.owner_src || node == self.owner_dst
    }

    /// Occurrence intervals [start, end) that intersect [0, horizon).
    pub fn occurrences(&self, horizon: Time) -> Vec<(Time, Time)> {
        let mut out = Vec::new();
        if self.duration_us == 0 {
            return out;
        }
        let mut s = self.start_us;
        loop {
            if s >= horizon {
                break;
            }
            out.push((s, s + self.duration_us));
            if self.period_us == 0 {
                break;
            }
            s += self.period_us;
        }
        out
    }
}

/// Expanded service-period occurrences, sorted by start.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpTable {
    occurrences: Vec<SpOccurrence>,
    longest: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpOccurrence {
    pub start: Time,
    pub end: Time,
    pub owner_src: NodeId,
    pub owner_dst: NodeId,
}

impl SpOccurrence {
    pub fn owns(&self, node: NodeId) -> bool {
        node == self.owner_src || node == self.owner_dst
    }
}

impl SpTable {
    pub fn new(sps: &[ServicePeriod], horizon: Time) -> Self {
        let mut occurrences: Vec<SpOccurrence> = sps
            .iter()
            .flat_map(|sp| {
                sp.occurrences(horizon).into_iter().map(move |(start, end)| SpOccurrence {
                    start,
                    end,
                    owner_src: sp.owner_src,
                    owner_dst: sp.owner_dst,
                })
            })
            .collect();
        occurrences.sort_by_key(|o| (o.start, o.end));
        let longest = occurrences.iter().map(|o| o.end - o.start).max().unwrap_or(0);
        Self { occurrences, longest }
    }

    pub fn occurrences(&self) -> &[SpOccurrence] {
        &self.occurrences
    }

    /// Occurrences that may still be running at or after `t`, in start order.
    pub fn from(&self, t: Time) -> &[SpOccurrence] {
        let i = self.occurrences.partition_point(|o| o.start + self.longest <= t);
        &self.occurrences[i..]
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// Access allowed until `gap_end` ([`NEVER`] if unbounded).
    Allowed(Time),
    BlockedUntil(Time),
}

/// Whether `node` may start contention-based access at `t`.
pub fn rtwt_gate(t: Time, table: &SpTable, node: NodeId) -> Gate {
    // Foreign occurrence covering t blocks; an owned one bounds the gap at its end.
    let mut gap_end = NEVER;
    for occ in table.from(t) {
        if occ.end <= t {
            continue;
        }
        if occ.start <= t {
            if occ.owns(node) {
                gap_end = gap_end.min(occ.end);
            } else {
                return Gate::BlockedUntil(blocked_until(table, node, occ.end));
            }
        } else if !occ.owns(node) {
            gap_end = gap_end.min(occ.start);
            break;
        }
    }
    Gate::Allowed(gap_end)
}

// Chained foreign occurrences extend a block.
fn blocked_until(table: &SpTable, node: NodeId, mut end: Time) -> Time {
    for occ in table.from(end) {
        if !occ.owns(node) && occ.start <= end && occ.end > end {
            end = occ.end;
        }
    }
    end
}
