//! Trace validator: replays a trace against the protocol invariants.

use std::collections::BTreeMap;
use std::fmt;

use crate::config::RunSpec;
use crate::engine::Time;
use crate::frame::{ChannelId, FrameType, NodeId, Plane};
use crate::mac::access::{contention_window, SpTable};
use crate::mac::node::Variant;
use crate::mac::params::{AccessCategory, EdcaParams};
use crate::mac::separated::BoundaryMode;
use crate::summary::{transmissions, TxInfo};
use crate::trace::{Outcome, TraceEvent, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Check {
    NavDiscipline,
    BackoffBounds,
    WindowReset,
    CollisionSymmetry,
    RtwtGating,
    ReservationCoverage,
    ConflictFree,
    BoundaryExclusivity,
    ControlAtBasicRate,
    ImmediateData,
    Ordering,
}

impl Check {
    pub const ALL: [Check; 11] = [
        Check::NavDiscipline,
        Check::BackoffBounds,
        Check::WindowReset,
        Check::CollisionSymmetry,
        Check::RtwtGating,
        Check::ReservationCoverage,
        Check::ConflictFree,
        Check::BoundaryExclusivity,
        Check::ControlAtBasicRate,
        Check::ImmediateData,
        Check::Ordering,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub check: Check,
    pub t: Time,
    pub node: NodeId,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at t={} node={}: {}", self.check, self.t, self.node, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    /// Number of trace items each check examined.
    pub examined: BTreeMap<Check, u64>,
    /// The first few violations of each check.
    pub violations: Vec<Violation>,
    /// Total violations per check.
    pub counts: BTreeMap<Check, u64>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn failures(&self, check: Check) -> u64 {
        self.counts.get(&check).copied().unwrap_or(0)
    }

    fn seen(&mut self, check: Check) {
        *self.examined.entry(check).or_insert(0) += 1;
    }

    fn fail(&mut self, check: Check, t: Time, node: NodeId, detail: String) {
        let n = self.counts.entry(check).or_insert(0);
        *n += 1;
        if *n <= 20 {
            self.violations.push(Violation { check, t, node, detail });
        }
    }
}

fn params_for(spec: &RunSpec, label: &str) -> Option<EdcaParams> {
    let ac = match label {
        "VO" | "BCN" | "BA" => AccessCategory::Voice,
        "VI" => AccessCategory::Video,
        "BE" => AccessCategory::BestEffort,
        "BK" => AccessCategory::Background,
        _ => return None,
    };
    Some(spec.params.edca.get(ac))
}

pub fn validate(trace: &[TraceRecord], spec: &RunSpec) -> Report {
    let mut rep = Report::default();
    let txs = match transmissions(trace) {
        Ok(t) => t,
        Err(e) => {
            rep.fail(Check::Ordering, 0, 0, e.to_string());
            return rep;
        }
    };
    ordering(trace, &mut rep);
    nav_discipline(trace, spec, &txs, &mut rep);
    backoff(trace, spec, &txs, &mut rep);
    symmetry(trace, spec, &txs, &mut rep);
    rates(spec, &txs, &mut rep);
    immediate_data(trace, spec, &txs, &mut rep);
    match spec.params.variant {
        Variant::Baseline => gating(spec, &txs, &mut rep),
        Variant::Separated(b) => {
            coverage(trace, spec, &txs, &mut rep);
            exclusivity(b, spec, &txs, &mut rep);
        }
    }
    rep
}

fn ordering(trace: &[TraceRecord], rep: &mut Report) {
    for w in trace.windows(2) {
        rep.seen(Check::Ordering);
        // Reserve rows written at start-up describe the future and are stamped 0.
        if w[1].t < w[0].t {
            rep.fail(Check::Ordering, w[1].t, w[1].node, format!("time went back from {}", w[0].t));
        }
    }
}

fn bss(spec: &RunSpec, tx: &TxInfo) -> bool {
    !spec.is_interferer(tx.sender)
}

fn nav_discipline(trace: &[TraceRecord], spec: &RunSpec, txs: &BTreeMap<u64, TxInfo>, rep: &mut Report) {
    let contention = spec.params.contention_channel();
    let mut nav: BTreeMap<NodeId, Time> = BTreeMap::new();
    for r in trace {
        let Some(f) = r.frame else { continue };
        let Some(tx) = txs.get(&f) else { continue };
        match r.event {
            TraceEvent::RxEnd if r.outcome == Some(Outcome::Delivered) => {
                if tx.dst != Some(r.node) && tx.nav > 0 && tx.channels.contains(&contention) {
                    let e = nav.entry(r.node).or_insert(0);
                    *e = (*e).max(r.t + tx.nav);
                }
            }
            TraceEvent::TxStart if bss(spec, tx) => {
                // scheduled data-plane bursts transmit without sensing
                if tx.plane == Plane::Data && tx.reservation.is_some() {
                    continue;
                }
                rep.seen(Check::NavDiscipline);
                let until = nav.get(&r.node).copied().unwrap_or(0);
                if until > r.t {
                    rep.fail(Check::NavDiscipline, r.t, r.node, format!("{:?} frame {f} sent under NAV until {until}", tx.ftype));
                }
            }
            _ => {}
        }
    }
}

fn backoff(trace: &[TraceRecord], spec: &RunSpec, txs: &BTreeMap<u64, TxInfo>, rep: &mut Report) {
    let mut ac_of: BTreeMap<u64, String> = BTreeMap::new();
    // (node, ac) -> an ACK arrived and no data went out since
    let mut reset_due: BTreeMap<(NodeId, String), Time> = BTreeMap::new();
    let mut data_of_node: BTreeMap<NodeId, u64> = BTreeMap::new();
    for r in trace {
        match r.event {
            TraceEvent::Arrival => {
                if let (Some(&m), Some(ac)) = (r.extra.msdus.first(), &r.extra.ac) {
                    ac_of.insert(m, ac.clone());
                }
            }
            TraceEvent::Backoff => {
                rep.seen(Check::BackoffBounds);
                let ac = r.extra.ac.clone().unwrap_or_default();
                let (slots, cw, retry) = (r.extra.slots.unwrap_or(0), r.extra.cw.unwrap_or(0), r.extra.retry.unwrap_or(0));
                let Some(p) = params_for(spec, &ac) else {
                    rep.fail(Check::BackoffBounds, r.t, r.node, format!("unknown access category {ac}"));
                    continue;
                };
                let expect = contention_window(retry, p.cwmin, p.cwmax);
                if cw != expect || slots > cw {
                    rep.fail(Check::BackoffBounds, r.t, r.node, format!("{ac}: slots {slots} cw {cw} retry {retry}, expected cw {expect}"));
                }
                if reset_due.remove(&(r.node, ac.clone())).is_some() {
                    rep.seen(Check::WindowReset);
                    if retry != 0 {
                        rep.fail(Check::WindowReset, r.t, r.node, format!("{ac}: retry {retry} right after an ACK"));
                    }
                }
            }
            TraceEvent::TxStart => {
                let Some(tx) = r.frame.and_then(|f| txs.get(&f)) else { continue };
                if tx.ftype == FrameType::Data && tx.reservation.is_none() {
                    data_of_node.insert(r.node, tx.id);
                    if let Some(ac) = tx.msdus.first().and_then(|m| ac_of.get(m)) {
                        reset_due.remove(&(r.node, ac.clone()));
                    }
                }
            }
            TraceEvent::RxEnd if r.outcome == Some(Outcome::Delivered) => {
                let Some(tx) = r.frame.and_then(|f| txs.get(&f)) else { continue };
                if tx.ftype == FrameType::Ack && tx.dst == Some(r.node) {
                    let Some(&data) = data_of_node.get(&r.node) else { continue };
                    if let Some(ac) = txs[&data].msdus.first().and_then(|m| ac_of.get(m)) {
                        reset_due.insert((r.node, ac.clone()), r.t);
                    }
                }
            }
            _ => {}
        }
    }
}

fn symmetry(trace: &[TraceRecord], spec: &RunSpec, txs: &BTreeMap<u64, TxInfo>, rep: &mut Report) {
    let mut rx: BTreeMap<(NodeId, u64), &TraceRecord> = BTreeMap::new();
    for r in trace.iter().filter(|r| r.event == TraceEvent::RxEnd) {
        if let Some(f) = r.frame {
            rx.insert((r.node, f), r);
        }
    }
    for (&(node, f), r) in &rx {
        if r.outcome != Some(Outcome::Collided) {
            continue;
        }
        for &g in &r.extra.colliders {
            let Some(other) = txs.get(&g) else { continue };
            if other.sender == node || spec.is_interferer(other.sender) {
                continue;
            }
            rep.seen(Check::CollisionSymmetry);
            let mirrored = rx
                .get(&(node, g))
                .is_some_and(|o| o.outcome == Some(Outcome::Collided) && o.extra.colliders.contains(&f));
            if !mirrored {
                rep.fail(Check::CollisionSymmetry, r.t, node, format!("frame {f} lost to {g} but not the reverse"));
            }
        }
    }
}

fn rates(spec: &RunSpec, txs: &BTreeMap<u64, TxInfo>, rep: &mut Report) {
    for tx in txs.values().filter(|t| bss(spec, t)) {
        rep.seen(Check::ControlAtBasicRate);
        let ok = match tx.plane {
            Plane::Control => tx.mcs == "Basic" && tx.width_mhz == 20 && tx.channels.len() == 1,
            Plane::Data if tx.ftype == FrameType::Data => tx.mcs == spec.params.data_mcs.label(),
            Plane::Data => true,
        };
        if !ok {
            rep.fail(Check::ControlAtBasicRate, tx.t_start, tx.sender, format!("{:?} at {} {} MHz", tx.ftype, tx.mcs, tx.width_mhz));
        }
    }
}

fn immediate_data(trace: &[TraceRecord], spec: &RunSpec, txs: &BTreeMap<u64, TxInfo>, rep: &mut Report) {
    let sifs = spec.params.timings.sifs_us;
    // node -> end of the CTS it just received
    let mut cts_end: BTreeMap<NodeId, Time> = BTreeMap::new();
    for r in trace {
        let Some(tx) = r.frame.and_then(|f| txs.get(&f)) else { continue };
        match r.event {
            TraceEvent::RxEnd if r.outcome == Some(Outcome::Delivered) && tx.ftype == FrameType::Cts && tx.dst == Some(r.node) => {
                cts_end.insert(r.node, r.t);
            }
            TraceEvent::TxStart => {
                if let Some(end) = cts_end.remove(&r.node) {
                    rep.seen(Check::ImmediateData);
                    if tx.ftype != FrameType::Data || r.t != end + sifs {
                        rep.fail(Check::ImmediateData, r.t, r.node, format!("{:?} started {} us after CTS", tx.ftype, r.t - end));
                    }
                }
            }
            _ => {}
        }
    }
}

fn gating(spec: &RunSpec, txs: &BTreeMap<u64, TxInfo>, rep: &mut Report) {
    let table = SpTable::new(&spec.service_periods, spec.duration_us.saturating_mul(2));
    if table.is_empty() {
        return;
    }
    for tx in txs.values().filter(|t| bss(spec, t)) {
        rep.seen(Check::RtwtGating);
        let end = tx.t_end.expect("complete trace");
        if let Some(o) = table
            .from(tx.t_start)
            .iter()
            .take_while(|o| o.start < end)
            .find(|o| !o.owns(tx.sender) && tx.t_start < o.end) {
            rep.fail(
                Check::RtwtGating,
                tx.t_start,
                tx.sender,
                format!("{:?} [{}, {end}) overlaps service period [{}, {})", tx.ftype, tx.t_start, o.start, o.end),
            );
        }
    }
}

#[derive(Debug, Clone)]
struct Res {
    src: NodeId,
    channels: Vec<ChannelId>,
    t_start: Time,
    t_end: Time,
}

fn reservations(trace: &[TraceRecord]) -> BTreeMap<u64, Res> {
    trace
        .iter()
        .filter(|r| r.event == TraceEvent::Reserve)
        .filter_map(|r| {
            Some((
                r.extra.res?,
                Res { src: r.extra.src?, channels: r.ch.clone(), t_start: r.extra.t_start?, t_end: r.extra.t_end? },
            ))
        })
        .collect()
}

fn coverage(trace: &[TraceRecord], spec: &RunSpec, txs: &BTreeMap<u64, TxInfo>, rep: &mut Report) {
    let table = reservations(trace);
    let mut per_channel: BTreeMap<ChannelId, Vec<(Time, Time, u64)>> = BTreeMap::new();
    for (&g, r) in &table {
        for &c in &r.channels {
            per_channel.entry(c).or_default().push((r.t_start, r.t_end, g));
        }
    }
    for (c, mut iv) in per_channel {
        iv.sort_unstable();
        for w in iv.windows(2) {
            rep.seen(Check::ConflictFree);
            if w[1].0 < w[0].1 {
                rep.fail(Check::ConflictFree, w[1].0, 0, format!("reservations {} and {} overlap on channel {c}", w[0].2, w[1].2));
            }
        }
    }
    let mut by_src: BTreeMap<NodeId, Vec<(Time, u64)>> = BTreeMap::new();
    let mut longest: BTreeMap<NodeId, Time> = BTreeMap::new();
    for (&g, r) in &table {
        by_src.entry(r.src).or_default().push((r.t_start, g));
        let l = longest.entry(r.src).or_insert(0);
        *l = (*l).max(r.t_end - r.t_start);
    }
    for v in by_src.values_mut() {
        v.sort_unstable();
    }
    for tx in txs.values().filter(|t| bss(spec, t) && t.plane == Plane::Data) {
        rep.seen(Check::ReservationCoverage);
        let end = tx.t_end.expect("complete trace");
        let own = by_src.get(&tx.sender).map(Vec::as_slice).unwrap_or(&[]);
        let reach = longest.get(&tx.sender).copied().unwrap_or(0);
        let upto = own.partition_point(|&(s, _)| s <= tx.t_start);
        let covering: Vec<u64> = own[..upto]
            .iter()
            .rev()
            .take_while(|&&(s, _)| s + reach >= end)
            .map(|&(_, g)| (g, &table[&g]))
            .filter(|(_, r)| end <= r.t_end && tx.channels.iter().all(|c| r.channels.contains(c)))
            .map(|(g, _)| g)
            .collect();
        if covering.len() != 1 || tx.reservation != covering.first().copied() {
            rep.fail(
                Check::ReservationCoverage,
                tx.t_start,
                tx.sender,
                format!("{:?} frame {} tagged {:?} covered by {covering:?}", tx.ftype, tx.id, tx.reservation),
            );
        }
    }
}

fn exclusivity(b: BoundaryMode, spec: &RunSpec, txs: &BTreeMap<u64, TxInfo>, rep: &mut Report) {
    for tx in txs.values().filter(|t| bss(spec, t)) {
        rep.seen(Check::BoundaryExclusivity);
        let end = tx.t_end.expect("complete trace");
        let ok = match b {
            BoundaryMode::ChannelSplit { control_channel } => match tx.plane {
                Plane::Control => tx.channels == [control_channel],
                Plane::Data => !tx.channels.contains(&control_channel),
            },
            BoundaryMode::TimeSplit { epoch_us, cp_window_us } => match tx.plane {
                Plane::Control => tx.t_start % epoch_us < cp_window_us,
                Plane::Data => {
                    let base = tx.t_start / epoch_us * epoch_us;
                    tx.t_start >= base + cp_window_us && end <= base + epoch_us
                }
            },
        };
        if !ok {
            rep.fail(
                Check::BoundaryExclusivity,
                tx.t_start,
                tx.sender,
                format!("{:?} on {:?} during [{}, {end}) crosses the plane boundary", tx.ftype, tx.channels, tx.t_start),
            );
        }
    }
}
