//! Post-run aggregation of a trace into collision, delay, utilisation and
//! efficiency metrics, plus the one-row CSV encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Time;
use crate::frame::{ChannelId, FrameType, NodeId, Plane};
use crate::mac::params::AccessCategory;
use crate::trace::{Outcome, TraceEvent, TraceRecord};
use crate::world::RunMeta;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SummaryError {
    #[error("frame {0} started but never ended")]
    IncompleteTrace(u64),
    #[error("malformed summary csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CollisionClass {
    CpCp,
    CpDp,
    DpDp,
}

pub fn classify_collision(a: Plane, b: Plane) -> CollisionClass {
    match (a, b) {
        (Plane::Control, Plane::Control) => CollisionClass::CpCp,
        (Plane::Data, Plane::Data) => CollisionClass::DpDp,
        _ => CollisionClass::CpDp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DelayStats {
    pub mean_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
    pub count: usize,
}

impl DelayStats {
    pub fn from_samples(mut xs: Vec<Time>) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        xs.sort_unstable();
        let n = xs.len();
        let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            mean_us: xs.iter().sum::<Time>() as f64 / n as f64,
            p99_us: xs[rank - 1] as f64,
            max_us: xs[n - 1] as f64,
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub cp_cp: u64,
    pub cp_dp: u64,
    pub dp_dp: u64,
    /// Indexed by [`AccessCategory::index`].
    pub delay: [DelayStats; 4],
    pub busy: Vec<f64>,
    pub cp_overhead_ratio: f64,
    pub secondary_usage_ratio: f64,
    pub dcf_goodput_bps: f64,
    pub beacon_max_deferral_us: u64,
    pub released_tail_us: u64,
    pub delivered_msdus: u64,
    pub dropped_msdus: u64,
}

impl Summary {
    pub fn delay(&self, ac: AccessCategory) -> DelayStats {
        self.delay[ac.index()]
    }

    pub fn collisions(&self, class: CollisionClass) -> u64 {
        match class {
            CollisionClass::CpCp => self.cp_cp,
            CollisionClass::CpDp => self.cp_dp,
            CollisionClass::DpDp => self.dp_dp,
        }
    }
}

/// What the summary needs to know about every transmitted frame.
#[derive(Debug, Clone)]
pub struct TxInfo {
    pub id: u64,
    pub sender: NodeId,
    pub ftype: FrameType,
    pub plane: Plane,
    pub channels: Vec<ChannelId>,
    pub t_start: Time,
    pub t_end: Option<Time>,
    pub dst: Option<NodeId>,
    pub msdus: Vec<u64>,
    pub width_mhz: u32,
    pub mcs: String,
    pub nav: Time,
    pub reservation: Option<u64>,
}

/// Transmissions keyed by frame id, completed with their end times.
pub fn transmissions(trace: &[TraceRecord]) -> Result<BTreeMap<u64, TxInfo>, SummaryError> {
    let mut txs = BTreeMap::new();
    for r in trace {
        let Some(id) = r.frame else { continue };
        match r.event {
            TraceEvent::TxStart => {
                txs.insert(
                    id,
                    TxInfo {
                        id,
                        sender: r.node,
                        ftype: r.ftype.expect("TxStart rows carry a frame type"),
                        plane: r.plane.expect("TxStart rows carry a plane"),
                        channels: r.ch.clone(),
                        t_start: r.t,
                        t_end: None,
                        dst: r.extra.dst,
                        msdus: r.extra.msdus.clone(),
                        width_mhz: r.extra.width_mhz.unwrap_or(20),
                        mcs: r.extra.mcs.clone().unwrap_or_default(),
                        nav: r.extra.nav.unwrap_or(0),
                        reservation: r.extra.res,
                    },
                );
            }
            TraceEvent::TxEnd => {
                if let Some(tx) = txs.get_mut(&id) {
                    tx.t_end = Some(r.t);
                }
            }
            _ => {}
        }
    }
    if let Some(tx) = txs.values().find(|t| t.t_end.is_none()) {
        return Err(SummaryError::IncompleteTrace(tx.id));
    }
    Ok(txs)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CollisionPair {
    pub receiver: NodeId,
    pub a: u64,
    pub b: u64,
    pub class: CollisionClass,
    /// Channels both frames occupied.
    pub shared: Vec<ChannelId>,
}

/// Distinct colliding pairs, one per receiver and unordered frame pair.
pub fn collision_pairs(trace: &[TraceRecord], txs: &BTreeMap<u64, TxInfo>) -> Vec<CollisionPair> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in trace {
        if r.event != TraceEvent::RxEnd || r.outcome != Some(Outcome::Collided) {
            continue;
        }
        let Some(f) = r.frame else { continue };
        for &g in &r.extra.colliders {
            let (a, b) = (f.min(g), f.max(g));
            if !seen.insert((r.node, a, b)) {
                continue;
            }
            let (Some(ta), Some(tb)) = (txs.get(&a), txs.get(&b)) else { continue };
            let shared = ta.channels.iter().copied().filter(|c| tb.channels.contains(c)).collect();
            out.push(CollisionPair { receiver: r.node, a, b, class: classify_collision(ta.plane, tb.plane), shared });
        }
    }
    out
}

/// Collision counts restricted to pairs that met on one of `channels`.
pub fn collisions_on_channels(pairs: &[CollisionPair], channels: &[ChannelId]) -> BTreeMap<CollisionClass, u64> {
    let mut counts = BTreeMap::new();
    for p in pairs.iter().filter(|p| p.shared.iter().any(|c| channels.contains(c))) {
        *counts.entry(p.class).or_insert(0) += 1;
    }
    counts
}

/// Sorted disjoint union of half-open intervals.
fn union(mut iv: Vec<(Time, Time)>) -> Vec<(Time, Time)> {
    iv.sort_unstable();
    let mut out: Vec<(Time, Time)> = Vec::new();
    for (s, e) in iv {
        if s >= e {
            continue;
        }
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

fn total(iv: &[(Time, Time)]) -> Time {
    iv.iter().map(|(s, e)| e - s).sum()
}

fn intersection(a: &[(Time, Time)], b: &[(Time, Time)]) -> Time {
    let (mut i, mut j, mut sum) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let s = a[i].0.max(b[j].0);
        let e = a[i].1.min(b[j].1);
        if s < e {
            sum += e - s;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    sum
}

/// Busy intervals per channel, clipped to [0, duration).
fn busy_intervals<'a>(txs: impl Iterator<Item = &'a TxInfo>, channels: usize, duration: Time) -> Vec<Vec<(Time, Time)>> {
    let mut per = vec![Vec::new(); channels];
    for tx in txs {
        let end = tx.t_end.expect("complete trace").min(duration);
        if tx.t_start >= end {
            continue;
        }
        for &c in &tx.channels {
            if c < channels {
                per[c].push((tx.t_start, end));
            }
        }
    }
    per.into_iter().map(union).collect()
}

pub fn summarize(trace: &[TraceRecord], meta: &RunMeta) -> Result<Summary, SummaryError> {
    let txs = transmissions(trace)?;
    let pairs = collision_pairs(trace, &txs);
    let count = |c| pairs.iter().filter(|p| p.class == c).count() as u64;

    let duration = meta.duration_us.max(1);
    let n_ch = meta.channels.count;
    let busy_iv = busy_intervals(txs.values(), n_ch, duration);
    let busy: Vec<f64> = busy_iv.iter().map(|iv| total(iv) as f64 / duration as f64).collect();

    let bss = |t: &&TxInfo| !meta.interferers.contains(&t.sender);
    let bss_iv = busy_intervals(txs.values().filter(bss), n_ch, duration);
    let primary = meta.channels.primary;
    let secondaries: Vec<_> = meta.channels.secondaries().collect();
    let primary_busy = total(&bss_iv[primary]);
    let secondary_usage_ratio = if secondaries.is_empty() || primary_busy == 0 {
        0.0
    } else {
        let overlap: Time = secondaries.iter().map(|&s| intersection(&bss_iv[s], &bss_iv[primary])).sum();
        overlap as f64 / (primary_busy as f64 * secondaries.len() as f64)
    };

    // a frame counts as delivered once its addressee (any hearer for broadcasts) got it intact
    let mut delivered_frames = BTreeSet::new();
    for r in trace {
        if r.event == TraceEvent::RxEnd && r.outcome == Some(Outcome::Delivered) {
            if let Some(f) = r.frame {
                if r.extra.dst.is_none() || r.extra.dst == Some(r.node) {
                    delivered_frames.insert(f);
                }
            }
        }
    }
    let (mut cp_air, mut dp_air) = (0u64, 0u64);
    for f in &delivered_frames {
        let tx = &txs[f];
        let air = tx.t_end.expect("complete trace") - tx.t_start;
        match tx.plane {
            Plane::Control => cp_air += air,
            Plane::Data => dp_air += air,
        }
    }
    let cp_overhead_ratio = if cp_air + dp_air == 0 { 0.0 } else { cp_air as f64 / (cp_air + dp_air) as f64 };

    let mut arrivals: BTreeMap<u64, (Time, String, u32)> = BTreeMap::new();
    let mut released = 0;
    let mut dropped = 0;
    for r in trace {
        match r.event {
            TraceEvent::Arrival => {
                if let (Some(&m), Some(ac)) = (r.extra.msdus.first(), &r.extra.ac) {
                    arrivals.insert(m, (r.t, ac.clone(), r.extra.bytes.unwrap_or(0)));
                }
            }
            TraceEvent::Released => released += r.extra.tail_us.unwrap_or(0),
            TraceEvent::Drop => dropped += 1,
            _ => {}
        }
    }
    let mut first_attempt: BTreeMap<u64, Time> = BTreeMap::new();
    for tx in txs.values() {
        for &m in &tx.msdus {
            first_attempt.entry(m).and_modify(|t| *t = (*t).min(tx.t_start)).or_insert(tx.t_start);
        }
    }
    let mut per_ac: [Vec<Time>; 4] = Default::default();
    let mut beacon_max = 0;
    for (m, (t, ac, _)) in &arrivals {
        let Some(&s) = first_attempt.get(m) else { continue };
        let d = s.saturating_sub(*t);
        match ac.as_str() {
            "BCN" => beacon_max = beacon_max.max(d),
            "VO" => per_ac[0].push(d),
            "VI" => per_ac[1].push(d),
            "BE" => per_ac[2].push(d),
            "BK" => per_ac[3].push(d),
            _ => {}
        }
    }
    let delay = per_ac.map(DelayStats::from_samples);

    let mut got = BTreeSet::new();
    for f in &delivered_frames {
        let tx = &txs[f];
        if tx.ftype == FrameType::Data && tx.dst.is_some() {
            got.extend(tx.msdus.iter().copied());
        }
    }
    let bits: u64 = got.iter().filter_map(|m| arrivals.get(m)).map(|a| a.2 as u64 * 8).sum();

    Ok(Summary {
        cp_cp: count(CollisionClass::CpCp),
        cp_dp: count(CollisionClass::CpDp),
        dp_dp: count(CollisionClass::DpDp),
        delay,
        busy,
        cp_overhead_ratio,
        secondary_usage_ratio,
        dcf_goodput_bps: bits as f64 / (meta.duration_us.max(1) as f64 / 1e6),
        beacon_max_deferral_us: beacon_max,
        released_tail_us: released,
        delivered_msdus: got.len() as u64,
        dropped_msdus: dropped,
    })
}

// ---- CSV -------------------------------------------------------------------------------------

pub fn csv_header(channels: usize) -> Vec<String> {
    let mut h: Vec<String> = ["cp_cp", "cp_dp", "dp_dp"].iter().map(|s| s.to_string()).collect();
    for ac in ["vo", "vi", "be", "bk"] {
        for stat in ["mean", "p99", "max"] {
            h.push(format!("{ac}_delay_{stat}_us"));
        }
    }
    h.extend((0..channels).map(|c| format!("busy_ch{c}")));
    for s in [
        "cp_overhead_ratio",
        "secondary_usage_ratio",
        "dcf_goodput_bps",
        "beacon_max_deferral_us",
        "released_tail_us",
        "delivered_msdus",
        "dropped_msdus",
    ] {
        h.push(s.to_string());
    }
    h
}

impl Summary {
    pub fn csv_values(&self) -> Vec<String> {
        let mut v = vec![self.cp_cp.to_string(), self.cp_dp.to_string(), self.dp_dp.to_string()];
        for d in &self.delay {
            v.push(d.mean_us.to_string());
            v.push(d.p99_us.to_string());
            v.push(d.max_us.to_string());
        }
        v.extend(self.busy.iter().map(|b| b.to_string()));
        v.push(self.cp_overhead_ratio.to_string());
        v.push(self.secondary_usage_ratio.to_string());
        v.push(self.dcf_goodput_bps.to_string());
        v.push(self.beacon_max_deferral_us.to_string());
        v.push(self.released_tail_us.to_string());
        v.push(self.delivered_msdus.to_string());
        v.push(self.dropped_msdus.to_string());
        v
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(csv_header(self.busy.len())).expect("in-memory write");
        w.write_record(self.csv_values()).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        let mut out = out;
        out.write_all(self.to_csv().as_bytes())
    }

    /// Parses a header and data row from named columns. Delay sample counts are not encoded.
    pub fn from_row(header: &[String], row: &[String]) -> Result<Self, SummaryError> {
        let col = |name: &str| -> Result<&str, SummaryError> {
            let i = header.iter().position(|h| h == name).ok_or_else(|| SummaryError::Csv(format!("missing {name}")))?;
            row.get(i).map(|s| s.as_str()).ok_or_else(|| SummaryError::Csv(format!("short row at {name}")))
        };
        fn num<T: std::str::FromStr>(s: &str) -> Result<T, SummaryError> {
            s.parse().map_err(|_| SummaryError::Csv(format!("bad number {s}")))
        }
        let mut delay = [DelayStats::default(); 4];
        for (i, ac) in ["vo", "vi", "be", "bk"].iter().enumerate() {
            delay[i] = DelayStats {
                mean_us: num(col(&format!("{ac}_delay_mean_us"))?)?,
                p99_us: num(col(&format!("{ac}_delay_p99_us"))?)?,
                max_us: num(col(&format!("{ac}_delay_max_us"))?)?,
                count: 0,
            };
        }
        let channels = header.iter().filter(|h| h.starts_with("busy_ch")).count();
        let busy = (0..channels).map(|c| num(col(&format!("busy_ch{c}"))?)).collect::<Result<_, _>>()?;
        Ok(Summary {
            cp_cp: num(col("cp_cp")?)?,
            cp_dp: num(col("cp_dp")?)?,
            dp_dp: num(col("dp_dp")?)?,
            delay,
            busy,
            cp_overhead_ratio: num(col("cp_overhead_ratio")?)?,
            secondary_usage_ratio: num(col("secondary_usage_ratio")?)?,
            dcf_goodput_bps: num(col("dcf_goodput_bps")?)?,
            beacon_max_deferral_us: num(col("beacon_max_deferral_us")?)?,
            released_tail_us: num(col("released_tail_us")?)?,
            delivered_msdus: num(col("delivered_msdus")?)?,
            dropped_msdus: num(col("dropped_msdus")?)?,
        })
    }

    pub fn from_csv(text: &str) -> Result<Self, SummaryError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> =
            r.headers().map_err(|e| SummaryError::Csv(e.to_string()))?.iter().map(str::to_string).collect();
        let row = r
            .records()
            .next()
            .ok_or_else(|| SummaryError::Csv("no data row".into()))?
            .map_err(|e| SummaryError::Csv(e.to_string()))?;
        let row: Vec<String> = row.iter().map(str::to_string).collect();
        Self::from_row(&header, &row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::ChannelSet;

    fn meta(channels: usize) -> RunMeta {
        RunMeta {
            duration_us: 10_000,
            channels: ChannelSet::new(channels, 0).unwrap(),
            data_mcs: crate::frame::Modulation::Qam256,
            interferers: vec![],
            contention_channel: 0,
        }
    }

    fn tx(t: Time, node: NodeId, id: u64, ftype: FrameType, air: Time, dst: NodeId) -> [TraceRecord; 3] {
        let mut s = TraceRecord::new(t, node, TraceEvent::TxStart);
        s.frame = Some(id);
        s.ftype = Some(ftype);
        s.plane = Some(crate::frame::classify(ftype));
        s.ch = vec![0];
        s.outcome = Some(Outcome::Sent);
        s.extra.dst = Some(dst);
        let mut e = s.clone();
        e.event = TraceEvent::TxEnd;
        e.t = t + air;
        e.outcome = None;
        let mut rx = e.clone();
        rx.event = TraceEvent::RxEnd;
        rx.node = dst;
        rx.outcome = Some(Outcome::Delivered);
        [s, e, rx]
    }

    #[test]
    fn overhead_ratio_of_one_exchange() {
        let (a, b) = (47, 207);
        let mut trace = Vec::new();
        trace.extend(tx(0, 0, 1, FrameType::Rts, a, 1));
        trace.extend(tx(100, 0, 2, FrameType::Data, b, 1));
        let s = summarize(&trace, &meta(1)).unwrap();
        assert_eq!(s.cp_overhead_ratio, a as f64 / (a + b) as f64);
        assert_eq!(s.busy[0], (a + b) as f64 / 10_000.0);
    }

    #[test]
    fn empty_trace_is_all_zero() {
        let s = summarize(&[], &meta(2)).unwrap();
        assert_eq!((s.cp_cp, s.cp_dp, s.dp_dp), (0, 0, 0));
        assert_eq!(s.cp_overhead_ratio, 0.0);
        assert_eq!(s.secondary_usage_ratio, 0.0);
        assert_eq!(s.busy, vec![0.0, 0.0]);
    }

    #[test]
    fn missing_tx_end_is_incomplete() {
        let [start, _, _] = tx(0, 0, 7, FrameType::Rts, 47, 1);
        assert_eq!(summarize(&[start], &meta(1)), Err(SummaryError::IncompleteTrace(7)));
    }

    #[test]
    fn collision_classes_are_symmetric() {
        assert_eq!(classify_collision(Plane::Control, Plane::Control), CollisionClass::CpCp);
        assert_eq!(classify_collision(Plane::Control, Plane::Data), CollisionClass::CpDp);
        assert_eq!(classify_collision(Plane::Data, Plane::Control), CollisionClass::CpDp);
        assert_eq!(classify_collision(Plane::Data, Plane::Data), CollisionClass::DpDp);
    }

    #[test]
    fn three_way_collision_gives_three_pairs() {
        let mut trace = Vec::new();
        for (id, node) in [(1, 0), (2, 1), (3, 2)] {
            let [s, e, _] = tx(0, node, id, FrameType::Rts, 47, 3);
            trace.push(s);
            trace.push(e);
        }
        for id in 1..=3u64 {
            let mut rx = TraceRecord::new(47, 3, TraceEvent::RxEnd);
            rx.frame = Some(id);
            rx.outcome = Some(Outcome::Collided);
            rx.extra.colliders = (1..=3).filter(|g| *g != id).collect();
            trace.push(rx);
        }
        let s = summarize(&trace, &meta(1)).unwrap();
        assert_eq!(s.cp_cp, 3);
    }

    #[test]
    fn csv_round_trip() {
        let s = Summary {
            cp_cp: 3,
            cp_dp: 1,
            dp_dp: 0,
            delay: [DelayStats { mean_us: 12.5, p99_us: 80.0, max_us: 91.0, count: 0 }; 4],
            busy: vec![0.1, 1.0 / 3.0],
            cp_overhead_ratio: 0.123456789,
            secondary_usage_ratio: 0.0,
            dcf_goodput_bps: 1.5e7,
            beacon_max_deferral_us: 7,
            released_tail_us: 0,
            delivered_msdus: 100,
            dropped_msdus: 2,
        };
        assert_eq!(Summary::from_csv(&s.to_csv()).unwrap(), s);
        assert_eq!(s.to_csv().lines().count(), 2);
    }

    #[test]
    fn p99_nearest_rank() {
        let d = DelayStats::from_samples((1..=100).collect());
        assert_eq!((d.p99_us, d.max_us, d.mean_us), (99.0, 100.0, 50.5));
    }
}
