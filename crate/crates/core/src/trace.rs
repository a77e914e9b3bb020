//! Event log rows and their JSON Lines encoding.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::engine::Time;
use crate::frame::{ChannelId, FrameType, NodeId, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceEvent {
    Arrival,
    Backoff,
    TxStart,
    TxEnd,
    RxEnd,
    Drop,
    Released,
    Reserve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Sent,
    Delivered,
    Collided,
    NotHeard,
}

/// Optional per-event detail. Absent fields are omitted from the encoding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Extra {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nav: Option<Time>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub src: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dst: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub airtime: Option<Time>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width_mhz: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcs: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u32>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub msdus: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ac: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub res: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub colliders: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cw: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retry: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_us: Option<Time>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_start: Option<Time>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub t: Time,
    pub node: NodeId,
    pub event: TraceEvent,
    pub frame: Option<u64>,
    pub ftype: Option<FrameType>,
    pub plane: Option<Plane>,
    pub ch: Vec<ChannelId>,
    pub outcome: Option<Outcome>,
    pub extra: Extra,
}

impl TraceRecord {
    pub fn new(t: Time, node: NodeId, event: TraceEvent) -> Self {
        Self { t, node, event, frame: None, ftype: None, plane: None, ch: Vec::new(), outcome: None, extra: Extra::default() }
    }
}

/// Bookkeeping emitted by node automata alongside their actions.
#[derive(Debug, Clone, PartialEq)]
pub enum Note {
    Arrival { node: NodeId, msdu: u64, ac: &'static str, bytes: u32 },
    Backoff { node: NodeId, ac: &'static str, slots: u32, cw: u32, retry: u32 },
    Drop { node: NodeId, msdu: u64, ac: &'static str },
    Released { node: NodeId, tail_us: Time, reason: &'static str, reservation: Option<u64> },
}

impl Note {
    pub fn into_record(self, t: Time) -> TraceRecord {
        match self {
            Note::Arrival { node, msdu, ac, bytes } => {
                let mut r = TraceRecord::new(t, node, TraceEvent::Arrival);
                r.extra.msdus = vec![msdu];
                r.extra.ac = Some(ac.to_string());
                r.extra.bytes = Some(bytes);
                r
            }
            Note::Backoff { node, ac, slots, cw, retry } => {
                let mut r = TraceRecord::new(t, node, TraceEvent::Backoff);
                r.extra.ac = Some(ac.to_string());
                r.extra.slots = Some(slots);
                r.extra.cw = Some(cw);
                r.extra.retry = Some(retry);
                r
            }
            Note::Drop { node, msdu, ac } => {
                let mut r = TraceRecord::new(t, node, TraceEvent::Drop);
                r.extra.msdus = vec![msdu];
                r.extra.ac = Some(ac.to_string());
                r
            }
            Note::Released { node, tail_us, reason, reservation } => {
                let mut r = TraceRecord::new(t, node, TraceEvent::Released);
                r.extra.tail_us = Some(tail_us);
                r.extra.reason = Some(reason.to_string());
                r.extra.res = reservation;
                r
            }
        }
    }
}

pub fn write_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_jsonl(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}
