//! Per-node MAC automaton shared by both MAC variants.
//!
//! A node is advanced only through its `on_*` methods, each of which reads the
//! environment through [`MacEnv`] and appends [`Action`]s for the world to apply.
//! Backoff uses the slot grid anchored at the end of AIFS after the medium
//! (physical, virtual and gated) last became idle; counters freeze while busy.

use std::collections::{BTreeMap, VecDeque};

use crate::engine::{RngStream, Time, NEVER};
use crate::frame::{
    airtime, control_airtime, nav_duration, ChannelId, Frame, FrameType, Modulation, NodeId, Payload,
};
use crate::mac::access::{backoff_draw, bond_width, contention_window, rtwt_gate, select_handshake, update_nav};
use crate::mac::access::{Gate, Handshake, SpTable};
use crate::mac::params::{AccessCategory, EdcaParams, EdcaTable, GapPolicy, Timings};
use crate::mac::separated::{burst_duration, BoundaryMode, ReservationRequest, Scheduler};
use crate::medium::{ChannelSet, Medium, Sense};
use crate::trace::Note;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Separated(BoundaryMode),
}

/// Run-wide MAC parameters shared by every node.
#[derive(Debug, Clone)]
pub struct MacParams {
    pub variant: Variant,
    pub timings: Timings,
    pub edca: EdcaTable,
    pub rts_threshold: u32,
    pub data_mcs: Modulation,
    pub nss: u32,
    pub caps: Vec<u32>,
    pub gap_policy: GapPolicy,
    pub channels: ChannelSet,
    pub max_outstanding: usize,
    pub ba_timeout_us: Time,
    pub saturated_backlog: usize,
}

impl MacParams {
    pub fn contention_channel(&self) -> ChannelId {
        match self.variant {
            Variant::Baseline => self.channels.primary,
            Variant::Separated(b) => b.contention_channel(&self.channels),
        }
    }

    fn ack_air(&self) -> Time {
        control_airtime(FrameType::Ack)
    }

    fn data_air(&self, bytes: u32, width: u32) -> Time {
        airtime(bytes, self.data_mcs, width, self.nss).expect("valid width")
    }

    /// Airtime of one complete exchange for a payload at `width`.
    pub fn exchange_duration(&self, hs: Handshake, bytes: u32, width: u32) -> Time {
        let sifs = self.timings.sifs_us;
        let data_ack = self.data_air(bytes, width) + sifs + self.ack_air();
        match hs {
            Handshake::Direct => data_ack,
            Handshake::RtsCts => {
                control_airtime(FrameType::Rts) + sifs + control_airtime(FrameType::Cts) + sifs + data_ack
            }
        }
    }

    /// Largest batch for one reservation request.
    fn batch_budget(&self, ac: AccessCategory) -> Time {
        let txop = self.edca.get(ac).txop_limit_us;
        match self.variant {
            Variant::Separated(b) => match b.dp_window_len() {
                Some(len) => txop.min(len),
                None => txop,
            },
            Variant::Baseline => txop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerKind {
    Access,
    Timeout,
    Response,
    SendData,
    Nav,
    Gate,
    BurstNext,
    Reservation(u64),
    BaTimeout(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Transmit { frame: Frame, channels: Vec<ChannelId> },
    SetTimer { kind: TimerKind, at: Time },
    ClearTimer { kind: TimerKind },
    Note(Note),
    ReservationCreated { grant_id: u64 },
}

/// Monotone id allocator for frames and MSDUs.
#[derive(Debug, Default, Clone)]
pub struct IdAlloc {
    next_frame: u64,
    next_msdu: u64,
}

impl IdAlloc {
    pub fn frame(&mut self) -> u64 {
        self.next_frame += 1;
        self.next_frame
    }

    pub fn msdu(&mut self) -> u64 {
        self.next_msdu += 1;
        self.next_msdu
    }
}

/// What a node may look at and change while handling one observation.
pub struct MacEnv<'a> {
    pub now: Time,
    pub medium: &'a Medium,
    pub params: &'a MacParams,
    pub sp_table: &'a SpTable,
    pub scheduler: Option<&'a mut Scheduler>,
    pub ids: &'a mut IdAlloc,
    pub out: Vec<Action>,
}

impl MacEnv<'_> {
    fn emit(&mut self, a: Action) {
        self.out.push(a);
    }

    fn note(&mut self, n: Note) {
        self.out.push(Action::Note(n));
    }

    fn timer(&mut self, kind: TimerKind, at: Time) {
        self.out.push(Action::SetTimer { kind, at });
    }

    fn clear(&mut self, kind: TimerKind) {
        self.out.push(Action::ClearTimer { kind });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Msdu {
    pub id: u64,
    pub flow: usize,
    pub dst: NodeId,
    pub bytes: u32,
    pub ac: AccessCategory,
    pub arrival: Time,
}

#[derive(Debug, Clone)]
pub struct LocalFlow {
    pub flow: usize,
    pub dst: NodeId,
    pub ac: AccessCategory,
    pub payload_bytes: u32,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContenderKind {
    Beacon,
    BlockAck,
    Data(AccessCategory),
}

impl ContenderKind {
    pub fn label(self) -> &'static str {
        match self {
            ContenderKind::Beacon => "BCN",
            ContenderKind::BlockAck => "BA",
            ContenderKind::Data(ac) => ac.label(),
        }
    }
}

/// One EDCA access function.
#[derive(Debug, Clone)]
pub struct Contender {
    pub kind: ContenderKind,
    pub params: EdcaParams,
    pub backoff: Option<u32>,
    resume_at: Option<Time>,
    pub retry: u32,
}

impl Contender {
    fn expiry(&self, slot: Time) -> Option<Time> {
        Some(self.resume_at? + self.backoff? as Time * slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacPhase {
    Idle,
    Deferring,
    Backoff,
    AwaitCts,
    AwaitAck,
    AwaitGrant,
    Transmitting,
    NavBlocked,
    SpBlocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exchange {
    Idle,
    Rts { c: usize },
    AwaitCts { c: usize },
    DataPending { c: usize },
    Data { c: usize },
    AwaitAck { c: usize },
    Beacon { c: usize },
    Request { c: usize },
    AwaitGrant { c: usize },
    BlockAck { c: usize },
}

#[derive(Debug, Clone, Copy)]
struct Txop {
    limit_end: Time,
    gap_end: Time,
    width: u32,
    frames: u32,
}

#[derive(Debug, Clone)]
struct Batch {
    c: usize,
    dst: NodeId,
    msdus: Vec<Msdu>,
}

#[derive(Debug, Clone)]
struct Burst {
    grant_id: u64,
    channels: Vec<ChannelId>,
    t_end: Time,
    next: usize,
}

#[derive(Debug, Clone)]
struct PendingBa {
    peer: NodeId,
    grant_id: u64,
    msdus: Vec<u64>,
}

pub struct Node {
    pub id: NodeId,
    contention_channel: ChannelId,
    rng: RngStream,
    contenders: Vec<Contender>,
    queues: Vec<VecDeque<Msdu>>,
    flows: Vec<LocalFlow>,
    phys_busy: bool,
    nav_until: Time,
    idle_since: Option<Time>,
    /// Node gave up the current access interval and waits for it to close.
    yielded_until: Option<Time>,
    exchange: Exchange,
    txop: Option<Txop>,
    response: Option<Frame>,
    // separated variant
    requested: Option<Batch>,
    granted: BTreeMap<u64, Batch>,
    awaiting_ack: BTreeMap<u64, Batch>,
    received: BTreeMap<u64, Vec<u64>>,
    pending_ba: VecDeque<PendingBa>,
    burst: Option<Burst>,
    beacon_slots: BTreeMap<u64, ()>,
    pending_beacon: VecDeque<u64>,
    separated: bool,
    max_outstanding: usize,
}

impl Node {
    pub fn new(id: NodeId, seed: u64, params: &MacParams, has_beacons: bool) -> Self {
        let mut contenders = Vec::new();
        let separated = matches!(params.variant, Variant::Separated(_));
        let beacon_params = params.edca.get(AccessCategory::Voice);
        if has_beacons && !separated {
            contenders.push(Contender { kind: ContenderKind::Beacon, params: beacon_params, backoff: None, resume_at: None, retry: 0 });
        }
        if separated {
            contenders.push(Contender { kind: ContenderKind::BlockAck, params: beacon_params, backoff: None, resume_at: None, retry: 0 });
        }
        for ac in AccessCategory::ALL {
            contenders.push(Contender {
                kind: ContenderKind::Data(ac),
                params: params.edca.get(ac),
                backoff: None,
                resume_at: None,
                retry: 0,
            });
        }
        let queue_count = contenders.len();
        Node {
            id,
            contention_channel: params.contention_channel(),
            rng: RngStream::new(seed, id as u64),
            contenders,
            queues: vec![VecDeque::new(); queue_count],
            flows: Vec::new(),
            phys_busy: false,
            nav_until: 0,
            idle_since: Some(0),
            yielded_until: None,
            exchange: Exchange::Idle,
            txop: None,
            response: None,
            requested: None,
            granted: BTreeMap::new(),
            awaiting_ack: BTreeMap::new(),
            received: BTreeMap::new(),
            pending_ba: VecDeque::new(),
            burst: None,
            beacon_slots: BTreeMap::new(),
            pending_beacon: VecDeque::new(),
            separated,
            max_outstanding: params.max_outstanding,
        }
    }

    pub fn add_flow(&mut self, flow: LocalFlow) {
        self.flows.push(flow);
    }

    pub fn flows(&self) -> &[LocalFlow] {
        &self.flows
    }

    pub fn nav_until(&self) -> Time {
        self.nav_until
    }

    pub fn contenders(&self) -> &[Contender] {
        &self.contenders
    }

    pub fn queue_len(&self, ac: AccessCategory) -> usize {
        self.contender_index(ContenderKind::Data(ac)).map(|c| self.queues[c].len()).unwrap_or(0)
    }

    pub fn register_beacon_slot(&mut self, grant_id: u64) {
        self.beacon_slots.insert(grant_id, ());
    }

    pub fn phase(&self, now: Time) -> MacPhase {
        match self.exchange {
            Exchange::AwaitCts { .. } => return MacPhase::AwaitCts,
            Exchange::AwaitAck { .. } => return MacPhase::AwaitAck,
            Exchange::AwaitGrant { .. } => return MacPhase::AwaitGrant,
            Exchange::Idle => {}
            _ => return MacPhase::Transmitting,
        }
        if self.response.is_some() || self.burst.is_some() {
            return MacPhase::Transmitting;
        }
        if now < self.nav_until {
            return MacPhase::NavBlocked;
        }
        if self.yielded_until.is_some() {
            return MacPhase::SpBlocked;
        }
        if self.idle_since.is_none() && !self.phys_busy {
            return MacPhase::SpBlocked;
        }
        if self.phys_busy {
            return MacPhase::Deferring;
        }
        if self.contenders.iter().any(|c| c.backoff.is_some()) {
            MacPhase::Backoff
        } else {
            MacPhase::Idle
        }
    }

    fn contender_index(&self, kind: ContenderKind) -> Option<usize> {
        self.contenders.iter().position(|c| c.kind == kind)
    }

    fn has_traffic(&self, c: usize) -> bool {
        match self.contenders[c].kind {
            ContenderKind::Beacon => !self.queues[c].is_empty(),
            ContenderKind::BlockAck => !self.pending_ba.is_empty(),
            ContenderKind::Data(_) => match self.requested {
                None if self.is_separated() => {
                    !self.queues[c].is_empty()
                        && self.granted.values().chain(self.awaiting_ack.values()).filter(|b| b.c == c).count()
                            < self.max_outstanding
                }
                None => !self.queues[c].is_empty(),
                Some(_) => false,
            },
        }
    }

    fn is_separated(&self) -> bool {
        self.separated
    }

    /// Contender whose exchange is in progress.
    fn busy_contender(&self) -> Option<usize> {
        match self.exchange {
            Exchange::Idle => None,
            Exchange::Rts { c }
            | Exchange::AwaitCts { c }
            | Exchange::DataPending { c }
            | Exchange::Data { c }
            | Exchange::AwaitAck { c }
            | Exchange::Beacon { c }
            | Exchange::Request { c }
            | Exchange::AwaitGrant { c }
            | Exchange::BlockAck { c } => Some(c),
        }
    }

    // ---- gating -------------------------------------------------------------------------

    fn gate(&self, env: &MacEnv) -> Gate {
        let now = env.now;
        let mut gate = match env.params.variant {
            Variant::Baseline => rtwt_gate(now, env.sp_table, self.id),
            Variant::Separated(b) => match b {
                BoundaryMode::ChannelSplit { .. } => Gate::Allowed(NEVER),
                BoundaryMode::TimeSplit { .. } => {
                    let (ws, we) = b.cp_window_at(now);
                    if now < ws {
                        Gate::BlockedUntil(ws)
                    } else {
                        Gate::Allowed(we)
                    }
                }
            },
        };
        if let Some(sched) = env.scheduler.as_deref() {
            if matches!(env.params.variant, Variant::Separated(_)) {
                let mut t = now;
                while let Some(r) = sched.sender_busy(self.id, t, t + 1) {
                    t = r.t_end;
                }
                if t > now {
                    gate = Gate::BlockedUntil(match gate {
                        Gate::BlockedUntil(g) => g.max(t),
                        Gate::Allowed(_) => t,
                    });
                } else if let Gate::Allowed(g) = gate {
                    let next_own = sched
                        .table()
                        .iter()
                        .filter(|r| r.src == self.id && r.t_start >= now)
                        .map(|r| r.t_start)
                        .min()
                        .unwrap_or(NEVER);
                    gate = Gate::Allowed(g.min(next_own));
                }
            }
        }
        gate
    }

    fn effective_idle(&self, env: &MacEnv) -> bool {
        !self.phys_busy
            && self.exchange == Exchange::Idle
            && self.response.is_none()
            && self.burst.is_none()
            && self.yielded_until.is_none()
            && !env.medium.is_transmitting(self.id)
            && env.now >= self.nav_until
            && matches!(self.gate(env), Gate::Allowed(_))
    }

    /// Re-derives idle/busy, freezing or resuming backoff, and re-arms timers.
    fn reevaluate(&mut self, env: &mut MacEnv) {
        let now = env.now;
        if let Some(y) = self.yielded_until {
            if now >= y {
                self.yielded_until = None;
            }
        }
        let active = self.busy_contender();
        for c in 0..self.contenders.len() {
            if Some(c) != active && self.contenders[c].backoff.is_none() && self.has_traffic(c) {
                self.draw(c, env);
            }
        }
        let idle = self.effective_idle(env);
        match (self.idle_since, idle) {
            (None, true) => {
                self.idle_since = Some(now);
                let t = env.params.timings;
                for c in &mut self.contenders {
                    if c.backoff.is_some() {
                        c.resume_at = Some(now + c.params.aifs_us(&t));
                    }
                }
            }
            (Some(_), false) => {
                // A counter reaching zero at this very instant still transmits.
                let slot = env.params.timings.slot_us;
                if self.contenders.iter().any(|c| c.expiry(slot) == Some(now)) {
                    self.access(env);
                    if self.idle_since.is_none() {
                        self.arm(env);
                        return;
                    }
                    if self.effective_idle(env) {
                        self.arm(env);
                        return;
                    }
                }
                self.freeze(now, slot);
                self.idle_since = None;
            }
            _ => {}
        }
        self.arm(env);
    }

    fn freeze(&mut self, now: Time, slot: Time) {
        for c in &mut self.contenders {
            if let (Some(b), Some(r)) = (c.backoff, c.resume_at) {
                if now > r {
                    let elapsed = ((now - r) / slot) as u32;
                    c.backoff = Some(b - elapsed.min(b));
                }
            }
            c.resume_at = None;
        }
    }

    fn arm(&mut self, env: &mut MacEnv) {
        let now = env.now;
        if self.idle_since.is_some() {
            let slot = env.params.timings.slot_us;
            match self.contenders.iter().filter_map(|c| c.expiry(slot)).min() {
                Some(at) => env.timer(TimerKind::Access, at.max(now)),
                None => env.clear(TimerKind::Access),
            }
            match self.gate(env) {
                Gate::Allowed(g) if g != NEVER => env.timer(TimerKind::Gate, g.max(now)),
                _ => env.clear(TimerKind::Gate),
            }
        } else {
            env.clear(TimerKind::Access);
            if let Some(y) = self.yielded_until {
                env.timer(TimerKind::Gate, y);
            } else if let Gate::BlockedUntil(g) = self.gate(env) {
                env.timer(TimerKind::Gate, g);
            }
        }
        if self.nav_until > now {
            env.timer(TimerKind::Nav, self.nav_until);
        }
    }

    fn draw(&mut self, c: usize, env: &mut MacEnv) {
        let now = env.now;
        let t = env.params.timings;
        let retry = self.contenders[c].retry;
        let (cwmin, cwmax) = (self.contenders[c].params.cwmin, self.contenders[c].params.cwmax);
        let slots = backoff_draw(retry, cwmin, cwmax, &mut self.rng);
        let cw = contention_window(retry, cwmin, cwmax);
        let aifs = self.contenders[c].params.aifs_us(&t);
        let resume = self.idle_since.map(|since| {
            let first = since + aifs;
            if now <= first {
                first
            } else {
                first + (now - first).div_ceil(t.slot_us) * t.slot_us
            }
        });
        let con = &mut self.contenders[c];
        con.backoff = Some(slots);
        con.resume_at = resume;
        env.note(Note::Backoff { node: self.id, ac: con.kind.label(), slots, cw, retry });
    }

    // ---- observations ------------------------------------------------------------------

    pub fn on_medium(&mut self, sense: Sense, env: &mut MacEnv) {
        self.phys_busy = sense == Sense::Busy;
        self.reevaluate(env);
    }

    pub fn on_arrival(&mut self, msdu: Msdu, env: &mut MacEnv) {
        let Some(c) = self.contender_index(ContenderKind::Data(msdu.ac)) else { return };
        env.note(Note::Arrival { node: self.id, msdu: msdu.id, ac: msdu.ac.label(), bytes: msdu.bytes });
        self.queues[c].push_back(msdu);
        self.kick(c, env);
    }

    pub fn on_beacon(&mut self, id: u64, env: &mut MacEnv) {
        env.note(Note::Arrival { node: self.id, msdu: id, ac: "BCN", bytes: crate::frame::BEACON_BYTES });
        let Some(c) = self.contender_index(ContenderKind::Beacon) else {
            // separated: carried by a standing reservation
            self.pending_beacon.push_back(id);
            return;
        };
        self.queues[c].push_back(Msdu { id, flow: usize::MAX, dst: usize::MAX, bytes: 0, ac: AccessCategory::Voice, arrival: env.now });
        self.kick(c, env);
    }

    /// New work for contender `c`: transmit at once after a long idle, else draw.
    fn kick(&mut self, c: usize, env: &mut MacEnv) {
        if self.contenders[c].backoff.is_none() && self.has_traffic(c) {
            let aifs = self.contenders[c].params.aifs_us(&env.params.timings);
            let long_idle =
                self.effective_idle(env) && self.idle_since.is_some_and(|s| s + aifs <= env.now);
            if long_idle {
                self.contenders[c].backoff = Some(0);
                self.contenders[c].resume_at = Some(env.now);
                self.access(env);
            } else {
                self.draw(c, env);
            }
        }
        self.reevaluate(env);
    }

    pub fn on_timer(&mut self, kind: TimerKind, env: &mut MacEnv) {
        match kind {
            TimerKind::Access => {
                if self.idle_since.is_some() {
                    self.access(env);
                }
            }
            TimerKind::Timeout => self.on_timeout(env),
            TimerKind::Response => self.send_response(env),
            TimerKind::SendData => self.send_data(env),
            TimerKind::Nav | TimerKind::Gate => {}
            TimerKind::BurstNext => self.burst_next(env),
            TimerKind::Reservation(g) => self.start_reservation(g, env),
            TimerKind::BaTimeout(g) => {
                if let Some(batch) = self.awaiting_ack.remove(&g) {
                    self.requeue(batch.c, batch.msdus);
                }
            }
        }
        self.reevaluate(env);
    }

    // ---- channel access -----------------------------------------------------------------

    fn access(&mut self, env: &mut MacEnv) {
        let now = env.now;
        let slot = env.params.timings.slot_us;
        let due: Vec<usize> =
            (0..self.contenders.len()).filter(|&c| self.contenders[c].expiry(slot) == Some(now)).collect();
        let mut ready = Vec::new();
        for c in due {
            if self.has_traffic(c) {
                ready.push(c);
            } else {
                self.contenders[c].backoff = None;
                self.contenders[c].resume_at = None;
            }
        }
        let Some((&winner, losers)) = ready.split_first() else { return };
        for &l in losers {
            self.contenders[l].retry += 1;
            self.draw(l, env);
        }
        self.contenders[winner].backoff = None;
        self.contenders[winner].resume_at = None;
        self.start_exchange(winner, env);
        if self.exchange != Exchange::Idle {
            self.freeze(now, slot);
            self.idle_since = None;
        }
    }

    fn gap_end(&self, env: &MacEnv) -> Time {
        match self.gate(env) {
            Gate::Allowed(g) => g,
            Gate::BlockedUntil(_) => env.now,
        }
    }

    /// Gives up the rest of the access interval when the exchange cannot fit.
    fn yield_gap(&mut self, c: usize, gap_end: Time, env: &mut MacEnv) {
        self.yielded_until = Some(gap_end);
        self.draw(c, env);
    }

    fn idle_map(&self, env: &MacEnv) -> Vec<bool> {
        (0..env.params.channels.count)
            .map(|ch| env.medium.sense(self.id, ch, env.now).map(|s| s == Sense::Idle).unwrap_or(false))
            .collect()
    }

    fn start_exchange(&mut self, c: usize, env: &mut MacEnv) {
        let now = env.now;
        let gap_end = self.gap_end(env);
        let p = env.params;
        let sifs = p.timings.sifs_us;
        match self.contenders[c].kind {
            ContenderKind::Beacon => {
                let Some(b) = self.queues[c].front().cloned() else { return };
                let mut f = Frame::control(env.ids.frame(), FrameType::Beacon, self.id, None, 0);
                if now + f.airtime() > gap_end {
                    return self.yield_gap(c, gap_end, env);
                }
                f.msdus = vec![b.id];
                self.exchange = Exchange::Beacon { c };
                env.emit(Action::Transmit { frame: f, channels: vec![self.contention_channel] });
            }
            ContenderKind::BlockAck => {
                let Some(ba) = self.pending_ba.front().cloned() else { return };
                let mut f = Frame::control(env.ids.frame(), FrameType::BlockAck, self.id, Some(ba.peer), 0);
                if now + f.airtime() > gap_end {
                    return self.yield_gap(c, gap_end, env);
                }
                f.reservation = Some(ba.grant_id);
                f.msdus = ba.msdus.clone();
                f.payload = Payload::Acked(ba.msdus);
                self.exchange = Exchange::BlockAck { c };
                env.emit(Action::Transmit { frame: f, channels: vec![self.contention_channel] });
            }
            ContenderKind::Data(ac) if self.is_separated() => {
                let Some(head) = self.queues[c].front().cloned() else { return };
                let grant_air = control_airtime(FrameType::ReservationGrant);
                let req_air = control_airtime(FrameType::ReservationReq);
                if now + req_air + sifs + grant_air > gap_end {
                    return self.yield_gap(c, gap_end, env);
                }
                let budget = p.batch_budget(ac);
                let mut batch = Vec::new();
                let mut sizes = Vec::new();
                while let Some(m) = self.queues[c].front() {
                    if m.dst != head.dst {
                        break;
                    }
                    let mut trial = sizes.clone();
                    trial.push(m.bytes);
                    if !batch.is_empty() && burst_duration(&trial, p.data_mcs, 20, p.nss, sifs) > budget {
                        break;
                    }
                    sizes = trial;
                    batch.push(self.queues[c].pop_front().expect("front exists"));
                }
                let mut f = Frame::control(
                    env.ids.frame(),
                    FrameType::ReservationReq,
                    self.id,
                    Some(head.dst),
                    nav_duration(&[grant_air], sifs),
                );
                f.msdus = batch.iter().map(|m| m.id).collect();
                f.payload = Payload::Request {
                    sizes,
                    mcs: p.data_mcs,
                    nss: p.nss,
                    max_width_mhz: p.caps[self.id],
                };
                self.requested = Some(Batch { c, dst: head.dst, msdus: batch });
                self.exchange = Exchange::Request { c };
                env.emit(Action::Transmit { frame: f, channels: vec![self.contention_channel] });
            }
            ContenderKind::Data(ac) => {
                let Some(head) = self.queues[c].front().cloned() else { return };
                let idle = self.idle_map(env);
                let width = bond_width(&p.channels, &idle, p.caps[self.id], p.caps[head.dst]);
                let hs = select_handshake(head.bytes, p.rts_threshold);
                let first = p.exchange_duration(hs, head.bytes, width);
                let txop_limit = p.edca.get(ac).txop_limit_us;
                let limit_end = now + txop_limit.max(first);
                let fits = match p.gap_policy {
                    GapPolicy::Truncate => now + first <= gap_end,
                    GapPolicy::Defer => {
                        let planned = self.planned_burst(c, hs, width, limit_end - now, env);
                        now + planned <= gap_end
                    }
                };
                if !fits {
                    return self.yield_gap(c, gap_end, env);
                }
                self.txop = Some(Txop { limit_end, gap_end, width, frames: 0 });
                match hs {
                    Handshake::RtsCts => {
                        let remaining = [
                            control_airtime(FrameType::Cts),
                            p.data_air(head.bytes, width),
                            control_airtime(FrameType::Ack),
                        ];
                        let mut f = Frame::control(
                            env.ids.frame(),
                            FrameType::Rts,
                            self.id,
                            Some(head.dst),
                            nav_duration(&remaining, sifs),
                        );
                        f.msdus = vec![head.id];
                        self.exchange = Exchange::Rts { c };
                        env.emit(Action::Transmit { frame: f, channels: vec![self.contention_channel] });
                    }
                    Handshake::Direct => {
                        self.exchange = Exchange::DataPending { c };
                        self.send_data(env);
                    }
                }
            }
        }
    }

    /// Airtime of the burst a TXOP would carry from the current queue.
    fn planned_burst(&self, c: usize, hs: Handshake, width: u32, budget: Time, env: &MacEnv) -> Time {
        let p = env.params;
        let sifs = p.timings.sifs_us;
        let mut total = 0;
        for (i, m) in self.queues[c].iter().enumerate() {
            let d = if i == 0 {
                p.exchange_duration(hs, m.bytes, width)
            } else {
                sifs + p.exchange_duration(Handshake::Direct, m.bytes, width)
            };
            if i > 0 && total + d > budget {
                break;
            }
            total += d;
        }
        total
    }

    fn send_data(&mut self, env: &mut MacEnv) {
        let Exchange::DataPending { c } = self.exchange else { return };
        let p = env.params;
        let Some(head) = self.queues[c].front().cloned() else {
            self.exchange = Exchange::Idle;
            return;
        };
        let txop = self.txop.expect("data always runs inside a txop");
        let idle = self.idle_map(env);
        let width = bond_width(&p.channels, &idle, p.caps[self.id], p.caps[head.dst]).min(txop.width);
        let channels = p.channels.primary_block(width).expect("bonded width fits the channel set");
        if env.now < self.nav_until || env.medium.is_transmitting(self.id) {
            self.exchange = Exchange::Idle;
            self.fail(c, env);
            return;
        }
        let mut f = Frame::data(
            env.ids.frame(),
            self.id,
            Some(head.dst),
            head.bytes,
            p.data_mcs,
            width,
            p.nss,
            nav_duration(&[control_airtime(FrameType::Ack)], p.timings.sifs_us),
        );
        f.msdus = vec![head.id];
        // A narrower bond stretches the frame; it must still end before the gap does.
        if env.now + f.airtime() + p.timings.sifs_us + control_airtime(FrameType::Ack) > txop.gap_end {
            self.txop = None;
            self.exchange = Exchange::Idle;
            self.draw(c, env);
            return;
        }
        self.exchange = Exchange::Data { c };
        env.emit(Action::Transmit { frame: f, channels });
    }

    pub fn on_tx_end(&mut self, frame: &Frame, env: &mut MacEnv) {
        let t = env.params.timings;
        match (self.exchange, frame.ftype) {
            (Exchange::Rts { c }, FrameType::Rts) => {
                self.exchange = Exchange::AwaitCts { c };
                env.timer(TimerKind::Timeout, env.now + t.response_timeout(control_airtime(FrameType::Cts)));
            }
            (Exchange::Data { c }, FrameType::Data) if self.burst.is_none() => {
                self.exchange = Exchange::AwaitAck { c };
                env.timer(TimerKind::Timeout, env.now + t.response_timeout(control_airtime(FrameType::Ack)));
            }
            (Exchange::Beacon { c }, FrameType::Beacon) => {
                self.queues[c].pop_front();
                self.exchange = Exchange::Idle;
                self.contenders[c].retry = 0;
                self.draw(c, env);
            }
            (Exchange::Request { c }, FrameType::ReservationReq) => {
                self.exchange = Exchange::AwaitGrant { c };
                env.timer(
                    TimerKind::Timeout,
                    env.now + t.response_timeout(control_airtime(FrameType::ReservationGrant)),
                );
            }
            (Exchange::BlockAck { c }, FrameType::BlockAck) => {
                self.pending_ba.pop_front();
                self.exchange = Exchange::Idle;
                self.contenders[c].retry = 0;
                self.draw(c, env);
            }
            _ => {}
        }
        if self.response.as_ref().is_some_and(|r| r.id == frame.id) {
            self.response = None;
        }
        if frame.ftype == FrameType::Data && frame.reservation.is_some() {
            self.burst_frame_done(env);
        }
        if frame.ftype == FrameType::Beacon && frame.reservation.is_some() {
            self.burst = None;
        }
        self.reevaluate(env);
    }

    fn on_timeout(&mut self, env: &mut MacEnv) {
        match self.exchange {
            Exchange::AwaitCts { c } | Exchange::AwaitAck { c } => {
                self.exchange = Exchange::Idle;
                self.fail(c, env);
            }
            Exchange::AwaitGrant { c } => {
                self.exchange = Exchange::Idle;
                if let Some(batch) = self.requested.take() {
                    self.requeue(c, batch.msdus);
                }
                let con = &mut self.contenders[c];
                con.retry += 1;
                if con.retry > env.params.timings.retry_limit {
                    con.retry = 0;
                }
                self.draw(c, env);
            }
            _ => {}
        }
    }

    /// Failed attempt: grow the window, drop after the retry limit, redraw.
    fn fail(&mut self, c: usize, env: &mut MacEnv) {
        self.txop = None;
        let con = &mut self.contenders[c];
        con.retry += 1;
        if con.retry > env.params.timings.retry_limit {
            con.retry = 0;
            if let Some(m) = self.queues[c].pop_front() {
                env.note(Note::Drop { node: self.id, msdu: m.id, ac: m.ac.label() });
                self.refill(m.flow, env);
            }
        }
        self.draw(c, env);
    }

    fn requeue(&mut self, c: usize, msdus: Vec<Msdu>) {
        for m in msdus.into_iter().rev() {
            self.queues[c].push_front(m);
        }
    }

    /// Keeps a saturated flow's backlog topped up.
    fn refill(&mut self, flow: usize, env: &mut MacEnv) {
        let Some(f) = self.flows.iter().find(|f| f.flow == flow).cloned() else { return };
        if !f.saturated {
            return;
        }
        let Some(c) = self.contender_index(ContenderKind::Data(f.ac)) else { return };
        let outstanding = self.queues[c].iter().filter(|m| m.flow == flow).count()
            + self
                .requested
                .iter()
                .chain(self.granted.values())
                .chain(self.awaiting_ack.values())
                .flat_map(|b| b.msdus.iter())
                .filter(|m| m.flow == flow)
                .count();
        for _ in outstanding..env.params.saturated_backlog {
            let m = Msdu { id: env.ids.msdu(), flow, dst: f.dst, bytes: f.payload_bytes, ac: f.ac, arrival: env.now };
            env.note(Note::Arrival { node: self.id, msdu: m.id, ac: m.ac.label(), bytes: m.bytes });
            self.queues[c].push_back(m);
        }
    }

    /// Fills saturated backlogs at start-up.
    pub fn init_saturated(&mut self, env: &mut MacEnv) {
        let flows: Vec<usize> = self.flows.iter().filter(|f| f.saturated).map(|f| f.flow).collect();
        for flow in flows {
            self.refill(flow, env);
            if let Some(f) = self.flows.iter().find(|f| f.flow == flow) {
                if let Some(c) = self.contender_index(ContenderKind::Data(f.ac)) {
                    self.kick(c, env);
                }
            }
        }
        self.reevaluate(env);
    }

    // ---- reception -----------------------------------------------------------------------

    pub fn on_frame(&mut self, frame: &Frame, channels: &[ChannelId], env: &mut MacEnv) {
        let now = env.now;
        let p = env.params;
        let sifs = p.timings.sifs_us;
        if frame.dst != Some(self.id) {
            if frame.duration_field_us > 0 && channels.contains(&self.contention_channel) {
                self.nav_until = update_nav(self.nav_until, frame.duration_field_us, now);
            }
            self.reevaluate(env);
            return;
        }
        match frame.ftype {
            FrameType::Rts => {
                if now >= self.nav_until && self.can_respond() {
                    let cts_air = control_airtime(FrameType::Cts);
                    let nav = frame.duration_field_us.saturating_sub(sifs + cts_air);
                    let mut cts = Frame::control(env.ids.frame(), FrameType::Cts, self.id, Some(frame.src), nav);
                    cts.msdus = frame.msdus.clone();
                    self.respond(cts, env);
                }
            }
            FrameType::Cts => {
                if let Exchange::AwaitCts { c } = self.exchange {
                    if self.queues[c].front().is_some_and(|m| m.dst == frame.src) {
                        env.clear(TimerKind::Timeout);
                        self.exchange = Exchange::DataPending { c };
                        env.timer(TimerKind::SendData, now + sifs);
                    }
                }
            }
            FrameType::Data => {
                if let Some(g) = frame.reservation {
                    self.received.entry(g).or_default().extend(frame.msdus.iter().copied());
                } else if self.can_respond() {
                    let mut ack = Frame::control(env.ids.frame(), FrameType::Ack, self.id, Some(frame.src), 0);
                    ack.msdus = frame.msdus.clone();
                    self.respond(ack, env);
                }
            }
            FrameType::Ack => {
                if let Exchange::AwaitAck { c } = self.exchange {
                    env.clear(TimerKind::Timeout);
                    self.on_ack(c, env);
                }
            }
            FrameType::ReservationReq => self.on_request(frame, env),
            FrameType::ReservationGrant => self.on_grant(frame, env),
            FrameType::BlockAck => self.on_block_ack(frame, env),
            FrameType::Beacon => {}
        }
        self.reevaluate(env);
    }

    fn can_respond(&self) -> bool {
        self.response.is_none()
            && !matches!(
                self.exchange,
                Exchange::Rts { .. } | Exchange::Data { .. } | Exchange::Beacon { .. } | Exchange::Request { .. } | Exchange::BlockAck { .. }
            )
    }

    fn respond(&mut self, frame: Frame, env: &mut MacEnv) {
        self.response = Some(frame);
        env.timer(TimerKind::Response, env.now + env.params.timings.sifs_us);
    }

    fn send_response(&mut self, env: &mut MacEnv) {
        let Some(frame) = self.response.clone() else { return };
        if env.now < self.nav_until || env.medium.is_transmitting(self.id) {
            self.response = None;
            return;
        }
        env.emit(Action::Transmit { frame, channels: vec![self.contention_channel] });
    }

    fn on_ack(&mut self, c: usize, env: &mut MacEnv) {
        let p = env.params;
        let now = env.now;
        let sifs = p.timings.sifs_us;
        let done = self.queues[c].pop_front();
        self.contenders[c].retry = 0;
        if let Some(m) = &done {
            self.refill(m.flow, env);
        }
        let mut txop = self.txop.expect("ack closes an exchange inside a txop");
        txop.frames += 1;
        if let Some(next) = self.queues[c].front() {
            let d = sifs + p.exchange_duration(Handshake::Direct, next.bytes, txop.width);
            let within_limit = now + d <= txop.limit_end;
            if within_limit && now + d <= txop.gap_end {
                self.txop = Some(txop);
                self.exchange = Exchange::DataPending { c };
                env.timer(TimerKind::SendData, now + sifs);
                return;
            }
        }
        self.txop = None;
        self.exchange = Exchange::Idle;
        self.draw(c, env);
    }

    // ---- separated variant ---------------------------------------------------------------

    fn on_request(&mut self, frame: &Frame, env: &mut MacEnv) {
        let Payload::Request { sizes, mcs, nss, max_width_mhz } = &frame.payload else { return };
        if !self.can_respond() || env.now < self.nav_until {
            return;
        }
        let p = env.params;
        let sifs = p.timings.sifs_us;
        let grant_air = control_airtime(FrameType::ReservationGrant);
        let reply_at = env.now + sifs;
        let Some(sched) = env.scheduler.as_deref_mut() else { return };
        if sched.sender_busy(self.id, reply_at, reply_at + grant_air).is_some() {
            return;
        }
        let req = ReservationRequest {
            src: frame.src,
            dst: self.id,
            sizes: sizes.clone(),
            mcs: *mcs,
            nss: *nss,
            max_width_mhz: (*max_width_mhz).min(p.caps[self.id]),
        };
        let earliest = reply_at + grant_air + sifs;
        let (grant_id, covered) = match sched.grant_prefix(&req, earliest) {
            Some((r, k)) => {
                env.emit(Action::ReservationCreated { grant_id: r.grant_id });
                (Some(r.grant_id), k)
            }
            None => (None, frame.msdus.len()),
        };
        let mut g = Frame::control(env.ids.frame(), FrameType::ReservationGrant, self.id, Some(frame.src), 0);
        g.msdus = frame.msdus[..covered.min(frame.msdus.len())].to_vec();
        g.reservation = grant_id;
        g.payload = Payload::Grant { grant_id };
        self.respond(g, env);
    }

    fn on_grant(&mut self, frame: &Frame, env: &mut MacEnv) {
        let Exchange::AwaitGrant { c } = self.exchange else { return };
        let Payload::Grant { grant_id } = frame.payload else { return };
        let Some(batch) = self.requested.take() else { return };
        if batch.dst != frame.src {
            self.requested = Some(batch);
            return;
        }
        env.clear(TimerKind::Timeout);
        self.exchange = Exchange::Idle;
        self.contenders[c].retry = 0;
        match grant_id.and_then(|g| env.scheduler.as_deref().and_then(|s| s.get(g)).cloned()) {
            Some(res) => {
                let mut batch = batch;
                let keep = frame.msdus.len().min(batch.msdus.len());
                let rest = batch.msdus.split_off(keep);
                if !rest.is_empty() {
                    self.requeue(c, rest);
                }
                env.timer(TimerKind::Reservation(res.grant_id), res.t_start);
                self.granted.insert(res.grant_id, batch);
            }
            None => self.requeue(c, batch.msdus),
        }
        self.draw(c, env);
    }

    fn start_reservation(&mut self, grant_id: u64, env: &mut MacEnv) {
        let Some(res) = env.scheduler.as_deref().and_then(|s| s.get(grant_id)).cloned() else { return };
        if self.beacon_slots.remove(&grant_id).is_some() {
            let Some(b) = self.pending_beacon.pop_front() else { return };
            if env.medium.is_transmitting(self.id) {
                self.pending_beacon.push_front(b);
                return;
            }
            let mut f = Frame::control(env.ids.frame(), FrameType::Beacon, self.id, None, 0);
            f.msdus = vec![b];
            f.reservation = Some(grant_id);
            self.burst = Some(Burst { grant_id, channels: res.channels.clone(), t_end: res.t_end, next: 1 });
            env.emit(Action::Transmit { frame: f, channels: res.channels });
            return;
        }
        let Some(batch) = self.granted.get(&grant_id) else { return };
        if env.medium.is_transmitting(self.id) || batch.msdus.is_empty() {
            let batch = self.granted.remove(&grant_id).expect("present");
            self.requeue(batch.c, batch.msdus);
            return;
        }
        self.burst = Some(Burst { grant_id, channels: res.channels.clone(), t_end: res.t_end, next: 0 });
        self.burst_next(env);
    }

    fn burst_next(&mut self, env: &mut MacEnv) {
        let Some(burst) = self.burst.clone() else { return };
        let p = env.params;
        let Some(batch) = self.granted.get(&burst.grant_id) else {
            self.burst = None;
            return;
        };
        let Some(m) = batch.msdus.get(burst.next).cloned() else {
            self.finish_burst(env);
            return;
        };
        let width = burst.channels.len() as u32 * 20;
        let mut f = Frame::data(env.ids.frame(), self.id, Some(m.dst), m.bytes, p.data_mcs, width, p.nss, 0);
        if env.now + f.airtime() > burst.t_end || env.medium.is_transmitting(self.id) {
            self.finish_burst(env);
            return;
        }
        f.msdus = vec![m.id];
        f.reservation = Some(burst.grant_id);
        if let Some(b) = self.burst.as_mut() {
            b.next += 1;
        }
        env.emit(Action::Transmit { frame: f, channels: burst.channels });
    }

    fn burst_frame_done(&mut self, env: &mut MacEnv) {
        let Some(burst) = &self.burst else { return };
        let more = self.granted.get(&burst.grant_id).is_some_and(|b| burst.next < b.msdus.len());
        if more {
            env.timer(TimerKind::BurstNext, env.now + env.params.timings.sifs_us);
        } else {
            self.finish_burst(env);
        }
    }

    fn finish_burst(&mut self, env: &mut MacEnv) {
        let Some(burst) = self.burst.take() else { return };
        let Some(mut batch) = self.granted.remove(&burst.grant_id) else { return };
        if burst.next < batch.msdus.len() {
            let rest = batch.msdus.split_off(burst.next);
            self.requeue(batch.c, rest);
        }
        env.timer(TimerKind::BaTimeout(burst.grant_id), burst.t_end + env.params.ba_timeout_us);
        self.awaiting_ack.insert(burst.grant_id, batch);
    }

    /// Scheduler-side notification that a reservation addressed to this node ended.
    pub fn on_reservation_end(&mut self, grant_id: u64, src: NodeId, env: &mut MacEnv) {
        if let Some(msdus) = self.received.remove(&grant_id) {
            if !msdus.is_empty() {
                self.pending_ba.push_back(PendingBa { peer: src, grant_id, msdus });
                if let Some(c) = self.contender_index(ContenderKind::BlockAck) {
                    self.kick(c, env);
                }
            }
        }
        self.reevaluate(env);
    }

    fn on_block_ack(&mut self, frame: &Frame, env: &mut MacEnv) {
        let Payload::Acked(acked) = &frame.payload else { return };
        let Some(g) = frame.reservation else { return };
        let Some(batch) = self.awaiting_ack.remove(&g) else { return };
        let (done, lost): (Vec<Msdu>, Vec<Msdu>) = batch.msdus.into_iter().partition(|m| acked.contains(&m.id));
        self.requeue(batch.c, lost);
        let mut flows: Vec<usize> = done.iter().map(|m| m.flow).collect();
        flows.dedup();
        for f in flows {
            self.refill(f, env);
        }
    }
}
