//! The simulation loop: nodes, medium, traffic sources and the trace they produce.

use std::collections::BTreeMap;

use crate::config::{Arrival, RunSpec};
use crate::engine::{EventId, EventKind, RngStream, Scheduler as EventQueue, Time};
use crate::frame::{control_airtime, ChannelId, Frame, FrameType, Modulation, NodeId};
use crate::mac::access::SpTable;
use crate::mac::node::{Action, IdAlloc, LocalFlow, MacEnv, Msdu, Node, TimerKind};
use crate::mac::separated::{ReservationKind, Scheduler};
use crate::medium::{ChannelSet, InFlight, Medium, Reception, Sense};
use crate::trace::{Outcome, TraceEvent, TraceRecord};

#[derive(Debug, Clone)]
enum Ev {
    TxEnd(u64),
    Timer(NodeId, TimerKind),
    Arrival(usize),
    Beacon,
    ReservationEnd(u64),
    Interfere(usize),
    GapEnd(usize),
}

/// Facts about a run that the trace alone does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub duration_us: Time,
    pub channels: ChannelSet,
    pub data_mcs: Modulation,
    pub interferers: Vec<NodeId>,
    pub contention_channel: ChannelId,
}

pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub meta: RunMeta,
}

pub struct World {
    spec: RunSpec,
    queue: EventQueue<Ev>,
    medium: Medium,
    nodes: Vec<Node>,
    sp_table: SpTable,
    scheduler: Option<Scheduler>,
    ids: IdAlloc,
    timers: BTreeMap<(NodeId, TimerKind), (EventId, Time)>,
    flow_rng: Vec<RngStream>,
    sensed: Vec<Sense>,
    foreign: Vec<bool>,
    last_dp_end: BTreeMap<u64, Time>,
    last_bss_end: Time,
    trace: Vec<TraceRecord>,
    finished: bool,
}

impl World {
    pub fn new(spec: RunSpec) -> Self {
        let n = spec.node_names.len();
        let params = &spec.params;
        let medium = Medium::new(spec.topology.clone(), params.channels.clone());
        let beacon_ap = spec.beacon.as_ref().map(|b| b.ap);
        let mut nodes: Vec<Node> = (0..n).map(|i| Node::new(i, spec.seed, params, beacon_ap == Some(i))).collect();
        for (i, f) in spec.flows.iter().enumerate() {
            nodes[f.src].add_flow(LocalFlow {
                flow: i,
                dst: f.dst,
                ac: f.ac,
                payload_bytes: f.payload_bytes,
                saturated: f.arrival == Arrival::Saturated,
            });
        }
        // Frames started before the end may still run into a later occurrence.
        let reach = spec.service_periods.iter().map(|sp| sp.period_us.max(sp.duration_us)).max().unwrap_or(0);
        let sp_table = SpTable::new(&spec.service_periods, spec.duration_us + reach);
        let mut foreign = vec![false; n];
        for i in &spec.interferers {
            foreign[i.node] = true;
        }
        let scheduler = match params.variant {
            crate::mac::node::Variant::Baseline => None,
            crate::mac::node::Variant::Separated(b) => {
                let excluded: Vec<_> = spec.interferers.iter().map(|i| i.channel).collect();
                Some(Scheduler::new(b, params.channels.clone(), &excluded, spec.horizon_us, params.timings.sifs_us))
            }
        };
        let flow_rng = (0..spec.flows.len()).map(|i| RngStream::new(spec.seed, 1000 + i as u64)).collect();
        let mut w = World {
            queue: EventQueue::new(),
            medium,
            nodes,
            sp_table,
            scheduler,
            ids: IdAlloc::default(),
            timers: BTreeMap::new(),
            flow_rng,
            sensed: vec![Sense::Idle; n],
            foreign,
            last_dp_end: BTreeMap::new(),
            last_bss_end: 0,
            trace: Vec::new(),
            finished: false,
            spec,
        };
        w.init();
        w
    }

    pub fn spec(&self) -> &RunSpec {
        &self.spec
    }

    pub fn now(&self) -> Time {
        self.queue.now()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            duration_us: self.spec.duration_us,
            channels: self.spec.params.channels.clone(),
            data_mcs: self.spec.params.data_mcs,
            interferers: self.spec.interferers.iter().map(|i| i.node).collect(),
            contention_channel: self.spec.params.contention_channel(),
        }
    }

    fn push_event(&mut self, t: Time, kind: EventKind, ev: Ev) -> EventId {
        self.queue.schedule(t, kind, ev).expect("events are never scheduled in the past")
    }

    fn init(&mut self) {
        let duration = self.spec.duration_us;
        // Service periods and beacons are fixed before any grant can be issued.
        if let Some(sched) = self.scheduler.as_mut() {
            let data = sched.data_channels().to_vec();
            for occ in self.sp_table.occurrences().to_vec() {
                let r = sched.pinned(occ.owner_src, Some(occ.owner_dst), data.clone(), occ.start, occ.end, ReservationKind::ServicePeriod);
                self.trace.push(reserve_record(0, &r));
            }
        }
        if let Some(b) = self.spec.beacon.clone() {
            let mut times = Vec::new();
            let mut t = b.offset_us;
            while t < duration {
                times.push(t);
                t += b.interval_us;
            }
            for &t in &times {
                self.push_event(t, EventKind::Arrival, Ev::Beacon);
            }
            if let Some(sched) = self.scheduler.as_mut() {
                let ch = match sched.data_channels().first() {
                    Some(_) if sched.data_channels().contains(&self.spec.params.channels.primary) => {
                        self.spec.params.channels.primary
                    }
                    Some(&c) => c,
                    None => self.spec.params.channels.primary,
                };
                let air = control_airtime(FrameType::Beacon);
                let mut slots = Vec::new();
                for &t in &times {
                    if let Some(r) = sched.standing(b.ap, None, vec![ch], t, air, ReservationKind::Beacon) {
                        slots.push(r);
                    }
                }
                for r in slots {
                    self.trace.push(reserve_record(0, &r));
                    self.nodes[b.ap].register_beacon_slot(r.grant_id);
                    self.set_timer(b.ap, TimerKind::Reservation(r.grant_id), r.t_start);
                    self.push_event(r.t_end, EventKind::TimerExpiry, Ev::ReservationEnd(r.grant_id));
                }
            }
        }
        if let Some(sched) = self.scheduler.as_ref() {
            let sps: Vec<_> = sched.table().iter().filter(|r| r.kind == ReservationKind::ServicePeriod).cloned().collect();
            for r in sps {
                self.push_event(r.t_end, EventKind::TimerExpiry, Ev::ReservationEnd(r.grant_id));
            }
        }
        if self.scheduler.is_none() {
            let starts: Vec<Time> = self.sp_table.occurrences().iter().map(|o| o.start).collect();
            for (i, t) in starts.into_iter().enumerate() {
                if t > 0 && t < duration {
                    self.push_event(t, EventKind::TimerExpiry, Ev::GapEnd(i));
                }
            }
        }
        for (i, f) in self.spec.flows.clone().iter().enumerate() {
            match &f.arrival {
                Arrival::Saturated => {}
                Arrival::Poisson { rate_per_s } => {
                    let gap = self.flow_rng[i].exp_interval(1e6 / rate_per_s);
                    self.push_event(gap, EventKind::Arrival, Ev::Arrival(i));
                }
                Arrival::At { times_us, .. } => {
                    for &t in times_us {
                        self.push_event(t, EventKind::Arrival, Ev::Arrival(i));
                    }
                }
            }
        }
        for (i, inf) in self.spec.interferers.clone().iter().enumerate() {
            self.push_event(inf.start_us, EventKind::TxStart, Ev::Interfere(i));
        }
        for n in 0..self.nodes.len() {
            if !self.foreign[n] {
                self.call(n, |node, env| node.init_saturated(env));
            }
        }
        self.settle();
    }

    /// Runs the node callback and applies whatever it asked for.
    fn call<F: FnOnce(&mut Node, &mut MacEnv)>(&mut self, n: NodeId, f: F) {
        let mut env = MacEnv {
            now: self.queue.now(),
            medium: &self.medium,
            params: &self.spec.params,
            sp_table: &self.sp_table,
            scheduler: self.scheduler.as_mut(),
            ids: &mut self.ids,
            out: Vec::new(),
        };
        f(&mut self.nodes[n], &mut env);
        let out = env.out;
        self.apply(n, out);
    }

    fn set_timer(&mut self, n: NodeId, kind: TimerKind, at: Time) {
        if let Some(&(id, t)) = self.timers.get(&(n, kind)) {
            if t == at {
                return;
            }
            self.queue.cancel(id);
        }
        let id = self.push_event(at, EventKind::TimerExpiry, Ev::Timer(n, kind));
        self.timers.insert((n, kind), (id, at));
    }

    fn apply(&mut self, n: NodeId, actions: Vec<Action>) {
        let now = self.queue.now();
        for a in actions {
            match a {
                Action::Transmit { frame, channels } => self.transmit(n, frame, channels),
                Action::SetTimer { kind, at } => self.set_timer(n, kind, at),
                Action::ClearTimer { kind } => {
                    if let Some((id, _)) = self.timers.remove(&(n, kind)) {
                        self.queue.cancel(id);
                    }
                }
                Action::Note(note) => self.trace.push(note.into_record(now)),
                Action::ReservationCreated { grant_id } => {
                    let r = self.scheduler.as_ref().and_then(|s| s.get(grant_id)).cloned().expect("just granted");
                    self.trace.push(reserve_record(now, &r));
                    self.push_event(r.t_end, EventKind::TimerExpiry, Ev::ReservationEnd(grant_id));
                }
            }
        }
    }

    fn transmit(&mut self, n: NodeId, frame: Frame, channels: Vec<ChannelId>) {
        let now = self.queue.now();
        let air = frame.airtime();
        let tx = match self.medium.begin_transmission(n, frame, channels, now) {
            Ok(tx) => tx,
            Err(e) => panic!("node {n} broke the half-duplex discipline at {now}: {e}"),
        };
        self.trace.push(tx_record(&tx, TraceEvent::TxStart, air));
        self.push_event(tx.t_end, EventKind::TxEnd, Ev::TxEnd(tx.tx_id));
    }

    /// Delivers carrier-sense changes until no node sees a new state.
    fn settle(&mut self) {
        let ch = self.spec.params.contention_channel();
        loop {
            let now = self.queue.now();
            let changed = (0..self.nodes.len()).find(|&i| {
                !self.foreign[i] && self.medium.sense(i, ch, now).expect("valid node and channel") != self.sensed[i]
            });
            let Some(i) = changed else { break };
            let s = self.medium.sense(i, ch, now).expect("valid node and channel");
            self.sensed[i] = s;
            self.call(i, |node, env| node.on_medium(s, env));
        }
    }

    pub fn run_until(&mut self, t_end: Time) {
        let t_end = t_end.min(self.spec.duration_us);
        while let Some(ev) = self.queue.pop_until(t_end) {
            self.handle(ev.id(), ev.payload);
            self.settle();
        }
    }

    /// Runs to the configured duration and lets frames still on the air finish.
    pub fn run(mut self) -> RunOutput {
        self.run_until(self.spec.duration_us);
        self.finish();
        RunOutput { meta: self.meta(), trace: self.trace }
    }

    pub fn finish(&mut self) {
        if self.finished {
            return;
        }
        self.finished = true;
        let mut active: Vec<InFlight> = self.medium.active().to_vec();
        active.sort_by_key(|t| (t.t_end, t.tx_id));
        for tx in active {
            self.queue.advance_to(tx.t_end);
            self.medium.end_transmission(tx.tx_id);
            self.end_records(&tx);
        }
    }

    pub fn into_output(mut self) -> RunOutput {
        self.finish();
        RunOutput { meta: self.meta(), trace: self.trace }
    }

    fn handle(&mut self, id: EventId, ev: Ev) {
        let now = self.queue.now();
        match ev {
            Ev::TxEnd(tx_id) => self.tx_end(tx_id),
            Ev::Timer(n, kind) => {
                if self.timers.get(&(n, kind)).map(|x| x.0) == Some(id) {
                    self.timers.remove(&(n, kind));
                    self.call(n, |node, env| node.on_timer(kind, env));
                }
            }
            Ev::Arrival(i) => {
                let f = self.spec.flows[i].clone();
                let count = match &f.arrival {
                    Arrival::At { burst, .. } => *burst,
                    _ => 1,
                };
                for _ in 0..count {
                    let m = Msdu { id: self.ids.msdu(), flow: i, dst: f.dst, bytes: f.payload_bytes, ac: f.ac, arrival: now };
                    self.call(f.src, |node, env| node.on_arrival(m, env));
                }
                if let Arrival::Poisson { rate_per_s } = f.arrival {
                    let gap = self.flow_rng[i].exp_interval(1e6 / rate_per_s).max(1);
                    self.push_event(now + gap, EventKind::Arrival, Ev::Arrival(i));
                }
            }
            Ev::Beacon => {
                let ap = self.spec.beacon.as_ref().expect("beacon events need a beacon config").ap;
                let id = self.ids.msdu();
                self.call(ap, |node, env| node.on_beacon(id, env));
            }
            Ev::ReservationEnd(g) => self.reservation_end(g),
            Ev::GapEnd(i) => self.gap_end(i),
            Ev::Interfere(i) => {
                let inf = self.spec.interferers[i].clone();
                let mut frame = Frame::data(self.ids.frame(), inf.node, None, 0, Modulation::Basic, 20, 1, 0);
                // size chosen so the burst lasts on_us at the basic rate
                frame.size_bytes = ((inf.on_us.saturating_sub(crate::frame::PREAMBLE_US)) * 6 / 8) as u32;
                let air = frame.airtime();
                let tx = self
                    .medium
                    .begin_transmission(inf.node, frame, vec![inf.channel], now)
                    .expect("interferer bursts never overlap");
                self.trace.push(tx_record(&tx, TraceEvent::TxStart, air));
                self.push_event(tx.t_end, EventKind::TxEnd, Ev::TxEnd(tx.tx_id));
                self.push_event(tx.t_end + inf.off_us, EventKind::TxStart, Ev::Interfere(i));
            }
        }
    }

    /// TxEnd and per-receiver RxEnd rows; returns receivers that got the frame intact.
    fn end_records(&mut self, tx: &InFlight) -> Vec<NodeId> {
        self.trace.push(tx_record(tx, TraceEvent::TxEnd, tx.t_end - tx.t_start));
        if self.foreign[tx.sender] {
            return Vec::new();
        }
        let mut delivered = Vec::new();
        let neighbors: Vec<NodeId> = self.spec.topology.neighbors(tx.sender).collect();
        for r in neighbors {
            if self.foreign[r] {
                continue;
            }
            let mut rec = TraceRecord::new(tx.t_end, r, TraceEvent::RxEnd);
            rec.frame = Some(tx.tx_id);
            rec.ftype = Some(tx.frame.ftype);
            rec.plane = Some(tx.frame.plane);
            rec.ch = tx.channels.clone();
            rec.extra.src = Some(tx.sender);
            rec.extra.dst = tx.frame.dst;
            match self.medium.resolve_reception(r, tx) {
                Reception::Delivered => {
                    rec.outcome = Some(Outcome::Delivered);
                    delivered.push(r);
                }
                Reception::Collided { colliders } => {
                    rec.outcome = Some(Outcome::Collided);
                    rec.extra.colliders = colliders;
                }
                Reception::NotHeard => rec.outcome = Some(Outcome::NotHeard),
            }
            self.trace.push(rec);
        }
        delivered
    }

    fn tx_end(&mut self, tx_id: u64) {
        let tx = self.medium.end_transmission(tx_id).expect("every TxEnd matches an active transmission");
        if !self.foreign[tx.sender] && tx.channels.contains(&self.spec.params.contention_channel()) {
            self.last_bss_end = self.last_bss_end.max(tx.t_end);
        }
        if let Some(g) = tx.frame.reservation {
            if !tx.frame.ftype.is_control() {
                self.last_dp_end.insert(g, tx.t_end);
            }
        }
        let delivered = self.end_records(&tx);
        if self.foreign[tx.sender] {
            return;
        }
        let frame = tx.frame.clone();
        self.call(tx.sender, |node, env| node.on_tx_end(&frame, env));
        for r in delivered {
            let channels = tx.channels.clone();
            self.call(r, |node, env| node.on_frame(&frame, &channels, env));
        }
    }

    /// Contention time left idle at the end of the gap before service period `i`.
    fn gap_end(&mut self, i: usize) {
        let now = self.queue.now();
        let occs = self.sp_table.occurrences();
        let occ = occs[i];
        let gap_start = occs[..i].iter().map(|o| o.end).filter(|&e| e <= occ.start).max().unwrap_or(0);
        let ch = self.spec.params.contention_channel();
        let busy = self.medium.active().iter().any(|tx| !self.foreign[tx.sender] && tx.channels.contains(&ch));
        let idle_from = gap_start.max(self.last_bss_end);
        if busy || idle_from >= now {
            return;
        }
        let mut rec = TraceRecord::new(now, occ.owner_src, TraceEvent::Released);
        rec.ch = vec![ch];
        rec.extra.tail_us = Some(now - idle_from);
        rec.extra.reason = Some("gap".to_string());
        self.trace.push(rec);
    }

    fn reservation_end(&mut self, g: u64) {
        let now = self.queue.now();
        let Some(res) = self.scheduler.as_ref().and_then(|s| s.get(g)).cloned() else { return };
        // A burst frame ending exactly at the boundary must land before the close-out.
        if self.medium.active().iter().any(|tx| tx.frame.reservation == Some(g) && tx.t_end <= now) {
            self.push_event(now, EventKind::TimerExpiry, Ev::ReservationEnd(g));
            return;
        }
        let used_until = self.last_dp_end.remove(&g).unwrap_or(res.t_start);
        let tail = res.t_end.saturating_sub(used_until);
        if tail > 0 {
            let mut rec = TraceRecord::new(now, res.src, TraceEvent::Released);
            rec.ch = res.channels.clone();
            rec.extra.tail_us = Some(tail);
            rec.extra.res = Some(g);
            rec.extra.reason = Some(if used_until == res.t_start { "unused" } else { "tail" }.to_string());
            self.trace.push(rec);
        }
        if let (ReservationKind::Granted, Some(dst)) = (res.kind, res.dst) {
            let src = res.src;
            self.call(dst, |node, env| node.on_reservation_end(g, src, env));
        }
        if let Some(s) = self.scheduler.as_mut() {
            s.prune(now);
        }
    }
}

fn tx_record(tx: &InFlight, event: TraceEvent, air: Time) -> TraceRecord {
    let t = if event == TraceEvent::TxStart { tx.t_start } else { tx.t_end };
    let f = &tx.frame;
    let mut rec = TraceRecord::new(t, tx.sender, event);
    rec.frame = Some(tx.tx_id);
    rec.ftype = Some(f.ftype);
    rec.plane = Some(f.plane);
    rec.ch = tx.channels.clone();
    if event == TraceEvent::TxStart {
        rec.outcome = Some(Outcome::Sent);
        rec.extra.nav = Some(f.duration_field_us);
        rec.extra.dst = f.dst;
        rec.extra.airtime = Some(air);
        rec.extra.width_mhz = Some(f.bandwidth_mhz);
        rec.extra.mcs = Some(f.mcs.label().to_string());
        rec.extra.bytes = Some(f.size_bytes);
        rec.extra.msdus = f.msdus.clone();
        rec.extra.res = f.reservation;
    }
    rec
}

fn reserve_record(t: Time, r: &crate::mac::separated::Reservation) -> TraceRecord {
    let mut rec = TraceRecord::new(t, r.src, TraceEvent::Reserve);
    rec.ch = r.channels.clone();
    rec.extra.src = Some(r.src);
    rec.extra.dst = r.dst;
    rec.extra.res = Some(r.grant_id);
    rec.extra.t_start = Some(r.t_start);
    rec.extra.t_end = Some(r.t_end);
    rec.extra.reason = Some(
        match r.kind {
            ReservationKind::Granted => "granted",
            ReservationKind::Beacon => "beacon",
            ReservationKind::ServicePeriod => "service_period",
        }
        .to_string(),
    );
    rec
}

/// Resolves and runs a scenario to completion.
pub fn simulate(spec: RunSpec) -> RunOutput {
    World::new(spec).run()
}
