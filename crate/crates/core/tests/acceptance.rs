//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::process::ExitCode;

use macplane::config::{RunSpec, ScenarioConfig, VariantName};
use macplane::engine::Time;
use macplane::frame::FrameType;
use macplane::mac::node::Variant;
use macplane::run::{resolve_seeded, run_config, run_scenario, sweep, RunResult};
use macplane::scenarios::{builtin, dcf_pair, with_variant, BUILTIN};
use macplane::summary::{collision_pairs, collisions_on_channels, transmissions, CollisionClass, TxInfo};
use macplane::trace::{TraceEvent, TraceRecord};
use macplane::validate::validate;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const ORACLE_TOL: f64 = 0.02;
const ORACLE_MIN_SLOTS: usize = 100_000;
const P2_EPOCH_US: f64 = 10_000.0;
const P3_PRIMARY_FACTOR: f64 = 2.0;

struct Verdict {
    ok: bool,
    detail: String,
}

impl Verdict {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Verdict { ok, detail: detail.into() }
    }
}

/// Traces kept for the invariant suite.
struct Produced {
    label: String,
    spec: RunSpec,
    trace: Vec<TraceRecord>,
}

fn scenario(name: &str, v: VariantName) -> ScenarioConfig {
    with_variant(builtin(name).expect("builtin exists"), v)
}

fn run(cfg: &ScenarioConfig, seed: u64, keep: &mut Vec<Produced>) -> RunResult {
    let r = run_config(cfg, Some(seed)).expect("builtin runs");
    keep.push(Produced {
        label: format!("{}/{}/s{seed}", cfg.name, cfg.mac.variant.label()),
        spec: resolve_seeded(cfg, Some(seed)).expect("builtin resolves"),
        trace: r.trace.clone(),
    });
    r
}

fn node(spec: &RunSpec, name: &str) -> usize {
    spec.node_names.iter().position(|n| n == name).expect("node exists")
}

fn txs(trace: &[TraceRecord]) -> BTreeMap<u64, TxInfo> {
    transmissions(trace).expect("complete trace")
}

fn first_tx_of(txs: &BTreeMap<u64, TxInfo>, msdu: u64) -> Option<Time> {
    txs.values().filter(|t| t.msdus.contains(&msdu)).map(|t| t.t_start).min()
}

fn arrivals(trace: &[TraceRecord], node: usize, ac: &str) -> Vec<(Time, u64)> {
    trace
        .iter()
        .filter(|r| r.event == TraceEvent::Arrival && r.node == node && r.extra.ac.as_deref() == Some(ac))
        .map(|r| (r.t, r.extra.msdus[0]))
        .collect()
}

fn p1(keep: &mut Vec<Produced>) -> Verdict {
    let mut bad = Vec::new();
    for seed in SEEDS {
        let a = run(&scenario("p1a", VariantName::Baseline), seed, keep).summary;
        if !(a.cp_cp > 0 && a.cp_dp > 0) {
            bad.push(format!("p1a s{seed}: CpCp={} CpDp={}", a.cp_cp, a.cp_dp));
        }
        let b = run(&scenario("p1b", VariantName::Baseline), seed, keep).summary;
        if b.cp_dp == 0 {
            bad.push(format!("p1b s{seed}: CpDp=0"));
        }
        for name in ["p1a", "p1b"] {
            let cfg = scenario(name, VariantName::Separated);
            let r = run(&cfg, seed, keep);
            let spec = resolve_seeded(&cfg, Some(seed)).unwrap();
            let Variant::Separated(b) = spec.params.variant else { unreachable!() };
            let data = b.data_channels(&spec.params.channels);
            let t = txs(&r.trace);
            let on_data = collisions_on_channels(&collision_pairs(&r.trace, &t), &data);
            let dd = on_data.get(&CollisionClass::DpDp).copied().unwrap_or(0);
            let cd = on_data.get(&CollisionClass::CpDp).copied().unwrap_or(0);
            if dd != 0 || cd != 0 {
                bad.push(format!("{name} separated s{seed}: DpDp={dd} CpDp={cd} on data channels"));
            }
        }
    }
    Verdict::new(bad.is_empty(), if bad.is_empty() { "collisions present in baseline, absent from data channels when separated".into() } else { bad.join("; ") })
}

/// End of the medium-busy chain (frames no more than SIFS apart) that covers `t`.
fn chain_end(txs: &BTreeMap<u64, TxInfo>, t: Time, sifs: Time) -> Option<(Time, Time)> {
    let mut iv: Vec<(Time, Time)> = txs.values().map(|x| (x.t_start, x.t_end.unwrap())).collect();
    iv.sort_unstable();
    let mut chains: Vec<(Time, Time)> = Vec::new();
    for (s, e) in iv {
        match chains.last_mut() {
            Some(c) if s <= c.1 + sifs => c.1 = c.1.max(e),
            _ => chains.push((s, e)),
        }
    }
    chains.into_iter().find(|&(s, e)| s <= t && t < e)
}

fn p2(keep: &mut Vec<Produced>) -> Verdict {
    let mut bad = Vec::new();
    let mut notes = String::new();
    for seed in SEEDS {
        let cfg = scenario("p2", VariantName::Baseline);
        let r = run(&cfg, seed, keep);
        let spec = resolve_seeded(&cfg, Some(seed)).unwrap();
        let t = txs(&r.trace);
        let sifs = spec.params.timings.sifs_us;
        let (sta1, sta2, sta3, ap) = (node(&spec, "STA1"), node(&spec, "STA2"), node(&spec, "STA3"), node(&spec, "AP"));

        // (i) voice arriving while the background RTS is on the air
        let (vo_t, vo_m) = arrivals(&r.trace, sta2, "VO")[0];
        let rts_on_air = t.values().any(|x| x.sender == sta1 && x.ftype == FrameType::Rts && x.t_start <= vo_t && vo_t < x.t_end.unwrap());
        let vo_first = first_tx_of(&t, vo_m);
        if !rts_on_air || !vo_first.is_some_and(|s| s > vo_t) {
            bad.push(format!("s{seed} (i): rts_on_air={rts_on_air} first_tx={vo_first:?} arrival={vo_t}"));
        }

        // (ii) beacon generated inside the background TXOP
        let (bcn_t, bcn_m) = arrivals(&r.trace, ap, "BCN")[0];
        let Some((txop_start, txop_end)) = chain_end(&t, bcn_t, sifs) else {
            bad.push(format!("s{seed} (ii): no TXOP in progress at beacon time {bcn_t}"));
            continue;
        };
        let bk_frames = t.values().filter(|x| x.sender == sta1 && x.ftype == FrameType::Data && x.t_start >= txop_start && x.t_end.unwrap() <= txop_end).count();
        let bcn_first = first_tx_of(&t, bcn_m).unwrap_or(Time::MAX);
        let remaining = txop_end - bcn_t;
        if bk_frames < 2 || bcn_first - bcn_t < remaining {
            bad.push(format!("s{seed} (ii): deferral {} < remaining {remaining} (bk frames {bk_frames})", bcn_first - bcn_t));
        }

        // (iii) second voice frame waits out the same TXOP
        let (vo2_t, vo2_m) = arrivals(&r.trace, sta3, "VO")[0];
        let vo2_first = first_tx_of(&t, vo2_m).unwrap_or(Time::MAX);
        if !(txop_start <= vo2_t && vo2_t < txop_end && vo2_first >= txop_end) {
            bad.push(format!("s{seed} (iii): arrival {vo2_t} first tx {vo2_first} txop [{txop_start}, {txop_end})"));
        }
        if seed == 1 {
            notes = format!("txop {}us, beacon deferral {}us, second VO {}us", txop_end - txop_start, bcn_first - bcn_t, vo2_first - vo2_t);
        }

        let s = run(&scenario("p2", VariantName::Separated), seed, keep).summary;
        let vo = s.delay(macplane::mac::params::AccessCategory::Voice);
        if vo.count == 0 || vo.max_us > P2_EPOCH_US {
            bad.push(format!("s{seed} separated: VO max delay {} over {} frames", vo.max_us, vo.count));
        }
    }
    Verdict::new(bad.is_empty(), if bad.is_empty() { notes } else { bad.join("; ") })
}

fn p3(keep: &mut Vec<Produced>) -> Verdict {
    let mut bad = Vec::new();
    let mut worst = f64::INFINITY;
    for seed in SEEDS {
        let s = run(&scenario("p3", VariantName::Baseline), seed, keep).summary;
        let sec = &s.busy[1..];
        let mean = sec.iter().sum::<f64>() / sec.len() as f64;
        worst = worst.min(s.busy[0] / mean);
        if s.busy[0] < P3_PRIMARY_FACTOR * mean {
            bad.push(format!("s{seed}: primary {:.3} vs secondary mean {mean:.3}", s.busy[0]));
        }
        run(&scenario("p3", VariantName::Separated), seed, keep);
    }
    Verdict::new(bad.is_empty(), if bad.is_empty() { format!("lowest primary/secondary ratio {worst:.2}") } else { bad.join("; ") })
}

fn p4(keep: &mut Vec<Produced>) -> Verdict {
    let mut bad = Vec::new();
    for seed in SEEDS {
        let cfg = scenario("p4a", VariantName::Baseline);
        let r = run(&cfg, seed, keep);
        let spec = resolve_seeded(&cfg, Some(seed)).unwrap();
        let block = spec.params.channels.primary_block(40).unwrap();
        let outside = txs(&r.trace).values().filter(|x| x.channels.iter().any(|c| !block.contains(c))).count();
        if outside > 0 {
            bad.push(format!("p4a s{seed}: {outside} transmissions outside {block:?}"));
        }
        let cfg = scenario("p4b", VariantName::Baseline);
        let r = run(&cfg, seed, keep);
        let spec = resolve_seeded(&cfg, Some(seed)).unwrap();
        let wide = txs(&r.trace).values().filter(|x| !spec.is_interferer(x.sender) && x.width_mhz > 40).count();
        if wide > 0 {
            bad.push(format!("p4b s{seed}: {wide} transmissions wider than 40 MHz"));
        }
        run(&scenario("p4a", VariantName::Separated), seed, keep);
        run(&scenario("p4b", VariantName::Separated), seed, keep);
    }
    Verdict::new(bad.is_empty(), if bad.is_empty() { "p4a stays inside the 40 MHz block, p4b never bonds past 40 MHz".into() } else { bad.join("; ") })
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Sweeps `axis` and keeps every point's trace for the invariant suite.
fn swept(cfg: &ScenarioConfig, axis: &str, values: &[String], keep: &mut Vec<Produced>) -> BTreeMap<u64, Vec<macplane::Summary>> {
    let rows = sweep(cfg, axis, values, &SEEDS).expect("sweep runs");
    let ax = macplane::run::Axis::parse(axis).unwrap();
    for v in values {
        let c = ax.apply(cfg, v).unwrap();
        for &seed in &SEEDS {
            run(&c, seed, keep);
        }
    }
    let mut by_seed: BTreeMap<u64, Vec<macplane::Summary>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r.summary);
    }
    by_seed
}

fn p5(keep: &mut Vec<Produced>) -> Verdict {
    let cfg = scenario("p5", VariantName::Baseline);
    let mut bad = Vec::new();
    let mut shown = String::new();
    for (axis, values) in [("mcs", strings(&["QAM64", "QAM256", "QAM1024", "QAM4096"])), ("bandwidth", strings(&["20", "40", "80", "160"]))] {
        for (seed, rows) in swept(&cfg, axis, &values, keep) {
            let r: Vec<f64> = rows.iter().map(|s| s.cp_overhead_ratio).collect();
            if !r.windows(2).all(|w| w[1] > w[0]) {
                bad.push(format!("{axis} s{seed}: {r:.4?}"));
            }
            if seed == 1 {
                shown += &format!("{axis} {r:.3?} ");
            }
        }
    }
    Verdict::new(bad.is_empty(), if bad.is_empty() { shown.trim_end().to_string() } else { bad.join("; ") })
}

fn p6(keep: &mut Vec<Produced>) -> Verdict {
    let cfg = scenario("p6", VariantName::Baseline);
    let values = strings(&["0", "0.25", "0.5", "0.75"]);
    let mut bad = Vec::new();
    let mut shown = String::new();
    for (seed, rows) in swept(&cfg, "sp_duty", &values, keep) {
        let gp: Vec<f64> = rows.iter().map(|s| s.dcf_goodput_bps / 1e6).collect();
        let tail: Vec<u64> = rows.iter().map(|s| s.released_tail_us).collect();
        if !gp.windows(2).all(|w| w[1] <= w[0]) {
            bad.push(format!("s{seed} goodput {gp:.2?}"));
        }
        if !tail.windows(2).all(|w| w[1] > w[0]) {
            bad.push(format!("s{seed} tail {tail:?}"));
        }
        if seed == 1 {
            shown = format!("goodput Mb/s {gp:.1?}, tail us {tail:?}");
        }
    }
    for seed in SEEDS {
        run(&scenario("p6", VariantName::Separated), seed, keep);
    }
    Verdict::new(bad.is_empty(), if bad.is_empty() { shown } else { bad.join("; ") })
}

// ---- analytic oracle ----------------------------------------------------------------------

/// Fraction of busy contention slots that carry a collision, and the number of busy slots.
fn measured_collision(trace: &[TraceRecord]) -> (f64, usize) {
    let t = txs(trace);
    let mut data: Vec<(Time, Time)> = t.values().filter(|x| x.ftype == FrameType::Data).map(|x| (x.t_start, x.t_end.unwrap())).collect();
    data.sort_unstable();
    let mut collided = 0;
    let mut slots = 0;
    let mut i = 0;
    while i < data.len() {
        slots += 1;
        if i + 1 < data.len() && data[i + 1].0 < data[i].1 {
            collided += 1;
            i += 2;
        } else {
            i += 1;
        }
    }
    (collided as f64 / slots as f64, slots)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Q(i128, i128);

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

impl Q {
    fn new(n: i128, d: i128) -> Q {
        let g = gcd(n, d).max(1) * d.signum();
        Q(n / g, d / g)
    }
    fn add(self, o: Q) -> Q {
        Q::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    fn sub(self, o: Q) -> Q {
        Q::new(self.0 * o.1 - o.0 * self.1, self.1 * o.1)
    }
    fn mul(self, o: Q) -> Q {
        Q::new(self.0 * o.0, self.1 * o.1)
    }
    fn div(self, o: Q) -> Q {
        Q::new(self.0 * o.1, self.1 * o.0)
    }
}

/// Exact probability that a busy slot collides for two saturated stations
/// drawing backoff uniformly from 0..=w, found by enumerating the embedded
/// chain over contention rounds. State 0: both stations draw afresh; state r: the loser of
/// the last round still holds r slots.
fn exact_collision(w: i128) -> Q {
    let n = (w + 1) as usize;
    let draw = Q::new(1, w + 1);
    let mut p = vec![vec![Q(0, 1); n]; n];
    for x in 0..=w {
        for y in 0..=w {
            let to = if x == y { 0 } else { (x - y).unsigned_abs() as usize };
            p[0][to] = p[0][to].add(draw.mul(draw));
        }
    }
    for r in 1..=w {
        for x in 0..=w {
            let to = if x == r { 0 } else { (x - r).unsigned_abs() as usize };
            p[r as usize][to] = p[r as usize][to].add(draw);
        }
    }
    // pi (P - I) = 0 with sum(pi) = 1, solved by Gauss-Jordan on the transpose.
    let mut a = vec![vec![Q(0, 1); n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = p[j][i].sub(if i == j { Q(1, 1) } else { Q(0, 1) });
        }
    }
    for x in a[n - 1].iter_mut().take(n) {
        *x = Q(1, 1);
    }
    a[n - 1][n] = Q(1, 1);
    for col in 0..n {
        let piv = (col..n).find(|&r| a[r][col].0 != 0).expect("chain is irreducible");
        a.swap(col, piv);
        let d = a[col][col];
        for x in a[col].iter_mut() {
            *x = x.div(d);
        }
        let pivot = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col && row[col].0 != 0 {
                let f = row[col];
                for (x, p) in row.iter_mut().zip(&pivot) {
                    *x = x.sub(f.mul(*p));
                }
            }
        }
    }
    let pi: Vec<Q> = (0..n).map(|i| a[i][n]).collect();
    // a round collides when the fresh draws meet
    let mut collide = Q(0, 1);
    for (s, &mass) in pi.iter().enumerate() {
        collide = collide.add(mass.mul(p[s][0]));
    }
    collide
}

fn closed_form(w: u32) -> f64 {
    let tau = 2.0 / (w as f64 + 2.0);
    tau * tau / (2.0 * tau - tau * tau)
}

fn oracle() -> Verdict {
    let mut bad = Vec::new();
    for w in 1..=4i128 {
        // tau^2 / (2 tau - tau^2) with tau = 2/(w+2), as an exact rational
        let tau = Q::new(2, w + 2);
        let closed = tau.mul(tau).div(Q(2, 1).mul(tau).sub(tau.mul(tau)));
        let exact = exact_collision(w);
        if exact != closed {
            bad.push(format!("W={w}: enumeration {}/{} vs closed form {}/{}", exact.0, exact.1, closed.0, closed.1));
        }
    }
    let r = run_config(&dcf_pair(16), None).expect("dcf pair runs");
    let (p16, slots) = measured_collision(&r.trace);
    if slots < ORACLE_MIN_SLOTS || (p16 - closed_form(16)).abs() > ORACLE_TOL {
        bad.push(format!("W=16: p {p16:.4} vs {:.4} over {slots} busy slots", closed_form(16)));
    }
    let mut small = String::new();
    for w in [2u32, 4] {
        let mut cfg = dcf_pair(w);
        cfg.sim.duration_us = 5_000_000;
        let r = run_config(&cfg, None).expect("dcf pair runs");
        let (p, _) = measured_collision(&r.trace);
        if (p - closed_form(w)).abs() > ORACLE_TOL {
            bad.push(format!("W={w}: simulated {p:.4} vs {:.4}", closed_form(w)));
        }
        small += &format!(", W={w} {p:.4}/{:.4}", closed_form(w));
    }
    Verdict::new(
        bad.is_empty(),
        if bad.is_empty() { format!("W=16 p {p16:.4} vs {:.4} over {slots} busy slots{small}; exact for W<=4", closed_form(16)) } else { bad.join("; ") },
    )
}

fn determinism() -> Verdict {
    let mut bad = Vec::new();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut runs = 0;
    for name in BUILTIN {
        for v in [VariantName::Baseline, VariantName::Separated] {
            let cfg = scenario(name, v);
            let outs: Vec<_> = dirs.iter().map(|d| run_scenario(&cfg, Some(7), d.path()).expect("builtin runs")).collect();
            for (a, b) in [(&outs[0].0, &outs[1].0), (&outs[0].1, &outs[1].1)] {
                if std::fs::read(a).unwrap() != std::fs::read(b).unwrap() {
                    bad.push(format!("{} differs", a.file_name().unwrap().to_string_lossy()));
                }
            }
            runs += 1;
        }
    }
    Verdict::new(bad.is_empty(), if bad.is_empty() { format!("{runs} scenario/variant pairs byte-identical") } else { bad.join("; ") })
}

fn invariants(keep: &[Produced]) -> Verdict {
    let mut bad = Vec::new();
    let mut examined = 0u64;
    for p in keep {
        let rep = validate(&p.trace, &p.spec);
        examined += rep.examined.values().sum::<u64>();
        if !rep.ok() {
            let first = rep.violations.first().map(|v| v.to_string()).unwrap_or_default();
            bad.push(format!("{}: {:?} ({first})", p.label, rep.counts));
        }
    }
    Verdict::new(bad.is_empty(), if bad.is_empty() { format!("{} traces, {examined} checks", keep.len()) } else { bad.join("; ") })
}

fn main() -> ExitCode {
    type Job = fn(&mut Vec<Produced>) -> Verdict;
    let scenario_jobs: [(u32, &str, Job); 6] = [
        (1, "P1 collisions", p1),
        (2, "P2 blocking", p2),
        (3, "P3 primary bottleneck", p3),
        (4, "P4 secondary usage", p4),
        (5, "P5 control overhead", p5),
        (6, "P6 fragmentation", p6),
    ];
    let (mut results, kept, oracle_v, det_v) = std::thread::scope(|s| {
        let handles: Vec<_> = scenario_jobs
            .iter()
            .map(|&(n, label, job)| {
                s.spawn(move || {
                    let mut keep = Vec::new();
                    let v = job(&mut keep);
                    (n, label, v, keep)
                })
            })
            .collect();
        let o = s.spawn(oracle);
        let d = s.spawn(determinism);
        let mut results = Vec::new();
        let mut kept = Vec::new();
        for h in handles {
            let (n, label, v, keep) = h.join().expect("criterion panicked");
            results.push((n, label, v));
            kept.extend(keep);
        }
        (results, kept, o.join().expect("oracle panicked"), d.join().expect("determinism panicked"))
    });
    results.push((7, "analytic oracle", oracle_v));
    results.push((8, "determinism", det_v));
    results.push((9, "invariant suite", invariants(&kept)));
    let mut failed = 0;
    for (n, label, v) in &results {
        println!("criterion {n} {:<4} {label}: {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
        if !v.ok {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
