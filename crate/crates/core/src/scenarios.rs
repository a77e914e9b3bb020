//! Builtin scenarios. Each is configured for the baseline MAC and carries a
//! separated-MAC block, so switching variants only touches `mac.variant`.

use std::collections::BTreeMap;

use crate::config::*;
use crate::frame::Modulation;
use crate::mac::params::{AccessCategory, EdcaParams, EdcaTable, GapPolicy, Timings};
use crate::mac::separated::BoundaryMode;

pub const BUILTIN: [&str; 9] = ["p1a", "p1b", "p2", "p3", "p4a", "p4b", "p5", "p6", "dcf-pair"];

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    Some(match name {
        "p1a" => p1(true),
        "p1b" => p1(false),
        "p2" => p2(),
        "p3" => p3(),
        "p4a" => p4a(),
        "p4b" => p4b(),
        "p5" => p5(),
        "p6" => p6(),
        "dcf-pair" => dcf_pair(16),
        _ => return None,
    })
}

pub fn describe(name: &str) -> &'static str {
    match name {
        "p1a" => "hidden-terminal chain A-B-C-D, RTS/CTS on",
        "p1b" => "hidden-terminal chain A-B-C-D, RTS/CTS off",
        "p2" => "voice and beacon stuck behind a long background TXOP",
        "p3" => "20 saturated stations sharing a bonded 80 MHz channel",
        "p4a" => "AP bonding 160 MHz with 40 MHz stations",
        "p4b" => "80 MHz bonding with an interferer on the third channel",
        "p5" => "control overhead versus modulation and bandwidth",
        "p6" => "contention squeezed between reserved service periods",
        "dcf-pair" => "two saturated stations with a fixed contention window",
        _ => "",
    }
}

pub fn with_variant(mut cfg: ScenarioConfig, v: VariantName) -> ScenarioConfig {
    cfg.mac.variant = v;
    cfg
}

fn channel_split() -> SeparatedConfig {
    SeparatedConfig { boundary: BoundaryMode::ChannelSplit { control_channel: 0 }, horizon_us: None, max_outstanding: 2 }
}

fn mac(access: AccessMode, mcs: Modulation, separated: SeparatedConfig) -> MacConfig {
    MacConfig {
        variant: VariantName::Baseline,
        access,
        edca: None,
        timings: Timings::default(),
        rts_threshold: 500,
        data_mcs: mcs,
        nss: 1,
        capability_mhz: 20,
        capability: BTreeMap::new(),
        gap_policy: GapPolicy::Truncate,
        separated,
    }
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn flow(src: &str, dst: &str, ac: AccessCategory, bytes: u32, arrival: ArrivalConfig) -> FlowConfig {
    FlowConfig { src: src.into(), dst: dst.into(), ac, payload_bytes: bytes, arrival }
}

fn base(name: &str, description: &str, duration_us: u64, topology: TopologyConfig, channels: usize, mac: MacConfig) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        description: description.into(),
        sim: SimConfig { duration_us, seed: 1 },
        topology,
        stations: None,
        channels: ChannelsConfig { count: channels, primary: 0 },
        mac,
        flows: Vec::new(),
        interferers: Vec::new(),
        service_periods: Vec::new(),
        sp_pattern: None,
        beacon: None,
    }
}

fn mesh(nodes: &[&str]) -> TopologyConfig {
    TopologyConfig { nodes: names(nodes), links: Vec::new(), full_mesh: true }
}

fn stations(count: usize, ac: AccessCategory, downlink: bool) -> StationsConfig {
    StationsConfig {
        count,
        prefix: "STA".into(),
        uplink_to: "AP".into(),
        downlink,
        ac,
        payload_bytes: 1500,
        arrival: ArrivalConfig::Saturated,
    }
}

fn p1(rts: bool) -> ScenarioConfig {
    let topology = TopologyConfig {
        nodes: names(&["A", "B", "C", "D"]),
        links: vec![("A".into(), "B".into()), ("B".into(), "C".into()), ("C".into(), "D".into())],
        full_mesh: false,
    };
    let mut m = mac(AccessMode::Dcf, Modulation::Qam256, channel_split());
    if !rts {
        m.rts_threshold = 2000;
    }
    let name = if rts { "p1a" } else { "p1b" };
    let mut c = base(name, describe(name), 1_000_000, topology, 2, m);
    c.flows = vec![
        flow("A", "B", AccessCategory::BestEffort, 1500, ArrivalConfig::Saturated),
        flow("D", "C", AccessCategory::BestEffort, 1500, ArrivalConfig::Saturated),
    ];
    c
}

fn p2() -> ScenarioConfig {
    let sep = SeparatedConfig {
        boundary: BoundaryMode::TimeSplit { epoch_us: 10_000, cp_window_us: 2_000 },
        horizon_us: None,
        max_outstanding: 2,
    };
    let mut m = mac(AccessMode::Edca, Modulation::Qam64, sep);
    // 1215 B of voice takes 200 us at 64-QAM on 20 MHz and goes without RTS
    m.rts_threshold = 1300;
    let mut c = base("p2", describe("p2"), 50_000, mesh(&["AP", "STA1", "STA2", "STA3"]), 2, m);
    let at = |t: u64, burst: u32| ArrivalConfig::At { times_us: vec![t], burst };
    c.flows = vec![
        flow("STA1", "AP", AccessCategory::Background, 1500, at(100, 40)),
        flow("STA2", "AP", AccessCategory::Voice, 1215, at(120, 1)),
        flow("STA3", "AP", AccessCategory::Voice, 1215, at(3_000, 1)),
    ];
    c.beacon = Some(BeaconConfig { ap: "AP".into(), interval_us: 102_400, offset_us: 1_000 });
    c
}

fn p3() -> ScenarioConfig {
    let mut m = mac(AccessMode::Dcf, Modulation::Qam256, channel_split());
    m.capability_mhz = 80;
    let mut c = base("p3", describe("p3"), 500_000, mesh(&["AP"]), 4, m);
    c.stations = Some(stations(20, AccessCategory::BestEffort, false));
    c
}

fn p4a() -> ScenarioConfig {
    let mut m = mac(AccessMode::Dcf, Modulation::Qam256, channel_split());
    m.capability_mhz = 40;
    m.capability.insert("AP".into(), 160);
    let mut c = base("p4a", describe("p4a"), 300_000, mesh(&["AP"]), 8, m);
    c.stations = Some(stations(4, AccessCategory::BestEffort, true));
    c
}

fn p4b() -> ScenarioConfig {
    let mut m = mac(AccessMode::Dcf, Modulation::Qam256, channel_split());
    m.capability_mhz = 80;
    let mut c = base("p4b", describe("p4b"), 300_000, mesh(&["AP", "IF"]), 4, m);
    c.stations = Some(stations(4, AccessCategory::BestEffort, false));
    c.interferers = vec![InterfererConfig { node: "IF".into(), channel: 2, on_us: 10_000, off_us: 0, start_us: 0 }];
    c
}

fn p5() -> ScenarioConfig {
    let m = mac(AccessMode::Dcf, Modulation::Qam256, channel_split());
    let mut c = base("p5", describe("p5"), 300_000, mesh(&["AP"]), 8, m);
    c.stations = Some(stations(4, AccessCategory::BestEffort, false));
    c
}

fn p6() -> ScenarioConfig {
    let m = mac(AccessMode::Edca, Modulation::Qam256, channel_split());
    let mut c = base("p6", describe("p6"), 1_000_000, mesh(&["AP", "TWT"]), 2, m);
    c.stations = Some(stations(4, AccessCategory::BestEffort, false));
    c.sp_pattern = Some(SpPattern {
        owner_src: "TWT".into(),
        owner_dst: "AP".into(),
        period_us: 16_000,
        sp_len_us: 2_000,
        duty: 0.5,
        placement: SpPlacement::Random,
    });
    c
}

/// Two saturated stations, basic access, contention window pinned at `w`.
pub fn dcf_pair(w: u32) -> ScenarioConfig {
    let mut m = mac(AccessMode::Dcf, Modulation::Qam4096, channel_split());
    let fixed = EdcaParams { aifs_slots: 2, cwmin: w, cwmax: w, txop_limit_us: 0 };
    m.edca = Some(EdcaTable { vo: fixed, vi: fixed, be: fixed, bk: fixed });
    m.rts_threshold = 100_000;
    let mut c = base("dcf-pair", describe("dcf-pair"), 20_000_000, mesh(&["A", "B"]), 2, m);
    c.flows = vec![
        flow("A", "B", AccessCategory::BestEffort, 100, ArrivalConfig::Saturated),
        flow("B", "A", AccessCategory::BestEffort, 100, ArrivalConfig::Saturated),
    ];
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_resolves_in_both_variants() {
        for name in BUILTIN {
            let cfg = builtin(name).unwrap();
            for v in [VariantName::Baseline, VariantName::Separated] {
                with_variant(cfg.clone(), v).resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
            }
        }
    }

    #[test]
    fn voice_payload_takes_200_us() {
        let air = crate::frame::airtime(1215, Modulation::Qam64, 20, 1).unwrap();
        assert_eq!(air, 200);
    }
}
