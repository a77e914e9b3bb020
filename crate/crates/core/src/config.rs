//! Scenario files: TOML schema, loading, validation and resolution into a run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RngStream, Time};
use crate::frame::{Modulation, NodeId, BANDWIDTHS_MHZ};
use crate::mac::access::ServicePeriod;
use crate::mac::node::{MacParams, Variant};
use crate::mac::params::{AccessCategory, EdcaTable, GapPolicy, Timings};
use crate::mac::separated::BoundaryMode;
use crate::medium::{ChannelSet, Topology};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("{0}")]
    Io(String),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub sim: SimConfig,
    pub topology: TopologyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stations: Option<StationsConfig>,
    pub channels: ChannelsConfig,
    pub mac: MacConfig,
    #[serde(default, rename = "flow", skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<FlowConfig>,
    #[serde(default, rename = "interferer", skip_serializing_if = "Vec::is_empty")]
    pub interferers: Vec<InterfererConfig>,
    #[serde(default, rename = "sp", skip_serializing_if = "Vec::is_empty")]
    pub service_periods: Vec<SpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sp_pattern: Option<SpPattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beacon: Option<BeaconConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub duration_us: Time,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub nodes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<(String, String)>,
    #[serde(default)]
    pub full_mesh: bool,
}

/// Generated stations, appended after the named nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationsConfig {
    pub count: usize,
    #[serde(default = "default_prefix")]
    pub prefix: String,
    /// Node every station sends to (and hears, outside a full mesh).
    pub uplink_to: String,
    #[serde(default)]
    pub downlink: bool,
    pub ac: AccessCategory,
    pub payload_bytes: u32,
    pub arrival: ArrivalConfig,
}

fn default_prefix() -> String {
    "STA".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsConfig {
    pub count: usize,
    #[serde(default)]
    pub primary: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Baseline,
    Separated,
}

impl VariantName {
    pub fn label(self) -> &'static str {
        match self {
            VariantName::Baseline => "baseline",
            VariantName::Separated => "separated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    Dcf,
    Edca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacConfig {
    pub variant: VariantName,
    pub access: AccessMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edca: Option<EdcaTable>,
    #[serde(default)]
    pub timings: Timings,
    #[serde(default = "default_rts_threshold")]
    pub rts_threshold: u32,
    pub data_mcs: Modulation,
    #[serde(default = "one")]
    pub nss: u32,
    #[serde(default = "twenty")]
    pub capability_mhz: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub capability: BTreeMap<String, u32>,
    #[serde(default)]
    pub gap_policy: GapPolicy,
    pub separated: SeparatedConfig,
}

fn default_rts_threshold() -> u32 {
    500
}

fn one() -> u32 {
    1
}

fn twenty() -> u32 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatedConfig {
    pub boundary: BoundaryMode,
    /// Defaults to 50 ms for a channel split and four epochs for a time split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_us: Option<Time>,
    #[serde(default = "two")]
    pub max_outstanding: usize,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalConfig {
    Saturated,
    Poisson { rate_per_s: f64 },
    At {
        times_us: Vec<Time>,
        #[serde(default = "one")]
        burst: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub src: String,
    pub dst: String,
    pub ac: AccessCategory,
    pub payload_bytes: u32,
    pub arrival: ArrivalConfig,
}

/// A non-802.11 source occupying one channel periodically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfererConfig {
    pub node: String,
    pub channel: usize,
    pub on_us: Time,
    #[serde(default)]
    pub off_us: Time,
    #[serde(default)]
    pub start_us: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpConfig {
    pub owner_src: String,
    pub owner_dst: String,
    pub start_us: Time,
    pub duration_us: Time,
    pub period_us: Time,
}

/// `round(duty * period / sp_len)` service periods in every period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpPattern {
    pub owner_src: String,
    pub owner_dst: String,
    pub period_us: Time,
    pub sp_len_us: Time,
    pub duty: f64,
    #[serde(default)]
    pub placement: SpPlacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpPlacement {
    /// Evenly spaced at `k * period / n`.
    #[default]
    Even,
    /// Non-overlapping positions drawn per period from the run seed.
    Random,
}

impl SpPattern {
    pub fn count(&self) -> u64 {
        (self.duty * self.period_us as f64 / self.sp_len_us as f64).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeaconConfig {
    pub ap: String,
    pub interval_us: Time,
    #[serde(default)]
    pub offset_us: Time,
}

/// Service periods generated by a pattern, covering one period past `duration`.
pub fn expand_pattern(p: &SpPattern, owner_src: NodeId, owner_dst: NodeId, duration: Time, seed: u64) -> Vec<ServicePeriod> {
    let n = p.count();
    if n == 0 {
        return Vec::new();
    }
    match p.placement {
        SpPlacement::Even => (0..n)
            .map(|k| ServicePeriod {
                owner_src,
                owner_dst,
                start_us: k * p.period_us / n,
                duration_us: p.sp_len_us,
                period_us: p.period_us,
            })
            .collect(),
        SpPlacement::Random => {
            let mut rng = RngStream::new(seed, SP_STREAM);
            let free = p.period_us.saturating_sub(n * p.sp_len_us) as i64;
            let mut out = Vec::new();
            let mut base = 0;
            while base < duration + p.period_us {
                let mut cuts: Vec<Time> =
                    (0..n).map(|_| rng.uniform_int(0, free).expect("free time is non-negative") as Time).collect();
                cuts.sort_unstable();
                for (k, c) in cuts.into_iter().enumerate() {
                    out.push(ServicePeriod {
                        owner_src,
                        owner_dst,
                        start_us: base + c + k as Time * p.sp_len_us,
                        duration_us: p.sp_len_us,
                        period_us: 0,
                    });
                }
                base += p.period_us;
            }
            out
        }
    }
}

const SP_STREAM: u64 = 2000;

// ---- resolved form -------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Arrival {
    Saturated,
    Poisson { rate_per_s: f64 },
    At { times_us: Vec<Time>, burst: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub ac: AccessCategory,
    pub payload_bytes: u32,
    pub arrival: Arrival,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfererSpec {
    pub node: NodeId,
    pub channel: usize,
    pub on_us: Time,
    pub off_us: Time,
    pub start_us: Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeaconSpec {
    pub ap: NodeId,
    pub interval_us: Time,
    pub offset_us: Time,
}

/// Everything one simulation needs, with names resolved to ids.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub name: String,
    pub variant: VariantName,
    pub node_names: Vec<String>,
    pub topology: Topology,
    pub params: MacParams,
    pub flows: Vec<FlowSpec>,
    pub interferers: Vec<InterfererSpec>,
    pub service_periods: Vec<ServicePeriod>,
    pub beacon: Option<BeaconSpec>,
    pub horizon_us: Time,
    pub duration_us: Time,
    pub seed: u64,
}

impl RunSpec {
    pub fn is_interferer(&self, node: NodeId) -> bool {
        self.interferers.iter().any(|i| i.node == node)
    }
}

// ---- loading -------------------------------------------------------------------------------

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Every node name: the listed ones, then generated stations.
    pub fn node_names(&self) -> Vec<String> {
        let mut names = self.topology.nodes.clone();
        if let Some(st) = &self.stations {
            names.extend((1..=st.count).map(|i| format!("{}{}", st.prefix, i)));
        }
        names
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.resolve().map(|_| ())
    }

    pub fn resolve(&self) -> Result<RunSpec, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        if self.sim.duration_us == 0 {
            return Err(invalid("sim.duration_us", "must be positive"));
        }
        let names = self.node_names();
        let mut index = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(invalid("topology.nodes", format!("duplicate node {n}")));
            }
        }
        if names.len() < 2 {
            return Err(invalid("topology.nodes", "need at least two nodes"));
        }
        let lookup = |field: &str, name: &str| -> Result<NodeId, ConfigError> {
            index.get(name).copied().ok_or_else(|| invalid(field, format!("unknown node {name}")))
        };

        let topology = if self.topology.full_mesh {
            Topology::full_mesh(names.len())
        } else {
            let mut links = Vec::new();
            for (a, b) in &self.topology.links {
                links.push((lookup("topology.links", a)?, lookup("topology.links", b)?));
            }
            if let Some(st) = &self.stations {
                let hub = lookup("stations.uplink_to", &st.uplink_to)?;
                links.extend((self.topology.nodes.len()..names.len()).map(|s| (s, hub)));
            }
            Topology::from_links(names.len(), &links).map_err(|e| invalid("topology.links", e.to_string()))?
        };

        let channels = ChannelSet::new(self.channels.count, self.channels.primary)
            .map_err(|e| invalid("channels.primary", e.to_string()))?;

        let mac = &self.mac;
        if mac.data_mcs == Modulation::Basic {
            return Err(invalid("mac.data_mcs", "data frames need a QAM modulation"));
        }
        if mac.nss == 0 {
            return Err(invalid("mac.nss", "must be at least 1"));
        }
        if mac.timings.slot_us == 0 {
            return Err(invalid("mac.timings.slot_us", "must be positive"));
        }
        let check_cap = |field: &str, w: u32| {
            if BANDWIDTHS_MHZ.contains(&w) {
                Ok(w)
            } else {
                Err(invalid(field, format!("{w} MHz is not one of 20/40/80/160")))
            }
        };
        let mut caps = vec![check_cap("mac.capability_mhz", mac.capability_mhz)?; names.len()];
        for (n, w) in &mac.capability {
            caps[lookup("mac.capability", n)?] = check_cap("mac.capability", *w)?;
        }

        let boundary = mac.separated.boundary;
        if !boundary.is_valid(&channels) {
            return Err(invalid("mac.separated.boundary", "control channel must exist and leave data channels; cp window must lie inside the epoch"));
        }
        let edca = match (mac.access, mac.edca) {
            (_, Some(t)) => t,
            (AccessMode::Dcf, None) => EdcaTable::dcf(),
            (AccessMode::Edca, None) => EdcaTable::edca(),
        };
        for ac in AccessCategory::ALL {
            let p = edca.get(ac);
            if p.cwmin > p.cwmax {
                return Err(invalid(format!("mac.edca.{}", ac.label()), "cwmin exceeds cwmax"));
            }
        }
        let horizon_us = mac.separated.horizon_us.unwrap_or(match boundary {
            BoundaryMode::ChannelSplit { .. } => 50_000,
            BoundaryMode::TimeSplit { epoch_us, .. } => 4 * epoch_us,
        });
        let variant = match mac.variant {
            VariantName::Baseline => Variant::Baseline,
            VariantName::Separated => Variant::Separated(boundary),
        };
        if mac.separated.max_outstanding == 0 {
            return Err(invalid("mac.separated.max_outstanding", "must be at least 1"));
        }
        let params = MacParams {
            variant,
            timings: mac.timings,
            edca,
            rts_threshold: mac.rts_threshold,
            data_mcs: mac.data_mcs,
            nss: mac.nss,
            caps,
            gap_policy: mac.gap_policy,
            channels: channels.clone(),
            max_outstanding: mac.separated.max_outstanding,
            ba_timeout_us: horizon_us,
            saturated_backlog: 64,
        };

        let arrival = |field: &str, a: &ArrivalConfig| -> Result<Arrival, ConfigError> {
            Ok(match a {
                ArrivalConfig::Saturated => Arrival::Saturated,
                ArrivalConfig::Poisson { rate_per_s } => {
                    if !(*rate_per_s > 0.0 && rate_per_s.is_finite()) {
                        return Err(invalid(field, "poisson rate must be positive"));
                    }
                    Arrival::Poisson { rate_per_s: *rate_per_s }
                }
                ArrivalConfig::At { times_us, burst } => {
                    if *burst == 0 {
                        return Err(invalid(field, "burst must be at least 1"));
                    }
                    Arrival::At { times_us: times_us.clone(), burst: *burst }
                }
            })
        };
        let mut flows = Vec::new();
        let mut push_flow = |field: &str, src: NodeId, dst: NodeId, ac, bytes: u32, a: Arrival| {
            if src == dst {
                return Err(invalid(field, "src equals dst"));
            }
            if !topology.hears(src, dst) {
                return Err(invalid(field, format!("{} does not hear {}", names[src], names[dst])));
            }
            if bytes == 0 {
                return Err(invalid(field, "payload_bytes must be positive"));
            }
            flows.push(FlowSpec { src, dst, ac, payload_bytes: bytes, arrival: a });
            Ok(())
        };
        for (i, f) in self.flows.iter().enumerate() {
            let field = format!("flow[{i}]");
            let src = lookup(&format!("{field}.src"), &f.src)?;
            let dst = lookup(&format!("{field}.dst"), &f.dst)?;
            push_flow(&field, src, dst, f.ac, f.payload_bytes, arrival(&field, &f.arrival)?)?;
        }
        if let Some(st) = &self.stations {
            let hub = lookup("stations.uplink_to", &st.uplink_to)?;
            let a = arrival("stations.arrival", &st.arrival)?;
            for s in self.topology.nodes.len()..names.len() {
                push_flow("stations", s, hub, st.ac, st.payload_bytes, a.clone())?;
                if st.downlink {
                    push_flow("stations", hub, s, st.ac, st.payload_bytes, a.clone())?;
                }
            }
        }

        let mut interferers = Vec::new();
        for (i, f) in self.interferers.iter().enumerate() {
            let field = format!("interferer[{i}]");
            let node = lookup(&format!("{field}.node"), &f.node)?;
            if !channels.contains(f.channel) {
                return Err(invalid(format!("{field}.channel"), format!("no channel {}", f.channel)));
            }
            if f.on_us == 0 {
                return Err(invalid(format!("{field}.on_us"), "must be positive"));
            }
            if flows.iter().any(|fl| fl.src == node || fl.dst == node) {
                return Err(invalid(format!("{field}.node"), "interferers cannot carry flows"));
            }
            interferers.push(InterfererSpec { node, channel: f.channel, on_us: f.on_us, off_us: f.off_us, start_us: f.start_us });
        }

        let mut service_periods = Vec::new();
        for (i, sp) in self.service_periods.iter().enumerate() {
            let field = format!("sp[{i}]");
            service_periods.push(ServicePeriod {
                owner_src: lookup(&format!("{field}.owner_src"), &sp.owner_src)?,
                owner_dst: lookup(&format!("{field}.owner_dst"), &sp.owner_dst)?,
                start_us: sp.start_us,
                duration_us: sp.duration_us,
                period_us: sp.period_us,
            });
        }
        if let Some(p) = &self.sp_pattern {
            if !(0.0..1.0).contains(&p.duty) {
                return Err(invalid("sp_pattern.duty", "must lie in [0, 1)"));
            }
            if p.sp_len_us == 0 || p.period_us == 0 {
                return Err(invalid("sp_pattern", "period and length must be positive"));
            }
            if p.count() * p.sp_len_us > p.period_us {
                return Err(invalid("sp_pattern.duty", "service periods do not fit in one period"));
            }
            let owner_src = lookup("sp_pattern.owner_src", &p.owner_src)?;
            let owner_dst = lookup("sp_pattern.owner_dst", &p.owner_dst)?;
            service_periods.extend(expand_pattern(p, owner_src, owner_dst, self.sim.duration_us, self.sim.seed));
        }

        let beacon = match &self.beacon {
            None => None,
            Some(b) => {
                if b.interval_us == 0 {
                    return Err(invalid("beacon.interval_us", "must be positive"));
                }
                Some(BeaconSpec { ap: lookup("beacon.ap", &b.ap)?, interval_us: b.interval_us, offset_us: b.offset_us })
            }
        };

        Ok(RunSpec {
            name: self.name.clone(),
            variant: mac.variant,
            node_names: names,
            topology,
            params,
            flows,
            interferers,
            service_periods,
            beacon,
            horizon_us,
            duration_us: self.sim.duration_us,
            seed: self.sim.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
schema_version = 1
name = "pair"

[sim]
duration_us = 10000
seed = 1

[topology]
nodes = ["A", "B"]
links = [["A", "B"]]

[channels]
count = 2

[mac]
variant = "baseline"
access = "dcf"
data_mcs = "QAM256"

[mac.separated]
boundary = { mode = "channel_split", control_channel = 0 }

[[flow]]
src = "A"
dst = "B"
ac = "BE"
payload_bytes = 1500
arrival = { kind = "saturated" }
"#;

    #[test]
    fn minimal_config_is_valid() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        let spec = cfg.resolve().unwrap();
        assert_eq!(spec.node_names, vec!["A", "B"]);
        assert_eq!(spec.params.rts_threshold, 500);
        assert_eq!(spec.horizon_us, 50_000);
    }

    #[test]
    fn unknown_node_in_flow() {
        let text = MINIMAL.replace("dst = \"B\"", "dst = \"Z\"");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { ref field, .. } if field == "flow[0].dst"), "{err}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = MINIMAL.replace("seed = 1", "seed = 1\nspeed = 2");
        match ScenarioConfig::from_toml_str(&text).unwrap_err() {
            ConfigError::Parse { line, .. } => assert_eq!(line, 8),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn sp_pattern_spacing() {
        let p = SpPattern { owner_src: "A".into(), owner_dst: "B".into(), period_us: 16_000, sp_len_us: 2_000, duty: 0.5, placement: SpPlacement::Even };
        assert_eq!(p.count(), 4);
    }
}
