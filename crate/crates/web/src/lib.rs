//! Browser bindings. Each export returns JSON text for the page to render.

use macplane::mac::access::bond_width;
use macplane::medium::ChannelSet;
use macplane::run::{run_config, Axis};
use macplane::scenarios::{builtin, describe, with_variant, BUILTIN};
use macplane::{Summary, VariantName};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn summary_json(s: &Summary) -> Value {
    let ac = |i: usize| json!({ "mean_us": s.delay[i].mean_us, "max_us": s.delay[i].max_us, "count": s.delay[i].count });
    json!({
        "cp_cp": s.cp_cp,
        "cp_dp": s.cp_dp,
        "dp_dp": s.dp_dp,
        "delay": { "VO": ac(0), "VI": ac(1), "BE": ac(2), "BK": ac(3) },
        "busy": s.busy,
        "cp_overhead_ratio": s.cp_overhead_ratio,
        "secondary_usage_ratio": s.secondary_usage_ratio,
        "dcf_goodput_bps": s.dcf_goodput_bps,
        "beacon_max_deferral_us": s.beacon_max_deferral_us,
        "released_tail_us": s.released_tail_us,
        "delivered_msdus": s.delivered_msdus,
        "dropped_msdus": s.dropped_msdus,
    })
}

fn parse_variant(v: &str) -> Result<VariantName, String> {
    match v {
        "baseline" => Ok(VariantName::Baseline),
        "separated" => Ok(VariantName::Separated),
        _ => Err(format!("unknown variant {v}")),
    }
}

pub fn scenario_list() -> String {
    let rows: Vec<Value> = BUILTIN
        .iter()
        .filter(|n| **n != "dcf-pair")
        .map(|n| json!({ "name": n, "description": describe(n) }))
        .collect();
    Value::Array(rows).to_string()
}

/// Runs a builtin under `variant` and returns its summary.
pub fn summary_for(name: &str, variant: &str, seed: u64) -> Result<String, String> {
    let cfg = with_variant(builtin(name).ok_or_else(|| format!("no scenario {name}"))?, parse_variant(variant)?);
    let r = run_config(&cfg, Some(seed)).map_err(|e| e.to_string())?;
    Ok(json!({ "scenario": name, "variant": variant, "seed": seed, "summary": summary_json(&r.summary) }).to_string())
}

/// Control overhead of the p5 scenario along `axis` (mcs or bandwidth), run point by point.
pub fn overhead_points(axis: &str, seed: u64, duration_us: u64) -> Result<String, String> {
    let values: &[&str] = match axis {
        "mcs" => &["QAM64", "QAM256", "QAM1024", "QAM4096"],
        "bandwidth" => &["20", "40", "80", "160"],
        _ => return Err(format!("unknown axis {axis}")),
    };
    let ax = Axis::parse(axis).map_err(|e| e.to_string())?;
    let mut base = builtin("p5").expect("p5 is builtin");
    base.sim.duration_us = duration_us;
    let mut rows = Vec::new();
    for v in values {
        let cfg = ax.apply(&base, v).map_err(|e| e.to_string())?;
        let s = run_config(&cfg, Some(seed)).map_err(|e| e.to_string())?.summary;
        rows.push(json!({ "value": v, "cp_overhead_ratio": s.cp_overhead_ratio, "delivered_msdus": s.delivered_msdus }));
    }
    Ok(Value::Array(rows).to_string())
}

/// Widest bond the primary can take given which channels sensed idle.
pub fn bonded(count: usize, primary: usize, idle: &[u8], cap_tx_mhz: u32, cap_rx_mhz: u32) -> Result<String, String> {
    let chans = ChannelSet::new(count, primary).map_err(|e| e.to_string())?;
    let idle: Vec<bool> = (0..count).map(|i| idle.get(i).is_some_and(|b| *b != 0)).collect();
    let width = bond_width(&chans, &idle, cap_tx_mhz, cap_rx_mhz);
    let block = chans.primary_block(width).unwrap_or_else(|| vec![primary]);
    Ok(json!({ "width_mhz": width, "channels": block }).to_string())
}

#[wasm_bindgen]
pub fn scenarios() -> String {
    scenario_list()
}

#[wasm_bindgen]
pub fn run_summary(name: &str, variant: &str, seed: u32) -> Result<String, JsValue> {
    summary_for(name, variant, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn overhead_curve(axis: &str, seed: u32, duration_us: u32) -> Result<String, JsValue> {
    overhead_points(axis, seed as u64, duration_us as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn bond(count: usize, primary: usize, idle: &[u8], cap_tx_mhz: u32, cap_rx_mhz: u32) -> Result<String, JsValue> {
    bonded(count, primary, idle, cap_tx_mhz, cap_rx_mhz).map_err(|e| JsValue::from_str(&e))
}
