//! Scenario files: `key = value` lines grouped under `[section]` headers.
//! `#` starts a comment. Unknown keys are errors.
//!
//! ```text
//! mode = SdnTracks
//!
//! [topology]
//! hop_count = 5
//! spacing = 90
//! tx_range = 100
//! link_quality = 0.9
//! # node = id, x, y   (repeatable; replaces the linear chain)
//!
//! [tsch]
//! slotframe_length = 101
//! channels = 16
//! shared_slots = 4
//! slot_duration_ms = 10
//! queue_capacity = 8
//! max_retries = 4
//! p_shared = 0.5
//! hold_slotframes = 4
//! track_bandwidth = 1
//!
//! [sdn]
//! nsu_period = 10
//! flow_lifetime = 60
//! ppq_bytes = 24
//! flowtable_capacity = 10
//! query_buffer = 4
//! query_timeout = 15
//! cjoin_interval = 8
//! cjoin_retries = 5
//! afr = false
//! afr_threshold = 5
//!
//! [traffic]
//! app_interval = 5..10
//! app_bytes = 40
//!
//! [run]
//! duration = 3600
//! warmup_max = 600
//! drain = 120
//! join_stagger = 10
//! route_lifetime = 600
//! track_attempts = 8
//! seed = 1
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac::MacConfig;
use crate::phy::{build_linear_topology, NodeId, Topology};
use crate::sdn::SdnConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    NoSdnRpl,
    SdnShared,
    SdnTracks,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::NoSdnRpl, Mode::SdnShared, Mode::SdnTracks];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NoSdnRpl => "NoSdnRpl",
            Mode::SdnShared => "SdnShared",
            Mode::SdnTracks => "SdnTracks",
        }
    }

    pub fn has_sdn(self) -> bool {
        self != Mode::NoSdnRpl
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode `{s}` (NoSdnRpl, SdnShared, SdnTracks)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyParams {
    pub hop_count: u16,
    pub spacing: f64,
    pub tx_range: f64,
    pub link_quality: f64,
    /// Explicit placement; overrides the linear chain when non-empty.
    pub nodes: BTreeMap<NodeId, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TschParams {
    pub slotframe_length: u16,
    pub channels: u16,
    pub shared_slots: u16,
    pub slot_duration_ms: f64,
    pub queue_capacity: usize,
    pub max_retries: u8,
    pub p_shared: f64,
    pub hold_slotframes: u16,
    pub track_bandwidth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdnParams {
    pub nsu_period_s: u16,
    pub flow_lifetime_s: u16,
    pub ppq_bytes: usize,
    pub flowtable_capacity: usize,
    pub query_buffer: usize,
    pub query_timeout_s: u16,
    pub cjoin_interval_s: u16,
    pub cjoin_retries: u8,
    pub afr: bool,
    pub afr_threshold: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficParams {
    pub app_interval_s: (f64, f64),
    pub app_bytes: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub duration_s: f64,
    pub warmup_max_s: f64,
    pub drain_s: f64,
    pub join_stagger_s: f64,
    pub route_lifetime_s: f64,
    pub track_attempts: u8,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mode: Mode,
    pub topology: TopologyParams,
    pub tsch: TschParams,
    pub sdn: SdnParams,
    pub traffic: TrafficParams,
    pub run: RunParams,
}

/// Slotframe length used when a scenario does not set one.
pub const DEFAULT_SLOTFRAME_LENGTH: u16 = 101;

impl Scenario {
    pub fn with_mode(mode: Mode) -> Self {
        Scenario {
            mode,
            topology: TopologyParams {
                hop_count: 5,
                spacing: 90.0,
                tx_range: 100.0,
                link_quality: 0.9,
                nodes: BTreeMap::new(),
            },
            tsch: TschParams {
                slotframe_length: DEFAULT_SLOTFRAME_LENGTH,
                channels: 16,
                shared_slots: 4,
                slot_duration_ms: 10.0,
                queue_capacity: 8,
                max_retries: 4,
                p_shared: 0.5,
                hold_slotframes: 4,
                track_bandwidth: 1,
            },
            sdn: SdnParams {
                nsu_period_s: 10,
                flow_lifetime_s: 60,
                ppq_bytes: 24,
                flowtable_capacity: 10,
                query_buffer: 4,
                query_timeout_s: 15,
                cjoin_interval_s: 8,
                cjoin_retries: 5,
                afr: false,
                afr_threshold: 5,
            },
            traffic: TrafficParams {
                app_interval_s: (5.0, 10.0),
                app_bytes: 40,
            },
            run: RunParams {
                duration_s: 3600.0,
                warmup_max_s: 600.0,
                drain_s: 120.0,
                join_stagger_s: 10.0,
                route_lifetime_s: 600.0,
                track_attempts: 8,
                seed: 1,
            },
        }
    }

    pub fn build_topology(&self) -> Result<Topology, crate::phy::TopologyError> {
        let t = &self.topology;
        if t.nodes.is_empty() {
            build_linear_topology(t.hop_count, t.spacing, t.tx_range, t.link_quality)
        } else {
            Topology::new(t.nodes.clone(), t.tx_range, t.link_quality)
        }
    }

    pub fn mac_config(&self) -> MacConfig {
        MacConfig {
            max_retries: self.tsch.max_retries,
            p_shared: self.tsch.p_shared,
            queue_capacity: self.tsch.queue_capacity,
        }
    }

    pub fn sdn_config(&self) -> SdnConfig {
        SdnConfig {
            flowtable_capacity: self.sdn.flowtable_capacity,
            nsu_period_s: self.sdn.nsu_period_s,
            flow_lifetime_s: self.sdn.flow_lifetime_s,
            ppq_bytes: self.sdn.ppq_bytes,
            query_buffer: self.sdn.query_buffer,
            query_timeout_s: self.sdn.query_timeout_s,
            query_retries: 1,
            cjoin_interval_s: self.sdn.cjoin_interval_s,
            cjoin_retries: self.sdn.cjoin_retries,
        }
    }

    /// Checks cross-field constraints that single values cannot.
    fn validate(&self) -> Result<(), String> {
        let ts = &self.tsch;
        if ts.slotframe_length == 0 || ts.channels == 0 {
            return Err("slotframe_length and channels must be positive".into());
        }
        if ts.shared_slots > ts.slotframe_length {
            return Err("more shared slots than slots".into());
        }
        if !(0.0..=1.0).contains(&ts.p_shared) {
            return Err(format!("p_shared {} outside [0, 1]", ts.p_shared));
        }
        if ts.slot_duration_ms.is_nan() || ts.slot_duration_ms <= 0.0 {
            return Err("slot_duration_ms must be positive".into());
        }
        if ts.queue_capacity == 0 || ts.track_bandwidth == 0 {
            return Err("queue_capacity and track_bandwidth must be positive".into());
        }
        let (lo, hi) = self.traffic.app_interval_s;
        if lo.is_nan() || hi.is_nan() || lo <= 0.0 || lo > hi {
            return Err(format!("app_interval {lo}..{hi} must satisfy 0 < min <= max"));
        }
        if self.sdn.nsu_period_s == 0 || self.sdn.flow_lifetime_s == 0 {
            return Err("nsu_period and flow_lifetime must be positive".into());
        }
        if self.sdn.ppq_bytes < 5 {
            return Err("ppq_bytes must cover the destination field (5 bytes)".into());
        }
        if self.run.duration_s.is_nan() || self.run.duration_s <= 0.0 {
            return Err("duration must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {msg}")]
pub struct ScenarioError {
    pub line: usize,
    pub msg: String,
}

fn err(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError { line, msg: msg.into() }
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ScenarioError> {
    v.parse()
        .map_err(|_| err(line, format!("`{key}` expects a number, got `{v}`")))
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool, ScenarioError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(err(line, format!("`{key}` expects true/false, got `{v}`"))),
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut s = Scenario::with_mode(Mode::NoSdnRpl);
    let mut mode = None;
    let mut section = String::new();
    let mut topo_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header"))?
                .trim();
            if !["topology", "tsch", "sdn", "traffic", "run"].contains(&name) {
                return Err(err(line, format!("unknown section [{name}]")));
            }
            if name == "topology" {
                topo_line = line;
            }
            section = name.to_string();
            continue;
        }
        let (key, v) = body
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{body}`")))?;
        match (section.as_str(), key) {
            ("", "mode") => mode = Some(v.parse::<Mode>().map_err(|e| err(line, e))?),
            ("topology", "hop_count") => s.topology.hop_count = num(line, key, v)?,
            ("topology", "spacing") => s.topology.spacing = num(line, key, v)?,
            ("topology", "tx_range") => s.topology.tx_range = num(line, key, v)?,
            ("topology", "link_quality") => {
                let q: f64 = num(line, key, v)?;
                if !(0.0..=1.0).contains(&q) {
                    return Err(err(line, format!("link_quality {q} outside [0, 1]")));
                }
                s.topology.link_quality = q;
            }
            ("topology", "node") => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                let [id, x, y] = parts[..] else {
                    return Err(err(line, "`node` expects `id, x, y`"));
                };
                let id = NodeId(num(line, key, id)?);
                if s.topology
                    .nodes
                    .insert(id, (num(line, key, x)?, num(line, key, y)?))
                    .is_some()
                {
                    return Err(err(line, format!("node {id} placed twice")));
                }
                topo_line = line;
            }
            ("tsch", "slotframe_length") => s.tsch.slotframe_length = num(line, key, v)?,
            ("tsch", "channels") => s.tsch.channels = num(line, key, v)?,
            ("tsch", "shared_slots") => s.tsch.shared_slots = num(line, key, v)?,
            ("tsch", "slot_duration_ms") => s.tsch.slot_duration_ms = num(line, key, v)?,
            ("tsch", "queue_capacity") => s.tsch.queue_capacity = num(line, key, v)?,
            ("tsch", "max_retries") => s.tsch.max_retries = num(line, key, v)?,
            ("tsch", "p_shared") => s.tsch.p_shared = num(line, key, v)?,
            ("tsch", "hold_slotframes") => s.tsch.hold_slotframes = num(line, key, v)?,
            ("tsch", "track_bandwidth") => s.tsch.track_bandwidth = num(line, key, v)?,
            ("sdn", "nsu_period") => s.sdn.nsu_period_s = num(line, key, v)?,
            ("sdn", "flow_lifetime") => s.sdn.flow_lifetime_s = num(line, key, v)?,
            ("sdn", "ppq_bytes") => s.sdn.ppq_bytes = num(line, key, v)?,
            ("sdn", "flowtable_capacity") => s.sdn.flowtable_capacity = num(line, key, v)?,
            ("sdn", "query_buffer") => s.sdn.query_buffer = num(line, key, v)?,
            ("sdn", "query_timeout") => s.sdn.query_timeout_s = num(line, key, v)?,
            ("sdn", "cjoin_interval") => s.sdn.cjoin_interval_s = num(line, key, v)?,
            ("sdn", "cjoin_retries") => s.sdn.cjoin_retries = num(line, key, v)?,
            ("sdn", "afr") => s.sdn.afr = boolean(line, key, v)?,
            ("sdn", "afr_threshold") => s.sdn.afr_threshold = num(line, key, v)?,
            ("traffic", "app_interval") => {
                let (lo, hi) = v
                    .split_once("..")
                    .ok_or_else(|| err(line, "`app_interval` expects `min..max`"))?;
                let (lo, hi): (f64, f64) = (num(line, key, lo.trim())?, num(line, key, hi.trim())?);
                if lo > hi {
                    return Err(err(line, format!("app_interval {lo}..{hi}: min exceeds max")));
                }
                s.traffic.app_interval_s = (lo, hi);
            }
            ("traffic", "app_bytes") => s.traffic.app_bytes = num(line, key, v)?,
            ("run", "duration") => s.run.duration_s = num(line, key, v)?,
            ("run", "warmup_max") => s.run.warmup_max_s = num(line, key, v)?,
            ("run", "drain") => s.run.drain_s = num(line, key, v)?,
            ("run", "join_stagger") => s.run.join_stagger_s = num(line, key, v)?,
            ("run", "route_lifetime") => s.run.route_lifetime_s = num(line, key, v)?,
            ("run", "track_attempts") => s.run.track_attempts = num(line, key, v)?,
            ("run", "seed") => s.run.seed = num(line, key, v)?,
            (sec, k) => {
                let at = if sec.is_empty() {
                    "top level".to_string()
                } else {
                    format!("[{sec}]")
                };
                return Err(err(line, format!("unknown key `{k}` in {at}")));
            }
        }
    }
    s.mode = mode.ok_or_else(|| err(0, "missing `mode`"))?;
    s.validate().map_err(|m| err(0, m))?;
    s.build_topology().map_err(|e| err(topo_line, e.to_string()))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_only_gives_defaults() {
        let s = parse_scenario("mode = SdnTracks\n").unwrap();
        assert_eq!(s, Scenario::with_mode(Mode::SdnTracks));
        assert_eq!(s.topology.tx_range, 100.0);
        assert_eq!(s.topology.link_quality, 0.9);
        assert_eq!(s.traffic.app_interval_s, (5.0, 10.0));
        assert_eq!(s.sdn.nsu_period_s, 10);
        assert_eq!(s.sdn.flow_lifetime_s, 60);
        assert_eq!(s.run.route_lifetime_s, 600.0);
        assert_eq!(s.tsch.shared_slots, 4);
    }

    #[test]
    fn link_quality_bound() {
        let e = parse_scenario("mode = SdnShared\n[topology]\nlink_quality = 1.2\n").unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn interval_order() {
        let e = parse_scenario("mode = NoSdnRpl\n[traffic]\napp_interval = 10..5\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.msg.contains("min exceeds max"));
    }

    #[test]
    fn missing_mode_and_unknown_keys() {
        assert!(parse_scenario("[tsch]\nchannels = 16\n")
            .unwrap_err()
            .msg
            .contains("mode"));
        let e = parse_scenario("mode = SdnShared\n[tsch]\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_scenario("mode = SdnShared\n[tsch]\nchannels = lots\n").unwrap_err();
        assert!(e.msg.contains("number"));
    }

    #[test]
    fn disconnected_custom_topology() {
        let text = "mode = SdnShared\n[topology]\nnode = 0, 0, 0\nnode = 1, 50, 0\nnode = 2, 900, 0\n";
        let e = parse_scenario(text).unwrap_err();
        assert_eq!(e.line, 5);
        assert!(e.msg.contains("disconnected"));
    }

    #[test]
    fn comments_and_overrides() {
        let text = "# comment\nmode = sdnshared # inline\n[tsch]\nslotframe_length = 31\n[sdn]\nafr = on\n";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.mode, Mode::SdnShared);
        assert_eq!(s.tsch.slotframe_length, 31);
        assert!(s.sdn.afr);
    }
}
