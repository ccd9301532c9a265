//! Packet records and per-class statistics.
//!
//! Record CSV columns, in order:
//! `packet_id,flow_class,src,dst,enqueue_asn,deliver_asn,outcome,hop_count,on_track,phase`.
//! `deliver_asn` is empty for dropped packets and `outcome` is either
//! `Delivered` or a drop reason.
//!
//! Jitter is the mean absolute difference between the latencies of
//! consecutive packets of a class, taken in delivery order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::Asn;
use crate::packet::{DropReason, FlowClass};
use crate::phy::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Delivered,
    Dropped(DropReason),
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Delivered => "Delivered",
            Outcome::Dropped(r) => r.as_str(),
        }
    }

    pub fn parse(s: &str) -> Option<Outcome> {
        if s == "Delivered" {
            return Some(Outcome::Delivered);
        }
        s.parse().ok().map(Outcome::Dropped)
    }
}

/// Part of the run a packet was enqueued in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Warmup,
    Measure,
    Drain,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Measure => "measure",
            Phase::Drain => "drain",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        [Phase::Warmup, Phase::Measure, Phase::Drain]
            .into_iter()
            .find(|p| p.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub packet_id: u64,
    pub flow_class: FlowClass,
    pub src: NodeId,
    pub dst: NodeId,
    pub enqueue_asn: Asn,
    pub deliver_asn: Option<Asn>,
    pub outcome: Outcome,
    pub hop_count: u32,
    pub on_track: bool,
    pub phase: Phase,
}

impl PacketRecord {
    pub fn latency_slots(&self) -> Option<u64> {
        self.deliver_asn.map(|d| d - self.enqueue_asn)
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    BadRow { row: usize, msg: String },
}

#[derive(Serialize, Deserialize)]
struct Row {
    packet_id: u64,
    flow_class: String,
    src: u16,
    dst: u16,
    enqueue_asn: u64,
    deliver_asn: Option<u64>,
    outcome: String,
    hop_count: u32,
    on_track: bool,
    phase: String,
}

pub fn write_records<W: Write>(out: W, records: &[PacketRecord]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(Row {
            packet_id: r.packet_id,
            flow_class: r.flow_class.as_str().to_string(),
            src: r.src.0,
            dst: r.dst.0,
            enqueue_asn: r.enqueue_asn,
            deliver_asn: r.deliver_asn,
            outcome: r.outcome.as_str().to_string(),
            hop_count: r.hop_count,
            on_track: r.on_track,
            phase: r.phase.as_str().to_string(),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<PacketRecord>, MetricsError> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        let row = row?;
        let bad = |msg: String| MetricsError::BadRow { row: i + 1, msg };
        out.push(PacketRecord {
            packet_id: row.packet_id,
            flow_class: row.flow_class.parse().map_err(bad)?,
            src: NodeId(row.src),
            dst: NodeId(row.dst),
            enqueue_asn: row.enqueue_asn,
            deliver_asn: row.deliver_asn,
            outcome: Outcome::parse(&row.outcome).ok_or_else(|| bad(format!("unknown outcome `{}`", row.outcome)))?,
            hop_count: row.hop_count,
            on_track: row.on_track,
            phase: Phase::parse(&row.phase).ok_or_else(|| bad(format!("unknown phase `{}`", row.phase)))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub class: String,
    pub n_sent: u64,
    pub n_delivered: u64,
    pub pdr: Option<f64>,
    pub latency_mean_ms: Option<f64>,
    pub latency_p50_ms: Option<f64>,
    pub latency_p95_ms: Option<f64>,
    pub jitter_ms: Option<f64>,
    pub drops: BTreeMap<String, u64>,
}

impl FlowStats {
    /// Delivered plus every drop equals sent.
    pub fn is_conserved(&self) -> bool {
        self.n_delivered + self.drops.values().sum::<u64>() == self.n_sent
    }

    pub fn drops_of(&self, reason: DropReason) -> u64 {
        self.drops.get(reason.as_str()).copied().unwrap_or(0)
    }

    /// Metric names in summary order, with their values.
    pub fn metrics(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("pdr", self.pdr),
            ("latency_mean_ms", self.latency_mean_ms),
            ("latency_p50_ms", self.latency_p50_ms),
            ("latency_p95_ms", self.latency_p95_ms),
            ("jitter_ms", self.jitter_ms),
        ]
    }
}

/// Nearest-rank percentile of sorted values; `None` when empty.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Mean absolute difference of consecutive values.
pub fn jitter(series: &[f64]) -> Option<f64> {
    if series.len() < 2 {
        return None;
    }
    let total: f64 = series.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Some(total / (series.len() - 1) as f64)
}

pub fn compute_flow_stats(records: &[PacketRecord], class: FlowClass, slot_ms: f64) -> FlowStats {
    compute_group_stats(records, class.as_str(), &[class], slot_ms)
}

/// Statistics over measure-phase records whose class is in `classes`.
pub fn compute_group_stats(records: &[PacketRecord], label: &str, classes: &[FlowClass], slot_ms: f64) -> FlowStats {
    let mut n_sent = 0;
    let mut drops: BTreeMap<String, u64> = BTreeMap::new();
    let mut delivered: Vec<(Asn, u64, f64)> = Vec::new();
    for r in records
        .iter()
        .filter(|r| r.phase == Phase::Measure && classes.contains(&r.flow_class))
    {
        n_sent += 1;
        match (r.outcome, r.latency_slots()) {
            (Outcome::Delivered, Some(l)) => {
                delivered.push((r.deliver_asn.unwrap_or_default(), r.packet_id, l as f64 * slot_ms))
            }
            (Outcome::Dropped(reason), _) => *drops.entry(reason.as_str().to_string()).or_default() += 1,
            (Outcome::Delivered, None) => *drops.entry("Unfinished".into()).or_default() += 1,
        }
    }
    delivered.sort_by_key(|&(asn, id, _)| (asn, id));
    let series: Vec<f64> = delivered.iter().map(|d| d.2).collect();
    let mut sorted = series.clone();
    sorted.sort_by(f64::total_cmp);
    let n_delivered = series.len() as u64;
    FlowStats {
        class: label.to_string(),
        n_sent,
        n_delivered,
        pdr: (n_sent > 0).then(|| n_delivered as f64 / n_sent as f64),
        latency_mean_ms: (!series.is_empty()).then(|| series.iter().sum::<f64>() / series.len() as f64),
        latency_p50_ms: percentile(&sorted, 50.0),
        latency_p95_ms: percentile(&sorted, 95.0),
        jitter_ms: jitter(&series),
        drops,
    }
}

/// Label of the combined upward SDN control group.
pub const CONTROL_GROUP: &str = "Control";

/// Stats for App, Nsu, Ftq, SdnDown and the combined control group.
pub fn standard_stats(records: &[PacketRecord], slot_ms: f64) -> Vec<FlowStats> {
    let mut out: Vec<FlowStats> = [FlowClass::App, FlowClass::Nsu, FlowClass::Ftq, FlowClass::SdnDown]
        .into_iter()
        .map(|c| compute_flow_stats(records, c, slot_ms))
        .collect();
    out.push(compute_group_stats(
        records,
        CONTROL_GROUP,
        &[FlowClass::Nsu, FlowClass::Ftq],
        slot_ms,
    ));
    out
}

pub fn write_flow_stats<W: Write>(out: W, stats: &[FlowStats]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "class",
        "n_sent",
        "n_delivered",
        "pdr",
        "latency_mean_ms",
        "latency_p50_ms",
        "latency_p95_ms",
        "jitter_ms",
        "drops",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for s in stats {
        let drops: Vec<String> = s.drops.iter().map(|(k, v)| format!("{k}={v}")).collect();
        w.write_record([
            s.class.clone(),
            s.n_sent.to_string(),
            s.n_delivered.to_string(),
            opt(s.pdr),
            opt(s.latency_mean_ms),
            opt(s.latency_p50_ms),
            opt(s.latency_p95_ms),
            opt(s.jitter_ms),
            drops.join(";"),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub class: String,
    pub metric: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub stddev: Option<f64>,
}

pub fn mean_stddev(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

/// Aggregates per-seed stats; values missing in a seed are skipped.
pub fn summarize(per_seed: &[Vec<FlowStats>]) -> Vec<SummaryRow> {
    let mut by_key: BTreeMap<(usize, usize), (String, String, Vec<f64>)> = BTreeMap::new();
    for stats in per_seed {
        for (ci, s) in stats.iter().enumerate() {
            for (mi, (name, v)) in s.metrics().into_iter().enumerate() {
                let e = by_key
                    .entry((ci, mi))
                    .or_insert_with(|| (s.class.clone(), name.to_string(), Vec::new()));
                e.2.extend(v);
            }
        }
    }
    by_key
        .into_values()
        .map(|(class, metric, vals)| {
            let (mean, stddev) = mean_stddev(&vals);
            SummaryRow {
                class,
                metric,
                n: vals.len(),
                mean,
                stddev,
            }
        })
        .collect()
}

pub fn find_summary<'a>(rows: &'a [SummaryRow], class: &str, metric: &str) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.class == class && r.metric == metric)
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "metric", "n", "mean", "stddev"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for r in rows {
        w.write_record([
            r.class.clone(),
            r.metric.clone(),
            r.n.to_string(),
            opt(r.mean),
            opt(r.stddev),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, class: FlowClass, enq: Asn, deliver: Option<Asn>) -> PacketRecord {
        PacketRecord {
            packet_id: id,
            flow_class: class,
            src: NodeId(3),
            dst: NodeId(0),
            enqueue_asn: enq,
            deliver_asn: deliver,
            outcome: match deliver {
                Some(_) => Outcome::Delivered,
                None => Outcome::Dropped(DropReason::RetryLimit),
            },
            hop_count: 3,
            on_track: false,
            phase: Phase::Measure,
        }
    }

    fn latencies(ms: &[u64]) -> Vec<PacketRecord> {
        // 10 ms slots, one packet every 100 slots.
        ms.iter()
            .enumerate()
            .map(|(i, &l)| {
                let enq = i as u64 * 100;
                rec(i as u64, FlowClass::App, enq, Some(enq + l / 10))
            })
            .collect()
    }

    #[test]
    fn constant_series_has_no_jitter() {
        let s = compute_flow_stats(&latencies(&[10, 10, 10]), FlowClass::App, 10.0);
        assert_eq!(s.jitter_ms, Some(0.0));
        assert_eq!(s.latency_mean_ms, Some(10.0));
    }

    #[test]
    fn alternating_series_jitter() {
        let s = compute_flow_stats(&latencies(&[10, 20, 10]), FlowClass::App, 10.0);
        assert_eq!(s.jitter_ms, Some(10.0));
    }

    #[test]
    fn pdr_nine_of_ten() {
        let mut r = latencies(&[10; 9]);
        r.push(rec(9, FlowClass::App, 5000, None));
        let s = compute_flow_stats(&r, FlowClass::App, 10.0);
        assert_eq!((s.n_sent, s.n_delivered), (10, 9));
        assert_eq!(s.pdr, Some(0.9));
        assert!(s.is_conserved());
        assert_eq!(s.drops_of(DropReason::RetryLimit), 1);
    }

    #[test]
    fn empty_stats_are_null() {
        let s = compute_flow_stats(&[], FlowClass::Nsu, 10.0);
        assert_eq!(s.n_sent, 0);
        assert!(s.pdr.is_none() && s.latency_mean_ms.is_none() && s.jitter_ms.is_none());
        assert!(s.latency_p95_ms.is_none());
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), Some(10.0));
        assert_eq!(percentile(&v, 95.0), Some(19.0));
        assert_eq!(percentile(&v, 100.0), Some(20.0));
        assert_eq!(percentile(&[7.0], 5.0), Some(7.0));
    }

    #[test]
    fn jitter_follows_delivery_order() {
        // Enqueue order 0,1,2 but packet 1 arrives last.
        let r = vec![
            rec(0, FlowClass::App, 0, Some(1)),
            rec(1, FlowClass::App, 10, Some(40)),
            rec(2, FlowClass::App, 20, Some(21)),
        ];
        let s = compute_flow_stats(&r, FlowClass::App, 10.0);
        // delivery order latencies 10, 10, 300
        assert_eq!(s.jitter_ms, Some(145.0));
    }

    #[test]
    fn other_phases_excluded() {
        let mut r = latencies(&[10, 10]);
        r[0].phase = Phase::Warmup;
        let s = compute_flow_stats(&r, FlowClass::App, 10.0);
        assert_eq!(s.n_sent, 1);
    }

    #[test]
    fn csv_round_trip() {
        let mut r = latencies(&[10, 30]);
        r.push(rec(5, FlowClass::Ftq, 7, None));
        r[1].on_track = true;
        let mut buf = Vec::new();
        write_records(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(
            text.starts_with("packet_id,flow_class,src,dst,enqueue_asn,deliver_asn,outcome,hop_count,on_track,phase\n")
        );
        assert!(text.contains("5,Ftq,3,0,7,,RetryLimit,3,false,measure"));
        assert_eq!(read_records(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn summary_mean_and_sample_stddev() {
        let a = vec![compute_flow_stats(&latencies(&[10, 10]), FlowClass::App, 10.0)];
        let b = vec![compute_flow_stats(&latencies(&[30, 30]), FlowClass::App, 10.0)];
        let rows = summarize(&[a, b]);
        let m = find_summary(&rows, "App", "latency_mean_ms").unwrap();
        assert_eq!(m.mean, Some(20.0));
        assert!((m.stddev.unwrap() - 200f64.sqrt()).abs() < 1e-12);
    }
}
