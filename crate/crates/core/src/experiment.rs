//! Multi-seed experiments and their files.
//!
//! Output directory layout:
//!
//! | file                      | content                                   |
//! |---------------------------|-------------------------------------------|
//! | `records_seed{N}.csv`     | measure and drain packet records          |
//! | `warmup_seed{N}.csv`      | packets enqueued during warm-up           |
//! | `flowstats_seed{N}.csv`   | per-class stats of seed N                 |
//! | `schedule_seed{N}.txt`    | final slotframe grid                      |
//! | `tracks_seed{N}.csv`      | track table                               |
//! | `controller_seed{N}.csv`  | controller decision log                   |
//! | `summary.csv`             | mean and stddev per class and metric      |
//! | `summary.json`            | the same summary plus run metadata        |
//! | `meta.json`               | mode, seeds, slot duration, run counters  |

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, FlowStats, MetricsError, PacketRecord, Phase, SummaryRow};
use crate::network::{simulate, NetworkError, RunOutput};
use crate::scenario::{Mode, Scenario};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("seed {seed}: {source}")]
    Run { seed: u64, source: NetworkError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Metrics { path: PathBuf, source: MetricsError },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("no seeds given")]
    NoSeeds,
    #[error("{0}: no record files found")]
    NoRecords(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMeta {
    pub seed: u64,
    pub warmup_end_asn: u64,
    pub warmup_capped: bool,
    pub measure_end_asn: u64,
    pub end_asn: u64,
    pub slot_violations: u64,
    pub audit_violations: u64,
    pub track_overlaps: u64,
    pub track_queue_overflows: u64,
    pub track_failures: u64,
    pub ftq_first_miss: u64,
    pub ftq_after_expiry: u64,
    pub control_tracks: usize,
    pub unjoined: usize,
    pub stale_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub mode: Mode,
    pub slot_ms: f64,
    pub seeds: Vec<SeedMeta>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub runs: Vec<RunOutput>,
    pub per_seed: Vec<Vec<FlowStats>>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn meta(&self) -> Meta {
        Meta {
            mode: self.mode,
            slot_ms: self.runs.first().map_or(0.0, |r| r.slot_ms),
            seeds: self
                .runs
                .iter()
                .map(|r| SeedMeta {
                    seed: r.seed,
                    warmup_end_asn: r.warmup_end_asn,
                    warmup_capped: r.warmup_capped,
                    measure_end_asn: r.measure_end_asn,
                    end_asn: r.end_asn,
                    slot_violations: r.slot_violations,
                    audit_violations: r.audit_violations,
                    track_overlaps: r.track_overlaps,
                    track_queue_overflows: r.track_queue_overflows,
                    track_failures: r.track_failures,
                    ftq_first_miss: r.ftq_first_miss,
                    ftq_after_expiry: r.ftq_after_expiry,
                    control_tracks: r.control_tracks.len(),
                    unjoined: r
                        .join_states
                        .iter()
                        .filter(|(_, s)| *s == crate::sdn::JoinState::Unjoined)
                        .count(),
                    stale_nodes: r.stale_nodes.len(),
                })
                .collect(),
        }
    }
}

/// Runs every seed (concurrently) and aggregates. With `out` set, writes
/// the files listed in the module docs.
pub fn run_experiment(sc: &Scenario, seeds: &[u64], out: Option<&Path>) -> Result<ExperimentReport, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }
    let runs: Vec<RunOutput> = seeds
        .par_iter()
        .map(|&seed| simulate(sc, seed).map_err(|source| ExperimentError::Run { seed, source }))
        .collect::<Result<_, _>>()?;
    let per_seed: Vec<Vec<FlowStats>> = runs
        .iter()
        .map(|r| metrics::standard_stats(&r.records, r.slot_ms))
        .collect();
    let summary = metrics::summarize(&per_seed);
    let report = ExperimentReport {
        mode: sc.mode,
        runs,
        per_seed,
        summary,
    };
    if let Some(dir) = out {
        write_report(&report, dir)?;
    }
    Ok(report)
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| ExperimentError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &(text + "\n"))
}

fn metrics_err(path: &Path) -> impl Fn(MetricsError) -> ExperimentError + '_ {
    move |source| ExperimentError::Metrics {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (run, stats) in report.runs.iter().zip(&report.per_seed) {
        let n = run.seed;
        let (warm, rest): (Vec<PacketRecord>, Vec<PacketRecord>) =
            run.records.iter().cloned().partition(|r| r.phase == Phase::Warmup);
        let p = dir.join(format!("records_seed{n}.csv"));
        metrics::write_records(create(&p)?, &rest).map_err(metrics_err(&p))?;
        let p = dir.join(format!("warmup_seed{n}.csv"));
        metrics::write_records(create(&p)?, &warm).map_err(metrics_err(&p))?;
        let p = dir.join(format!("flowstats_seed{n}.csv"));
        metrics::write_flow_stats(create(&p)?, stats).map_err(metrics_err(&p))?;
        write_text(&dir.join(format!("schedule_seed{n}.txt")), &run.schedule_dump)?;
        write_text(&dir.join(format!("tracks_seed{n}.csv")), &run.track_dump)?;
        write_text(&dir.join(format!("controller_seed{n}.csv")), &run.controller_log)?;
    }
    let p = dir.join("summary.csv");
    metrics::write_summary(create(&p)?, &report.summary).map_err(metrics_err(&p))?;
    let meta = report.meta();
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({ "mode": meta.mode, "summary": report.summary }),
    )?;
    write_json(&dir.join("meta.json"), &meta)
}

/// Stats of one seed, keyed by the seed.
pub type SeedStats = (u64, Vec<FlowStats>);

/// Recomputes per-seed stats and the summary from a result directory.
pub fn stats_from_dir(dir: &Path) -> Result<(Vec<SeedStats>, Vec<SummaryRow>), ExperimentError> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|source| ExperimentError::Io {
        path: meta_path.clone(),
        source,
    })?;
    let meta: Meta = serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
        path: meta_path,
        source,
    })?;
    let mut per_seed = Vec::new();
    for s in &meta.seeds {
        let p = dir.join(format!("records_seed{}.csv", s.seed));
        let f = File::open(&p).map_err(|source| ExperimentError::Io {
            path: p.clone(),
            source,
        })?;
        let records = metrics::read_records(f).map_err(metrics_err(&p))?;
        per_seed.push((s.seed, metrics::standard_stats(&records, meta.slot_ms)));
    }
    if per_seed.is_empty() {
        return Err(ExperimentError::NoRecords(dir.to_path_buf()));
    }
    let stats: Vec<Vec<FlowStats>> = per_seed.iter().map(|(_, s)| s.clone()).collect();
    Ok((per_seed, metrics::summarize(&stats)))
}
