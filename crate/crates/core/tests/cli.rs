use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsch-sdn-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn summary_rows(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("summary.csv")).unwrap()
}

#[test]
fn simulate_then_stats_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let run = bin(&[
        "simulate",
        "--scenario",
        &scenario("sdn_tracks.conf"),
        "--seeds",
        "1,2",
        "--out",
        &out,
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("mode SdnTracks"));
    assert!(stdout.contains("latency_mean_ms"));
    for f in [
        "records_seed1.csv",
        "warmup_seed2.csv",
        "tracks_seed1.csv",
        "meta.json",
        "summary.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    let csv = summary_rows(dir.path());
    let stats = bin(&["stats", "--in", &out]);
    assert!(stats.status.success());
    let text = String::from_utf8_lossy(&stats.stdout);
    // Summary lines printed by `stats` carry the same means as summary.csv.
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    for row in rdr.records() {
        let row = row.unwrap();
        if let Ok(mean) = row[3].parse::<f64>() {
            let needle = format!("{mean:.3}");
            assert!(text.contains(&needle), "{} {} {needle}", &row[0], &row[1]);
        }
    }
}

#[test]
fn seed_count_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let run = bin(&[
        "simulate",
        "--scenario",
        &scenario("no_sdn_rpl.conf"),
        "--seeds",
        "2",
        "--out",
        &out,
    ]);
    assert!(run.status.success());
    assert!(dir.path().join("records_seed2.csv").exists());
    assert!(!dir.path().join("records_seed3.csv").exists());
}

#[test]
fn schedule_dump_prints_grid() {
    let run = bin(&["schedule-dump", "--scenario", &scenario("sdn_shared.conf")]);
    assert!(run.status.success());
    let text = String::from_utf8_lossy(&run.stdout);
    assert!(text.contains("SH"));
    assert!(text.contains("5>4"));
}

#[test]
fn bad_scenario_reports_line_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "mode = SdnShared\n[tsch]\nslotframe_length = twelve\n").unwrap();
    let run = bin(&["schedule-dump", "--scenario", &path.to_string_lossy()]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("line 3"));

    let run = bin(&[
        "simulate",
        "--scenario",
        &path.to_string_lossy(),
        "--seeds",
        "0",
        "--out",
        "/nonexistent",
    ]);
    assert!(!run.status.success());
}
