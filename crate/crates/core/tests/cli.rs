use std::path::Path;
use std::process::{Command, Output};

use vvf_core::export::{read_trajectories, VvfFile};
use vvf_core::highd::{Manifest, SplitName};
use vvf_core::metrics::RmseReport;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

fn vvf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vvf")).args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> String {
    format!("{FIXTURES}/{name}")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_2() {
    let o = vvf(&["vvf", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(vvf(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(vvf(&["vvf", "--out", "x.vvf"]).status.code(), Some(2));
    assert_eq!(vvf(&["bench", "--dims", "8x8"]).status.code(), Some(2));
    assert_eq!(vvf(&["vvf", "--scenario", "a", "--out", "b", "--jobs", "0"]).status.code(), Some(2));
    assert_eq!(vvf(&["ingest", "--tracks", "t", "--meta", "m", "--out", "o", "--ratios", "0.5,0.5"]).status.code(), Some(2));
}

#[test]
fn help_on_every_subcommand() {
    for sub in ["ingest", "vvf", "predict", "eval", "export-tensors", "bench"] {
        let o = vvf(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--"), "{sub}");
    }
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.vvf");
    let o = vvf(&["vvf", "--scenario", "/nonexistent.scn", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent.scn"));

    let bad = dir.path().join("bad.vvf");
    std::fs::write(&bad, b"VVF2").unwrap();
    let o = vvf(&["predict", "--vvf", path(&bad), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));

    let o = vvf(&[
        "ingest",
        "--tracks",
        &fixture("highd/01_tracks.csv"),
        "--meta",
        &fixture("highd/01_recordingMeta.csv"),
        "--ratios",
        "0.5,0.5,0.5",
        "--out",
        path(&dir.path().join("m.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sum to 1"));
}

#[test]
fn bench_prints_reference_line() {
    let o = vvf(&["bench", "--dims", "64x16", "--iters", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("MLUPS"));
    assert!(text.contains("4.4 ms"));
}

#[test]
fn ingest_to_eval() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.csv");
    let o = vvf(&[
        "ingest",
        "--tracks",
        &fixture("highd/01_tracks.csv"),
        "--meta",
        &fixture("highd/01_recordingMeta.csv"),
        "--tracks",
        &fixture("highd/02_tracks.csv"),
        "--meta",
        &fixture("highd/02_recordingMeta.csv"),
        "--out",
        path(&manifest),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = Manifest::read(&manifest).unwrap();
    // 40 frames at 0.2 s per vehicle leave 6 windows of 10 + 25
    assert_eq!(m.entries.len(), 5 * 6);
    assert_eq!((m.h, m.p), (10, 25));
    for rec in [1, 2] {
        let splits: Vec<SplitName> = m.entries.iter().filter(|e| e.key.recording_id == rec).map(|e| e.split).collect();
        assert!(splits.windows(2).all(|w| w[0] == w[1]), "recording {rec} spans splits");
    }

    let field = dir.path().join("s0.vvf");
    let truth = dir.path().join("truth.csv");
    let o = vvf(&[
        "vvf",
        "--manifest",
        path(&manifest),
        "--sample-id",
        "0",
        "--max-iters",
        "200",
        "--out",
        path(&field),
        "--truth-out",
        path(&truth),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("did not converge"));
    let file = VvfFile::read(&field).unwrap();
    assert_eq!(file.data.dim(), (10, 3, 32, 256));

    let pred = dir.path().join("pred.csv");
    let o = vvf(&["predict", "--vvf", path(&field), "--out", path(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let p = read_trajectories(std::fs::File::open(&pred).unwrap()).unwrap();
    assert_eq!(p.len(), 1);
    assert_eq!(p[0].len(), 25);

    let report = dir.path().join("report.csv");
    let o = vvf(&["eval", "--pred", path(&pred), "--truth", path(&truth), "--out", path(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = RmseReport::read_csv(std::fs::File::open(&report).unwrap()).unwrap();
    assert_eq!(r.rows.len(), 5);
    for row in &r.rows {
        assert!((row.rmse_x.powi(2) + row.rmse_y.powi(2) - row.rmse_r.powi(2)).abs() < 1e-9);
    }

    let tensors = dir.path().join("s0.tensors");
    let o = vvf(&["export-tensors", "--vvf", path(&field), "--out", path(&tensors)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("(3, 320, 256)"));
    assert_eq!(VvfFile::read(&tensors).unwrap().data.dim(), (1, 3, 320, 256));

    let o = vvf(&["vvf", "--manifest", path(&manifest), "--sample-id", "99", "--out", path(&field)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("out of range"));
}
