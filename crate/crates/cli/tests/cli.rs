use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::process::{Command, Output};

use robosumm_core::io::read_summary_manifest;
use robosumm_core::scenario::{Injection, ScenarioSpec};
use robosumm_core::IllPosedReason;

fn robosumm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robosumm")).current_dir(dir).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_spec(dir: &Path) {
    let mut spec = ScenarioSpec::segmented(&[300.0; 8], 600.0, 4);
    for (i, seg) in spec.activity_segments.clone().iter().enumerate() {
        spec.ill_posed_injections.push(Injection {
            start_s: seg.start_s + 50.0,
            end_s: seg.start_s + 70.0,
            reason: IllPosedReason::ALL[i % 6],
        });
    }
    std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&spec).unwrap()).unwrap();
}

fn run_pipeline(dir: &Path) {
    write_spec(dir);
    let steps: [&[&str]; 3] = [
        &["gen", "--spec", "spec.json", "--out", "frames.jsonl", "--features", "feat.bin", "--truth", "truth.jsonl"],
        &["filter", "--frames", "frames.jsonl", "--out", "wellposed.jsonl", "--report", "report.json"],
        &["summarize", "--frames", "wellposed.jsonl", "--features", "feat.bin", "--out", "summary.json"],
    ];
    for args in steps {
        let out = robosumm(dir, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn segment_by_frame(dir: &Path) -> HashMap<u64, Option<u64>> {
    std::fs::read_to_string(dir.join("truth.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["frame_id"].as_u64().unwrap(), v["segment_id"].as_u64())
        })
        .collect()
}

#[test]
fn pipeline_finds_one_keyframe_per_segment() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    let manifest = read_summary_manifest(dir.path().join("summary.json")).unwrap();
    assert_eq!(manifest.k, 8);
    assert_eq!(manifest.entries.len(), 8);
    let truth = segment_by_frame(dir.path());
    let segments: BTreeSet<u64> = manifest.entries.iter().map(|e| truth[&e.frame_id].unwrap()).collect();
    assert_eq!(segments.len(), 8);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let rejected: u64 = report["rejected_by_reason"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(report["accepted"].as_u64().unwrap() + rejected, report["total"].as_u64().unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        run_pipeline(dir);
        for args in [
            &["baseline", "--method", "kmeans", "--frames", "wellposed.jsonl", "--features", "feat.bin", "--k", "8", "--out", "kmeans.json", "--seed", "9"][..],
            &["baseline", "--method", "uniform", "--frames", "wellposed.jsonl", "--out", "uniform.json"],
            &["simulate", "--frames", "frames.jsonl", "--out", "trace.jsonl"],
        ] {
            assert_eq!(code(&robosumm(dir, args)), 0, "{args:?}");
        }
    }
    for file in ["frames.jsonl", "feat.bin", "truth.jsonl", "wellposed.jsonl", "report.json", "summary.json", "kmeans.json", "uniform.json", "trace.jsonl"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 5] = [
        &["summarize", "--frames", "f", "--features", "x", "--k", "0", "--out", "s.json"],
        &["summarize", "--frames", "f", "--features", "x", "--h0", "-1", "--out", "s.json"],
        &["baseline", "--method", "median", "--frames", "f", "--out", "s.json"],
        &["replay", "--addr", "127.0.0.1:1", "--frames", "f", "--rate", "fast"],
        &["nonsense"],
    ];
    for args in cases {
        let out = robosumm(dir.path(), args);
        assert_eq!(code(&out), 1, "{args:?}");
    }
}

#[test]
fn data_errors_exit_2_with_message() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"frame_id\":0,\"t\":0}\n").unwrap();
    let out = robosumm(dir.path(), &["simulate", "--frames", "bad.jsonl", "--out", "t.jsonl"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let frames = "{\"frame_id\":0,\"t\":0.0,\"w\":640,\"h\":480,\"landmarks\":null,\"blur_var\":null,\"feat_row\":null}\n";
    std::fs::write(dir.path().join("noblur.jsonl"), frames).unwrap();
    let out = robosumm(dir.path(), &["filter", "--frames", "noblur.jsonl", "--out", "w.jsonl", "--report", "r.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("blur"));

    std::fs::write(dir.path().join("cfg.json"), r#"{"summarizer":{"kk":3}}"#).unwrap();
    let out = robosumm(dir.path(), &["--config", "cfg.json", "simulate", "--frames", "noblur.jsonl", "--out", "t.jsonl"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn images_supply_missing_blur_scores() {
    let dir = tempfile::tempdir().unwrap();
    let frames = "{\"frame_id\":0,\"t\":0.0,\"w\":8,\"h\":8,\"landmarks\":null,\"blur_var\":null,\"feat_row\":null}\n";
    std::fs::write(dir.path().join("frames.jsonl"), frames).unwrap();
    std::fs::create_dir(dir.path().join("img")).unwrap();
    std::fs::write(dir.path().join("img/0.gray"), [128u8; 64]).unwrap();
    let out = robosumm(
        dir.path(),
        &["filter", "--frames", "frames.jsonl", "--images", "img", "--out", "w.jsonl", "--report", "r.json"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    // without the image the frame has no blur score and the run fails
    assert_eq!(report["rejected_by_reason"]["people_absent"], 1);
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["gen", "filter", "summarize", "baseline", "simulate", "serve", "replay"] {
        let out = robosumm(dir.path(), &[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--config") && text.contains("--seed"), "{sub}: {text}");
    }
    let out = robosumm(dir.path(), &["--help"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn serve_and_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = probe.local_addr().unwrap().to_string();
    drop(probe);
    let mut server = Command::new(env!("CARGO_BIN_EXE_robosumm"))
        .args(["serve", "--addr", &addr])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let mut ok = None;
    for _ in 0..50 {
        let out = robosumm(
            dir.path(),
            &["replay", "--addr", &addr, "--frames", "wellposed.jsonl", "--features", "feat.bin", "--out", "replayed.jsonl", "--summary-out", "remote.json"],
        );
        if code(&out) == 0 {
            ok = Some(out);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    server.kill().unwrap();
    server.wait().unwrap();
    assert!(ok.is_some(), "replay never succeeded");
    let remote = read_summary_manifest(dir.path().join("remote.json")).unwrap();
    let local = read_summary_manifest(dir.path().join("summary.json")).unwrap();
    assert_eq!(remote, local);
    let out = robosumm(dir.path(), &["simulate", "--frames", "wellposed.jsonl", "--out", "offline.jsonl"]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(dir.path().join("replayed.jsonl")).unwrap(),
        std::fs::read(dir.path().join("offline.jsonl")).unwrap()
    );
}
