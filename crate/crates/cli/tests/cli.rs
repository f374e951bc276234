use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn roiskip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roiskip"))
        .args(args)
        .env_remove("ROISKIP_CONFIG")
        .output()
        .expect("binary runs")
}

fn summary(out: &Output) -> Value {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

fn quick(dir: &Path) -> Vec<String> {
    [
        format!("output_dir={}", dir.display()),
        "train_clips=2".into(),
        "eval_clips=1".into(),
        "scene.length=3".into(),
        "train.epochs=1".into(),
    ]
    .into_iter()
    .flat_map(|s| ["--set".to_string(), s])
    .collect()
}

fn run(verb: &str, sets: &[String], extra: &[&str]) -> Output {
    let mut args = vec![verb];
    args.extend(sets.iter().map(String::as_str));
    args.extend(extra);
    roiskip(&args)
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect()
}

#[test]
fn usage_errors_exit_1() {
    let out = roiskip(&["sweep", "--set", "no_such_key=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(&out)["ok"], false);
    assert_eq!(roiskip(&["frobnicate"]).status.code(), Some(1));
    let out = roiskip(&["sweep", "--set", "t_reg=2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{ \"period\": 4,\n  oops }").unwrap();
    let out = roiskip(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = summary(&out)["error"].as_str().unwrap().to_string();
    assert!(msg.contains("bad.json") && msg.contains("at byte"), "{msg}");
}

#[test]
fn config_file_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let mut v: Value = serde_json::from_str(include_str!("../../../configs/default.json")).unwrap();
    v["period"] = 7.into();
    fs::write(&cfg, v.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_roiskip"))
        .arg("config")
        .env("ROISKIP_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(summary(&out)["period"], 7);
}

#[test]
fn missing_sequence_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("train", &quick(dir.path()), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quick_pipeline_and_single_period_energy() {
    let dir = tempfile::tempdir().unwrap();
    let sets = quick(dir.path());
    for verb in ["gen", "train", "mask", "simulate"] {
        let out = run(verb, &sets, &[]);
        assert!(
            out.status.success(),
            "{verb}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
    }

    let inputs = snapshot(&dir.path().join("dataset"));
    assert!(run("train", &sets, &[]).status.success());
    assert_eq!(
        snapshot(&dir.path().join("dataset")),
        inputs,
        "train modified its inputs"
    );

    let out = run("energy", &sets, &[]);
    let s = summary(&out);
    assert!(s["reduction_pct"].as_f64().unwrap().is_finite());
    assert_eq!(s["frames"], 3);

    // every frame is a full read at P = 1: no saving at all
    assert!(run("simulate", &sets, &["--set", "period=1"])
        .status
        .success());
    let s = summary(&run("energy", &sets, &["--set", "period=1"]));
    assert_eq!(s["masked_frames"], 0);
    assert!(s["reduction_pct"].as_f64().unwrap().abs() < 1e-12);
    let csv = fs::read_to_string(dir.path().join("energy.csv")).unwrap();
    assert!(csv.starts_with("frame,mode,s,P,E_F_mode,E_F,normalized,reduction_pct\nall,"));
}

fn sweep_rows(csv: &str) -> BTreeMap<(String, String, String), f64> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                (f[0].into(), f[1].into(), f[2].into()),
                f[5].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn sweep_reproduces_operating_point_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let out = roiskip(&[
        "sweep",
        "--set",
        &format!("output_dir={}", dir.path().display()),
    ]);
    assert!(out.status.success());
    assert_eq!(summary(&out)["rows"], 54);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("mode,s,P,E_F_mode,E_F,normalized,reduction_pct\n"));
    let rows = sweep_rows(&csv);
    let e = |m: &str, s: &str, p: &str| rows[&(m.to_string(), s.to_string(), p.to_string())];
    // driving-scene point: similar skip in both modes, row skip cheaper
    assert!(e("row", "0.6", "24") < e("region", "0.6", "24"));
    // eye-tracking point: region mode skips far more, which wins
    assert!(e("region", "0.8", "160") < e("row", "0.6", "160"));
    for m in ["row", "region"] {
        for p in ["4", "24", "160"] {
            let col: Vec<f64> = (1..=9).map(|i| e(m, &format!("0.{i}"), p)).collect();
            assert!(
                col.windows(2).all(|w| w[1] <= w[0]),
                "{m} P={p} not monotone"
            );
        }
    }
}
