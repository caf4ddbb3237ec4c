use std::path::Path;
use std::process::{Command, Output};

fn maskforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskforge"))
        .args(args)
        .env_remove("MASKFORGE_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(maskforge(&[]).status.code(), Some(1));
    assert_eq!(maskforge(&["simulate"]).status.code(), Some(1));
    assert_eq!(maskforge(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(maskforge(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(maskforge(&["init", arg(&missing), arg(dir.path())]).status.code(), Some(2));
    assert_eq!(maskforge(&["simulate", arg(dir.path())]).status.code(), Some(2));
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "beta0 = 7.0\n").unwrap();
    let out = maskforge(&["--config", arg(&bad_cfg), "generate", "end-to-end", arg(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_init_simulate_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ws = dir.path().join("ws");
    let out = maskforge(&["generate", "end-to-end", arg(&data), "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = data.join("manifest.json");

    let out = maskforge(&["init", arg(&manifest), arg(&ws)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let prepared: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(prepared.as_array().unwrap().len(), 2);
    let weak = std::fs::read(ws.join("sets/balls/weak.mfv")).unwrap();
    assert!(maskforge(&["init", arg(&manifest), arg(&ws)]).status.success());
    assert_eq!(std::fs::read(ws.join("sets/balls/weak.mfv")).unwrap(), weak);

    let out = maskforge(&["simulate", arg(&ws), "--set", "boxes", "--no-flip-dict"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sim = ws.join("reports/simulate-plain");
    let csv = std::fs::read_to_string(sim.join("boxes.csv")).unwrap();
    assert!(csv.starts_with("imageId,initP,initR,initF,finalF,clicks,autoFlips"));
    assert_eq!(csv.lines().count(), 11);

    let out = maskforge(&["eval", arg(&ws), arg(&sim.join("masks"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.join("reports/eval.json")).unwrap()).unwrap();
    assert_eq!(report["images"].as_array().unwrap().len(), 10);
    assert!(report["meanF"].as_f64().unwrap() >= 0.93);
}
