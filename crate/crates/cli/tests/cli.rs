use std::path::Path;
use std::process::{Command, Output};

fn legodom(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_legodom")).args(args).output().unwrap();
    assert!(out.status.success(), "legodom {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);

    let data = d("data");
    std::fs::create_dir(&data).unwrap();
    // One rigid and one slippery sequence.
    let sets = legodom::sim::ScenarioConfig::training_set(0, 6.0);
    for (seed, cfg) in [("1", &sets[0]), ("2", &sets[4])] {
        let path = d(&format!("{}.toml", cfg.name));
        std::fs::write(&path, cfg.to_toml_string()).unwrap();
        legodom(&["--seed", seed, "simulate", "--config", p(&path), "--out", p(&data.join(format!("{}.jsonl", cfg.name)))]);
    }
    legodom(&[
        "train-offline", "--data", p(&data), "--epochs", "3", "--out", p(&d("model.json")),
        "--report", p(&d("report.json")), "--loss-csv", p(&d("loss.csv")),
    ]);
    legodom(&["train-offline", "--data", p(&data), "--epochs", "3", "--no-tactile", "--out", p(&d("nt.json"))]);
    let loss = String::from_utf8(read(&d("loss.csv"))).unwrap();
    assert_eq!(loss.lines().count(), 4);

    legodom(&["--seed", "5", "simulate", "--preset", "nominal", "--duration", "5", "--out", p(&d("frames.jsonl"))]);
    for (i, seed) in ["5", "6"].iter().enumerate() {
        legodom(&[
            "--seed", seed, "simulate", "--preset", "nominal", "--duration", "5", "--out", p(&d(&format!("s{i}.jsonl"))),
        ]);
        legodom(&[
            "run", "--frames", p(&d(&format!("s{i}.jsonl"))), "--model", p(&d("model.json")),
            "--out", p(&d(&format!("est{i}.jsonl"))), "--metrics", p(&d(&format!("m{i}.json"))),
        ]);
    }
    let stdout = legodom(&["metrics", "--frames", p(&d("s0.jsonl")), "--estimates", p(&d("est0.jsonl")), "--method", "ours"]).stdout;
    let report: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    let saved: serde_json::Value = serde_json::from_slice(&read(&d("m0.json"))).unwrap();
    assert_eq!(report, saved);
    assert!(report["ate"]["mean"].as_f64().unwrap() >= 0.0);

    legodom(&["embed", "--estimates", p(&d("est0.jsonl")), p(&d("est1.jsonl")), "--out", p(&d("embed.csv"))]);
    let embed = String::from_utf8(read(&d("embed.csv"))).unwrap();
    assert!(embed.starts_with("session,index,t,x,y\n"));
    assert!(embed.lines().any(|l| l.starts_with("1,")));

    legodom(&[
        "report", "--frames", p(&d("s0.jsonl")), "--estimates", p(&d("est0.jsonl")), "--model", p(&d("model.json")),
        "--out", p(&d("resid.csv")),
    ]);
    assert!(String::from_utf8(read(&d("resid.csv"))).unwrap().starts_with("t,index,terrain"));

    legodom(&[
        "run", "--frames", p(&d("s0.jsonl")), "--method", "no-tactile", "--no-tactile-model", p(&d("nt.json")),
        "--out", p(&d("nt_est.jsonl")),
    ]);
}

#[test]
fn methods_lists_the_registry() {
    let out = String::from_utf8(legodom(&["methods"]).stdout).unwrap();
    for name in ["ours", "no-online", "no-tactile", "lio-only", "conventional-leg"] {
        assert!(out.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}

#[test]
fn invalid_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    let status = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_legodom")).args(args).output().unwrap().status;
    assert!(!status(&["simulate", "--preset", "moon", "--out", p(&out)]).success());
    assert!(!status(&["run", "--frames", p(&dir.path().join("missing.jsonl")), "--out", p(&out)]).success());
    legodom(&["simulate", "--preset", "nominal", "--duration", "2", "--out", p(&out)]);
    // Neural methods need a model.
    assert!(!status(&["run", "--frames", p(&out), "--out", p(&dir.path().join("e.jsonl"))]).success());
    legodom(&["run", "--frames", p(&out), "--method", "lio-only", "--out", p(&dir.path().join("e.jsonl"))]);
}

#[test]
fn config_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.toml");
    let mut scenario = legodom::sim::ScenarioConfig::walk(0);
    scenario.duration = 2.0;
    std::fs::write(&cfg, scenario.to_toml_string()).unwrap();
    let frames = dir.path().join("f.jsonl");
    legodom(&["--seed", "4", "simulate", "--config", p(&cfg), "--out", p(&frames)]);

    let smoother = dir.path().join("smoother.json");
    std::fs::write(&smoother, serde_json::to_string(&legodom::graph::smoother::SmootherConfig::default()).unwrap()).unwrap();
    legodom(&[
        "run", "--frames", p(&frames), "--method", "conventional-leg", "--config", p(&smoother),
        "--out", p(&dir.path().join("e.jsonl")),
    ]);
}
