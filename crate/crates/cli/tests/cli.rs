use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use metaforge::codec::emit_canonical;
use metaforge::engine::{reset, step};
use metaforge::generator::{generate, GeneratorConfig};
use metaforge::model::{MetaTaskSpec, RewardRule, StateRef};
use metaforge::presets;
use metaforge::rng::{derive_seed, seeded};
use metaforge::sampler::{sample_instance, SamplerConfig};
use rand::Rng;
use serde_json::{json, Value};

fn metaforge(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_metaforge"));
    cmd.args(args).env_remove("METAFORGE_SOLVER_CAP");
    cmd
}

fn run(args: &[&str]) -> Output {
    metaforge(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: stdout {:?}, stderr {:?}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn write_spec(dir: &Path, name: &str, spec: &MetaTaskSpec) -> String {
    let path = dir.join(name);
    std::fs::write(&path, emit_canonical(spec)).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn filter_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut plain = MetaTaskSpec::new(2, 2);
    plain.set_uniform_all(0, &[0, 1]);
    plain.reward_rules.push(RewardRule::on_state(StateRef::State(1)));
    let plain = write_spec(dir.path(), "plain.mtaskx.json", &plain);

    let bandit = run(&["filter", "preset:bandit"]);
    assert_eq!(bandit.status.code(), Some(0));
    assert_eq!(stdout_json(&bandit)["classification"], "meta");

    let out = run(&["filter", &plain]);
    assert_eq!(out.status.code(), Some(10));
    assert_eq!(stdout_json(&out)["classification"], "equivalent");

    assert_eq!(run(&["filter", "preset:harlow"]).status.code(), Some(11));
    assert_eq!(run(&["filter", "no/such/file.json"]).status.code(), Some(12));
}

#[test]
fn filter_reports_the_solver_cap() {
    let out = metaforge(&["filter", "preset:dark_room", "-p", "width=50", "-p", "height=50"])
        .env("METAFORGE_SOLVER_CAP", "2499")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(12));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2500 augmented states"));

    let dir = tempfile::tempdir().unwrap();
    let mut flagged = MetaTaskSpec::new(1, 2);
    flagged.n_flags = 13;
    let flagged = write_spec(dir.path(), "flags.mtaskx.json", &flagged);
    let out = run(&["filter", &flagged]);
    assert_eq!(out.status.code(), Some(12));
    assert!(String::from_utf8_lossy(&out.stderr).contains("8192 augmented states"));

    let bad_cap = metaforge(&["filter", "preset:bandit"]).env("METAFORGE_SOLVER_CAP", "lots").output().unwrap();
    assert_eq!(bad_cap.status.code(), Some(12));
}

#[test]
fn generate_writes_specs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let status = run(&["generate", "--count", "3", "--seed", "42", "--out", out.to_str().unwrap()]).status;
        assert!(status.success());
    }
    let manifest: Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let again: Value = serde_json::from_slice(&std::fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest, again);
    assert_eq!(manifest["master_seed"], 42);
    let items = manifest["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);
    let spec_files = std::fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path() != a.join("manifest.json")).count();
    assert_eq!(spec_files, 3);
    for (i, item) in items.iter().enumerate() {
        assert_eq!(item["seed"], derive_seed(42, i as u64));
        let path = a.join(item["file"].as_str().unwrap());
        let spec = metaforge::codec::parse_any(&std::fs::read(path).unwrap()).unwrap();
        let expected = generate(&GeneratorConfig { seed: derive_seed(42, i as u64), ..GeneratorConfig::default() }).unwrap();
        assert_eq!(spec, expected);
        assert_eq!(item["digest"], format!("{:016x}", metaforge::codec::spec_digest(&spec)));
    }
}

#[test]
fn generate_rejects_infeasible_configs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    std::fs::write(&config, r#"{"n_states": [2, 2], "n_state_vars": [3, 3]}"#).unwrap();
    let out = run(&["generate", "--config", config.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn oracle_beats_random_on_every_preset() {
    for name in presets::names() {
        let spec = format!("preset:{name}");
        let mean = |policy: &str| {
            let out = run(&["run", &spec, "--policy", policy, "--episodes", "100", "--seed", "1", "--episode-seed", "5"]);
            assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
            let report = stdout_json(&out);
            assert_eq!(report["episode_returns"].as_array().unwrap().len(), 100);
            report["mean_return"].as_f64().unwrap()
        };
        let (oracle, random) = (mean("greedy-oracle"), mean("random"));
        assert!(oracle >= random, "{name}: oracle {oracle} < random {random}");
    }
}

#[test]
fn run_edge_cases() {
    let out = run(&["run", "preset:bandit", "--episodes", "0"]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert_eq!(report["episode_returns"], json!([]));
    assert_eq!(report["mean_return"], Value::Null);

    let out = run(&["run", "preset:bandit", "--policy", "clairvoyant"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_and_convert() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/key_door.mtask.json");
    let canonical = dir.path().join("kd.mtaskx.json");
    let positional = dir.path().join("kd.mtask.json");
    assert!(run(&["convert", fixture, "--to", "canonical", "-o", canonical.to_str().unwrap()]).status.success());
    assert!(run(&["convert", canonical.to_str().unwrap(), "--to", "positional", "-o", positional.to_str().unwrap()]).status.success());
    let twice = run(&["convert", positional.to_str().unwrap(), "--to", "positional"]);
    assert_eq!(twice.stdout, std::fs::read(&positional).unwrap());

    let ok = run(&["validate", canonical.to_str().unwrap()]);
    assert!(ok.status.success());
    assert_eq!(stdout_json(&ok)["valid"], true);

    let broken = dir.path().join("broken.mtaskx.json");
    let mut doc: Value = serde_json::from_slice(&std::fs::read(&canonical).unwrap()).unwrap();
    doc["horizon"] = json!(0);
    std::fs::write(&broken, doc.to_string()).unwrap();
    let out = run(&["validate", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    assert_eq!(report["valid"], false);
    assert_eq!(report["violations"][0]["code"], "zero_horizon");

    let grid = run(&["presets", "dark_room", "--format", "positional"]);
    assert!(!grid.status.success(), "topology is not expressible in the positional format");
}

fn serve_lines(requests: &[String]) -> (Vec<Value>, Option<i32>) {
    let mut child = metaforge(&["serve"]).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    {
        let mut stdin = child.stdin.take().unwrap();
        for r in requests {
            writeln!(stdin, "{r}").unwrap();
        }
    }
    let out = child.wait_with_output().unwrap();
    let replies = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    (replies, out.status.code())
}

#[test]
fn serve_bandit_transcript() {
    let requests: Vec<String> = [
        json!({"cmd": "step", "action": 0}),
        json!({"cmd": "load_spec", "spec": "bandit"}),
        json!({"cmd": "info"}),
        json!({"cmd": "sample", "seed": 7}),
        json!({"cmd": "reset", "seed": 11}),
        json!({"cmd": "step", "action": 0}),
        json!({"cmd": "close"}),
    ]
    .iter()
    .map(Value::to_string)
    .collect();
    let (replies, code) = serve_lines(&requests);
    assert_eq!(code, Some(0));
    assert_eq!(replies.len(), 7);
    assert_eq!(replies[0]["error"]["code"], "E_ORDER");
    assert_eq!(replies[2]["data"], json!({"n_states": 1, "n_actions": 2, "horizon": 100, "obs_dim": 8}));

    let inst = sample_instance(&presets::bandit(), &SamplerConfig::with_seed(7)).unwrap();
    assert_eq!(replies[3]["data"]["assignment"], serde_json::to_value(&inst.assignment).unwrap());
    let (mut state, first) = reset(&inst, 11);
    assert_eq!(replies[4]["data"], serde_json::to_value(&first).unwrap());
    let out = step(&inst, &mut state, 0).unwrap();
    assert_eq!(replies[5]["data"], serde_json::to_value(&out).unwrap());
    assert_eq!(replies[5]["data"]["t"], 1);
    assert_eq!(replies[5]["data"]["done"], false);
    assert_eq!(replies[6], json!({"ok": true, "data": null}));
}

#[test]
fn serve_matches_engine_over_random_triples() {
    let mut rng = seeded(2024);
    let mut requests = Vec::new();
    let mut expected = Vec::new();
    for i in 0..25u64 {
        let spec = generate(&GeneratorConfig { seed: i, horizon: rng.gen_range(1..=30), ..GeneratorConfig::default() }).unwrap();
        let (sample_seed, episode_seed): (u64, u64) = (rng.gen(), rng.gen());
        let inst = sample_instance(&spec, &SamplerConfig::with_seed(sample_seed)).unwrap();
        let doc: Value = serde_json::from_slice(&emit_canonical(&spec)).unwrap();
        requests.push(json!({"cmd": "load_spec", "spec": doc}).to_string());
        requests.push(json!({"cmd": "sample", "seed": sample_seed}).to_string());
        requests.push(json!({"cmd": "reset", "seed": episode_seed}).to_string());
        let (mut state, first) = reset(&inst, episode_seed);
        expected.push(serde_json::to_value(&first).unwrap());
        for _ in 0..spec.horizon {
            let a = rng.gen_range(0..spec.n_actions);
            requests.push(json!({"cmd": "step", "action": a}).to_string());
            expected.push(serde_json::to_value(step(&inst, &mut state, a).unwrap()).unwrap());
        }
    }
    let (replies, code) = serve_lines(&requests);
    assert_eq!(code, Some(0));
    assert_eq!(replies.len(), requests.len());
    let episode_replies: Vec<Value> = replies
        .iter()
        .zip(&requests)
        .filter(|(_, req)| req.contains("\"reset\"") || req.contains("\"step\""))
        .map(|(rep, _)| {
            assert_eq!(rep["ok"], true);
            rep["data"].clone()
        })
        .collect();
    assert_eq!(episode_replies, expected);
}

#[test]
fn presets_listing() {
    let out = run(&["presets"]);
    assert!(out.status.success());
    let names: Vec<String> =
        stdout_json(&out).as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap().to_owned()).collect();
    assert_eq!(names, presets::names().map(str::to_owned).collect::<Vec<_>>());
    let out = run(&["presets", "t_maze", "-p", "corridor=5"]);
    let spec = metaforge::codec::parse_any(&out.stdout).unwrap();
    assert_eq!(spec.n_states, 8);
}
