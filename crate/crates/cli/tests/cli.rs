use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "topology": {
    "nodes": [
      {"id": "iot-0", "tier": "iot", "capacity": 1.0, "busy_power": 2.0, "idle_power": 0.5},
      {"id": "fog-0", "tier": "fog", "capacity": 4.0, "busy_power": 8.0, "idle_power": 2.0},
      {"id": "fog-1", "tier": "fog", "capacity": 4.0, "busy_power": 8.0, "idle_power": 2.0},
      {"id": "cloud", "tier": "cloud", "capacity": 16.0, "busy_power": 40.0, "idle_power": 10.0}
    ],
    "default_links": {
      "fog": {"bandwidth": 8.0, "propagation": 0.05, "tx_power": 1.0},
      "cloud": {"bandwidth": 8.0, "propagation": 2.0, "tx_power": 1.0}
    }
  },
  "streams": [
    {"id": "a", "period": 5.0, "deadline": 3.0, "size": 4.0, "source": "iot-0"},
    {"id": "b", "period": 7.0, "deadline": 4.0, "size": 2.0, "source": "iot-0"}
  ],
  "policies": ["random", "greedy"],
  "training": {"episodes": 3, "hidden": [8], "batch_size": 8, "replay_capacity": 500},
  "ledger": {"difficulty": 4},
  "attack": {"compromised_fraction": 0.5, "tamper_probability": 0.5, "seed": 3},
  "seeds": [1, 2],
  "horizon": 60.0
}"#;

fn fogsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fogsim"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.json"), CONFIG).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_csv_and_sidecar() {
    let dir = setup();
    let out = fogsim(dir.path(), &["run", "exp.json", "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "policy,seed,scheduled,completed,misses,sched_ratio,mean_latency,p95_latency,total_energy,incidents,detected,mean_confirm_latency,mean_reward,config_digest"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("greedy,1,") && lines[4].starts_with("random,2,"));

    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/results.json")).unwrap()).unwrap();
    let digest = sidecar["config_digest"].as_str().unwrap();
    assert!(lines[1].ends_with(digest));
    assert_eq!(sidecar["config"]["horizon"], 60.0);

    let again = fogsim(dir.path(), &["--out-dir", "again", "run", "exp.json", "--quiet"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(csv, fs::read_to_string(dir.path().join("again/results.csv")).unwrap());
}

#[test]
fn seed_flag_overrides_seed_list() {
    let dir = setup();
    let out = fogsim(dir.path(), &["run", "exp.json", "--seed", "42", "--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("42")));
}

#[test]
fn train_eval_audit_round_trip() {
    let dir = setup();
    let out = fogsim(dir.path(), &["train", "exp.json", "-o", "ckpt/w.bin", "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("ckpt/w.bin").exists());

    let out = fogsim(dir.path(), &["eval", "exp.json", "--policy", "dqn", "--checkpoint", "ckpt/w.bin", "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/eval-dqn.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let chain = dir.path().join("out/chain-dqn-1.ndjson");
    let audit = fogsim(dir.path(), &["audit", chain.to_str().unwrap()]);
    assert_eq!(audit.status.code(), Some(0));
    assert!(stdout(&audit).starts_with("ok: "));

    // rewrite one digest in the first block
    let text = fs::read_to_string(&chain).unwrap();
    let key = "\"outcome_digest\":\"";
    let at = text.find(key).unwrap() + key.len();
    let mut bytes = text.into_bytes();
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    fs::write(&chain, bytes).unwrap();
    let audit = fogsim(dir.path(), &["audit", chain.to_str().unwrap()]);
    assert_eq!(audit.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&audit.stderr).contains("block 0"));
}

#[test]
fn analyze_dbf_reports_load_and_admission() {
    let dir = setup();
    fs::write(dir.path().join("d.csv"), "C,T,D\n# comment\n1,4,4\n2,6,5\n\n3,10,8\n").unwrap();
    let out = fogsim(dir.path(), &["analyze", "dbf", "d.csv", "--delta-max", "24"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("max_load 1.5 at delta 4"), "{text}");
    assert!(text.contains("stream 1 (C=2, T=6, D=5): admit"), "{text}");
    assert!(text.contains("stream 2 (C=3, T=10, D=8): reject"), "{text}");
    let table = fs::read_to_string(dir.path().join("out/dbf.csv")).unwrap();
    assert!(table.starts_with("delta,dbf_0,dbf_1,dbf_2,load\n4,1,2,3,1.5\n"), "{table}");
}

#[test]
fn config_errors_exit_one() {
    let dir = setup();
    fs::write(dir.path().join("bad.json"), CONFIG.replace("\"horizon\": 60.0", "\"horizon\": -1.0")).unwrap();
    let out = fogsim(dir.path(), &["run", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));

    let out = fogsim(dir.path(), &["eval", "exp.json", "--policy", "dqn"]);
    assert_eq!(out.status.code(), Some(1));
    let out = fogsim(dir.path(), &["eval", "exp.json", "--policy", "oracle"]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(dir.path().join("d.csv"), "1,2\n").unwrap();
    assert_eq!(fogsim(dir.path(), &["analyze", "dbf", "d.csv"]).status.code(), Some(1));
    assert_eq!(fogsim(dir.path(), &["run", "missing.json"]).status.code(), Some(1));
}

#[test]
fn missing_checkpoint_is_runtime_failure() {
    let dir = setup();
    let out = fogsim(dir.path(), &["eval", "exp.json", "--policy", "dqn", "--checkpoint", "nope.bin"]);
    assert_eq!(out.status.code(), Some(2));
}
