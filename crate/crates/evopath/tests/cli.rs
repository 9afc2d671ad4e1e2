use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use evopath::data::load_trajectory_file;
use evopath::persist::{blob_path, load_pool, save_pool};
use evopath_core::{build_meta_model, gen_scene, Horizon, KnowledgePool, SceneKind, SceneSpec};

fn evopath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evopath")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"{
  "seed": 11,
  "scenarios": [{"id": "s", "kind": "straight", "count": 60}],
  "evo": {"generations": 1, "submodels": 1},
  "model": {"widths": [8]},
  "training": {"steps": 20}
}"#;

fn evolve_small(dir: &Path) -> std::path::PathBuf {
    let cfg = write_config(dir, SMALL);
    let out = dir.join("out");
    let o = evopath(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn minimal_run_writes_pool_log_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = evolve_small(dir.path());
    assert!(out.join("pool/manifest.json").is_file());
    assert!(!out.join("pool/manifest.json.tmp").exists());
    let log = std::fs::read_to_string(out.join("progress.log")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.starts_with("generation=1 scenario=s "));
    for key in ["score=", " p=", "effective_params="] {
        assert!(log.contains(key), "{log}");
    }
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("scenario=s\nsplit=test\n"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["records"], 2);
    assert_eq!(load_pool(&out.join("pool")).unwrap().pool.len(), 2);
}

#[test]
fn config_errors_exit_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"scenarios": [{"id": "s", "kind": "turn"}]}"#);
    let o = evopath(&["evolve", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), r#"{"seed": 1, "scenarios": [{"id": "s", "kind": "turn"}], "evo": {"rho9": 1}}"#);
    let o = evopath(&["evolve", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rho9"));

    let o = evopath(&["evolve", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn dataset_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 1, "scenarios": [{"id": "f", "file": "missing.txt"}]}"#);
    assert_eq!(code(&evopath(&["evolve", "--config", &cfg])), 3);

    std::fs::write(dir.path().join("bad.txt"), "1 1 0 0\n2 1 oops 0\n").unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 1, "scenarios": [{"id": "f", "file": "bad.txt"}]}"#);
    let o = evopath(&["evolve", "--config", &cfg]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn eval_reproduces_the_final_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = evolve_small(dir.path());
    let o = evopath(&["eval", "--pool", out.join("pool").to_str().unwrap(), "--scenario", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let printed = String::from_utf8(o.stdout).unwrap();
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    let block = report.split("\n\n").nth(1).unwrap();
    assert!(printed.starts_with(block), "{printed}\n---\n{block}");
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let tail: serde_json::Value = serde_json::from_str(printed.split_once("\n\n").unwrap().1).unwrap();
    assert_eq!(tail, json["scenarios"][0]);
}

#[test]
fn eval_unknown_scenario_needs_allow_meta() {
    let dir = tempfile::tempdir().unwrap();
    let out = evolve_small(dir.path());
    let pool = out.join("pool");
    let pool = pool.to_str().unwrap();
    assert_eq!(code(&evopath(&["eval", "--pool", pool, "--scenario", "turn"])), 4);

    let o = evopath(&["eval", "--pool", pool, "--scenario", "turn", "--allow-meta"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let meta_params = load_pool(Path::new(pool)).unwrap().pool.meta().model.layers().map(|l| l.param_count()).sum::<usize>();
    assert!(text.contains(&format!("effective_params={meta_params}\n")), "{text}");

    let data = dir.path().join("eth.txt");
    let o = evopath(&["gendata", "--kind", "turn", "--agents", "1", "--count", "30", "--seed", "4", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let args = ["eval", "--pool", pool, "--scenario", "eth", "--data", data.to_str().unwrap()];
    assert_eq!(code(&evopath(&args)), 4);
    let o = evopath(&[&args[..], &["--allow-meta"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("scenario=eth\n"));
}

#[test]
fn inspect_meta_only_pool_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let meta = build_meta_model(&[16], 2, Horizon::default(), 0, 9).unwrap();
    let pool = KnowledgePool::new(meta, None).unwrap();
    save_pool(dir.path(), &pool, &serde_json::Value::Null, 9).unwrap();
    let o = evopath(&["pool", dir.path().to_str().unwrap(), "inspect"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].contains(" meta "), "{}", rows[0]);
}

/// Distinct (component, block list) pairs, read straight from the manifest.
fn manifest_layer_instances(pool_dir: &Path) -> usize {
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(pool_dir.join("manifest.json")).unwrap()).unwrap();
    let mut seen = BTreeSet::new();
    for r in m["records"].as_array().unwrap() {
        for c in r["components"].as_array().unwrap() {
            for l in c["layers"].as_array().unwrap() {
                seen.insert((c["name"].to_string(), l["blocks"].to_string()));
            }
        }
        seen.insert(("head".into(), r["head"]["blocks"].to_string()));
    }
    seen.len()
}

#[test]
fn export_dot_has_one_node_per_layer_instance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 3, "scenarios": [{"id": "a", "kind": "straight", "count": 40}, {"id": "b", "kind": "turn", "count": 40}],
            "evo": {"generations": 2, "submodels": 2, "rho1": 0.6, "rho2": 0.5}, "model": {"widths": [8, 8]}, "training": {"steps": 5}}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(code(&evopath(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    let dot = dir.path().join("pool.dot");
    let pool = out.join("pool");
    let o = evopath(&["pool", pool.to_str().unwrap(), "export-dot", "--out", dot.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&dot).unwrap();
    let nodes = text.lines().filter(|l| l.contains("fillcolor")).count();
    assert_eq!(nodes, manifest_layer_instances(&pool));
    assert!(text.contains("label=\"a\";") && text.contains("label=\"b\";"));
}

#[test]
fn tampered_pool_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = evolve_small(dir.path());
    let pool_dir = out.join("pool");
    let pool = load_pool(&pool_dir).unwrap().pool;
    let id = pool.store().keys().nth(3).unwrap();
    let path = blob_path(&pool_dir, id);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let p = pool_dir.to_str().unwrap();
    assert_eq!(code(&evopath(&["pool", p, "inspect"])), 3);
    assert_eq!(code(&evopath(&["eval", "--pool", p, "--scenario", "s"])), 3);
    assert_eq!(code(&evopath(&["pool", dir.path().to_str().unwrap(), "inspect"])), 3);
}

#[test]
fn all_diverged_generations_log_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 5, "scenarios": [{"id": "s", "kind": "straight", "count": 40}],
            "evo": {"generations": 2, "submodels": 2, "rho_h": 0.0}, "model": {"widths": [8]},
            "training": {"steps": 30}, "hyper": {"learning_rate": {"values": [1e38], "index": 1}}}"#,
    );
    let out = dir.path().join("out");
    let o = evopath(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("progress.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().all(|l| l.starts_with("warning ") && l.contains("all 2 candidates diverged")));
    assert_eq!(load_pool(&out.join("pool")).unwrap().pool.len(), 1);
}

#[test]
fn gendata_writes_distinct_agents_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for p in [&a, &b] {
        let o = evopath(&["gendata", "--kind", "straight", "--agents", "10", "--count", "4", "--seed", "1", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    let ids: BTreeSet<&str> = text.lines().map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    assert_eq!(ids.len(), 10);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn gendata_round_trips_through_the_loader() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.txt");
    let o = evopath(&["gendata", "--kind", "roundabout", "--agents", "3", "--count", "7", "--seed", "8", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let mut spec = SceneSpec::new(SceneKind::Roundabout, 8);
    spec.agents = 3;
    spec.count = 7;
    let original = gen_scene(&spec).unwrap();
    let loaded = load_trajectory_file(&path, 8, 12, 1).unwrap();
    assert_eq!(loaded.len(), 7 * 3);
    // Loaded windows are agent-major: agent n of sample s is window n * 7 + s.
    for (s, sample) in original.samples().iter().enumerate() {
        for n in 0..3 {
            let w = &loaded.samples()[n * 7 + s];
            let obs = &sample.observed[n * 16..(n + 1) * 16];
            let fut = &sample.future[n * 24..(n + 1) * 24];
            for (x, y) in w.observed.iter().chain(&w.future).zip(obs.iter().chain(fut)) {
                assert!((x - y).abs() <= 1e-4, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn gendata_bad_args_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.txt");
    let out = out.to_str().unwrap();
    for args in [
        vec!["gendata", "--kind", "spiral", "--agents", "1", "--count", "1", "--seed", "1", "--out", out],
        vec!["gendata", "--kind", "turn", "--agents", "0", "--count", "1", "--seed", "1", "--out", out],
        vec!["gendata", "--kind", "turn", "--agents", "-1", "--count", "1", "--seed", "1", "--out", out],
        vec!["gendata", "--kind", "turn", "--agents", "1", "--seed", "1", "--out", out],
    ] {
        assert_eq!(code(&evopath(&args)), 2, "{args:?}");
    }
    assert!(!Path::new(out).exists());
}
