use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn blocknav(args: &[&str], results: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blocknav")).args(args).env("BLOCKNAV_RESULTS_DIR", results).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    world: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let world = root.join("w.json");
    let data = root.join("d.jsonl");
    let config = root.join("c.json");
    let out = blocknav(&["gen-world", "--seed", "3", "--grid", "4x4", "--out", s(&world)], &root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = blocknav(
        &[
            "gen-data",
            "--world",
            s(&world),
            "--seed",
            "1",
            "--train",
            "6",
            "--dev",
            "2",
            "--test",
            "3",
            "--max-blocks",
            "2",
            "--out",
            s(&data),
        ],
        &root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(
        &config,
        r#"{"epochs": 2, "batch_size": 3, "lr": 0.005, "agent": {"d": 8, "d_t": 8, "dim_timestep": 4, "dim_action": 2, "dim_junction": 2, "heads": 2, "max_t": 20}}"#,
    )
    .unwrap();
    Fixture { _dir: dir, root, world, data, config }
}

#[test]
fn gen_world_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for p in [&a, &b] {
        let out = blocknav(&["gen-world", "--seed", "7", "--grid", "6x6", "--out", s(p)], dir.path());
        assert_eq!(out.status.code(), Some(0));
        assert!(String::from_utf8_lossy(&out.stderr).contains("world params"));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.json");
    blocknav(&["gen-world", "--seed", "8", "--grid", "6x6", "--out", s(&c)], dir.path());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = blocknav(&["gen-world", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = blocknav(&["inspect"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = blocknav(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn invalid_inputs_exit_with_two() {
    let f = fixture();
    let bad = f.root.join("bad.json");
    fs::write(&bad, r#"{"epochs": 1, "learning_rate": 3}"#).unwrap();
    let out = blocknav(&["train", "--config", s(&bad), "--world", s(&f.world), "--data", s(&f.data)], &f.root);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let other = f.root.join("other.json");
    blocknav(&["gen-world", "--seed", "4", "--grid", "4x4", "--out", s(&other)], &f.root);
    let out = blocknav(&["train", "--config", s(&f.config), "--world", s(&other), "--data", s(&f.data)], &f.root);
    assert_eq!(out.status.code(), Some(2));

    let out = blocknav(&["gen-world", "--grid", "1x1"], &f.root);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_files_are_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = blocknav(&["inspect", "--world", s(&dir.path().join("nope.json"))], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_eval_trace_round() {
    let f = fixture();
    let data_before = fs::read(&f.data).unwrap();
    let out = blocknav(
        &["train", "--config", s(&f.config), "--world", s(&f.world), "--data", s(&f.data), "--seed", "5", "--run-id", "r1"],
        &f.root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("resolved config") && stderr.contains("\"seed\":5"), "flag overrides file: {stderr}");
    let run = f.root.join("r1");
    for name in ["config.json", "metrics.csv", "log.jsonl", "checkpoint.bin", "plots/loss.svg"] {
        assert!(run.join(name).exists(), "{name}");
    }
    assert_eq!(fs::read_to_string(run.join("log.jsonl")).unwrap().lines().count(), 2);

    let ckpt = run.join("checkpoint.bin");
    let out = blocknav(&["eval", "--ckpt", s(&ckpt), "--world", s(&f.world), "--data", s(&f.data), "--split", "test"], &f.root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["episodes"], 3);
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "run_id,split,tc,spd,sed,seed,config_hash");
    let splits: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(splits, vec!["dev", "test"]);
    assert_eq!(fs::read(&f.data).unwrap(), data_before);

    let out = blocknav(
        &[
            "trace",
            "--ckpt",
            s(&ckpt),
            "--world",
            s(&f.world),
            "--data",
            s(&f.data),
            "--episode",
            "0",
            "--svg",
            "--out",
            s(&f.root.join("tr")),
        ],
        &f.root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.root.join("tr/trace-0.json")).unwrap()).unwrap();
    let steps = doc["steps"].as_array().unwrap();
    let n_s = doc["sentences"].as_u64().unwrap() as usize;
    assert_eq!(doc["progress"].as_array().unwrap().len(), steps.len());
    let heat = doc["relevance"].as_array().unwrap();
    assert_eq!(heat.len(), steps.len());
    assert!(heat.iter().all(|row| row.as_array().unwrap().len() == n_s));
    for key in ["t", "node", "heading", "action", "scores", "e_p", "e_p_label", "relevance", "g_c", "g_l"] {
        assert!(steps[0].get(key).is_some(), "{key}");
    }
    let svg = fs::read_to_string(f.root.join("tr/relevance-0.svg")).unwrap();
    assert_eq!(svg.matches("<rect").count(), steps.len() * n_s);
    assert!(f.root.join("tr/progress-0.svg").exists());

    let out = blocknav(&["inspect", "--ckpt", s(&ckpt), "--world", s(&f.world), "--data", s(&f.data)], &f.root);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["dataset"]["train"], 6);
    assert_eq!(doc["checkpoint"]["config"]["init_seed"], 5);
}

#[test]
fn training_twice_gives_identical_outputs() {
    let f = fixture();
    for id in ["a", "b"] {
        let out =
            blocknav(&["train", "--config", s(&f.config), "--world", s(&f.world), "--data", s(&f.data), "--run-id", id], &f.root);
        assert!(out.status.success());
    }
    let read = |run: &str, name: &str| fs::read(f.root.join(run).join(name)).unwrap();
    for name in ["checkpoint.bin", "log.jsonl", "config.json"] {
        assert_eq!(read("a", name), read("b", name), "{name}");
    }
    let metrics = |run: &str| String::from_utf8(read(run, "metrics.csv")).unwrap().replace(&format!("{run},"), "_,");
    assert_eq!(metrics("a"), metrics("b"));
}

#[test]
fn k_sweep_table_structure() {
    let f = fixture();
    let out = blocknav(
        &[
            "ablate",
            "--config",
            s(&f.config),
            "--world",
            s(&f.world),
            "--data",
            s(&f.data),
            "--k",
            "1..5",
            "--seeds",
            "1",
            "--epochs",
            "0",
        ],
        &f.root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| ID")).collect();
    assert_eq!(rows.len(), 5);
    for (i, row) in rows.iter().enumerate() {
        assert!(row.contains(&format!("K={}", i + 1)));
        assert_eq!(row.contains("(default)"), i == 2);
    }
    let dir = f.root.join("ablate-k-sweep");
    assert!(dir.join("table.md").exists() && dir.join("table.json").exists());
    assert_eq!(fs::read_to_string(dir.join("metrics.csv")).unwrap().lines().count(), 6);
}

#[test]
fn unknown_grid_is_a_usage_error() {
    let f = fixture();
    let out = blocknav(
        &["ablate", "--config", s(&f.config), "--world", s(&f.world), "--data", s(&f.data), "--ablate-grid", "table9"],
        &f.root,
    );
    assert_eq!(out.status.code(), Some(1));
}
