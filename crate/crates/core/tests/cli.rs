use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lcnas_core::arch::{encode_genotype, CellSpec, CellType, Edge, Genotype, OperationKind, SpaceName};

fn lcnas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcnas")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn latency_reports_the_bundled_fixtures_exactly() {
    let out = lcnas(&[
        "latency",
        "--genotype",
        fixture("asrnet_c.json").to_str().unwrap(),
        "--cells",
        "5",
        "--channels",
        "8",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("190ms"), "{text}");
    assert!(text.contains("60ms") && text.contains("120ms") && text.contains("10ms"), "{text}");
    assert!(text.contains("19 input frames"), "{text}");

    let out = lcnas(&[
        "latency",
        "--genotype",
        fixture("asrnet_d.json").to_str().unwrap(),
        "--cells",
        "5",
        "--channels",
        "8",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("550ms"), "{text}");
    assert!(text.contains("180ms") && text.contains("360ms"), "{text}");
}

#[test]
fn latency_writes_report_and_manifest_under_out() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("report");
    let out = lcnas(&[
        "latency",
        "--genotype",
        fixture("asrnet_c.json").to_str().unwrap(),
        "--cells",
        "8",
        "--channels",
        "16",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("latency.json")).unwrap()).unwrap();
    assert_eq!(report["total_ms"], 190.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "latency");
    assert_eq!(manifest["latency"]["total_input_frames"], 19);
    assert!(manifest["input_hashes"].as_object().unwrap().len() == 1);
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "gen-data".into(),
            "--utts".into(),
            "6".into(),
            "--classes".into(),
            "4".into(),
            "--past".into(),
            "4".into(),
            "--len-min".into(),
            "32".into(),
            "--len-max".into(),
            "32".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            out.to_str().unwrap().to_string(),
        ]
    };
    for sub in ["a", "b"] {
        let argv: Vec<String> = args(&dir.path().join(sub));
        let argv: Vec<&str> = argv.iter().map(|s| s.as_str()).collect();
        let out = lcnas(&argv);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = fs::read(dir.path().join("a/features.lcnf")).unwrap();
    let b = fs::read(dir.path().join("b/features.lcnf")).unwrap();
    assert_eq!(a, b);
}

fn write_search_config(path: &Path, features: &Path, out_dir: &Path) {
    let text = format!(
        r#"
[run]
out_dir = "{}"

[data]
features = "{}"

[search]
channels = 4
seeds = [1]
batch_size = 2

[[search.stages]]
depth = 3
ops_kept = 8
warmup_epochs = 1
joint_epochs = 1
dropout = 0.0

[[search.stages]]
depth = 4
ops_kept = 5
warmup_epochs = 1
joint_epochs = 1
dropout = 0.05

[[search.stages]]
depth = 5
ops_kept = 3
warmup_epochs = 1
joint_epochs = 1
dropout = 0.10
"#,
        out_dir.display(),
        features.display()
    );
    fs::write(path, text).unwrap();
}

#[test]
fn search_round_trip_with_overrides_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let out = lcnas(&[
        "gen-data",
        "--utts",
        "8",
        "--classes",
        "4",
        "--past",
        "4",
        "--len-min",
        "32",
        "--len-max",
        "32",
        "--seed",
        "5",
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let features = data_dir.join("features.lcnf");
    let config = dir.path().join("run.toml");
    let run_a = dir.path().join("run-a");
    write_search_config(&config, &features, &run_a);

    // Three seeds through the CLI override -> three genotype artifacts.
    let out = lcnas(&[
        "search",
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "1,2,3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for seed in 1..=3 {
        assert!(run_a.join(format!("seed{seed}/genotype.json")).exists());
    }
    assert!(run_a.join("genotype.json").exists());
    assert!(run_a.join("selection.json").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2, 3]));
    assert_eq!(manifest["search"]["genotype_hashes"].as_array().unwrap().len(), 3);

    // Identical config and seed reproduce the genotype byte for byte.
    let run_b = dir.path().join("run-b");
    let out = lcnas(&[
        "search",
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "1,2,3",
        "--out",
        run_b.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read(run_a.join("genotype.json")).unwrap(),
        fs::read(run_b.join("genotype.json")).unwrap()
    );

    // A completed run directory is never overwritten.
    let out = lcnas(&["search", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("manifest"));

    // Missing dataset path fails fast with the offending key.
    let out = lcnas(&[
        "search",
        "--config",
        config.to_str().unwrap(),
        "--data",
        "/nonexistent/features.lcnf",
        "--out",
        dir.path().join("run-c").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("data.features"), "{}", stderr(&out));

    // Unknown config keys are named.
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[search]\nchannles = 8\n").unwrap();
    let out = lcnas(&["search", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("channles"), "{}", stderr(&out));
}

#[test]
fn verify_passes_on_consistent_nets_and_rejects_invalid_genotypes() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcnas(&[
        "verify",
        "--genotype",
        fixture("asrnet_c.json").to_str().unwrap(),
        "--cells",
        "3",
        "--channels",
        "4",
        "--trials",
        "2",
        "--causal-stem",
        "--out",
        dir.path().join("probe").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("PASS"));
    let probe: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("probe/probe.json")).unwrap())
            .unwrap();
    assert_eq!(probe["verdict"], "pass");
    assert_eq!(probe["claimed_frames"], probe["measured_frames"]);

    // Over-capped pooling fails validation before any probing.
    let mk = |ct: CellType, pool_heavy: bool| {
        let mut edges = Vec::new();
        for to in 2..6usize {
            let op = if pool_heavy && to < 5 {
                OperationKind::avg_pool(3)
            } else {
                OperationKind::sep_conv(3, 1)
            };
            edges.push(Edge { from: 0, to, op: op.with_causal(ct == CellType::Causal) });
            edges.push(Edge {
                from: 1,
                to,
                op: OperationKind::max_pool(3).with_causal(ct == CellType::Causal),
            });
        }
        CellSpec::new(ct, edges)
    };
    let bad = Genotype::new(
        SpaceName::LowLatency,
        mk(CellType::Causal, true),
        mk(CellType::Reduction, false),
    );
    let path = dir.path().join("bad.json");
    fs::write(&path, encode_genotype(&bad)).unwrap();
    let out = lcnas(&[
        "verify",
        "--genotype",
        path.to_str().unwrap(),
        "--cells",
        "3",
        "--channels",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn train_eval_checkpoints_initialization_and_resumes_epoch_numbering() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let out = lcnas(&[
        "gen-data",
        "--utts",
        "40",
        "--classes",
        "4",
        "--past",
        "4",
        "--len-min",
        "32",
        "--len-max",
        "32",
        "--seed",
        "9",
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let features = data_dir.join("features.lcnf");
    let genotype = fixture("asrnet_c.json");

    // epochs = 0: checkpoint of the initialization, one metrics row near
    // chance accuracy.
    let init_run = dir.path().join("init");
    let out = lcnas(&[
        "train-eval",
        "--genotype",
        genotype.to_str().unwrap(),
        "--cells",
        "3",
        "--channels",
        "4",
        "--data",
        features.to_str().unwrap(),
        "--epochs",
        "0",
        "--causal-stem",
        "--seed",
        "2",
        "--out",
        init_run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(init_run.join("checkpoint.bin").exists());
    let csv = fs::read_to_string(init_run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,phase,train_loss,val_loss,val_acc");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,init,"));
    let acc: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!((0.02..0.65).contains(&acc), "init accuracy {acc} is far from chance 0.25");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(init_run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["epochs_done"], 0);
    assert_eq!(manifest["latency"]["total_ms"], 160.0);

    // Resuming continues the epoch numbering monotonically.
    let next_run = dir.path().join("next");
    let out = lcnas(&[
        "train-eval",
        "--genotype",
        genotype.to_str().unwrap(),
        "--cells",
        "3",
        "--channels",
        "4",
        "--data",
        features.to_str().unwrap(),
        "--epochs",
        "2",
        "--causal-stem",
        "--seed",
        "2",
        "--resume",
        init_run.to_str().unwrap(),
        "--out",
        next_run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(next_run.join("metrics.csv")).unwrap();
    let epochs: Vec<&str> =
        csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, vec!["1", "2"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(next_run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["epochs_done"], 2);

    let third_run = dir.path().join("third");
    let out = lcnas(&[
        "train-eval",
        "--genotype",
        genotype.to_str().unwrap(),
        "--cells",
        "3",
        "--channels",
        "4",
        "--data",
        features.to_str().unwrap(),
        "--epochs",
        "1",
        "--causal-stem",
        "--seed",
        "2",
        "--resume",
        next_run.to_str().unwrap(),
        "--out",
        third_run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(third_run.join("metrics.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("3,train,"), "{csv}");
}

#[test]
fn dump_config_round_trips_and_clap_usage_errors_exit_2() {
    let out = lcnas(&["dump-config"]);
    assert!(out.status.success());
    let cfg: lcnas_core::cli::RunConfig = toml::from_str(&stdout(&out)).unwrap();
    assert_eq!(cfg, lcnas_core::cli::RunConfig::default());

    let out = lcnas(&["latency", "--cells", "5"]);
    assert_eq!(out.status.code(), Some(2));
}
