//! End-to-end command workflows through the `dygem` binary: bundle
//! idempotency, checkpoint round trips, matrix exports, and the offline
//! metrics recomputation oracle.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dygem::artifacts::{load_bundle, read_embeddings_csv, read_matrix_csv};
use dygem::eval::{evaluate, EvalOptions};
use dygem::loss::GaussianEmbedding;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dygem")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dygem_cli_{tag}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_in(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn dygem");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn assert_ok(dir: &Path, args: &[&str]) -> String {
    let (code, stdout, stderr) = run_in(dir, args);
    assert_eq!(code, 0, "dygem {args:?}: {stderr}");
    stdout
}

const TRAIN_KV: &str = "dataset = data\nmodel = dg-mamba\nlookback = 2\nembed_dim = 8\n\
    d_model = 12\nd_state = 4\nd_conv = 2\nintermediate = 10\nlr = 0.003\nepochs = 4\n\
    patience = 10\nseed = 3\n";

fn make_bundle(dir: &Path) {
    assert_ok(
        dir,
        &[
            "generate-sbm", "--out", "data", "--nodes", "36", "--timestamps", "9",
            "--communities", "3", "--p-in", "0.3", "--p-out", "0.02", "--churn", "2:4",
            "--seed", "6",
        ],
    );
}

#[test]
fn ingest_is_idempotent_and_round_trips() {
    let dir = workdir("ingest");
    let edges = "a b 1 0\nb c 2 0\nc d 1 1\nd a 1 2\na c 1 3\nb d 1 4\n";
    fs::write(dir.join("raw.tsv"), edges).unwrap();

    assert_ok(&dir, &["ingest", "raw.tsv", "--out", "bundle1"]);
    let first: Vec<Vec<u8>> = ["edges.tsv", "id_map.csv", "meta.kv", "stats.tsv"]
        .iter()
        .map(|f| fs::read(dir.join("bundle1").join(f)).unwrap())
        .collect();
    assert_ok(&dir, &["ingest", "raw.tsv", "--out", "bundle1"]);
    for (f, before) in ["edges.tsv", "id_map.csv", "meta.kv", "stats.tsv"]
        .iter()
        .zip(&first)
    {
        let after = fs::read(dir.join("bundle1").join(f)).unwrap();
        assert_eq!(&after, before, "{f} differs between identical ingests");
    }

    let bundle = load_bundle(&dir.join("bundle1")).unwrap();
    assert_eq!(bundle.graph.n, 4);
    assert_eq!(bundle.graph.timestamps(), 5);
    assert_eq!(bundle.ids.dense("a"), Some(0));

    // Malformed input reports the line and exits 2.
    fs::write(dir.join("bad.tsv"), "a b 1 0\nbroken line\n").unwrap();
    let (code, _, stderr) = run_in(&dir, &["ingest", "bad.tsv", "--out", "x"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("line 2"), "{stderr}");

    fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = workdir("badcfg");
    make_bundle(&dir);
    fs::write(
        dir.join("train.kv"),
        format!("{TRAIN_KV}mystery_knob = 3\n"),
    )
    .unwrap();
    let (code, _, stderr) = run_in(&dir, &["train", "--config", "train.kv", "--out", "run"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("mystery_knob"), "{stderr}");

    // Missing dataset field likewise names the problem.
    fs::write(dir.join("train2.kv"), "model = dg-mamba\n").unwrap();
    let (code, _, stderr) = run_in(&dir, &["train", "--config", "train2.kv", "--out", "run"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("dataset"), "{stderr}");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn metrics_match_offline_recomputation_from_exported_embeddings() {
    let dir = workdir("recompute");
    make_bundle(&dir);
    fs::write(dir.join("train.kv"), TRAIN_KV).unwrap();
    assert_ok(&dir, &["train", "--config", "train.kv", "--out", "run"]);
    let stdout = assert_ok(
        &dir,
        &[
            "eval", "--checkpoint", "run/checkpoint.bin", "--data", "data", "--out", "run",
            "--seed", "3",
        ],
    );
    assert!(stdout.contains("map="));

    // Reported metrics from the persisted file.
    let metrics_text = fs::read_to_string(dir.join("run/metrics.txt")).unwrap();
    let line = metrics_text
        .lines()
        .find(|l| !l.starts_with('#'))
        .expect("metrics record");
    let field = |name: &str| -> f64 {
        line.split_whitespace()
            .find_map(|kv| kv.strip_prefix(&format!("{name}=")))
            .unwrap()
            .parse()
            .unwrap()
    };
    let (reported_map, reported_mrr) = (field("map"), field("mrr"));

    // Offline: read the exported per-timestamp embedding CSVs and rerun
    // the evaluation protocol on them.
    let bundle = load_bundle(&dir.join("data")).unwrap();
    let lookback = 2;
    let mut embs: Vec<(usize, Vec<GaussianEmbedding>)> = Vec::new();
    for t in lookback..bundle.graph.timestamps() {
        let path = dir.join(format!("run/embeddings/emb_t{t}.csv"));
        let table = read_embeddings_csv(fs::File::open(&path).unwrap()).unwrap();
        assert_eq!(table.len(), bundle.graph.n);
        embs.push((t, table));
    }
    let opts = EvalOptions {
        ratio: 10,
        use_sigma: false,
        seed: 3,
    };
    let offline = evaluate(&embs, &bundle.graph, &opts).unwrap();
    assert_eq!(offline.map.to_bits(), reported_map.to_bits(), "MAP mismatch");
    assert_eq!(offline.mrr.to_bits(), reported_mrr.to_bits(), "MRR mismatch");

    fs::remove_dir_all(&dir).ok();
}

#[test]
fn inspect_exports_causal_and_stochastic_matrices() {
    let dir = workdir("inspect");
    make_bundle(&dir);
    fs::write(dir.join("train.kv"), TRAIN_KV).unwrap();
    assert_ok(&dir, &["train", "--config", "train.kv", "--out", "run"]);
    assert_ok(
        &dir,
        &[
            "inspect", "--checkpoint", "run/checkpoint.bin", "--data", "data",
            "--timestamps", "3,5", "--out", "mats",
        ],
    );
    for t in [3, 5] {
        let path = dir.join(format!("mats/hidden_attention_t{t}.csv"));
        let (rows, cols, data) = read_matrix_csv(fs::File::open(&path).unwrap()).unwrap();
        assert_eq!((rows, cols), (3, 3)); // lookback 2 -> window 3
        for i in 0..rows {
            for j in (i + 1)..cols {
                assert_eq!(data[i * cols + j], 0.0, "matrix not causal at ({i},{j})");
            }
        }
    }

    // Transformer: encoder attention rows must sum to one in the CSV.
    fs::write(
        dir.join("train_enc.kv"),
        "dataset = data\nmodel = st-transformerg2g\nlookback = 2\nembed_dim = 8\n\
         hidden = 8\nintermediate = 10\nlr = 0.001\nepochs = 2\npatience = 5\nseed = 3\n\
         dropout = 0.1\n",
    )
    .unwrap();
    assert_ok(&dir, &["train", "--config", "train_enc.kv", "--out", "run_enc"]);
    assert_ok(
        &dir,
        &[
            "inspect", "--checkpoint", "run_enc/checkpoint.bin", "--data", "data",
            "--timestamps", "4", "--out", "mats_enc",
        ],
    );
    let (rows, cols, data) =
        read_matrix_csv(fs::File::open(dir.join("mats_enc/encoder_attention_t4.csv")).unwrap())
            .unwrap();
    assert_eq!((rows, cols), (3, 3));
    for i in 0..rows {
        let sum: f64 = (0..cols).map(|j| data[i * cols + j]).sum();
        assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
    }

    // Out-of-window timestamp is a clean failure.
    let (code, _, _) = run_in(
        &dir,
        &[
            "inspect", "--checkpoint", "run/checkpoint.bin", "--data", "data",
            "--timestamps", "1", "--out", "mats",
        ],
    );
    assert_eq!(code, 2);

    fs::remove_dir_all(&dir).ok();
}

#[test]
fn export_embeddings_matches_train_output() {
    let dir = workdir("export");
    make_bundle(&dir);
    fs::write(dir.join("train.kv"), TRAIN_KV).unwrap();
    assert_ok(&dir, &["train", "--config", "train.kv", "--out", "run"]);
    assert_ok(
        &dir,
        &[
            "export-embeddings", "--checkpoint", "run/checkpoint.bin", "--data", "data",
            "--out", "exported",
        ],
    );
    for t in 2..9 {
        let a = fs::read(dir.join(format!("run/embeddings/emb_t{t}.csv"))).unwrap();
        let b = fs::read(dir.join(format!("exported/emb_t{t}.csv"))).unwrap();
        assert_eq!(a, b, "emb_t{t}.csv differs");
    }
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_rejects_mismatched_dataset() {
    let dir = workdir("mismatch");
    make_bundle(&dir);
    fs::write(dir.join("train.kv"), TRAIN_KV).unwrap();
    assert_ok(&dir, &["train", "--config", "train.kv", "--out", "run"]);
    // A bundle with a different node count.
    assert_ok(
        &dir,
        &[
            "generate-sbm", "--out", "other", "--nodes", "24", "--timestamps", "8",
            "--communities", "3", "--p-in", "0.3", "--p-out", "0.02", "--churn", "2:3",
            "--seed", "1",
        ],
    );
    let (code, _, stderr) = run_in(
        &dir,
        &["eval", "--checkpoint", "run/checkpoint.bin", "--data", "other"],
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("36") && stderr.contains("24"), "{stderr}");
    fs::remove_dir_all(&dir).ok();
}
