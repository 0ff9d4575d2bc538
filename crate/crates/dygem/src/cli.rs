//! Command-line workflow over the library: ingest, generate-sbm, train,
//! eval, inspect, export-embeddings.
//!
//! Every command exits 0 on success; failures print one
//! `error: ...` line to stderr and exit 2 (invalid input or configuration),
//! 3 (training divergence), or 1 (I/O). Relative dataset paths resolve
//! against `DYGEM_DATA_ROOT` when it is set.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::artifacts::{
    checkpoint_meta, config_hash, load_bundle, load_checkpoint, parse_kv, restore_store,
    save_checkpoint, write_bundle, write_embeddings_csv, write_history, write_matrix_csv,
    MetricsRecord,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::ingest::{identity_id_map, load_edge_list, IngestOptions, TimestampMode};
use crate::models::{EmbedModel, ModelConfig, ModelKind};
use crate::rng::Rng;
use crate::sbm::{generate_sbm, SbmConfig};
use crate::train::train;

pub const DATA_ROOT_ENV: &str = "DYGEM_DATA_ROOT";

pub fn run_from_env() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    run(&args)
}

pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Training { .. } => 3,
                Error::Io(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(args: &[String]) -> Result<()> {
    let Some(cmd) = args.first() else {
        return Err(Error::Config(format!("usage: dygem <command> ...; commands: {COMMANDS}")));
    };
    let rest = &args[1..];
    match cmd.as_str() {
        "ingest" => cmd_ingest(rest),
        "generate-sbm" => cmd_generate_sbm(rest),
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "inspect" => cmd_inspect(rest),
        "export-embeddings" => cmd_export_embeddings(rest),
        other => Err(Error::Config(format!(
            "unknown command `{other}`; commands: {COMMANDS}"
        ))),
    }
}

const COMMANDS: &str = "ingest, generate-sbm, train, eval, inspect, export-embeddings";

// ── Flag parsing ────────────────────────────────────────────────────

struct Flags {
    positional: Vec<String>,
    named: BTreeMap<String, String>,
    switches: Vec<String>,
}

const SWITCH_FLAGS: &[&str] = &["directed", "use-sigma"];

fn parse_flags(args: &[String]) -> Result<Flags> {
    let mut flags = Flags {
        positional: Vec::new(),
        named: BTreeMap::new(),
        switches: Vec::new(),
    };
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        if let Some(name) = a.strip_prefix("--") {
            if SWITCH_FLAGS.contains(&name) {
                flags.switches.push(name.to_string());
                i += 1;
            } else {
                let value = args
                    .get(i + 1)
                    .ok_or_else(|| Error::Config(format!("flag --{name} needs a value")))?;
                flags.named.insert(name.to_string(), value.clone());
                i += 2;
            }
        } else {
            flags.positional.push(a.clone());
            i += 1;
        }
    }
    Ok(flags)
}

impl Flags {
    fn require(&self, name: &str) -> Result<&str> {
        self.named
            .get(name)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("missing required flag --{name}")))
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.named.get(name).map(|s| s.as_str())
    }

    fn has(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }

    fn parse_or<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for --{name}"))),
        }
    }
}

fn resolve_data_path(raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    if p.is_relative() {
        if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
            return PathBuf::from(root).join(p);
        }
    }
    p
}

fn dataset_label(meta: &BTreeMap<String, String>, dir: &Path) -> String {
    meta.get("name").cloned().unwrap_or_else(|| {
        dir.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    })
}

// ── ingest ──────────────────────────────────────────────────────────

fn cmd_ingest(args: &[String]) -> Result<()> {
    let flags = parse_flags(args)?;
    let input = flags
        .positional
        .first()
        .ok_or_else(|| Error::Config("usage: ingest <edge-file> --out <dir>".into()))?;
    let out = PathBuf::from(flags.require("out")?);
    let format = flags.get("format").unwrap_or("snapshot");
    let mode = parse_format(format)?;
    let directed = flags.has("directed");

    let input_path = resolve_data_path(input);
    let opts = IngestOptions { mode, directed };
    let (graph, ids) = load_edge_list(&input_path, &opts)?;

    let cfg_text = format!(
        "command = ingest\ninput = {input}\nformat = {format}\ndirected = {directed}\n"
    );
    let hash = config_hash(&cfg_text);
    let name = out
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    write_bundle(
        &out,
        &graph,
        &ids,
        &hash,
        0,
        &[
            ("source".into(), "ingest".into()),
            ("format".into(), format.to_string()),
            ("name".into(), name),
        ],
    )?;
    println!(
        "ingested n={} timestamps={} train/val/test={}/{}/{} -> {}",
        graph.n,
        graph.timestamps(),
        graph.train_end,
        graph.val_end - graph.train_end,
        graph.timestamps() - graph.val_end,
        out.display()
    );
    Ok(())
}

fn parse_format(s: &str) -> Result<TimestampMode> {
    if s == "snapshot" {
        return Ok(TimestampMode::SnapshotId);
    }
    if let Some(width) = s.strip_prefix("bin:") {
        let bin_width: f64 = width
            .parse()
            .map_err(|_| Error::Config(format!("bad bin width `{width}`")))?;
        return Ok(TimestampMode::TimeBinned { bin_width });
    }
    Err(Error::Config(format!(
        "unknown format `{s}` (expected `snapshot` or `bin:<width>`)"
    )))
}

// ── generate-sbm ────────────────────────────────────────────────────

fn cmd_generate_sbm(args: &[String]) -> Result<()> {
    let flags = parse_flags(args)?;
    let out = PathBuf::from(flags.require("out")?);
    let cfg = SbmConfig {
        n: flags.parse_or("nodes", 1000)?,
        communities: flags.parse_or("communities", 3)?,
        p_in: flags.parse_or("p-in", 0.2)?,
        p_out: flags.parse_or("p-out", 0.01)?,
        churn: parse_churn(flags.get("churn").unwrap_or("10:20"))?,
        timestamps: flags.parse_or("timestamps", 50)?,
    };
    let seed: u64 = flags.parse_or("seed", 0)?;
    let mut rng = Rng::seed(seed);
    let graph = generate_sbm(&cfg, &mut rng)?;
    let ids = identity_id_map(graph.n);

    let cfg_text = format!(
        "command = generate-sbm\nnodes = {}\ncommunities = {}\np_in = {}\np_out = {}\n\
         churn = {}:{}\ntimestamps = {}\nseed = {seed}\n",
        cfg.n, cfg.communities, cfg.p_in, cfg.p_out, cfg.churn.0, cfg.churn.1, cfg.timestamps
    );
    let hash = config_hash(&cfg_text);
    let name = out
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sbm".into());
    write_bundle(
        &out,
        &graph,
        &ids,
        &hash,
        seed,
        &[("source".into(), "sbm".into()), ("name".into(), name)],
    )?;
    println!(
        "generated sbm n={} timestamps={} -> {}",
        graph.n,
        graph.timestamps(),
        out.display()
    );
    Ok(())
}

fn parse_churn(s: &str) -> Result<(usize, usize)> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("bad churn `{s}` (expected lo:hi)")))?;
    let lo = lo
        .parse()
        .map_err(|_| Error::Config(format!("bad churn low `{lo}`")))?;
    let hi = hi
        .parse()
        .map_err(|_| Error::Config(format!("bad churn high `{hi}`")))?;
    Ok((lo, hi))
}

// ── train ───────────────────────────────────────────────────────────

/// Full run configuration parsed from a flat key-value file.
struct RunConfig {
    dataset: String,
    model: ModelConfig,
}

fn read_run_config(path: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let kv = parse_kv(&text)?;
    let Some(dataset) = kv.get("dataset").cloned() else {
        return Err(Error::Config("missing required field `dataset`".into()));
    };
    let Some(kind) = kv.get("model") else {
        return Err(Error::Config("missing required field `model`".into()));
    };
    let mut cfg = ModelConfig::new(kind.parse::<ModelKind>()?, 0);
    for (k, v) in &kv {
        if k == "dataset" {
            continue;
        }
        cfg.set_field(k, v)?;
    }
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(RunConfig {
        dataset,
        model: cfg,
    })
}

fn cmd_train(args: &[String]) -> Result<()> {
    let flags = parse_flags(args)?;
    let config_path = PathBuf::from(flags.require("config")?);
    let seed_override = match flags.get("seed") {
        Some(v) => Some(v.parse().map_err(|_| Error::Config(format!("bad seed `{v}`")))?),
        None => None,
    };
    let out = PathBuf::from(flags.get("out").unwrap_or("."));

    let mut run_cfg = read_run_config(&config_path, seed_override)?;
    let bundle_dir = resolve_data_path(&run_cfg.dataset);
    let bundle = load_bundle(&bundle_dir)?;
    if run_cfg.model.n == 0 {
        run_cfg.model.n = bundle.graph.n;
    } else if run_cfg.model.n != bundle.graph.n {
        return Err(Error::Config(format!(
            "config n = {} but dataset has {} nodes",
            run_cfg.model.n, bundle.graph.n
        )));
    }
    let cfg = run_cfg.model;
    cfg.validate()?;
    let dataset_name = dataset_label(&bundle.meta, &bundle_dir);
    let hash_text = format!("dataset = {dataset_name}\n{}", cfg.to_kv_string());
    let hash = config_hash(&hash_text);

    let started = Instant::now();
    let mut model = EmbedModel::new(cfg.clone())?;
    let history = train(&mut model, &bundle.graph)?;

    fs::create_dir_all(&out)?;
    let meta = checkpoint_meta(&cfg, &dataset_name, history.epochs_run(), &hash);
    save_checkpoint(&out.join("checkpoint.bin"), &meta, &model.store)?;

    let mut hw = BufWriter::new(File::create(out.join("history.csv"))?);
    write_history(&mut hw, &history, &hash, cfg.seed)?;
    drop(hw);

    let emb_dir = out.join("embeddings");
    fs::create_dir_all(&emb_dir)?;
    for (t, table) in model.embeddings_all(&bundle.graph)? {
        let mut ew = BufWriter::new(File::create(emb_dir.join(format!("emb_t{t}.csv")))?);
        write_embeddings_csv(&mut ew, &table, &hash, cfg.seed)?;
    }

    println!(
        "trained {} on {dataset_name}: epochs_run={} best_epoch={} final_train_loss={} wall_time_s={:.3}",
        cfg.kind.as_str(),
        history.epochs_run(),
        history.best_epoch,
        history.train_loss.last().copied().unwrap_or(f64::NAN),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

// ── checkpoint loading shared by eval/inspect/export ────────────────

struct LoadedModel {
    model: EmbedModel,
    dataset_name: String,
    epochs_run: usize,
    hash: String,
}

fn load_model(checkpoint: &Path) -> Result<LoadedModel> {
    let (meta_text, params) = load_checkpoint(checkpoint)?;
    let kv = parse_kv(&meta_text)?;
    let Some(kind) = kv.get("model") else {
        return Err(Error::Data("checkpoint meta missing `model`".into()));
    };
    let mut cfg = ModelConfig::new(kind.parse::<ModelKind>()?, 0);
    for (k, v) in &kv {
        match k.as_str() {
            "dataset_name" | "epochs_run" | "config_hash" => {}
            _ => cfg.set_field(k, v)?,
        }
    }
    cfg.validate()?;
    let mut model = EmbedModel::new(cfg)?;
    restore_store(&mut model.store, &params)?;
    Ok(LoadedModel {
        model,
        dataset_name: kv.get("dataset_name").cloned().unwrap_or_default(),
        epochs_run: kv
            .get("epochs_run")
            .and_then(|s| s.parse().ok())
            .unwrap_or(0),
        hash: kv.get("config_hash").cloned().unwrap_or_default(),
    })
}

fn load_model_and_bundle(flags: &Flags) -> Result<(LoadedModel, crate::artifacts::Bundle, PathBuf)> {
    let ckpt = PathBuf::from(flags.require("checkpoint")?);
    let data_dir = resolve_data_path(flags.require("data")?);
    let loaded = load_model(&ckpt)?;
    let bundle = load_bundle(&data_dir)?;
    if bundle.graph.n != loaded.model.cfg.n {
        return Err(Error::Dimension(format!(
            "checkpoint was trained with n = {} but dataset has {} nodes",
            loaded.model.cfg.n, bundle.graph.n
        )));
    }
    Ok((loaded, bundle, data_dir))
}

// ── eval ────────────────────────────────────────────────────────────

fn cmd_eval(args: &[String]) -> Result<()> {
    let flags = parse_flags(args)?;
    let (loaded, bundle, data_dir) = load_model_and_bundle(&flags)?;
    let out = PathBuf::from(flags.get("out").unwrap_or("."));
    let seed: u64 = flags.parse_or("seed", loaded.model.cfg.seed)?;
    let opts = EvalOptions {
        ratio: flags.parse_or("ratio", 10)?,
        use_sigma: flags.has("use-sigma"),
        seed,
    };

    let started = Instant::now();
    let embs = loaded.model.embeddings_all(&bundle.graph)?;
    let metrics = evaluate(&embs, &bundle.graph, &opts)?;
    let wall = started.elapsed().as_secs_f64();

    let dataset = if loaded.dataset_name.is_empty() {
        dataset_label(&bundle.meta, &data_dir)
    } else {
        loaded.dataset_name.clone()
    };
    let record = MetricsRecord {
        dataset,
        model: loaded.model.cfg.kind.as_str().into(),
        lookback: loaded.model.cfg.lookback,
        seed,
        map: metrics.map,
        mrr: metrics.mrr,
        epochs_run: loaded.epochs_run,
        wall_time_s: Some(wall),
    };
    fs::create_dir_all(&out)?;
    let mut mw = BufWriter::new(File::create(out.join("metrics.txt"))?);
    use std::io::Write;
    mw.write_all(provenance(&loaded.hash, seed).as_bytes())?;
    writeln!(mw, "{}", record.file_line())?;
    drop(mw);
    println!("{}", record.stdout_line());
    Ok(())
}

fn provenance(hash: &str, seed: u64) -> String {
    crate::artifacts::provenance_header(hash, seed)
}

// ── inspect ─────────────────────────────────────────────────────────

fn cmd_inspect(args: &[String]) -> Result<()> {
    let flags = parse_flags(args)?;
    let (loaded, bundle, _) = load_model_and_bundle(&flags)?;
    let out = PathBuf::from(flags.get("out").unwrap_or("."));
    let spec = flags.require("timestamps")?;
    let timestamps: Vec<usize> = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad timestamp `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if timestamps.is_empty() {
        return Err(Error::Config("no timestamps requested".into()));
    }

    fs::create_dir_all(&out)?;
    let seed = loaded.model.cfg.seed;
    for &t in &timestamps {
        match loaded.model.cfg.kind {
            ModelKind::DgMamba | ModelKind::GdgMamba => {
                let att = loaded.model.hidden_attention_at(&bundle.graph, t)?;
                let path = out.join(format!("hidden_attention_t{t}.csv"));
                let mut w = BufWriter::new(File::create(&path)?);
                write_matrix_csv(&mut w, att.len, att.len, &att.matrix, &loaded.hash, seed)?;
                println!("wrote {}", path.display());
            }
            ModelKind::StTransformerG2G => {
                let att = loaded.model.encoder_attention_at(&bundle.graph, t)?;
                let (rows, cols) = (att.shape()[0], att.shape()[1]);
                let path = out.join(format!("encoder_attention_t{t}.csv"));
                let mut w = BufWriter::new(File::create(&path)?);
                write_matrix_csv(&mut w, rows, cols, att.data(), &loaded.hash, seed)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

// ── export-embeddings ───────────────────────────────────────────────

fn cmd_export_embeddings(args: &[String]) -> Result<()> {
    let flags = parse_flags(args)?;
    let (loaded, bundle, _) = load_model_and_bundle(&flags)?;
    let out = PathBuf::from(flags.get("out").unwrap_or("."));
    fs::create_dir_all(&out)?;
    let seed = loaded.model.cfg.seed;
    for (t, table) in loaded.model.embeddings_all(&bundle.graph)? {
        let path = out.join(format!("emb_t{t}.csv"));
        let mut w = BufWriter::new(File::create(&path)?);
        write_embeddings_csv(&mut w, &table, &loaded.hash, seed)?;
    }
    println!(
        "exported embeddings for t in {}..{} -> {}",
        loaded.model.cfg.lookback,
        bundle.graph.timestamps(),
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_command_is_config_error() {
        let code = run(&["frobnicate".to_string()]);
        assert_eq!(code, 2);
    }

    #[test]
    fn missing_flag_value_is_config_error() {
        let args: Vec<String> = ["ingest", "file", "--out"].iter().map(|s| s.to_string()).collect();
        assert_eq!(run(&args), 2);
    }

    #[test]
    fn format_parsing() {
        assert!(matches!(
            parse_format("snapshot"),
            Ok(TimestampMode::SnapshotId)
        ));
        match parse_format("bin:86400") {
            Ok(TimestampMode::TimeBinned { bin_width }) => assert_eq!(bin_width, 86400.0),
            other => panic!("{other:?}"),
        }
        assert!(parse_format("whatever").is_err());
    }

    #[test]
    fn churn_parsing() {
        assert_eq!(parse_churn("10:20").unwrap(), (10, 20));
        assert!(parse_churn("10").is_err());
    }
}
