//! On-disk artifacts: dataset bundles, checkpoints, history and embedding
//! CSVs, matrix exports, and the metrics record.
//!
//! Every artifact is written deterministically (fixed ordering, shortest
//! round-trip float formatting) and carries the run's config hash and seed
//! in a leading `#` comment, so reruns with identical inputs produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::ingest::{export_edge_list, load_edge_list_with_map, IdMap, IngestOptions, TimestampMode};
use crate::loss::GaussianEmbedding;
use crate::models::ModelConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::TrainingHistory;

/// FNV-1a over the canonical config text, as 16 hex digits.
pub fn config_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn provenance_header(hash: &str, seed: u64) -> String {
    format!("# config_hash={hash} seed={seed}\n")
}

// ── Dataset bundle ──────────────────────────────────────────────────

/// Canonical snapshot store: edge list + id map + metadata + stats.
pub struct Bundle {
    pub graph: TemporalGraph,
    pub ids: IdMap,
    pub meta: BTreeMap<String, String>,
}

pub fn bundle_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        dir.join("edges.tsv"),
        dir.join("id_map.csv"),
        dir.join("meta.kv"),
        dir.join("stats.tsv"),
    )
}

pub fn write_bundle(
    dir: &Path,
    g: &TemporalGraph,
    ids: &IdMap,
    hash: &str,
    seed: u64,
    extra_meta: &[(String, String)],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (edges_p, ids_p, meta_p, stats_p) = bundle_paths(dir);

    let mut edges = BufWriter::new(File::create(edges_p)?);
    edges.write_all(provenance_header(hash, seed).as_bytes())?;
    export_edge_list(g, ids, &mut edges)?;
    edges.flush()?;

    let mut idw = BufWriter::new(File::create(ids_p)?);
    idw.write_all(provenance_header(hash, seed).as_bytes())?;
    ids.write_csv(&mut idw)?;
    idw.flush()?;

    let mut meta = BufWriter::new(File::create(meta_p)?);
    meta.write_all(provenance_header(hash, seed).as_bytes())?;
    writeln!(meta, "n = {}", g.n)?;
    writeln!(meta, "timestamps = {}", g.timestamps())?;
    writeln!(meta, "directed = {}", g.directed)?;
    writeln!(meta, "train_end = {}", g.train_end)?;
    writeln!(meta, "val_end = {}", g.val_end)?;
    for (k, v) in extra_meta {
        writeln!(meta, "{k} = {v}")?;
    }
    meta.flush()?;

    let mut stats = BufWriter::new(File::create(stats_p)?);
    stats.write_all(provenance_header(hash, seed).as_bytes())?;
    writeln!(stats, "# n={} timestamps={}", g.n, g.timestamps())?;
    writeln!(stats, "snapshot\tedges")?;
    for s in &g.snapshots {
        writeln!(stats, "{}\t{}", s.index, s.edge_count())?;
    }
    stats.flush()?;
    Ok(())
}

/// Flat `key = value` documents with `#` comments.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let (edges_p, ids_p, meta_p, _) = bundle_paths(dir);
    let meta_text = fs::read_to_string(&meta_p)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", meta_p.display())))?;
    let meta = parse_kv(&meta_text)?;
    let directed: bool = meta
        .get("directed")
        .ok_or_else(|| Error::Data("bundle meta missing `directed`".into()))?
        .parse()
        .map_err(|_| Error::Data("bad `directed` in bundle meta".into()))?;

    let ids = IdMap::read_csv(File::open(&ids_p)?)?;
    let opts = IngestOptions {
        mode: TimestampMode::SnapshotId,
        directed,
    };
    let graph = load_edge_list_with_map(BufReader::new(File::open(&edges_p)?), &opts, &ids)?;

    if let Some(n) = meta.get("n") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Data("bad `n` in bundle meta".into()))?;
        if n != graph.n {
            return Err(Error::Data(format!(
                "bundle meta claims n={n} but edge list yields {}",
                graph.n
            )));
        }
    }
    Ok(Bundle { graph, ids, meta })
}

// ── Checkpoint ──────────────────────────────────────────────────────

const CKPT_MAGIC: &[u8; 4] = b"DYGM";
const CKPT_VERSION: u32 = 1;

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Versioned binary container: magic, version, a metadata kv-text block
/// (model config plus run provenance), then named parameter tensors with
/// shape metadata.
pub fn save_checkpoint(path: &Path, meta_text: &str, store: &ParamStore) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    write_u64(&mut w, meta_text.len() as u64)?;
    w.write_all(meta_text.as_bytes())?;
    write_u64(&mut w, store.len() as u64)?;
    for (_, p) in store.iter() {
        write_u64(&mut w, p.name.len() as u64)?;
        w.write_all(p.name.as_bytes())?;
        write_u64(&mut w, p.value.rank() as u64)?;
        for &d in p.value.shape() {
            write_u64(&mut w, d as u64)?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::Data(format!("cannot open checkpoint: {e}")))?,
    );
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Data("not a checkpoint file (bad magic)".into()));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)?;
    let version = u32::from_le_bytes(ver);
    if version != CKPT_VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = read_u64(&mut r)? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    r.read_exact(&mut meta_buf)?;
    let meta_text =
        String::from_utf8(meta_buf).map_err(|_| Error::Data("checkpoint meta not UTF-8".into()))?;

    let count = read_u64(&mut r)? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Data("checkpoint name not UTF-8".into()))?;
        let rank = read_u64(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok((meta_text, params))
}

/// Overwrite store values from checkpoint tensors, matched by name.
pub fn restore_store(store: &mut ParamStore, params: &[(String, Tensor)]) -> Result<()> {
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let Some((_, tensor)) = params.iter().find(|(n, _)| *n == name) else {
            return Err(Error::Data(format!("checkpoint missing parameter `{name}`")));
        };
        let current = store.get(id).value.shape().to_vec();
        if tensor.shape() != current {
            return Err(Error::Dimension(format!(
                "checkpoint `{name}` has shape {:?}, model expects {:?}",
                tensor.shape(),
                current
            )));
        }
        store.get_mut(id).value = tensor.clone().with_grad();
    }
    Ok(())
}

// ── CSV artifacts ───────────────────────────────────────────────────

pub fn write_history(
    w: &mut impl Write,
    history: &TrainingHistory,
    hash: &str,
    seed: u64,
) -> Result<()> {
    w.write_all(provenance_header(hash, seed).as_bytes())?;
    writeln!(w, "# best_epoch={}", history.best_epoch)?;
    match history.early_stop_epoch {
        Some(e) => writeln!(w, "# early_stop_epoch={e}")?,
        None => writeln!(w, "# early_stop_epoch=none")?,
    }
    writeln!(w, "epoch,train_loss,val_loss")?;
    for (i, (tr, va)) in history
        .train_loss
        .iter()
        .zip(&history.val_loss)
        .enumerate()
    {
        writeln!(w, "{i},{tr},{va}")?;
    }
    Ok(())
}

/// One embedding table as CSV: `node_id, mu_0.., sigma_0..` columns.
pub fn write_embeddings_csv(
    w: &mut impl Write,
    table: &[GaussianEmbedding],
    hash: &str,
    seed: u64,
) -> Result<()> {
    let dim = table.first().map(|e| e.dim()).unwrap_or(0);
    w.write_all(provenance_header(hash, seed).as_bytes())?;
    let mut header = String::from("node_id");
    for i in 0..dim {
        header.push_str(&format!(",mu_{i}"));
    }
    for i in 0..dim {
        header.push_str(&format!(",sigma_{i}"));
    }
    writeln!(w, "{header}")?;
    for (node, e) in table.iter().enumerate() {
        let mut line = node.to_string();
        for v in &e.mu {
            line.push_str(&format!(",{v}"));
        }
        for v in &e.sigma {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_embeddings_csv(r: impl Read) -> Result<Vec<GaussianEmbedding>> {
    let reader = BufReader::new(r);
    let mut rows: Vec<(usize, GaussianEmbedding)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("node_id") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 || (fields.len() - 1) % 2 != 0 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("embedding row with {} fields", fields.len()),
            });
        }
        let dim = (fields.len() - 1) / 2;
        let node: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("bad node id `{}`", fields[0]),
        })?;
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad float `{s}`"),
            })
        };
        let mu = fields[1..1 + dim].iter().map(|s| parse(s)).collect::<Result<_>>()?;
        let sigma = fields[1 + dim..].iter().map(|s| parse(s)).collect::<Result<_>>()?;
        rows.push((node, GaussianEmbedding { mu, sigma }));
    }
    rows.sort_by_key(|(n, _)| *n);
    Ok(rows.into_iter().map(|(_, e)| e).collect())
}

/// L x L matrix CSV with a provenance comment; values round-trip bitwise.
pub fn write_matrix_csv(
    w: &mut impl Write,
    rows: usize,
    cols: usize,
    data: &[f64],
    hash: &str,
    seed: u64,
) -> Result<()> {
    w.write_all(provenance_header(hash, seed).as_bytes())?;
    for i in 0..rows {
        let line: Vec<String> = (0..cols).map(|j| format!("{}", data[i * cols + j])).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv(r: impl Read) -> Result<(usize, usize, Vec<f64>)> {
    let reader = BufReader::new(r);
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("bad float `{s}`"),
                })
            })
            .collect::<Result<_>>()?;
        if rows == 0 {
            cols = values.len();
        } else if values.len() != cols {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("ragged row: {} vs {cols}", values.len()),
            });
        }
        rows += 1;
        data.extend(values);
    }
    Ok((rows, cols, data))
}

// ── Metrics record ──────────────────────────────────────────────────

/// One evaluation outcome. `wall_time_s` is reported on stdout but kept
/// out of the persisted metrics file so reruns stay byte-identical.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub dataset: String,
    pub model: String,
    pub lookback: usize,
    pub seed: u64,
    pub map: f64,
    pub mrr: f64,
    pub epochs_run: usize,
    pub wall_time_s: Option<f64>,
}

impl MetricsRecord {
    /// Deterministic persisted form.
    pub fn file_line(&self) -> String {
        format!(
            "dataset={} model={} lookback={} seed={} map={} mrr={} epochs_run={}",
            self.dataset, self.model, self.lookback, self.seed, self.map, self.mrr, self.epochs_run
        )
    }

    /// Full record including wall time, for stdout.
    pub fn stdout_line(&self) -> String {
        match self.wall_time_s {
            Some(w) => format!("{} wall_time_s={w:.3}", self.file_line()),
            None => self.file_line(),
        }
    }
}

/// Canonical meta text stored in checkpoints.
pub fn checkpoint_meta(cfg: &ModelConfig, dataset: &str, epochs_run: usize, hash: &str) -> String {
    let mut text = cfg.to_kv_string();
    text.push_str(&format!("dataset_name = {dataset}\n"));
    text.push_str(&format!("epochs_run = {epochs_run}\n"));
    text.push_str(&format!("config_hash = {hash}\n"));
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn config_hash_is_stable_and_order_sensitive() {
        let a = config_hash("model = dg-mamba\nseed = 1\n");
        let b = config_hash("model = dg-mamba\nseed = 1\n");
        let c = config_hash("seed = 1\nmodel = dg-mamba\n");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn kv_parsing_and_errors() {
        let m = parse_kv("a = 1\n# comment\nb = two words\n").unwrap();
        assert_eq!(m["a"], "1");
        assert_eq!(m["b"], "two words");
        assert!(matches!(parse_kv("broken line\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(5);
        store.add("layer.w", Tensor::randn(vec![3, 2], 1.0, &mut rng));
        store.add("layer.b", Tensor::randn(vec![2], 1.0, &mut rng));
        let dir = std::env::temp_dir().join("dygem_ckpt_test");
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, "model = test\n", &store).unwrap();
        let (meta, params) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, "model = test\n");
        assert_eq!(params.len(), 2);
        assert_eq!(params[0].0, "layer.w");
        assert_eq!(params[0].1.data(), store.get(crate::params::ParamId(0)).value.data());

        let mut fresh = ParamStore::new();
        fresh.add("layer.w", Tensor::zeros(vec![3, 2]));
        fresh.add("layer.b", Tensor::zeros(vec![2]));
        restore_store(&mut fresh, &params).unwrap();
        assert_eq!(
            fresh.get(crate::params::ParamId(1)).value.data(),
            store.get(crate::params::ParamId(1)).value.data()
        );
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = std::env::temp_dir().join("dygem_ckpt_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn embeddings_csv_round_trip_bitwise() {
        let mut rng = Rng::seed(9);
        let table: Vec<GaussianEmbedding> = (0..5)
            .map(|_| GaussianEmbedding {
                mu: (0..3).map(|_| rng.normal()).collect(),
                sigma: (0..3).map(|_| rng.uniform_in(0.1, 2.0)).collect(),
            })
            .collect();
        let mut buf = Vec::new();
        write_embeddings_csv(&mut buf, &table, "abc", 7).unwrap();
        let back = read_embeddings_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in table.iter().zip(&back) {
            for (x, y) in a.mu.iter().zip(&b.mu) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.sigma.iter().zip(&b.sigma) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn matrix_csv_round_trip_bitwise() {
        let mut rng = Rng::seed(3);
        let data: Vec<f64> = (0..12).map(|_| rng.normal() * 1e-7).collect();
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, 3, 4, &data, "h", 0).unwrap();
        let (r, c, back) = read_matrix_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!((r, c), (3, 4));
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn metrics_record_lines() {
        let rec = MetricsRecord {
            dataset: "sbm".into(),
            model: "dg-mamba".into(),
            lookback: 2,
            seed: 3,
            map: 0.5,
            mrr: 0.25,
            epochs_run: 12,
            wall_time_s: Some(1.23456),
        };
        assert_eq!(
            rec.file_line(),
            "dataset=sbm model=dg-mamba lookback=2 seed=3 map=0.5 mrr=0.25 epochs_run=12"
        );
        assert!(rec.stdout_line().ends_with("wall_time_s=1.235"));
    }
}
