//! Edge-list ingestion and export.
//!
//! Input format: UTF-8 text, one edge per line as whitespace-separated
//! `src dst weight tag`, with `#` starting a comment. The tag is either a
//! snapshot id (integer) or a raw timestamp assigned to fixed-width bins.
//! Files ending in `.gz` are decompressed on the fly. Original node ids are
//! arbitrary tokens, densely re-indexed in order of first appearance; the
//! mapping is persisted as a CSV sidecar `original_id,dense_id`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Snapshot, TemporalGraph};

/// How the tag column maps to snapshot indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimestampMode {
    /// Tags are integer snapshot ids; distinct ids are rank-compressed to 0..T-1.
    SnapshotId,
    /// Tags are raw times; edge goes to bin `floor((time - t_min) / bin_width)`.
    /// Bins with no edges still become (empty) snapshots.
    TimeBinned { bin_width: f64 },
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub mode: TimestampMode,
    pub directed: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            mode: TimestampMode::SnapshotId,
            directed: false,
        }
    }
}

/// Dense id mapping in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    originals: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        IdMap::default()
    }

    /// Pre-populated mapping, e.g. read back from a sidecar.
    pub fn from_pairs(pairs: Vec<(String, usize)>) -> Result<Self> {
        let mut originals = vec![String::new(); pairs.len()];
        let mut lookup = HashMap::new();
        for (orig, dense) in pairs {
            if dense >= originals.len() {
                return Err(Error::Data(format!(
                    "id map dense id {dense} out of range {}",
                    originals.len()
                )));
            }
            originals[dense] = orig.clone();
            if lookup.insert(orig.clone(), dense).is_some() {
                return Err(Error::Data(format!("duplicate original id `{orig}` in map")));
            }
        }
        Ok(IdMap { originals, lookup })
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.lookup.get(token) {
            return id;
        }
        let id = self.originals.len();
        self.originals.push(token.to_string());
        self.lookup.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn original(&self, dense: usize) -> &str {
        &self.originals[dense]
    }

    pub fn dense(&self, original: &str) -> Option<usize> {
        self.lookup.get(original).copied()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "original_id,dense_id")?;
        for (dense, orig) in self.originals.iter().enumerate() {
            writeln!(w, "{orig},{dense}")?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut pairs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "original_id,dense_id" {
                continue;
            }
            let (orig, dense) = line.rsplit_once(',').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `original_id,dense_id`".into(),
            })?;
            let dense: usize = dense.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad dense id `{dense}`"),
            })?;
            pairs.push((orig.to_string(), dense));
        }
        IdMap::from_pairs(pairs)
    }
}

struct RawEdge {
    src: usize,
    dst: usize,
    weight: f64,
    tag: f64,
}

fn parse_lines(reader: impl BufRead, mode: TimestampMode) -> Result<(Vec<RawEdge>, IdMap)> {
    let mut ids = IdMap::new();
    let mut edges = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected `src dst weight tag`, got {} fields", fields.len()),
            });
        }
        let weight: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad weight `{}`", fields[2]),
        })?;
        if !weight.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("non-finite weight `{}`", fields[2]),
            });
        }
        let tag: f64 = match mode {
            TimestampMode::SnapshotId => {
                let t: u64 = fields[3].parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad snapshot id `{}`", fields[3]),
                })?;
                t as f64
            }
            TimestampMode::TimeBinned { .. } => fields[3].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad timestamp `{}`", fields[3]),
            })?,
        };
        let src = ids.intern(fields[0]);
        let dst = ids.intern(fields[1]);
        edges.push(RawEdge {
            src,
            dst,
            weight,
            tag,
        });
    }
    Ok((edges, ids))
}

fn assemble(edges: Vec<RawEdge>, ids: IdMap, opts: &IngestOptions) -> Result<(TemporalGraph, IdMap)> {
    if edges.is_empty() {
        return Err(Error::Data("no edges".into()));
    }
    let n = ids.len();
    let bins: Vec<usize> = match opts.mode {
        TimestampMode::SnapshotId => {
            let mut tags: Vec<u64> = edges.iter().map(|e| e.tag as u64).collect();
            tags.sort_unstable();
            tags.dedup();
            let rank: HashMap<u64, usize> =
                tags.iter().enumerate().map(|(i, &t)| (t, i)).collect();
            edges.iter().map(|e| rank[&(e.tag as u64)]).collect()
        }
        TimestampMode::TimeBinned { bin_width } => {
            if !(bin_width.is_finite() && bin_width > 0.0) {
                return Err(Error::Config(format!("bin width {bin_width} must be > 0")));
            }
            let t_min = edges.iter().map(|e| e.tag).fold(f64::INFINITY, f64::min);
            edges
                .iter()
                .map(|e| ((e.tag - t_min) / bin_width).floor() as usize)
                .collect()
        }
    };
    let t_count = bins.iter().copied().max().unwrap() + 1;
    let mut per_snapshot: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); t_count];
    for (e, &b) in edges.iter().zip(&bins) {
        per_snapshot[b].push((e.src, e.dst, e.weight));
    }
    let snapshots = per_snapshot
        .into_iter()
        .enumerate()
        .map(|(i, es)| Snapshot::new(i, es, n))
        .collect::<Result<Vec<_>>>()?;
    let graph = TemporalGraph::new(snapshots, n, opts.directed)?;
    Ok((graph, ids))
}

/// Ingest from any reader (already decompressed).
pub fn load_edge_list_from_reader(
    reader: impl BufRead,
    opts: &IngestOptions,
) -> Result<(TemporalGraph, IdMap)> {
    let (edges, ids) = parse_lines(reader, opts.mode)?;
    assemble(edges, ids, opts)
}

/// Ingest from a file path; `.gz` files are decompressed transparently.
pub fn load_edge_list(path: &Path, opts: &IngestOptions) -> Result<(TemporalGraph, IdMap)> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let gz = flate2::read::GzDecoder::new(file);
        load_edge_list_from_reader(BufReader::new(gz), opts)
    } else {
        load_edge_list_from_reader(BufReader::new(file), opts)
    }
}

/// Write the canonical edge list (original ids, snapshot-id tags). Feeding
/// the output back through `load_edge_list` with the same options and the
/// persisted id map reproduces the graph exactly.
pub fn export_edge_list(g: &TemporalGraph, ids: &IdMap, w: &mut impl Write) -> Result<()> {
    for s in &g.snapshots {
        for &(u, v, weight) in &s.edges {
            writeln!(
                w,
                "{} {} {} {}",
                ids.original(u),
                ids.original(v),
                weight,
                s.index
            )?;
        }
    }
    Ok(())
}

/// Identity id map for graphs whose nodes were born dense (e.g. generated).
pub fn identity_id_map(n: usize) -> IdMap {
    IdMap::from_pairs((0..n).map(|i| (i.to_string(), i)).collect()).expect("dense pairs")
}

/// Re-ingest an exported edge list using a persisted id map, preserving the
/// original dense ids even when first-appearance order differs.
pub fn load_edge_list_with_map(
    reader: impl BufRead,
    opts: &IngestOptions,
    map: &IdMap,
) -> Result<TemporalGraph> {
    let (edges, ids) = parse_lines(reader, opts.mode)?;
    // Re-express endpoints through the persisted mapping.
    let remap: Vec<usize> = (0..ids.len())
        .map(|dense| {
            map.dense(ids.original(dense)).ok_or_else(|| {
                Error::Data(format!("id `{}` missing from id map", ids.original(dense)))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let edges = edges
        .into_iter()
        .map(|e| RawEdge {
            src: remap[e.src],
            dst: remap[e.dst],
            ..e
        })
        .collect();
    let (graph, _) = assemble(edges, map.clone(), opts)?;
    Ok(graph)
}
