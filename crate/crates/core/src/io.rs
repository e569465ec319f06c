//! File formats for trajectories and datasets.
//!
//! Trajectories are exchanged as JSON lines, one `{design, frames, source}`
//! record per line. Bulk datasets use a binary file: a 16-byte header
//! (`MSIMDSET`, format version, record count, all little-endian), the
//! provenance as length-prefixed JSON, then one record per trajectory holding
//! the design JSON, the shared adjacency table and every frame's features as
//! little-endian `f32`.
//!
//! Checkpoints are binary as well: `MSIMCKPT`, format version, feature
//! layout hash, a length-prefixed JSON header (model shape, normalizers,
//! parameter table, free-form metadata) and the parameters as
//! little-endian `f32`. A JSON manifest with the same header and the
//! checkpoint's SHA-256 is written beside it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::grid::layout::{layout_hash, EDGE_WIDTH, NODE_WIDTH};
use crate::grid::{GridDesign, GridGraph, Source, Trajectory};
use crate::nn::{Mat, ParamStore};
use crate::sim::{EngineNets, NormalizerSet, Surrogate, SurrogateConfig};

const DATASET_MAGIC: &[u8; 8] = b"MSIMDSET";
const DATASET_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"MSIMCKPT";
const CHECKPOINT_VERSION: u32 = 1;

pub fn write_jsonl(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Trajectory>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(out, bytes.len() as u32);
    out.extend_from_slice(bytes);
}

/// Serializes a dataset to the binary format.
pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut out, DATASET_VERSION);
    put_u32(&mut out, dataset.trajectories.len() as u32);
    put_bytes(&mut out, &serde_json::to_vec(&dataset.provenance)?);
    for t in &dataset.trajectories {
        put_bytes(&mut out, &serde_json::to_vec(&t.design)?);
        out.push(match t.source {
            Source::Oracle => 0,
            Source::Surrogate => 1,
        });
        let first = t
            .frames
            .first()
            .ok_or_else(|| Error::Format("trajectory without frames".into()))?;
        put_u32(&mut out, t.frames.len() as u32);
        put_u32(&mut out, first.n_nodes() as u32);
        put_u32(&mut out, first.n_edges() as u32);
        for e in 0..first.n_edges() {
            out.extend((0..first.n_nodes()).map(|n| first.adjacency(e, n)));
        }
        for frame in &t.frames {
            if !frame.same_layout(first) {
                return Err(Error::Format("frames of one trajectory differ in layout".into()));
            }
            for &v in frame.node_data().iter().chain(frame.edge_data()) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of dataset file".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<impl Iterator<Item = f64> + 'a> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self) -> Result<T> {
        let n = self.u32()? as usize;
        Ok(serde_json::from_slice(self.take(n)?)?)
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(8)? != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file".into()));
    }
    let version = cur.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let count = cur.u32()? as usize;
    let provenance: Provenance = cur.json()?;
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let design: GridDesign = cur.json()?;
        let source = match cur.take(1)?[0] {
            0 => Source::Oracle,
            1 => Source::Surrogate,
            s => return Err(Error::Format(format!("unknown source tag {s}"))),
        };
        let n_frames = cur.u32()? as usize;
        let n_nodes = cur.u32()? as usize;
        let n_edges = cur.u32()? as usize;
        let adjacency = cur.take(n_nodes * n_edges)?;
        let mut frames = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let mut g = GridGraph::zeros(n_nodes, n_edges);
            for (e, row) in adjacency.chunks(n_nodes.max(1)).enumerate().take(n_edges) {
                for (n, &code) in row.iter().enumerate() {
                    g.set_adjacency(e, n, code);
                }
            }
            for (dst, v) in g.node_data_mut().iter_mut().zip(cur.f32s(n_nodes * NODE_WIDTH)?) {
                *dst = v;
            }
            for (dst, v) in g.edge_data_mut().iter_mut().zip(cur.f32s(n_edges * EDGE_WIDTH)?) {
                *dst = v;
            }
            frames.push(g);
        }
        trajectories.push(Trajectory {
            design,
            frames,
            source,
        });
    }
    if cur.at != bytes.len() {
        return Err(Error::Format("trailing bytes after dataset records".into()));
    }
    Ok(Dataset {
        provenance,
        trajectories,
    })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, encode_dataset(dataset)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

/// Reads trajectories from either a binary dataset or a JSON-lines file.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let mut head = [0u8; 8];
    let n = File::open(path)?.read(&mut head)?;
    if n == 8 && &head == DATASET_MAGIC {
        Ok(read_dataset(path)?.trajectories)
    } else {
        read_jsonl(path)
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Everything in a checkpoint except the parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub layout_hash: u64,
    /// Hidden-layer activation of every perceptron.
    pub activation: String,
    pub config: SurrogateConfig,
    pub normalizers: NormalizerSet,
    pub engines: Vec<EngineNets>,
    pub parameters: Vec<ParamEntry>,
    /// Training settings, history and data provenance.
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub header: CheckpointHeader,
    pub parameter_count: usize,
    pub sha256: String,
}

fn header_of(model: &Surrogate<f32>, metadata: serde_json::Value) -> CheckpointHeader {
    CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        layout_hash: model.layout_hash,
        activation: "relu".into(),
        config: model.config.clone(),
        normalizers: model.normalizers.clone(),
        engines: model.engines.clone(),
        parameters: model
            .store
            .names
            .iter()
            .zip(&model.store.mats)
            .map(|(name, m)| ParamEntry {
                name: name.clone(),
                rows: m.rows,
                cols: m.cols,
            })
            .collect(),
        metadata,
    }
}

pub fn encode_checkpoint(model: &Surrogate<f32>, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let header = header_of(model, metadata);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(&header.layout_hash.to_le_bytes());
    let json = serde_json::to_vec(&header)?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for m in &model.store.mats {
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len());
    let Some(end) = end else {
        return Err(Error::Format("checkpoint truncated".into()));
    };
    let out = &bytes[*at..end];
    *at = end;
    Ok(out)
}

/// Parses a checkpoint, refusing one written for another feature layout.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Surrogate<f32>, CheckpointHeader)> {
    let mut at = 0;
    if take(bytes, &mut at, 8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let found = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().unwrap());
    let expected = layout_hash();
    if found != expected {
        return Err(Error::LayoutMismatch { expected, found });
    }
    let len = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(bytes, &mut at, len)?)?;
    if header.layout_hash != found {
        return Err(Error::Format("header and preamble disagree on the layout hash".into()));
    }
    let mut store = ParamStore::default();
    for p in &header.parameters {
        let raw = take(bytes, &mut at, p.rows * p.cols * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        store.add(p.name.clone(), Mat::from_vec(p.rows, p.cols, data));
    }
    if at != bytes.len() {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let model = Surrogate::assemble(
        header.config.clone(),
        header.normalizers.clone(),
        header.engines.clone(),
        store,
        header.layout_hash,
    );
    Ok((model, header))
}

/// Path of the JSON manifest written beside a checkpoint.
pub fn manifest_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    name.into()
}

/// Writes the checkpoint and its JSON manifest.
pub fn save_checkpoint(path: &Path, model: &Surrogate<f32>, metadata: serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(model, metadata.clone())?;
    std::fs::write(path, &bytes)?;
    let manifest = CheckpointManifest {
        header: header_of(model, metadata),
        parameter_count: model.parameter_count(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    };
    write_json(&manifest_path(path), &manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(Surrogate<f32>, CheckpointHeader)> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, SamplerConfig};
    use crate::oracle::OracleConfig;
    use crate::sim::{canonicalize_trajectory, fit_normalizers};

    fn small_dataset() -> Dataset {
        let oracle = OracleConfig {
            projection_iterations: 40,
            ..OracleConfig::default()
        };
        generate_dataset(6, 11, &SamplerConfig::default(), &oracle).unwrap()
    }

    #[test]
    fn dataset_round_trip_and_regeneration_are_exact() {
        let ds = small_dataset();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(bytes, encode_dataset(&small_dataset()).unwrap());
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back.provenance, ds.provenance);
        assert_eq!(back.len(), 6);
        for (a, b) in back.trajectories.iter().zip(&ds.trajectories) {
            assert_eq!(a.design, b.design);
            assert_eq!(a.frames.len(), 12);
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                assert!(fa.same_layout(fb));
                assert!(fa.max_vertex_deviation(fb) < 1e-4);
            }
        }
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_jsonl(&path, &ds.trajectories[..2]).unwrap();
        let back = read_trajectories(&path).unwrap();
        assert_eq!(back, ds.trajectories[..2].to_vec());
    }

    #[test]
    fn checkpoint_round_trip_and_layout_guard() {
        let ds = small_dataset();
        let trajs: Vec<Trajectory> = ds.trajectories.iter().map(canonicalize_trajectory).collect();
        let norms = fit_normalizers(&trajs, 0.98).unwrap();
        let config = SurrogateConfig {
            latent: 4,
            first_width: 8,
            depth: 2,
            seed: 3,
        };
        let model = Surrogate::<f32>::new(config, norms).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_checkpoint(&path, &model, serde_json::json!({"note": "test"})).unwrap();
        let (loaded, header) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.store, model.store);
        assert_eq!(header.metadata["note"], "test");
        let g0 = ds.trajectories[0].initial();
        assert_eq!(loaded.rollout(g0).unwrap(), model.rollout(g0).unwrap());
        let manifest: CheckpointManifest = read_json(&manifest_path(&path)).unwrap();
        assert_eq!(manifest.parameter_count, model.parameter_count());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[12] ^= 0xff;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::LayoutMismatch { .. })));
        assert!(matches!(decode_checkpoint(&bytes[..30]), Err(Error::Format(_) | Error::LayoutMismatch { .. })));
        assert!(matches!(decode_checkpoint(b"garbage-bytes-here-xx"), Err(Error::Format(_))));
    }
}
