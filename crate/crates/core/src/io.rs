//! On-disk formats: the `NCEG` embedding file and encoder checkpoints.
//!
//! Embedding file layout (all integers little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `NCEG`                  |
//! | 4      | 2    | version (`1`)                 |
//! | 6      | 8    | rows `n`                      |
//! | 14     | 8    | columns `d`                   |
//! | 22     | 2    | flags (bit 0: rows normalized)|
//! | 24     | 8·n·d| row-major `f64` payload       |
//!
//! Checkpoints start with magic `NCEK`, a `u64` header length and a JSON
//! header, followed by the encoder parameters and both Adam moment vectors
//! as `f64` payloads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::{Activation, Encoder};
use crate::error::{Error, Result};
use crate::trainer::{AdamState, TrainHistory, TrainState};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"NCEG";
pub const EMBEDDING_VERSION: u16 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 24;
pub const FLAG_NORMALIZED: u16 = 1;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NCEK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A matrix of embeddings (or dataset rows) in the `NCEG` format.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub data: Array2<f64>,
    pub normalized: bool,
}

impl EmbeddingFile {
    pub fn new(data: Array2<f64>, normalized: bool) -> Self {
        Self { data, normalized }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let flags = if self.normalized { FLAG_NORMALIZED } else { 0 };
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.d() as u64).to_le_bytes())?;
        w.write_all(&flags.to_le_bytes())?;
        write_f64s(&mut w, self.data.iter().copied())?;
        w.flush()
    }

    /// Parses a complete file image; trailing bytes are a format error.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; EMBEDDING_HEADER_LEN];
        read_exact(&mut r, &mut header, "embedding header")?;
        if &header[0..4] != EMBEDDING_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"NCEG\"",
                String::from_utf8_lossy(&header[0..4])
            )));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != EMBEDDING_VERSION {
            return Err(Error::Format(format!("unsupported embedding file version {version}")));
        }
        let n = u64::from_le_bytes(header[6..14].try_into().expect("8 bytes"));
        let d = u64::from_le_bytes(header[14..22].try_into().expect("8 bytes"));
        let flags = u16::from_le_bytes([header[22], header[23]]);
        if flags & !FLAG_NORMALIZED != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#06x}")));
        }
        let len = usize::try_from(n)
            .ok()
            .zip(usize::try_from(d).ok())
            .and_then(|(n, d)| n.checked_mul(d))
            .filter(|len| len.checked_mul(8).is_some())
            .ok_or_else(|| Error::Format(format!("shape {n}×{d} does not fit in memory")))?;
        let values = read_f64s(&mut r, len, "embedding payload")?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| Error::Format(e.to_string()))? != 0 {
            return Err(Error::Format("trailing bytes after embedding payload".into()));
        }
        let data =
            Array2::from_shape_vec((n as usize, d as usize), values).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            data,
            normalized: flags & FLAG_NORMALIZED != 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

fn write_f64s<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Format(format!("reading {what}: {e}")),
    })
}

fn read_f64s<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len.min(1 << 24));
    let mut buf = [0u8; 8];
    for _ in 0..len {
        read_exact(r, &mut buf, what)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

/// Identifies the run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub encoder_seed: u64,
    pub param_count: usize,
    pub epochs_done: usize,
    pub adam_t: u64,
    #[serde(default)]
    pub provenance: Option<Provenance>,
    #[serde(default)]
    pub history: TrainHistory,
}

/// Writes the full training state so that a resumed run matches an
/// uninterrupted one bit for bit.
pub fn write_checkpoint<W: Write>(mut w: W, state: &TrainState, provenance: Option<&Provenance>) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        dims: state.encoder.dims(),
        activation: state.encoder.activation,
        encoder_seed: state.encoder.seed,
        param_count: state.encoder.param_count(),
        epochs_done: state.epochs_done,
        adam_t: state.adam.t,
        provenance: provenance.cloned(),
        history: state.history.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::Format(format!("writing checkpoint: {e}"));
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    let params = state.encoder.flat_params();
    write_f64s(&mut w, params.into_iter()).map_err(io)?;
    write_f64s(&mut w, state.adam.m.iter().copied()).map_err(io)?;
    write_f64s(&mut w, state.adam.v.iter().copied()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(TrainState, CheckpointHeader)> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "checkpoint magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an encoder checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    read_exact(&mut r, &mut len, "checkpoint header length")?;
    let len = usize::try_from(u64::from_le_bytes(len))
        .ok()
        .filter(|&l| l <= 1 << 30)
        .ok_or_else(|| Error::Format("checkpoint header too large".into()))?;
    let mut json = vec![0u8; len];
    read_exact(&mut r, &mut json, "checkpoint header")?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let mut encoder = Encoder::init(&header.dims, header.activation, header.encoder_seed)
        .map_err(|e| Error::Format(format!("checkpoint encoder shape: {e}")))?;
    if encoder.param_count() != header.param_count {
        return Err(Error::Format("parameter count does not match layer widths".into()));
    }
    let p = header.param_count;
    encoder.set_flat_params(&read_f64s(&mut r, p, "encoder parameters")?)?;
    let m = read_f64s(&mut r, p, "first moments")?;
    let v = read_f64s(&mut r, p, "second moments")?;
    let state = TrainState {
        encoder,
        adam: AdamState { m, v, t: header.adam_t },
        epochs_done: header.epochs_done,
        history: header.history.clone(),
    };
    Ok((state, header))
}

pub fn save_checkpoint(path: &Path, state: &TrainState, provenance: Option<&Provenance>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), state, provenance)
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainState, CheckpointHeader)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
