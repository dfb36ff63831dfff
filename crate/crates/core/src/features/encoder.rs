//! Frozen frame encoders behind one interface: a deterministic test encoder,
//! precomputed embedding files and an external process.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::io::{read_embeddings, EmbeddingRow};
use crate::corpus::{Frame, FrameRef, GrayPlane, WindowKey};
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, SeededRng};

pub trait FrameEncoder: Send + Sync {
    fn encoder_id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Embed one sampled frame. `frame_ref` identifies the slot for encoders
    /// that look vectors up rather than compute them.
    fn encode(&self, frame_ref: &FrameRef, frame: &Frame) -> Result<Vec<f32>>;
}

const GRID: usize = 4;
const HIST_BINS: usize = 8;
/// Bias, grid luminance, grid gradient energy and a luminance histogram.
pub const DESCRIPTOR_LEN: usize = 1 + 2 * GRID * GRID + HIST_BINS;

fn descriptor(plane: &GrayPlane) -> [f64; DESCRIPTOR_LEN] {
    let mut d = [0f64; DESCRIPTOR_LEN];
    d[0] = 1.0;
    let (w, h) = (plane.width, plane.height);
    let mut cell_n = [0usize; GRID * GRID];
    for y in 0..h {
        for x in 0..w {
            let v = f64::from(plane.at(x, y));
            let c = (y * GRID / h) * GRID + x * GRID / w;
            cell_n[c] += 1;
            d[1 + c] += v;
            let gx = if x + 1 < w { f64::from(plane.at(x + 1, y)) - v } else { 0.0 };
            let gy = if y + 1 < h { f64::from(plane.at(x, y + 1)) - v } else { 0.0 };
            d[1 + GRID * GRID + c] += gx.abs() + gy.abs();
            let bin = ((v / 256.0 * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            d[1 + 2 * GRID * GRID + bin] += 1.0;
        }
    }
    for c in 0..GRID * GRID {
        let n = cell_n[c].max(1) as f64;
        d[1 + c] = 2.0 * (d[1 + c] / n / 255.0 - 0.5);
        d[1 + GRID * GRID + c] /= n * 32.0;
    }
    let total = (w * h).max(1) as f64;
    for b in 0..HIST_BINS {
        d[1 + 2 * GRID * GRID + b] /= total;
    }
    d
}

/// Deterministic stand-in for a pretrained encoder: a fixed random projection,
/// seeded by the encoder id, of a coarse luminance descriptor of the frame.
/// The output is a pure function of the frame bytes and similar frames map to
/// nearby vectors.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    id: String,
    dim: usize,
    projection: Vec<f64>,
}

impl HashEncoder {
    pub fn new(encoder_id: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("dim", "encoder dimension must be positive"));
        }
        let id = encoder_id.into();
        let mut rng = SeededRng::new(fnv1a64(id.as_bytes()));
        let projection = (0..dim * DESCRIPTOR_LEN).map(|_| 2.0 * rng.unit_f64() - 1.0).collect();
        Ok(Self { id, dim, projection })
    }

    /// Output width conventionally associated with an encoder name.
    pub fn default_dim(encoder_id: &str) -> usize {
        match encoder_id {
            "ViT-B/32" => 512,
            "ViT-L/14" => 768,
            _ => 256,
        }
    }
}

impl FrameEncoder for HashEncoder {
    fn encoder_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, _frame_ref: &FrameRef, frame: &Frame) -> Result<Vec<f32>> {
        let d = descriptor(&frame.luma());
        Ok(self
            .projection
            .chunks_exact(DESCRIPTOR_LEN)
            .map(|row| row.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() as f32)
            .collect())
    }
}

/// Vectors loaded from an embedding file, looked up by window key and slot.
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder {
    id: String,
    dim: usize,
    rows: HashMap<(WindowKey, u32), Vec<f32>>,
}

impl PrecomputedEncoder {
    pub fn load(path: &Path) -> Result<Self> {
        let (id, dim, rows) = read_embeddings(path)?;
        Ok(Self::from_rows(id, dim, rows))
    }

    pub fn from_rows(encoder_id: impl Into<String>, dim: usize, rows: Vec<(EmbeddingRow, Vec<f32>)>) -> Self {
        Self { id: encoder_id.into(), dim, rows: rows.into_iter().map(|(r, v)| ((r.key, r.frame_slot), v)).collect() }
    }
}

impl FrameEncoder for PrecomputedEncoder {
    fn encoder_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, frame_ref: &FrameRef, _frame: &Frame) -> Result<Vec<f32>> {
        self.rows.get(&(frame_ref.key.clone(), frame_ref.frame_slot)).cloned().ok_or_else(|| {
            Error::Missing(format!(
                "no precomputed {} embedding for {} slot {}",
                self.id, frame_ref.key, frame_ref.frame_slot
            ))
        })
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A long-running external encoder process. Each request writes a `u64`
/// little-endian length followed by the frame as binary PGM/PPM to stdin;
/// the process answers with one line of whitespace-separated floats.
/// Requests are serialized through a mutex.
pub struct CommandEncoder {
    id: String,
    dim: usize,
    worker: Mutex<Worker>,
}

impl CommandEncoder {
    pub fn spawn(encoder_id: impl Into<String>, dim: usize, program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { id: encoder_id.into(), dim, worker: Mutex::new(Worker { child, stdin, stdout }) })
    }
}

impl FrameEncoder for CommandEncoder {
    fn encoder_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, _frame_ref: &FrameRef, frame: &Frame) -> Result<Vec<f32>> {
        let payload = frame.to_pnm();
        let mut w = self.worker.lock().map_err(|_| Error::Decoder("encoder worker poisoned".into()))?;
        let failed = |e: std::io::Error| Error::Decoder(format!("encoder {}: {e}", self.id));
        w.stdin.write_all(&(payload.len() as u64).to_le_bytes()).map_err(failed)?;
        w.stdin.write_all(&payload).map_err(failed)?;
        w.stdin.flush().map_err(failed)?;
        let mut line = String::new();
        if w.stdout.read_line(&mut line).map_err(failed)? == 0 {
            return Err(Error::Decoder(format!("encoder {} closed its output", self.id)));
        }
        let v: Vec<f32> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Decoder(format!("encoder {} returned non-numeric output", self.id)))?;
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: v.len() });
        }
        Ok(v)
    }
}

impl Drop for CommandEncoder {
    fn drop(&mut self) {
        if let Ok(w) = self.worker.get_mut() {
            let _ = w.child.kill();
            let _ = w.child.wait();
        }
    }
}

/// Where an encoder's vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSource {
    TestHash {
        #[serde(default)]
        dim: Option<usize>,
    },
    Precomputed {
        path: PathBuf,
    },
    External {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        dim: usize,
    },
}

pub fn build_encoder(encoder_id: &str, source: &EncoderSource) -> Result<Box<dyn FrameEncoder>> {
    Ok(match source {
        EncoderSource::TestHash { dim } => {
            Box::new(HashEncoder::new(encoder_id, dim.unwrap_or_else(|| HashEncoder::default_dim(encoder_id)))?)
        }
        EncoderSource::Precomputed { path } => {
            let enc = PrecomputedEncoder::load(path)?;
            if enc.encoder_id() != encoder_id {
                return Err(Error::invalid(format!(
                    "{} holds {} embeddings, expected {encoder_id}",
                    path.display(),
                    enc.encoder_id()
                )));
            }
            Box::new(enc)
        }
        EncoderSource::External { program, args, dim } => {
            Box::new(CommandEncoder::spawn(encoder_id, *dim, program, args)?)
        }
    })
}
