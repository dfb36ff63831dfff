//! Window representations: pooled encoder embeddings, temporal-stability
//! deltas, dense optical flow motion summaries and block-standardized fusion.

mod encoder;
mod flow;
mod io;
mod motion;
mod representation;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, pop_std};

pub use encoder::{
    build_encoder, CommandEncoder, EncoderSource, FrameEncoder, HashEncoder, PrecomputedEncoder, DESCRIPTOR_LEN,
};
pub use flow::{farneback_flow, FlowField, FlowParams, FLOW_PRESETS};
pub use io::{read_embeddings, read_features, write_embeddings, write_features, EmbeddingRow, FeatureMatrix};
pub use motion::{motion_summary, MotionSummary, MOTION_FIELDS};
pub use representation::{extract_window, RepresentationKind, RepresentationSpec};

const NORM_EPS: f64 = 1e-12;

/// Scale `v` to unit Euclidean length.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm <= NORM_EPS {
        return Err(Error::invalid("cannot normalize a near-zero vector"));
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Max,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
        })
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            _ => Err(Error::arg("pool", format!("expected mean or max, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledDescriptor {
    pub vector: Vec<f32>,
    pub pooling: Pooling,
    pub k_used: usize,
}

fn check_dims(rows: &[Vec<f32>]) -> Result<usize> {
    let d = rows.first().ok_or_else(|| Error::invalid("no embeddings to aggregate"))?.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: bad.len() });
    }
    Ok(d)
}

/// Aggregate normalized frame embeddings; the result is not re-normalized.
pub fn pool(embeddings: &[Vec<f32>], pooling: Pooling) -> Result<PooledDescriptor> {
    let d = check_dims(embeddings)?;
    let vector = (0..d)
        .map(|j| match pooling {
            Pooling::Mean => (embeddings.iter().map(|e| f64::from(e[j])).sum::<f64>() / embeddings.len() as f64) as f32,
            Pooling::Max => embeddings.iter().map(|e| e[j]).fold(f32::NEG_INFINITY, f32::max),
        })
        .collect();
    Ok(PooledDescriptor { vector, pooling, k_used: embeddings.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TemporalDeltas {
    pub mean_cos_dist: f64,
    pub max_cos_dist: f64,
    pub mean_dim_std: f64,
}

impl TemporalDeltas {
    pub fn to_vec(self) -> [f32; 3] {
        [self.mean_cos_dist as f32, self.max_cos_dist as f32, self.mean_dim_std as f32]
    }
}

/// Cosine distances between consecutive embeddings and the mean per-dimension
/// spread across frames. All zero with fewer than two embeddings.
pub fn temporal_deltas(embeddings: &[Vec<f32>]) -> Result<TemporalDeltas> {
    let d = check_dims(embeddings)?;
    if embeddings.len() < 2 {
        return Ok(TemporalDeltas::default());
    }
    let dists: Vec<f64> = embeddings
        .windows(2)
        .map(|p| {
            let dot: f64 = p[0].iter().zip(&p[1]).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            (1.0 - dot).clamp(0.0, 2.0)
        })
        .collect();
    let dim_std = (0..d).map(|j| pop_std(&embeddings.iter().map(|e| f64::from(e[j])).collect::<Vec<_>>())).sum::<f64>()
        / d as f64;
    Ok(TemporalDeltas {
        mean_cos_dist: mean(&dists),
        max_cos_dist: dists.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_dim_std: dim_std,
    })
}

/// Per-dimension standardization parameters of one feature block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub block: String,
    pub mean: Vec<f64>,
    /// Population deviation; constant dimensions are recorded as 1.
    pub std: Vec<f64>,
}

impl BlockStats {
    pub fn fit(block: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::invalid("block standardization needs at least two rows"));
        }
        let d = check_dims(rows)?;
        let mut mu = Vec::with_capacity(d);
        let mut sigma = Vec::with_capacity(d);
        for j in 0..d {
            let col: Vec<f64> = rows.iter().map(|r| f64::from(r[j])).collect();
            let s = pop_std(&col);
            mu.push(mean(&col));
            sigma.push(if s > 0.0 { s } else { 1.0 });
        }
        Ok(Self { block: block.into(), mean: mu, std: sigma })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_f64(&self, row: &[f32]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: row.len() });
        }
        Ok(row.iter().zip(self.mean.iter().zip(&self.std)).map(|(&x, (&m, &s))| (f64::from(x) - m) / s).collect())
    }

    pub fn apply(&self, row: &[f32]) -> Result<Vec<f32>> {
        Ok(self.apply_f64(row)?.into_iter().map(|v| v as f32).collect())
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean.iter().zip(&self.std)).map(|(&v, (&m, &s))| v * s + m).collect()
    }
}

/// Standardize every column of `rows` by its own population statistics.
pub fn zscore_block(rows: &[Vec<f32>], block: &str) -> Result<(Vec<Vec<f32>>, BlockStats)> {
    let stats = BlockStats::fit(block, rows)?;
    let z = rows.iter().map(|r| stats.apply(r)).collect::<Result<_>>()?;
    Ok((z, stats))
}

/// Standardization of the appearance and motion blocks of a fused vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionStats {
    pub clip: BlockStats,
    pub flow: BlockStats,
}

impl FusionStats {
    pub fn fit(clip_rows: &[Vec<f32>], flow_rows: &[Vec<f32>]) -> Result<Self> {
        Ok(Self { clip: BlockStats::fit("clip", clip_rows)?, flow: BlockStats::fit("flow", flow_rows)? })
    }

    /// `[z(clip) ; z(flow)]` with the stored statistics.
    pub fn fuse_row(&self, clip: &[f32], flow: &[f32]) -> Result<Vec<f32>> {
        let mut out = self.clip.apply(clip)?;
        out.extend(self.flow.apply(flow)?);
        Ok(out)
    }
}

/// Row-wise concatenation of already standardized blocks, appearance first.
pub fn fuse(clip_block: &[Vec<f32>], flow_block: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    if clip_block.len() != flow_block.len() {
        return Err(Error::DimensionMismatch { expected: clip_block.len(), actual: flow_block.len() });
    }
    if clip_block.is_empty() || flow_block.iter().any(Vec::is_empty) || clip_block.iter().any(Vec::is_empty) {
        return Err(Error::invalid("fusion needs non-empty blocks"));
    }
    Ok(clip_block.iter().zip(flow_block).map(|(c, f)| c.iter().chain(f).copied().collect()).collect())
}
