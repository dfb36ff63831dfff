//! Declarative window representations and their per-window extraction.

use serde::{Deserialize, Serialize};

use super::{l2_normalize, motion_summary, pool, temporal_deltas, FlowParams, FrameEncoder, MotionSummary, Pooling};
use crate::corpus::{sample_frames, GrayPlane, SampledFrame, VideoSource, Window};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationKind {
    Clip,
    ClipDelta,
    Flow,
    Fused,
}

impl std::str::FromStr for RepresentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clip" => Ok(Self::Clip),
            "clip_delta" => Ok(Self::ClipDelta),
            "flow" => Ok(Self::Flow),
            "fused" => Ok(Self::Fused),
            _ => Err(Error::arg("kind", format!("expected clip, clip_delta, flow or fused, got {s:?}"))),
        }
    }
}

/// How one window becomes a feature vector.
///
/// Fused vectors are the raw concatenation of the appearance and motion parts;
/// block standardization is fitted on training rows and stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RepresentationSpec {
    Clip { encoder_id: String, k: usize, pooling: Pooling },
    ClipDelta { encoder_id: String, k: usize, pooling: Pooling },
    Flow { k: usize, flow: FlowParams },
    Fused { appearance: Box<RepresentationSpec>, motion: Box<RepresentationSpec> },
}

impl RepresentationSpec {
    pub fn kind(&self) -> RepresentationKind {
        match self {
            Self::Clip { .. } => RepresentationKind::Clip,
            Self::ClipDelta { .. } => RepresentationKind::ClipDelta,
            Self::Flow { .. } => RepresentationKind::Flow,
            Self::Fused { .. } => RepresentationKind::Fused,
        }
    }

    /// Encoder needed to extract this representation, if any.
    pub fn encoder_id(&self) -> Option<&str> {
        match self {
            Self::Clip { encoder_id, .. } | Self::ClipDelta { encoder_id, .. } => Some(encoder_id),
            Self::Flow { .. } => None,
            Self::Fused { appearance, motion } => appearance.encoder_id().or_else(|| motion.encoder_id()),
        }
    }

    /// Vector width for an encoder of width `encoder_dim`.
    pub fn dim(&self, encoder_dim: usize) -> usize {
        match self {
            Self::Clip { .. } => encoder_dim,
            Self::ClipDelta { .. } => encoder_dim + 3,
            Self::Flow { .. } => MotionSummary::default().to_vec().len(),
            Self::Fused { appearance, motion } => appearance.dim(encoder_dim) + motion.dim(encoder_dim),
        }
    }

    pub fn layout(&self) -> String {
        match self {
            Self::Clip { encoder_id, k, pooling } => format!("clip[{encoder_id}]:{pooling}:K{k}"),
            Self::ClipDelta { encoder_id, k, pooling } => {
                format!("clip_delta[{encoder_id}]:{pooling}:K{k}+[mean_cos_dist,max_cos_dist,mean_dim_std]")
            }
            Self::Flow { k, flow } => format!("flow:K{k}:{}", MotionSummary::layout(flow)),
            Self::Fused { appearance, motion } => format!("fused[{}|{}]", appearance.layout(), motion.layout()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Clip { k, .. } | Self::ClipDelta { k, .. } if *k == 0 => Err(Error::arg("K", "must be positive")),
            Self::Flow { k, flow } => {
                if *k == 0 {
                    return Err(Error::arg("K", "must be positive"));
                }
                flow.validate()
            }
            Self::Fused { appearance, motion } => {
                if !matches!(appearance.kind(), RepresentationKind::Clip | RepresentationKind::ClipDelta)
                    || motion.kind() != RepresentationKind::Flow
                {
                    return Err(Error::invalid("fusion combines an appearance block with a flow block"));
                }
                appearance.validate()?;
                motion.validate()
            }
            _ => Ok(()),
        }
    }
}

fn appearance(frames: &[SampledFrame], encoder: &dyn FrameEncoder, pooling: Pooling, deltas: bool) -> Result<Vec<f32>> {
    let embeddings = frames
        .iter()
        .filter_map(|s| s.decoded().map(|f| (s, f)))
        .map(|(s, f)| l2_normalize(&encoder.encode(&s.frame_ref, f)?))
        .collect::<Result<Vec<_>>>()?;
    if embeddings.is_empty() {
        // nothing decoded: an all-zero descriptor keeps the window scorable
        let width = encoder.dim() + if deltas { 3 } else { 0 };
        return Ok(vec![0.0; width]);
    }
    let mut v = pool(&embeddings, pooling)?.vector;
    if deltas {
        v.extend(temporal_deltas(&embeddings)?.to_vec());
    }
    Ok(v)
}

/// Extract the raw representation of one window from its video source.
pub fn extract_window(
    spec: &RepresentationSpec,
    window: &Window,
    source: &dyn VideoSource,
    encoder: Option<&dyn FrameEncoder>,
) -> Result<Vec<f32>> {
    let need_encoder = || {
        encoder.ok_or_else(|| Error::Missing(format!("encoder {} is not configured", spec.encoder_id().unwrap_or("?"))))
    };
    match spec {
        RepresentationSpec::Clip { k, pooling, .. } => {
            appearance(&sample_frames(window, *k, source)?, need_encoder()?, *pooling, false)
        }
        RepresentationSpec::ClipDelta { k, pooling, .. } => {
            appearance(&sample_frames(window, *k, source)?, need_encoder()?, *pooling, true)
        }
        RepresentationSpec::Flow { k, flow } => {
            let planes: Vec<GrayPlane> =
                sample_frames(window, *k, source)?.iter().filter_map(|s| s.decoded().map(|f| f.luma())).collect();
            Ok(motion_summary(&planes, flow)?.to_vec())
        }
        RepresentationSpec::Fused { appearance, motion } => {
            let mut v = extract_window(appearance, window, source, encoder)?;
            v.extend(extract_window(motion, window, source, encoder)?);
            Ok(v)
        }
    }
}
