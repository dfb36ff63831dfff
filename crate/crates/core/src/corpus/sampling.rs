//! Frame sampling inside windows and per-video labeling sample plans.

use serde::{Deserialize, Serialize};

use super::{Frame, VideoSource, Window, WindowKey};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub key: WindowKey,
    pub frame_slot: u32,
    /// Wall-clock sampling target `start + slot · L / K`.
    pub timestamp_s: f64,
    pub decode_ok: bool,
    /// Source frame chosen for the slot, when one decoded.
    pub frame_index: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SampledFrame {
    pub frame_ref: FrameRef,
    pub frame: Option<Frame>,
}

impl SampledFrame {
    pub fn decoded(&self) -> Option<&Frame> {
        self.frame.as_ref()
    }
}

/// Sample `k` frame slots at `t_j = start + j·L/K` (end excluded).
///
/// Slot `j` takes the first decodable frame presented at or after `t_j` and
/// before the next slot's target (or the window end), so slots never share a
/// source frame. Failures are recorded per slot with `decode_ok = false`.
pub fn sample_frames(window: &Window, k: usize, source: &dyn VideoSource) -> Result<Vec<SampledFrame>> {
    if k == 0 {
        return Err(Error::arg("K", "at least one frame per window"));
    }
    let fps = source.record().fps;
    let total = source.frame_count();
    let length = window.length();
    let target = |j: usize| window.start_time_s + j as f64 * length / k as f64;

    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let t = target(j);
        let limit = if j + 1 < k { target(j + 1) } else { window.end_time_s };
        let mut chosen = None;
        if fps > 0.0 {
            let mut idx = (t * fps - 1e-9).ceil().max(0.0) as u64;
            while idx < total && (idx as f64) / fps < limit - 1e-9 {
                if let Ok(frame) = source.read_frame(idx) {
                    chosen = Some((idx, frame));
                    break;
                }
                idx += 1;
            }
        }
        let frame_ref = FrameRef {
            key: window.key.clone(),
            frame_slot: j as u32,
            timestamp_s: t,
            decode_ok: chosen.is_some(),
            frame_index: chosen.as_ref().map(|(i, _)| *i),
        };
        out.push(SampledFrame { frame_ref, frame: chosen.map(|(_, f)| f) });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub video_id: String,
    pub seed: u64,
    pub coverage_indices: Vec<u32>,
    /// Random picks from the non-coverage remainder, ascending.
    pub random_indices: Vec<u32>,
    pub quota: usize,
}

impl SamplingPlan {
    /// Every selected window index in ascending (temporal) order.
    pub fn indices(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.coverage_indices.iter().chain(&self.random_indices).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn len(&self) -> usize {
        self.coverage_indices.len() + self.random_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Evenly spaced indices `round_half_up(j·(N−1)/(k−1))`, deduplicated.
pub fn coverage_indices(n: usize, k_cov: usize) -> Vec<u32> {
    if n == 0 || k_cov == 0 {
        return Vec::new();
    }
    if k_cov == 1 || n == 1 {
        return vec![0];
    }
    let (num, den) = ((n - 1) as u64, (k_cov - 1) as u64);
    let mut out: Vec<u32> = (0..k_cov as u64)
        // floor((2·j·num + den) / (2·den)) is exact round-half-up of j·num/den
        .map(|j| ((2 * j * num + den) / (2 * den)) as u32)
        .collect();
    out.dedup();
    out
}

/// Coverage picks followed by seeded random picks from the remainder, up to
/// `min(k_cov + k_rand, N)` windows. `windows` must be in start-time order.
pub fn build_sampling_plan(windows: &[Window], k_cov: usize, k_rand: usize, seed: u64) -> SamplingPlan {
    let n = windows.len();
    let quota = k_cov + k_rand;
    let coverage: Vec<u32> = coverage_indices(n, k_cov).into_iter().map(|i| windows[i as usize].index).collect();
    let remainder: Vec<u32> = windows.iter().map(|w| w.index).filter(|i| !coverage.contains(i)).collect();
    let want = quota.min(n).saturating_sub(coverage.len());
    let mut rng = SeededRng::new(seed);
    let mut random = rng.sample_without_replacement(&remainder, want.min(remainder.len()));
    random.sort_unstable();
    SamplingPlan {
        video_id: windows.first().map(|w| w.video_id.clone()).unwrap_or_default(),
        seed,
        coverage_indices: coverage,
        random_indices: random,
        quota,
    }
}
