//! The 12-dimensional per-window motion and frame-quality summary.

use serde::{Deserialize, Serialize};

use super::flow::{flow_between, ExpansionPyramid, FlowField, FlowParams};
use crate::corpus::GrayPlane;
use crate::error::Result;
use crate::stats::{mean, pop_std};

/// Field order of [`MotionSummary::to_vec`].
pub const MOTION_FIELDS: [&str; 12] = [
    "mag_mean_mean",
    "mag_mean_std",
    "mag_std_mean",
    "mag_std_std",
    "dir_coherence_mean",
    "dir_coherence_std",
    "global_flow_mag_mean",
    "global_flow_mag_std",
    "luma_mean",
    "luma_std",
    "blur_proxy_mean",
    "n_frames",
];

/// Pixels moving less than this are ignored when measuring direction coherence.
const COHERENCE_MIN_MAG: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionSummary {
    pub mag_mean_mean: f64,
    pub mag_mean_std: f64,
    pub mag_std_mean: f64,
    pub mag_std_std: f64,
    pub dir_coherence_mean: f64,
    pub dir_coherence_std: f64,
    pub global_flow_mag_mean: f64,
    pub global_flow_mag_std: f64,
    pub luma_mean: f64,
    pub luma_std: f64,
    pub blur_proxy_mean: f64,
    pub n_frames: f64,
}

impl MotionSummary {
    pub fn to_vec(&self) -> Vec<f32> {
        [
            self.mag_mean_mean,
            self.mag_mean_std,
            self.mag_std_mean,
            self.mag_std_std,
            self.dir_coherence_mean,
            self.dir_coherence_std,
            self.global_flow_mag_mean,
            self.global_flow_mag_std,
            self.luma_mean,
            self.luma_std,
            self.blur_proxy_mean,
            self.n_frames,
        ]
        .map(|v| v as f32)
        .to_vec()
    }

    pub fn layout(params: &FlowParams) -> String {
        format!("motion12[{}]:{}", MOTION_FIELDS.join(","), params.describe())
    }
}

struct PairStats {
    mag_mean: f64,
    mag_std: f64,
    coherence: f64,
    global: f64,
}

fn pair_stats(flow: &FlowField) -> PairStats {
    let mags: Vec<f64> = flow.magnitudes().collect();
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for ((&u, &v), &m) in flow.u.iter().zip(&flow.v).zip(&mags) {
        if m > COHERENCE_MIN_MAG {
            sx += f64::from(u) / m;
            sy += f64::from(v) / m;
            n += 1;
        }
    }
    let coherence = if n == 0 { 0.0 } else { (sx / n as f64).hypot(sy / n as f64).min(1.0) };
    let (gu, gv) = flow.mean_flow();
    PairStats { mag_mean: mean(&mags), mag_std: pop_std(&mags), coherence, global: gu.hypot(gv) }
}

/// Summarize precomputed flows between consecutive decoded frames together
/// with the decoded frames themselves (at flow resolution).
pub fn summarize(flows: &[FlowField], frames: &[GrayPlane]) -> MotionSummary {
    let mut s = MotionSummary { n_frames: frames.len() as f64, ..Default::default() };
    if !frames.is_empty() {
        let lumas: Vec<f64> = frames.iter().map(GrayPlane::mean).collect();
        s.luma_mean = mean(&lumas);
        s.luma_std = pop_std(&lumas);
        s.blur_proxy_mean = mean(&frames.iter().map(GrayPlane::laplacian_variance).collect::<Vec<_>>());
    }
    if frames.len() < 2 || flows.is_empty() {
        return s;
    }
    let pairs: Vec<PairStats> = flows.iter().map(pair_stats).collect();
    let col = |f: fn(&PairStats) -> f64| pairs.iter().map(f).collect::<Vec<_>>();
    let (mm, ms, dc, gf) = (col(|p| p.mag_mean), col(|p| p.mag_std), col(|p| p.coherence), col(|p| p.global));
    s.mag_mean_mean = mean(&mm);
    s.mag_mean_std = pop_std(&mm);
    s.mag_std_mean = mean(&ms);
    s.mag_std_std = pop_std(&ms);
    s.dir_coherence_mean = mean(&dc);
    s.dir_coherence_std = pop_std(&dc);
    s.global_flow_mag_mean = mean(&gf);
    s.global_flow_mag_std = pop_std(&gf);
    s
}

/// Flow between each consecutive pair of the decoded frames of a window,
/// followed by [`summarize`]. Frames are resized to the flow resolution.
pub fn motion_summary(frames: &[GrayPlane], params: &FlowParams) -> Result<MotionSummary> {
    params.validate()?;
    let pyramids: Vec<ExpansionPyramid> = frames.iter().map(|f| ExpansionPyramid::build(f, params)).collect();
    let flows: Vec<FlowField> = pyramids.windows(2).map(|p| flow_between(&p[0], &p[1], params)).collect();
    let resized: Vec<GrayPlane> = frames.iter().map(|f| f.resize(params.resize_w, params.resize_h)).collect();
    Ok(summarize(&flows, &resized))
}
