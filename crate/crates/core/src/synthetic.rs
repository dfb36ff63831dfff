//! Deterministic synthetic corpora: frame-directory videos whose windows have
//! known operational contexts (brightness and texture regimes) and motion
//! regimes (static or translating texture), with matching annotations.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{ActivityLabel, ContextLabel, WindowAnnotation};
use crate::corpus::{Frame, Manifest, WindowKey};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_videos: usize,
    pub windows_per_video: usize,
    /// Extra seconds after the last complete window.
    pub remainder_s: f64,
    pub window_s: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    /// Texture speed of translating windows, in pixels per second at 224 px width.
    pub speed_px_s: f64,
    /// Half-width of the uniform per-pixel noise, in gray levels.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_videos: 12,
            windows_per_video: 8,
            remainder_s: 3.43,
            window_s: 10.0,
            fps: 1.0,
            width: 224,
            height: 126,
            speed_px_s: 1.0,
            noise: 3.0,
            seed: 7,
        }
    }
}

/// Contexts the generator can render; the low-evidence label is never
/// produced.
pub const SYNTHETIC_CONTEXTS: [ContextLabel; 3] =
    [ContextLabel::PatrolVehicle, ContextLabel::Outdoor, ContextLabel::Indoor];
pub const SYNTHETIC_ACTIVITIES: [ActivityLabel; 2] = [ActivityLabel::Routine, ActivityLabel::FootPursuit];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWindow {
    pub context: ContextLabel,
    pub activity: ActivityLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub dir: PathBuf,
    pub duration_s: f64,
    pub windows: Vec<SyntheticWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub root: PathBuf,
    pub videos: Vec<SyntheticVideo>,
}

impl SyntheticCorpus {
    /// Ground-truth annotations for one pass, transition flags unset.
    pub fn annotations(&self, pass_id: u32) -> Vec<WindowAnnotation> {
        self.videos
            .iter()
            .flat_map(|v| {
                v.windows.iter().enumerate().map(move |(i, w)| WindowAnnotation {
                    key: WindowKey::new(&v.video_id, i as u32).expect("index in range"),
                    context: w.context,
                    activity: w.activity,
                    context_transition: false,
                    activity_transition: false,
                    pass_id,
                    annotator_id: "synthetic".into(),
                    created_at: "2024-01-01T00:00:00Z".into(),
                    revision: 1,
                })
            })
            .collect()
    }
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
}

/// Brightness, per-wave amplitude and period range (fraction of width).
fn regime(context: ContextLabel) -> (f64, f64, (f64, f64)) {
    match context {
        ContextLabel::PatrolVehicle => (55.0, 5.0, (0.15, 0.30)),
        ContextLabel::Indoor => (110.0, 5.0, (0.06, 0.12)),
        _ => (175.0, 5.0, (0.03, 0.06)),
    }
}

struct WindowScene {
    base: f64,
    amp: f64,
    waves: Vec<Wave>,
    velocity: (f64, f64),
}

impl WindowScene {
    fn new(w: &SyntheticWindow, width: u32, speed: f64, rng: &mut SeededRng) -> Self {
        let (base, amp, (lo, hi)) = regime(w.context);
        let waves = (0..8)
            .map(|_| {
                let theta = rng.unit_f64() * PI;
                let period = (lo + (hi - lo) * rng.unit_f64()) * f64::from(width);
                let k = 2.0 * PI / period;
                Wave { kx: k * theta.cos(), ky: k * theta.sin(), phase: 2.0 * PI * rng.unit_f64() }
            })
            .collect();
        let velocity = if w.activity == ActivityLabel::FootPursuit {
            let dir = 2.0 * PI * rng.unit_f64();
            (speed * dir.cos(), speed * dir.sin())
        } else {
            (0.0, 0.0)
        };
        Self { base, amp, waves, velocity }
    }

    fn render(&self, width: u32, height: u32, dt: f64, noise: f64, rng: &mut SeededRng) -> Frame {
        let (ox, oy) = (self.velocity.0 * dt, self.velocity.1 * dt);
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (f64::from(x) - ox, f64::from(y) - oy);
                let s: f64 = self.waves.iter().map(|w| (w.kx * px + w.ky * py + w.phase).sin()).sum();
                let n = noise * (2.0 * rng.unit_f64() - 1.0);
                data.push((self.base + self.amp * s + n).round().clamp(0.0, 255.0) as u8);
            }
        }
        Frame::gray(width, height, data).expect("sized buffer")
    }
}

/// Per-video window labels: the context changes at most once, midway, and
/// the motion regime alternates in blocks of two windows.
fn plan_labels(n: usize, rng: &mut SeededRng) -> Vec<SyntheticWindow> {
    let first = SYNTHETIC_CONTEXTS[rng.below(3) as usize];
    let second = SYNTHETIC_CONTEXTS[rng.below(3) as usize];
    let start = rng.below(2) as usize;
    (0..n)
        .map(|i| SyntheticWindow {
            context: if i < n / 2 { first } else { second },
            activity: SYNTHETIC_ACTIVITIES[(start + i / 2) % 2],
        })
        .collect()
}

fn write_video(root: &Path, spec: &SyntheticSpec, index: usize) -> Result<SyntheticVideo> {
    let video_id = format!("syn{index:03}");
    let dir = root.join(&video_id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rng = SeededRng::new(spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index as u64 + 1)));
    let windows = plan_labels(spec.windows_per_video, &mut rng);
    let speed = spec.speed_px_s * f64::from(spec.width) / 224.0;
    let scenes: Vec<WindowScene> = windows.iter().map(|w| WindowScene::new(w, spec.width, speed, &mut rng)).collect();
    let duration_s = spec.windows_per_video as f64 * spec.window_s + spec.remainder_s;
    let manifest = Manifest {
        video_id: video_id.clone(),
        fps: spec.fps,
        duration_s,
        width: spec.width,
        height: spec.height,
        frame_pattern: "frame_%06d.pgm".into(),
        frame_count: None,
    };
    for f in 0..manifest.frame_total() {
        let t = f as f64 / spec.fps;
        let w = ((t / spec.window_s + 1e-9).floor() as usize).min(scenes.len().saturating_sub(1));
        let frame = match scenes.get(w) {
            Some(scene) => scene.render(spec.width, spec.height, t - w as f64 * spec.window_s, spec.noise, &mut rng),
            None => Frame::gray(spec.width, spec.height, vec![0; (spec.width * spec.height) as usize])?,
        };
        let path = dir.join(manifest.frame_file_name(f)?);
        std::fs::write(&path, frame.to_pnm()).map_err(|e| Error::io(&path, e))?;
    }
    let mpath = dir.join("manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(SyntheticVideo { video_id, dir, duration_s, windows })
}

/// Write `spec.n_videos` frame directories under `root`.
pub fn generate_corpus(root: &Path, spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.n_videos == 0 || !(spec.fps > 0.0) || spec.width < 8 || spec.height < 8 || !(spec.window_s > 0.0) {
        return Err(Error::invalid("synthetic corpus needs videos, a positive frame rate and frames of at least 8×8"));
    }
    let videos = (0..spec.n_videos).into_par_iter().map(|i| write_video(root, spec, i)).collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCorpus { root: root.to_path_buf(), videos })
}
