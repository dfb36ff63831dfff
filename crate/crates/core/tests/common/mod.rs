#![allow(dead_code)]

use egotime_core::annotation::{
    ActivityLabel, ContextLabel, InventoryVideo, LabelStore, WindowAnnotation, WindowInventory,
};
use egotime_core::corpus::{make_windows, open_source, probe_video, GrayPlane, WindowKey};
use egotime_core::synthetic::SyntheticCorpus;
use egotime_core::timeline::LabeledVideo;

pub const AUDIT_VIDEOS: usize = 4;
pub const AUDIT_WINDOWS_PER_VIDEO: u32 = 107;

/// (context, routine, high activity, foot pursuit, unknown) window counts
/// reconstructed from the published conditional-rate table.
pub const JOINT_COUNTS: [(ContextLabel, [usize; 4]); 4] = [
    (ContextLabel::Indoor, [59, 6, 3, 0]),
    (ContextLabel::Outdoor, [169, 17, 21, 0]),
    (ContextLabel::PatrolVehicle, [68, 3, 0, 0]),
    (ContextLabel::LowVis, [50, 27, 0, 5]),
];

const ACTIVITY_COLUMNS: [ActivityLabel; 4] =
    [ActivityLabel::Routine, ActivityLabel::HighActivity, ActivityLabel::FootPursuit, ActivityLabel::Unknown];

pub fn annotation(video: &str, index: u32, context: ContextLabel, activity: ActivityLabel) -> WindowAnnotation {
    WindowAnnotation {
        key: WindowKey::new(video, index).unwrap(),
        context,
        activity,
        context_transition: false,
        activity_transition: false,
        pass_id: 1,
        annotator_id: "a1".into(),
        created_at: "2024-01-01T00:00:00Z".into(),
        revision: 1,
    }
}

/// 428 labeled windows over four videos, with 36 activity-only, 17
/// context-only and 8 double transition flags.
pub fn audit_fixture() -> (LabelStore, WindowInventory) {
    let mut pairs = Vec::new();
    for (context, counts) in JOINT_COUNTS {
        for (activity, n) in ACTIVITY_COLUMNS.iter().zip(counts) {
            pairs.extend(std::iter::repeat_n((context, *activity), n));
        }
    }
    assert_eq!(pairs.len(), AUDIT_VIDEOS * AUDIT_WINDOWS_PER_VIDEO as usize);
    let mut store = LabelStore::new();
    for (i, (c, a)) in pairs.into_iter().enumerate() {
        let video = format!("bwc{}", i / AUDIT_WINDOWS_PER_VIDEO as usize);
        let mut ann = annotation(&video, i as u32 % AUDIT_WINDOWS_PER_VIDEO, c, a);
        match i {
            0..=35 => ann.activity_transition = true,
            36..=52 => ann.context_transition = true,
            53..=60 => {
                ann.activity_transition = true;
                ann.context_transition = true;
            }
            _ => {}
        }
        store.insert(ann);
    }
    let inventory = WindowInventory {
        window_length_s: 10.0,
        videos: (0..AUDIT_VIDEOS)
            .map(|v| InventoryVideo {
                video_id: format!("bwc{v}"),
                duration_s: f64::from(AUDIT_WINDOWS_PER_VIDEO) * 10.0 + 4.0,
                n_windows: AUDIT_WINDOWS_PER_VIDEO,
            })
            .collect(),
    };
    (store, inventory)
}

pub fn load_videos(corpus: &SyntheticCorpus) -> Vec<LabeledVideo> {
    corpus
        .videos
        .iter()
        .map(|v| {
            let uri = v.dir.to_str().unwrap();
            let record = probe_video(uri);
            LabeledVideo { windows: make_windows(&record, 10.0).unwrap(), source: open_source(uri).unwrap() }
        })
        .collect()
}

/// Smooth random texture: a sum of oriented gratings sampled at
/// `(x − dx, y − dy)`, in gray levels around 128.
pub fn texture(w: usize, h: usize, dx: f64, dy: f64, seed: u64) -> GrayPlane {
    let mut state = seed.wrapping_add(0x2545_f491_4f6c_dd1d);
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let waves: Vec<(f64, f64, f64)> = (0..10)
        .map(|_| {
            let theta = next() * std::f64::consts::PI;
            let k = std::f64::consts::TAU / (12.0 + 24.0 * next());
            (k * theta.cos(), k * theta.sin(), std::f64::consts::TAU * next())
        })
        .collect();
    let data = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (px, py) = (x as f64 - dx, y as f64 - dy);
            (128.0 + 9.0 * waves.iter().map(|(a, b, p)| (a * px + b * py + p).sin()).sum::<f64>()) as f32
        })
        .collect();
    GrayPlane::new(w, h, data)
}
