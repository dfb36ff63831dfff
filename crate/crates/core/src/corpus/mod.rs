//! Video readiness, fixed-length windowing and labeling sample plans.

mod frame;
mod sampling;
mod source;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use frame::{Frame, GrayPlane, Pixels};
pub use sampling::{build_sampling_plan, coverage_indices, sample_frames, FrameRef, SampledFrame, SamplingPlan};
pub use source::{
    open_source, probe_video, DecoderCommand, ExternalDecoderSource, Manifest, ManifestSource, MemorySource,
    VideoSource,
};

/// Default window length in seconds.
pub const DEFAULT_WINDOW_S: f64 = 10.0;

/// Largest index representable by the five-digit key suffix.
pub const MAX_WINDOW_INDEX: u32 = 99_999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Readiness {
    Ready,
    Unreadable,
    NoDecodableFrame,
}

impl fmt::Display for Readiness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Readiness::Ready => "READY",
            Readiness::Unreadable => "UNREADABLE",
            Readiness::NoDecodableFrame => "NO_DECODABLE_FRAME",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub source_uri: String,
    pub duration_s: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub readiness: Readiness,
}

impl VideoRecord {
    pub fn is_ready(&self) -> bool {
        self.readiness == Readiness::Ready
    }

    pub(crate) fn unreadable(video_id: String, source_uri: String, readiness: Readiness) -> Self {
        Self { video_id, source_uri, duration_s: 0.0, fps: 0.0, width: 0, height: 0, readiness }
    }

    pub fn ensure_ready(&self) -> Result<()> {
        if self.is_ready() {
            Ok(())
        } else {
            Err(Error::NotReady { video_id: self.video_id.clone(), readiness: self.readiness.to_string() })
        }
    }
}

/// Canonical window address `videoId:00042`.
///
/// Ordering is by video id, then index, so lexicographic order of the
/// rendered key and temporal order agree within one video.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowKey {
    video_id: String,
    index: u32,
}

impl WindowKey {
    pub fn new(video_id: impl Into<String>, index: u32) -> Result<Self> {
        let video_id = video_id.into();
        if video_id.is_empty() {
            return Err(Error::invalid("empty video id in window key"));
        }
        if index > MAX_WINDOW_INDEX {
            return Err(Error::invalid(format!("window index {index} exceeds the five-digit key range")));
        }
        Ok(Self { video_id, index })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn index(&self) -> u32 {
        self.index
    }
}

impl fmt::Display for WindowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:05}", self.video_id, self.index)
    }
}

impl FromStr for WindowKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (video, idx) =
            s.rsplit_once(':').ok_or_else(|| Error::invalid(format!("window key `{s}` lacks `:index`")))?;
        if idx.len() != 5 || !idx.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::invalid(format!("window key `{s}` must end in a five-digit index")));
        }
        WindowKey::new(video, idx.parse::<u32>().expect("five ascii digits"))
    }
}

impl Serialize for WindowKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WindowKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub video_id: String,
    pub index: u32,
    pub start_time_s: f64,
    pub end_time_s: f64,
    pub key: WindowKey,
}

impl Window {
    pub fn length(&self) -> f64 {
        self.end_time_s - self.start_time_s
    }
}

/// Number of complete windows of length `window_s` in `duration_s`.
pub fn window_count(duration_s: f64, window_s: f64) -> u32 {
    // The epsilon absorbs representation error such as 30.0 / 0.1.
    let n = (duration_s / window_s + 1e-9).floor();
    if n <= 0.0 {
        0
    } else {
        n.min(f64::from(MAX_WINDOW_INDEX + 1)) as u32
    }
}

/// Partition a ready video into `⌊D/L⌋` contiguous windows; the trailing
/// remainder shorter than `L` is dropped.
pub fn make_windows(video: &VideoRecord, window_s: f64) -> Result<Vec<Window>> {
    video.ensure_ready()?;
    if !(window_s > 0.0) || !window_s.is_finite() {
        return Err(Error::arg("L", format!("window length must be positive, got {window_s}")));
    }
    let n = window_count(video.duration_s, window_s);
    (0..n)
        .map(|i| {
            Ok(Window {
                video_id: video.video_id.clone(),
                index: i,
                start_time_s: f64::from(i) * window_s,
                end_time_s: f64::from(i + 1) * window_s,
                key: WindowKey::new(video.video_id.clone(), i)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ready(duration_s: f64) -> VideoRecord {
        VideoRecord {
            video_id: "v".into(),
            source_uri: "mem://v".into(),
            duration_s,
            fps: 30.0,
            width: 64,
            height: 36,
            readiness: Readiness::Ready,
        }
    }

    #[test]
    fn window_counts_from_duration_extremes() {
        assert_eq!(make_windows(&ready(233.43), 10.0).unwrap().len(), 23);
        assert_eq!(make_windows(&ready(1131.93), 10.0).unwrap().len(), 113);
        assert!(make_windows(&ready(9.9), 10.0).unwrap().is_empty());
    }

    #[test]
    fn rejects_unready_and_bad_length() {
        let mut v = ready(30.0);
        v.readiness = Readiness::Unreadable;
        assert!(matches!(make_windows(&v, 10.0), Err(Error::NotReady { .. })));
        assert!(make_windows(&ready(30.0), 0.0).is_err());
    }

    #[test]
    fn key_format_round_trip() {
        let k = WindowKey::new("inc:7", 42).unwrap();
        assert_eq!(k.to_string(), "inc:7:00042");
        assert_eq!("inc:7:00042".parse::<WindowKey>().unwrap(), k);
        assert!("v:42".parse::<WindowKey>().is_err());
        assert!("v:0004x".parse::<WindowKey>().is_err());
        assert!(WindowKey::new("v", 100_000).is_err());
    }

    proptest! {
        #[test]
        fn windows_tile_prefix(d in 0.5f64..2000.0, l in 1.0f64..30.0) {
            let ws = make_windows(&ready(d), l).unwrap();
            prop_assert_eq!(ws.len() as u32, window_count(d, l));
            for (i, w) in ws.iter().enumerate() {
                prop_assert_eq!(w.index as usize, i);
                prop_assert!((w.length() - l).abs() < 1e-9);
                prop_assert!(w.end_time_s <= d + 1e-6);
                if i > 0 {
                    prop_assert_eq!(w.start_time_s, ws[i - 1].end_time_s);
                }
            }
        }

        #[test]
        fn key_order_matches_time(a in 0u32..99_999, b in 0u32..99_999) {
            let ka = WindowKey::new("vid", a).unwrap();
            let kb = WindowKey::new("vid", b).unwrap();
            prop_assert_eq!(ka.to_string().cmp(&kb.to_string()), a.cmp(&b));
            prop_assert_eq!(ka.cmp(&kb), a.cmp(&b));
        }
    }
}
