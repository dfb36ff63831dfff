use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Disjoint train/test partition of videos; windows follow their video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train_video_ids: Vec<String>,
    pub test_video_ids: Vec<String>,
}

impl Split {
    pub fn is_test(&self, video_id: &str) -> bool {
        self.test_video_ids.binary_search_by(|v| v.as_str().cmp(video_id)).is_ok()
    }

    pub fn is_train(&self, video_id: &str) -> bool {
        self.train_video_ids.binary_search_by(|v| v.as_str().cmp(video_id)).is_ok()
    }
}

/// Seeded shuffle of the sorted, de-duplicated ids; the first
/// `⌈fraction · n⌉` become test videos, keeping at least one for training.
pub fn video_level_split(video_ids: &[String], test_fraction: f64, seed: u64) -> Result<Split> {
    let unique: BTreeSet<&String> = video_ids.iter().collect();
    if unique.len() < 2 {
        return Err(Error::invalid("a video-level split needs at least two videos"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::arg("test_fraction", "must lie strictly between 0 and 1"));
    }
    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    SeededRng::new(seed).shuffle(&mut ids);
    let n_test = ((test_fraction * ids.len() as f64 - 1e-9).ceil() as usize).clamp(1, ids.len() - 1);
    let mut test_video_ids = ids.split_off(ids.len() - n_test);
    let mut train_video_ids = ids;
    test_video_ids.sort();
    train_video_ids.sort();
    Ok(Split { seed, train_video_ids, test_video_ids })
}
