//! Corpus discovery, encoder registries and label-store persistence shared by
//! the subcommands and the service.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};

use egotime_core::annotation::{read_csv_rows, LabelStore, WindowInventory};
use egotime_core::corpus::{make_windows, open_source, probe_video, VideoRecord, VideoSource, Window};
use egotime_core::features::{build_encoder, EncoderSource, FrameEncoder};
use egotime_core::rng::fnv1a64;

use crate::CliError;

const CONTAINER_EXTENSIONS: [&str; 6] = ["mp4", "mov", "mkv", "avi", "m4v", "webm"];

pub struct IndexedVideo {
    pub uri: String,
    pub record: VideoRecord,
    /// Empty unless the video is ready.
    pub windows: Vec<Window>,
}

impl IndexedVideo {
    pub fn probe(uri: &str, window_s: f64) -> Result<Self> {
        let record = probe_video(uri);
        let windows = if record.is_ready() { make_windows(&record, window_s)? } else { Vec::new() };
        Ok(Self { uri: uri.to_string(), record, windows })
    }

    pub fn open(&self) -> Result<Box<dyn VideoSource>> {
        Ok(open_source(&self.uri)?)
    }

    pub fn is_frame_directory(&self) -> bool {
        Path::new(&self.uri).join("manifest.json").is_file()
    }
}

/// Every frame directory (a child holding `manifest.json`) and container file
/// directly under `root`, ordered by video id.
pub fn scan_corpus(root: &Path, window_s: f64) -> Result<Vec<IndexedVideo>> {
    let mut uris = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let path = entry?.path();
        let is_video_dir = path.join("manifest.json").is_file();
        let is_container = path.is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| CONTAINER_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_video_dir || is_container {
            uris.push(path.to_string_lossy().into_owned());
        }
    }
    let mut videos = uris.iter().map(|u| IndexedVideo::probe(u, window_s)).collect::<Result<Vec<_>>>()?;
    videos.sort_by(|a, b| a.record.video_id.cmp(&b.record.video_id));
    for pair in videos.windows(2) {
        if pair[0].record.video_id == pair[1].record.video_id {
            return Err(
                CliError::Usage(format!("video id {} appears twice in the corpus", pair[0].record.video_id)).into()
            );
        }
    }
    Ok(videos)
}

pub fn inventory(videos: &[IndexedVideo], window_s: f64) -> WindowInventory {
    let records: Vec<VideoRecord> = videos.iter().map(|v| v.record.clone()).collect();
    WindowInventory::from_records(&records, window_s)
}

/// Per-video plan seed: the configured seed mixed with the video id, so
/// videos get distinct random picks that still reproduce.
pub fn plan_seed(base: u64, video_id: &str) -> u64 {
    base ^ fnv1a64(video_id.as_bytes())
}

/// Encoders instantiated on demand from a registry of sources.
#[derive(Default)]
pub struct EncoderRegistry {
    encoders: BTreeMap<String, Arc<dyn FrameEncoder>>,
}

impl EncoderRegistry {
    /// Build the encoders in `needed`. With `fallback_test_hash`, ids missing
    /// from `sources` get the deterministic test encoder (with a warning);
    /// otherwise a missing id is a configuration error.
    pub fn build<'a>(
        sources: &BTreeMap<String, EncoderSource>,
        needed: impl IntoIterator<Item = &'a str>,
        fallback_test_hash: bool,
    ) -> Result<Self> {
        let mut encoders = BTreeMap::new();
        for id in needed {
            if encoders.contains_key(id) {
                continue;
            }
            let source = match sources.get(id) {
                Some(s) => s.clone(),
                None if fallback_test_hash => {
                    eprintln!("warning: encoder {id} is not configured; using the deterministic test_hash encoder");
                    EncoderSource::TestHash { dim: None }
                }
                None => return Err(CliError::Config(format!("encoder {id} is not in the registry")).into()),
            };
            let encoder: Arc<dyn FrameEncoder> = Arc::from(build_encoder(id, &source)?);
            encoders.insert(id.to_string(), encoder);
        }
        Ok(Self { encoders })
    }

    pub fn get(&self, id: &str) -> Option<&dyn FrameEncoder> {
        self.encoders.get(id).map(|e| e.as_ref())
    }

    pub fn as_map(&self) -> &BTreeMap<String, Arc<dyn FrameEncoder>> {
        &self.encoders
    }
}

/// Load labels from CSV or JSONL. With an inventory every row is validated
/// against it; any invalid row rejects the whole file.
pub fn load_labels(path: &Path, inventory: Option<&WindowInventory>) -> Result<LabelStore> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("label file `{}` not found", path.display())).into());
    }
    let is_jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let store = match inventory {
        Some(inv) if !is_jsonl => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let rows = read_csv_rows(file)?;
            LabelStore::from_rows(&rows, inv).map_err(|failures| {
                let shown: Vec<String> = failures
                    .iter()
                    .take(5)
                    .map(|(row, issues)| {
                        format!("row {}: {}", row + 1, serde_json::to_string(issues).unwrap_or_default())
                    })
                    .collect();
                CliError::Usage(format!("{} invalid label rows; {}", failures.len(), shown.join("; ")))
            })?
        }
        _ => LabelStore::load(path)?,
    };
    if let Some(inv) = inventory {
        if let Some(stray) = store.iter().find(|a| !inv.contains(&a.key)) {
            return Err(CliError::Usage(format!("label for {} does not resolve to a corpus window", stray.key)).into());
        }
    }
    Ok(store)
}

/// Write the store by extension (JSONL keeps revisions), replacing the file
/// atomically so readers never see a partial store.
pub fn save_labels(path: &Path, store: &LabelStore) -> Result<()> {
    let mut body = Vec::new();
    if path.extension().is_some_and(|e| e == "jsonl") {
        store.write_jsonl(&mut body)?;
    } else {
        store.write_csv(&mut body)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, body).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}
