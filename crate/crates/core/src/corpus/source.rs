//! Frame sources: frame-manifest directories, external decoders, memory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{Frame, Readiness, VideoRecord};
use crate::error::{Error, Result};

/// Random access to the decoded frames of one video.
pub trait VideoSource: Send + Sync {
    fn record(&self) -> &VideoRecord;

    /// Number of addressable frames; frame `i` is presented at `i / fps`.
    fn frame_count(&self) -> u64;

    fn read_frame(&self, index: u64) -> Result<Frame>;
}

/// `manifest.json` of a frame-directory video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub video_id: String,
    pub fps: f64,
    pub duration_s: f64,
    pub width: u32,
    pub height: u32,
    /// printf-style file name relative to the manifest, e.g. `frame_%06d.pgm`.
    pub frame_pattern: String,
    /// Explicit frame total; defaults to `⌊duration_s · fps⌋`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<u64>,
}

impl Manifest {
    pub fn frame_total(&self) -> u64 {
        self.frame_count.unwrap_or_else(|| (self.duration_s * self.fps + 1e-9).floor().max(0.0) as u64)
    }

    pub fn frame_file_name(&self, index: u64) -> Result<String> {
        render_pattern(&self.frame_pattern, index)
    }
}

/// Expand the single `%d` / `%0Nd` conversion in `pattern`.
fn render_pattern(pattern: &str, index: u64) -> Result<String> {
    let bad = || Error::Format {
        what: "frame_pattern",
        reason: format!("`{pattern}` needs exactly one %d or %0Nd conversion"),
    };
    let start = pattern.find('%').ok_or_else(bad)?;
    let rest = &pattern[start + 1..];
    let d_pos = rest.find('d').ok_or_else(bad)?;
    let spec = &rest[..d_pos];
    let tail = &rest[d_pos + 1..];
    if tail.contains('%') || !spec.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let width: usize = if spec.is_empty() { 0 } else { spec.parse().map_err(|_| bad())? };
    Ok(format!("{}{:0width$}{}", &pattern[..start], index, tail, width = width))
}

pub struct ManifestSource {
    root: PathBuf,
    manifest: Manifest,
    record: VideoRecord,
}

impl ManifestSource {
    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn frame_path(&self, index: u64) -> Result<PathBuf> {
        Ok(self.root.join(self.manifest.frame_file_name(index)?))
    }
}

impl VideoSource for ManifestSource {
    fn record(&self) -> &VideoRecord {
        &self.record
    }

    fn frame_count(&self) -> u64 {
        self.manifest.frame_total()
    }

    fn read_frame(&self, index: u64) -> Result<Frame> {
        if index >= self.frame_count() {
            return Err(Error::invalid(format!("frame {index} beyond frame count")));
        }
        let path = self.frame_path(index)?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Frame::from_pnm(&bytes)
    }
}

/// Executables used to probe and decode container files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderCommand {
    pub probe: String,
    pub decode: String,
}

impl Default for DecoderCommand {
    fn default() -> Self {
        Self { probe: "ffprobe".into(), decode: "ffmpeg".into() }
    }
}

/// Container file decoded on demand by an ffprobe/ffmpeg-compatible
/// subprocess. The source file is only ever read.
pub struct ExternalDecoderSource {
    path: PathBuf,
    command: DecoderCommand,
    record: VideoRecord,
    frames: u64,
}

#[derive(Deserialize)]
struct ProbeOutput {
    #[serde(default)]
    streams: Vec<ProbeStream>,
    format: Option<ProbeFormat>,
}

#[derive(Deserialize)]
struct ProbeStream {
    width: Option<u32>,
    height: Option<u32>,
    r_frame_rate: Option<String>,
}

#[derive(Deserialize)]
struct ProbeFormat {
    duration: Option<String>,
}

fn parse_rate(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((n, d)) => {
            let (n, d): (f64, f64) = (n.parse().ok()?, d.parse().ok()?);
            (d != 0.0).then(|| n / d)
        }
        None => s.parse().ok(),
    }
}

impl ExternalDecoderSource {
    fn probe(path: &Path, command: DecoderCommand) -> Result<Self> {
        let out = Command::new(&command.probe)
            .args(["-v", "error", "-select_streams", "v:0"])
            .args(["-show_entries", "stream=width,height,r_frame_rate:format=duration"])
            .args(["-of", "json"])
            .arg(path)
            .output()
            .map_err(|e| Error::Decoder(format!("{}: {e}", command.probe)))?;
        if !out.status.success() {
            return Err(Error::Decoder(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        let parsed: ProbeOutput = serde_json::from_slice(&out.stdout)?;
        let stream = parsed.streams.first().ok_or_else(|| Error::Decoder("no video stream".into()))?;
        let fps = stream
            .r_frame_rate
            .as_deref()
            .and_then(parse_rate)
            .ok_or_else(|| Error::Decoder("missing frame rate".into()))?;
        let duration_s = parsed
            .format
            .and_then(|f| f.duration)
            .and_then(|d| d.parse::<f64>().ok())
            .ok_or_else(|| Error::Decoder("missing duration".into()))?;
        let record = VideoRecord {
            video_id: stem(path),
            source_uri: path.display().to_string(),
            duration_s,
            fps,
            width: stream.width.unwrap_or(0),
            height: stream.height.unwrap_or(0),
            readiness: Readiness::Ready,
        };
        let frames = (duration_s * fps).floor().max(0.0) as u64;
        Ok(Self { path: path.to_path_buf(), command, record, frames })
    }
}

impl VideoSource for ExternalDecoderSource {
    fn record(&self) -> &VideoRecord {
        &self.record
    }

    fn frame_count(&self) -> u64 {
        self.frames
    }

    fn read_frame(&self, index: u64) -> Result<Frame> {
        let t = index as f64 / self.record.fps;
        let out = Command::new(&self.command.decode)
            .args(["-v", "error", "-ss", &format!("{t:.6}"), "-i"])
            .arg(&self.path)
            .args(["-frames:v", "1", "-f", "image2pipe", "-vcodec", "pgm", "-"])
            .output()
            .map_err(|e| Error::Decoder(format!("{}: {e}", self.command.decode)))?;
        if !out.status.success() || out.stdout.is_empty() {
            return Err(Error::Decoder(format!("frame {index} did not decode")));
        }
        Frame::from_pnm(&out.stdout)
    }
}

/// In-memory video; `None` entries model frames that fail to decode.
pub struct MemorySource {
    record: VideoRecord,
    frames: Vec<Option<Frame>>,
}

impl MemorySource {
    pub fn new(video_id: impl Into<String>, fps: f64, frames: Vec<Option<Frame>>) -> Self {
        let video_id = video_id.into();
        let (width, height) = frames.iter().flatten().next().map(|f| (f.width, f.height)).unwrap_or((0, 0));
        let readiness =
            if matches!(frames.first(), Some(Some(_))) { Readiness::Ready } else { Readiness::NoDecodableFrame };
        let record = VideoRecord {
            source_uri: format!("mem://{video_id}"),
            video_id,
            duration_s: frames.len() as f64 / fps,
            fps,
            width,
            height,
            readiness,
        };
        Self { record, frames }
    }

    /// Override the reported duration, e.g. to model a non-integral tail.
    pub fn with_duration(mut self, duration_s: f64) -> Self {
        self.record.duration_s = duration_s;
        self
    }
}

impl VideoSource for MemorySource {
    fn record(&self) -> &VideoRecord {
        &self.record
    }

    fn frame_count(&self) -> u64 {
        self.frames.len() as u64
    }

    fn read_frame(&self, index: u64) -> Result<Frame> {
        self.frames
            .get(index as usize)
            .cloned()
            .flatten()
            .ok_or_else(|| Error::Decoder(format!("frame {index} unavailable")))
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn uri_path(uri: &str) -> PathBuf {
    PathBuf::from(uri.strip_prefix("file://").unwrap_or(uri))
}

fn probe_manifest(manifest_path: &Path, uri: &str) -> (VideoRecord, Option<Box<dyn VideoSource>>) {
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let fallback_id = if manifest_path.is_dir() { stem(manifest_path) } else { stem(&root) };
    let unreadable = |r| (VideoRecord::unreadable(fallback_id.clone(), uri.to_string(), r), None);
    let Ok(bytes) = fs::read(manifest_path) else {
        return unreadable(Readiness::Unreadable);
    };
    let Ok(manifest) = serde_json::from_slice::<Manifest>(&bytes) else {
        return unreadable(Readiness::Unreadable);
    };
    if !(manifest.fps > 0.0 && manifest.duration_s > 0.0) || manifest.video_id.is_empty() {
        return unreadable(Readiness::Unreadable);
    }
    let record = VideoRecord {
        video_id: manifest.video_id.clone(),
        source_uri: uri.to_string(),
        duration_s: manifest.duration_s,
        fps: manifest.fps,
        width: manifest.width,
        height: manifest.height,
        readiness: Readiness::Ready,
    };
    let source = ManifestSource { root, manifest, record };
    if source.frame_count() == 0 || source.read_frame(0).is_err() {
        let mut rec = source.record.clone();
        rec.readiness = Readiness::NoDecodableFrame;
        return (rec, None);
    }
    let rec = source.record.clone();
    (rec, Some(Box::new(source)))
}

fn probe_inner(uri: &str, decoder: &DecoderCommand) -> (VideoRecord, Option<Box<dyn VideoSource>>) {
    let path = uri_path(uri);
    if path.is_dir() {
        return probe_manifest(&path.join("manifest.json"), uri);
    }
    if path.extension().is_some_and(|e| e == "json") {
        return probe_manifest(&path, uri);
    }
    let unreadable = || (VideoRecord::unreadable(stem(&path), uri.to_string(), Readiness::Unreadable), None);
    match fs::metadata(&path) {
        Ok(m) if m.is_file() && m.len() > 0 => {}
        _ => return unreadable(),
    }
    match ExternalDecoderSource::probe(&path, decoder.clone()) {
        Ok(src) => {
            let mut rec = src.record.clone();
            rec.source_uri = uri.to_string();
            if src.frame_count() == 0 || src.read_frame(0).is_err() {
                rec.readiness = Readiness::NoDecodableFrame;
                return (rec, None);
            }
            (rec, Some(Box::new(src)))
        }
        Err(_) => unreadable(),
    }
}

/// Determine whether `uri` (a frame directory, its `manifest.json`, or a
/// container file) is usable. Never fails: problems land in `readiness`.
pub fn probe_video(uri: &str) -> VideoRecord {
    probe_inner(uri, &DecoderCommand::default()).0
}

/// Open a ready video for frame access.
pub fn open_source(uri: &str) -> Result<Box<dyn VideoSource>> {
    open_source_with(uri, &DecoderCommand::default())
}

pub fn open_source_with(uri: &str, decoder: &DecoderCommand) -> Result<Box<dyn VideoSource>> {
    match probe_inner(uri, decoder) {
        (_, Some(src)) => Ok(src),
        (rec, None) => Err(Error::NotReady { video_id: rec.video_id, readiness: rec.readiness.to_string() }),
    }
}
