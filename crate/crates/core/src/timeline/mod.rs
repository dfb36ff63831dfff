//! Per-video timeline generation, evaluation metrics and the experiment grid.

mod eval;
mod grid;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::{ActivityLabel, Axis, ContextLabel, Label};
use crate::corpus::{make_windows, VideoSource, WindowKey};
use crate::error::{Error, Result};
use crate::features::{extract_window, FrameEncoder};
use crate::models::{apply_threshold, SoftmaxClassifier};
use crate::stats::fixed;

pub use eval::{
    confusion_matrix, evaluate, filter_clean, recurring_confusions, ClassMetrics, MetricsReport, RecurringConfusion,
};
pub use grid::{
    preset_run, run_experiment_grid, write_grid_outputs, GridInput, GridRun, LabeledVideo, RunConfig, GRID_RUN_IDS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub window_id: WindowKey,
    pub start_time: f64,
    pub end_time: f64,
    pub context: ContextLabel,
    pub context_score: f64,
    pub activity: ActivityLabel,
    pub activity_score: f64,
    pub context_transition: bool,
    pub activity_transition: bool,
}

/// One classification branch of the generator: its model, the encoder its
/// representation needs (if any) and the fallback confidence threshold.
#[derive(Clone, Copy)]
pub struct Pathway<'a> {
    pub model: &'a SoftmaxClassifier,
    pub encoder: Option<&'a dyn FrameEncoder>,
    pub tau: f64,
}

impl Pathway<'_> {
    fn check(&self, axis: Axis) -> Result<()> {
        if self.model.axis != axis {
            return Err(Error::invalid(format!("{} model supplied for the {axis} pathway", self.model.axis)));
        }
        let spec =
            self.model.representation.as_ref().ok_or_else(|| Error::invalid("model carries no representation spec"))?;
        if spec.layout() != self.model.feature_layout_string {
            return Err(Error::invalid("model feature layout does not match its representation"));
        }
        match (spec.encoder_id(), self.encoder) {
            (Some(id), Some(enc)) if id != enc.encoder_id() => {
                Err(Error::invalid(format!("model expects encoder {id}, got {}", enc.encoder_id())))
            }
            (Some(id), None) => Err(Error::Missing(format!("encoder {id} is not configured"))),
            _ => Ok(()),
        }
    }

    fn classify(&self, source: &dyn VideoSource, window: &crate::corpus::Window, axis: Axis) -> Result<(String, f64)> {
        let spec = self.model.representation.as_ref().expect("checked");
        let raw = extract_window(spec, window, source, self.encoder)?;
        let pred = self.model.predict(&self.model.prepare(&raw)?)?;
        Ok((apply_threshold(&pred, self.tau, axis.low_evidence())?, pred.score))
    }
}

/// Label every complete window of a ready video with both pathways, then
/// mark label changes: the first record carries both flags, and every later
/// record is flagged per axis when its label differs from the previous one.
pub fn generate_timeline(
    source: &dyn VideoSource,
    context: Pathway<'_>,
    activity: Pathway<'_>,
    window_s: f64,
) -> Result<Vec<TimelineRecord>> {
    source.record().ensure_ready()?;
    context.check(Axis::Context)?;
    activity.check(Axis::Activity)?;
    let windows = make_windows(source.record(), window_s)?;
    let labeled: Vec<_> = windows
        .par_iter()
        .map(|w| {
            let (c, cs) = context.classify(source, w, Axis::Context)?;
            let (a, as_) = activity.classify(source, w, Axis::Activity)?;
            Ok((w, c, cs, a, as_))
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<TimelineRecord> = Vec::with_capacity(labeled.len());
    for (w, c, cs, a, as_) in labeled {
        let context = ContextLabel::parse(&c).ok_or_else(|| Error::invalid(format!("unknown context {c}")))?;
        let activity = ActivityLabel::parse(&a).ok_or_else(|| Error::invalid(format!("unknown activity {a}")))?;
        let (context_transition, activity_transition) = match records.last() {
            None => (true, true),
            Some(prev) => (prev.context != context, prev.activity != activity),
        };
        records.push(TimelineRecord {
            window_id: w.key.clone(),
            start_time: w.start_time_s,
            end_time: w.end_time_s,
            context,
            context_score: cs,
            activity,
            activity_score: as_,
            context_transition,
            activity_transition,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineHeader {
    pub video_id: String,
    #[serde(rename = "L")]
    pub window_s: f64,
    pub run_id: String,
    /// SHA-256 of each model's canonical JSON, keyed by axis.
    pub model_hashes: BTreeMap<String, String>,
}

impl TimelineHeader {
    pub fn new(
        video_id: &str,
        window_s: f64,
        run_id: &str,
        context: &SoftmaxClassifier,
        activity: &SoftmaxClassifier,
    ) -> Result<Self> {
        let mut model_hashes = BTreeMap::new();
        model_hashes.insert("context".to_string(), model_hash(context)?);
        model_hashes.insert("activity".to_string(), model_hash(activity)?);
        Ok(Self { video_id: video_id.to_string(), window_s, run_id: run_id.to_string(), model_hashes })
    }
}

pub fn model_hash(model: &SoftmaxClassifier) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(model)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn record_line(r: &TimelineRecord) -> Result<String> {
    Ok(format!(
        "{{\"window_id\":{},\"start_time\":{},\"end_time\":{},\"context\":\"{}\",\"context_score\":{},\"activity\":\"{}\",\"activity_score\":{},\"context_transition\":{},\"activity_transition\":{}}}",
        serde_json::to_string(&r.window_id)?,
        fixed(r.start_time, 4),
        fixed(r.end_time, 4),
        r.context.as_str(),
        fixed(r.context_score, 4),
        r.activity.as_str(),
        fixed(r.activity_score, 4),
        r.context_transition,
        r.activity_transition,
    ))
}

/// Header line, then one record per line with floats at four decimals.
pub fn write_timeline<W: Write>(mut out: W, header: &TimelineHeader, records: &[TimelineRecord]) -> Result<()> {
    let io = |e| Error::io("timeline output", e);
    let header_line = format!(
        "{{\"video_id\":{},\"L\":{},\"run_id\":{},\"model_hashes\":{}}}",
        serde_json::to_string(&header.video_id)?,
        fixed(header.window_s, 4),
        serde_json::to_string(&header.run_id)?,
        serde_json::to_string(&header.model_hashes)?,
    );
    writeln!(out, "{header_line}").map_err(io)?;
    for r in records {
        writeln!(out, "{}", record_line(r)?).map_err(io)?;
    }
    Ok(())
}

pub fn timeline_to_string(header: &TimelineHeader, records: &[TimelineRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_timeline(&mut buf, header, records)?;
    Ok(String::from_utf8(buf).expect("ASCII JSON"))
}

pub fn read_timeline<R: BufRead>(input: R) -> Result<(TimelineHeader, Vec<TimelineRecord>)> {
    let mut lines = input.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format { what: "timeline", reason: "empty file".into() })?
        .map_err(|e| Error::io("timeline input", e))?;
    let header: TimelineHeader = serde_json::from_str(&header_line)?;
    let mut records = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io("timeline input", e))?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Frame, MemorySource};
    use crate::features::{FlowParams, HashEncoder, Pooling, RepresentationSpec};
    use crate::models::TrainConfig;

    fn models() -> (SoftmaxClassifier, SoftmaxClassifier) {
        let spec_c = RepresentationSpec::Clip { encoder_id: "t".into(), k: 2, pooling: Pooling::Mean };
        let spec_a = RepresentationSpec::Flow {
            k: 2,
            flow: FlowParams { resize_w: 16, resize_h: 16, ..FlowParams::preset("F1").unwrap() },
        };
        let cx = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let ctx =
            SoftmaxClassifier::train(Axis::Context, &cx, &["OUTDOOR".into(), "INDOOR".into()], &TrainConfig::default())
                .unwrap()
                .with_representation(spec_c, None);
        let ax = vec![vec![0.0; 12], vec![1.0; 12]];
        let act = SoftmaxClassifier::train(
            Axis::Activity,
            &ax,
            &["ROUTINE".into(), "HIGH_ACTIVITY".into()],
            &TrainConfig::default(),
        )
        .unwrap()
        .with_representation(spec_a, None);
        (ctx, act)
    }

    fn video(seconds: usize) -> MemorySource {
        let frames = (0..seconds).map(|i| Some(Frame::gray(16, 16, vec![(i % 7 * 30) as u8; 256]).unwrap())).collect();
        MemorySource::new("clip", 1.0, frames)
    }

    #[test]
    fn single_window_has_both_flags() {
        let (ctx, act) = models();
        let enc = HashEncoder::new("t", 4).unwrap();
        let c = Pathway { model: &ctx, encoder: Some(&enc), tau: 0.0 };
        let a = Pathway { model: &act, encoder: None, tau: 0.0 };
        let recs = generate_timeline(&video(12), c, a, 10.0).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].context_transition && recs[0].activity_transition);
        assert_eq!((recs[0].start_time, recs[0].end_time), (0.0, 10.0));
    }

    #[test]
    fn mismatched_models_are_rejected() {
        let (ctx, act) = models();
        let enc = HashEncoder::new("other", 4).unwrap();
        let c = Pathway { model: &ctx, encoder: Some(&enc), tau: 0.0 };
        let a = Pathway { model: &act, encoder: None, tau: 0.0 };
        assert!(generate_timeline(&video(12), c, a, 10.0).is_err());
        let swapped = Pathway { model: &act, encoder: None, tau: 0.0 };
        assert!(generate_timeline(&video(12), swapped, a, 10.0).is_err());
    }

    #[test]
    fn jsonl_format() {
        let (ctx, act) = models();
        let header = TimelineHeader::new("clip", 10.0, "E1", &ctx, &act).unwrap();
        let rec = TimelineRecord {
            window_id: WindowKey::new("clip", 0).unwrap(),
            start_time: 0.0,
            end_time: 10.0,
            context: ContextLabel::Outdoor,
            context_score: 0.123456,
            activity: ActivityLabel::Routine,
            activity_score: 1.0,
            context_transition: true,
            activity_transition: true,
        };
        let text = timeline_to_string(&header, std::slice::from_ref(&rec)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("{\"video_id\":\"clip\",\"L\":10.0000,\"run_id\":\"E1\""));
        assert_eq!(
            lines[1],
            "{\"window_id\":\"clip:00000\",\"start_time\":0.0000,\"end_time\":10.0000,\"context\":\"OUTDOOR\",\"context_score\":0.1235,\"activity\":\"ROUTINE\",\"activity_score\":1.0000,\"context_transition\":true,\"activity_transition\":true}"
        );
        let (h, recs) = read_timeline(text.as_bytes()).unwrap();
        assert_eq!(h, header);
        assert_eq!(recs[0].context_score, 0.1235);
        assert_eq!(h.model_hashes["context"].len(), 64);
    }
}
