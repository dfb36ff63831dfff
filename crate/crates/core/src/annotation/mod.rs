//! Label vocabularies, per-window annotations, the label store and
//! agreement statistics between labeling passes.

mod agreement;
mod labels;
mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{window_count, VideoRecord, WindowKey};
use crate::error::{Error, Result};

pub use agreement::{
    agreement_matrix, cohens_kappa, exact_agreement, pair_passes, AgreementSummary, AxisAgreement, CountMatrix,
    PairedLabels,
};
pub use labels::{ActivityLabel, Axis, ContextLabel, Label, ACTIVITY_TABLE_ORDER, CONTEXT_TABLE_ORDER};
pub use store::{read_csv_rows, LabelStore, StoreConflict, CSV_HEADER};

/// One labeling pass' verdict on one window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowAnnotation {
    pub key: WindowKey,
    pub context: ContextLabel,
    pub activity: ActivityLabel,
    pub context_transition: bool,
    pub activity_transition: bool,
    pub pass_id: u32,
    pub annotator_id: String,
    pub created_at: String,
    #[serde(default = "first_revision")]
    pub revision: u64,
}

fn first_revision() -> u64 {
    1
}

impl WindowAnnotation {
    pub fn label_index(&self, axis: Axis) -> usize {
        match axis {
            Axis::Context => self.context.index(),
            Axis::Activity => self.activity.index(),
        }
    }

    pub fn transition(&self, axis: Axis) -> bool {
        match axis {
            Axis::Context => self.context_transition,
            Axis::Activity => self.activity_transition,
        }
    }

    pub fn is_clean(&self) -> bool {
        !self.context_transition && !self.activity_transition
    }

    pub fn to_raw(&self) -> RawAnnotation {
        RawAnnotation {
            key: self.key.to_string(),
            context: self.context.as_str().to_string(),
            activity: self.activity.as_str().to_string(),
            context_transition: RawScalar::Bool(self.context_transition),
            activity_transition: RawScalar::Bool(self.activity_transition),
            pass_id: RawScalar::Int(i64::from(self.pass_id)),
            annotator_id: self.annotator_id.clone(),
            created_at: self.created_at.clone(),
        }
    }
}

/// Loosely typed scalar as found in CSV cells or JSON request bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawScalar {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Default for RawScalar {
    fn default() -> Self {
        RawScalar::Str(String::new())
    }
}

impl RawScalar {
    fn as_flag(&self) -> Option<bool> {
        match self {
            RawScalar::Bool(b) => Some(*b),
            RawScalar::Int(0) => Some(false),
            RawScalar::Int(1) => Some(true),
            RawScalar::Str(s) => match s.trim() {
                "0" | "false" => Some(false),
                "1" | "true" => Some(true),
                _ => None,
            },
            _ => None,
        }
    }

    fn as_pass(&self) -> Option<u32> {
        match self {
            RawScalar::Int(i) => u32::try_from(*i).ok().filter(|&p| p >= 1),
            RawScalar::Str(s) => s.trim().parse::<u32>().ok().filter(|&p| p >= 1),
            RawScalar::Bool(_) => None,
        }
    }

    fn is_blank(&self) -> bool {
        matches!(self, RawScalar::Str(s) if s.trim().is_empty())
    }

    fn render(&self) -> String {
        match self {
            RawScalar::Bool(b) => b.to_string(),
            RawScalar::Int(i) => i.to_string(),
            RawScalar::Str(s) => s.clone(),
        }
    }
}

/// An annotation before validation: every field as the caller supplied it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    #[serde(default)]
    pub key: String,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub activity: String,
    #[serde(default)]
    pub context_transition: RawScalar,
    #[serde(default)]
    pub activity_transition: RawScalar,
    #[serde(default)]
    pub pass_id: RawScalar,
    #[serde(default)]
    pub annotator_id: String,
    #[serde(default)]
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotationIssue {
    MissingField { field: String },
    OutOfVocabulary { field: String, value: String },
    MalformedKey { value: String },
    DanglingKey { key: String },
    InvalidFlag { field: String, value: String },
    InvalidPassId { value: String },
}

impl AnnotationIssue {
    pub fn is_missing_label(&self) -> bool {
        matches!(self, AnnotationIssue::MissingField { field } if field == "context" || field == "activity")
    }
}

/// Addressable windows of a corpus: `video_id → ⌊D/L⌋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowInventory {
    pub window_length_s: f64,
    pub videos: Vec<InventoryVideo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryVideo {
    pub video_id: String,
    pub duration_s: f64,
    pub n_windows: u32,
}

impl WindowInventory {
    pub fn from_records(records: &[VideoRecord], window_length_s: f64) -> Self {
        let mut videos: Vec<InventoryVideo> = records
            .iter()
            .filter(|r| r.is_ready())
            .map(|r| InventoryVideo {
                video_id: r.video_id.clone(),
                duration_s: r.duration_s,
                n_windows: window_count(r.duration_s, window_length_s),
            })
            .collect();
        videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        Self { window_length_s, videos }
    }

    pub fn window_counts(&self) -> BTreeMap<&str, u32> {
        self.videos.iter().map(|v| (v.video_id.as_str(), v.n_windows)).collect()
    }

    pub fn contains(&self, key: &WindowKey) -> bool {
        self.videos.iter().any(|v| v.video_id == key.video_id() && key.index() < v.n_windows)
    }

    pub fn total_windows(&self) -> u64 {
        self.videos.iter().map(|v| u64::from(v.n_windows)).sum()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Check vocabulary membership, key resolvability and flag values.
///
/// Returns the typed annotation or every problem found; nothing is stored.
pub fn validate_annotation(
    raw: &RawAnnotation,
    inventory: &WindowInventory,
) -> std::result::Result<WindowAnnotation, Vec<AnnotationIssue>> {
    let mut issues = Vec::new();
    let missing = |f: &str| AnnotationIssue::MissingField { field: f.to_string() };

    let key = if raw.key.trim().is_empty() {
        issues.push(missing("key"));
        None
    } else {
        match raw.key.parse::<WindowKey>() {
            Ok(k) if inventory.contains(&k) => Some(k),
            Ok(k) => {
                issues.push(AnnotationIssue::DanglingKey { key: k.to_string() });
                None
            }
            Err(_) => {
                issues.push(AnnotationIssue::MalformedKey { value: raw.key.clone() });
                None
            }
        }
    };

    fn label<L: Label>(field: &str, value: &str, issues: &mut Vec<AnnotationIssue>) -> Option<L> {
        if value.trim().is_empty() {
            issues.push(AnnotationIssue::MissingField { field: field.to_string() });
            return None;
        }
        let parsed = L::parse(value);
        if parsed.is_none() {
            issues.push(AnnotationIssue::OutOfVocabulary { field: field.to_string(), value: value.to_string() });
        }
        parsed
    }
    let context = label::<ContextLabel>("context", &raw.context, &mut issues);
    let activity = label::<ActivityLabel>("activity", &raw.activity, &mut issues);

    let mut flag = |field: &str, v: &RawScalar| {
        if v.is_blank() {
            issues.push(missing(field));
            return None;
        }
        let f = v.as_flag();
        if f.is_none() {
            issues.push(AnnotationIssue::InvalidFlag { field: field.to_string(), value: v.render() });
        }
        f
    };
    let context_transition = flag("context_transition", &raw.context_transition);
    let activity_transition = flag("activity_transition", &raw.activity_transition);

    let pass_id = if raw.pass_id.is_blank() {
        issues.push(missing("pass_id"));
        None
    } else {
        let p = raw.pass_id.as_pass();
        if p.is_none() {
            issues.push(AnnotationIssue::InvalidPassId { value: raw.pass_id.render() });
        }
        p
    };
    if raw.annotator_id.trim().is_empty() {
        issues.push(missing("annotator_id"));
    }
    if raw.created_at.trim().is_empty() {
        issues.push(missing("created_at"));
    }

    match (key, context, activity, context_transition, activity_transition, pass_id) {
        (Some(key), Some(context), Some(activity), Some(ct), Some(at), Some(pass_id)) if issues.is_empty() => {
            Ok(WindowAnnotation {
                key,
                context,
                activity,
                context_transition: ct,
                activity_transition: at,
                pass_id,
                annotator_id: raw.annotator_id.clone(),
                created_at: raw.created_at.clone(),
                revision: 1,
            })
        }
        _ => Err(issues),
    }
}

/// Ordered `(label, duration)` segments covering one window.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTimeline<L> {
    segments: Vec<(L, f64)>,
}

impl<L: Label> SegmentTimeline<L> {
    /// Durations must be positive and sum to `window_s` (within 1e-6 s).
    pub fn new(segments: Vec<(L, f64)>, window_s: f64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("segment timeline is empty"));
        }
        if let Some((l, d)) = segments.iter().find(|(_, d)| !(*d > 0.0)) {
            return Err(Error::invalid(format!("segment {l:?} has non-positive duration {d}")));
        }
        let total: f64 = segments.iter().map(|(_, d)| d).sum();
        if (total - window_s).abs() > 1e-6 {
            return Err(Error::invalid(format!("segments cover {total} s of a {window_s} s window")));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[(L, f64)] {
        &self.segments
    }

    /// Label with the largest total time; ties go to the label whose first
    /// segment starts earliest.
    pub fn dominant(&self) -> L {
        let mut totals: Vec<(L, f64)> = Vec::new();
        for &(label, d) in &self.segments {
            match totals.iter_mut().find(|(l, _)| *l == label) {
                Some(entry) => entry.1 += d,
                None => totals.push((label, d)),
            }
        }
        // `totals` is in first-appearance order, so a strict comparison keeps
        // the earliest label on ties.
        let mut best = totals[0];
        for &(l, t) in &totals[1..] {
            if t > best.1 + 1e-9 {
                best = (l, t);
            }
        }
        best.0
    }

    /// More than one distinct label inside the window.
    pub fn has_transition(&self) -> bool {
        self.segments.iter().any(|(l, _)| *l != self.segments[0].0)
    }
}

/// Dominant-time rule over raw segments.
pub fn dominant_label<L: Label>(segments: &[(L, f64)], window_s: f64) -> Result<L> {
    Ok(SegmentTimeline::new(segments.to_vec(), window_s)?.dominant())
}

/// Build an annotation from within-window segment timelines of both axes.
pub fn annotate_from_segments(
    key: WindowKey,
    context: &SegmentTimeline<ContextLabel>,
    activity: &SegmentTimeline<ActivityLabel>,
    pass_id: u32,
    annotator_id: &str,
    created_at: &str,
) -> WindowAnnotation {
    WindowAnnotation {
        key,
        context: context.dominant(),
        activity: activity.dominant(),
        context_transition: context.has_transition(),
        activity_transition: activity.has_transition(),
        pass_id,
        annotator_id: annotator_id.to_string(),
        created_at: created_at.to_string(),
        revision: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ContextLabel::*;

    fn inventory() -> WindowInventory {
        WindowInventory {
            window_length_s: 10.0,
            videos: vec![InventoryVideo { video_id: "v1".into(), duration_s: 55.0, n_windows: 5 }],
        }
    }

    fn raw(key: &str, context: &str) -> RawAnnotation {
        RawAnnotation {
            key: key.into(),
            context: context.into(),
            activity: "ROUTINE".into(),
            context_transition: RawScalar::Str("0".into()),
            activity_transition: RawScalar::Int(1),
            pass_id: RawScalar::Int(1),
            annotator_id: "a1".into(),
            created_at: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn dominant_time_examples() {
        assert_eq!(dominant_label(&[(Outdoor, 7.0), (Indoor, 3.0)], 10.0).unwrap(), Outdoor);
        assert_eq!(dominant_label(&[(Indoor, 5.0), (Outdoor, 5.0)], 10.0).unwrap(), Indoor);
        assert_eq!(dominant_label(&[(LowVis, 10.0)], 10.0).unwrap(), LowVis);
        assert_eq!(dominant_label(&[(Indoor, 3.0), (Outdoor, 4.0), (Indoor, 3.0)], 10.0).unwrap(), Indoor);
    }

    #[test]
    fn dominant_rejects_bad_segments() {
        assert!(dominant_label::<ContextLabel>(&[], 10.0).is_err());
        assert!(dominant_label(&[(Indoor, 0.0), (Outdoor, 10.0)], 10.0).is_err());
        assert!(dominant_label(&[(Indoor, 4.0)], 10.0).is_err());
    }

    #[test]
    fn validation_paths() {
        let inv = inventory();
        let ok = validate_annotation(&raw("v1:00002", "OUTDOOR"), &inv).unwrap();
        assert_eq!(ok.context, Outdoor);
        assert!(ok.activity_transition && !ok.context_transition);

        let oov = validate_annotation(&raw("v1:00002", "STREET"), &inv).unwrap_err();
        assert_eq!(oov, vec![AnnotationIssue::OutOfVocabulary { field: "context".into(), value: "STREET".into() }]);

        let dangling = validate_annotation(&raw("v1:00005", "OUTDOOR"), &inv).unwrap_err();
        assert_eq!(dangling, vec![AnnotationIssue::DanglingKey { key: "v1:00005".into() }]);

        let mut r = raw("nope", "");
        r.context_transition = RawScalar::Str("yes".into());
        let issues = validate_annotation(&r, &inv).unwrap_err();
        assert_eq!(issues.len(), 3);
        assert!(issues.iter().any(AnnotationIssue::is_missing_label));
    }

    #[test]
    fn segments_to_annotation() {
        let k = WindowKey::new("v1", 0).unwrap();
        let ctx = SegmentTimeline::new(vec![(Outdoor, 10.0)], 10.0).unwrap();
        let act = SegmentTimeline::new(vec![(ActivityLabel::Routine, 6.0), (ActivityLabel::HighActivity, 4.0)], 10.0)
            .unwrap();
        let a = annotate_from_segments(k, &ctx, &act, 1, "a", "t");
        assert_eq!(a.activity, ActivityLabel::Routine);
        assert!(a.activity_transition && !a.context_transition);
    }

    fn ctx_label() -> impl Strategy<Value = ContextLabel> {
        (0usize..4).prop_map(|i| ContextLabel::ALL[i])
    }

    proptest! {
        #[test]
        fn merging_same_label_segments_keeps_winner(
            segs in proptest::collection::vec((ctx_label(), 1u32..20), 1..8)
        ) {
            let total: f64 = segs.iter().map(|(_, d)| f64::from(*d)).sum();
            let segs: Vec<(ContextLabel, f64)> = segs.iter().map(|(l, d)| (*l, f64::from(*d))).collect();
            let before = dominant_label(&segs, total).unwrap();
            // merge every label's segments at its first occurrence
            let mut merged: Vec<(ContextLabel, f64)> = Vec::new();
            for (l, d) in &segs {
                match merged.iter_mut().find(|(m, _)| m == l) {
                    Some(e) => e.1 += d,
                    None => merged.push((*l, *d)),
                }
            }
            prop_assert_eq!(before, dominant_label(&merged, total).unwrap());
        }
    }
}
