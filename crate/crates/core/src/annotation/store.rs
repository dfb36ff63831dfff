//! In-memory label store with canonical CSV and JSONL interchange.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::Serialize;

use super::{
    validate_annotation, AnnotationIssue, Axis, Label, RawAnnotation, RawScalar, WindowAnnotation, WindowInventory,
};
use crate::corpus::WindowKey;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "key",
    "context",
    "activity",
    "context_transition",
    "activity_transition",
    "pass_id",
    "annotator_id",
    "created_at",
];

/// Write rejected because the caller's base revision is stale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoreConflict {
    pub key: String,
    pub pass_id: u32,
    pub current_revision: u64,
    pub base_revision: u64,
}

/// Annotations keyed by `(window key, pass)`.
///
/// Iteration is always in key order (video id, then window index), so every
/// derived artifact is independent of insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelStore {
    entries: BTreeMap<(WindowKey, u32), WindowAnnotation>,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &WindowKey, pass_id: u32) -> Option<&WindowAnnotation> {
        self.entries.get(&(key.clone(), pass_id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &WindowAnnotation> {
        self.entries.values()
    }

    pub fn passes(&self) -> BTreeSet<u32> {
        self.entries.keys().map(|(_, p)| *p).collect()
    }

    /// Annotations of one pass in key order.
    pub fn pass(&self, pass_id: u32) -> Vec<&WindowAnnotation> {
        self.entries.values().filter(|a| a.pass_id == pass_id).collect()
    }

    /// Per-video label index sequences of one pass, ordered by window index.
    pub fn sequences(&self, pass_id: u32, axis: Axis) -> BTreeMap<String, Vec<(u32, usize)>> {
        let mut out: BTreeMap<String, Vec<(u32, usize)>> = BTreeMap::new();
        for a in self.pass(pass_id) {
            out.entry(a.key.video_id().to_string()).or_default().push((a.key.index(), a.label_index(axis)));
        }
        out
    }

    /// Insert or replace unconditionally; revision is kept as given.
    pub fn insert(&mut self, annotation: WindowAnnotation) -> Option<WindowAnnotation> {
        self.entries.insert((annotation.key.clone(), annotation.pass_id), annotation)
    }

    /// Optimistic write. `base_revision` is the revision the writer last saw
    /// (0 for "no annotation yet"); on success the stored revision is bumped.
    pub fn upsert(&mut self, mut annotation: WindowAnnotation, base_revision: u64) -> Result<u64, StoreConflict> {
        let slot = (annotation.key.clone(), annotation.pass_id);
        let current = self.entries.get(&slot).map_or(0, |a| a.revision);
        if current != base_revision {
            return Err(StoreConflict {
                key: annotation.key.to_string(),
                pass_id: annotation.pass_id,
                current_revision: current,
                base_revision,
            });
        }
        annotation.revision = current + 1;
        self.entries.insert(slot, annotation);
        Ok(current + 1)
    }

    /// Validate and load rows; fails atomically with every row's issues.
    pub fn from_rows(
        rows: &[RawAnnotation],
        inventory: &WindowInventory,
    ) -> Result<Self, Vec<(usize, Vec<AnnotationIssue>)>> {
        let mut store = LabelStore::new();
        let mut failures = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            match validate_annotation(row, inventory) {
                Ok(a) => {
                    store.insert(a);
                }
                Err(issues) => failures.push((i, issues)),
            }
        }
        if failures.is_empty() {
            Ok(store)
        } else {
            Err(failures)
        }
    }

    /// Load rows without inventory checks (keys must still parse).
    pub fn from_rows_unchecked(rows: &[RawAnnotation]) -> Result<Self> {
        let mut store = LabelStore::new();
        for row in rows {
            let key: WindowKey = row.key.parse()?;
            let inv = WindowInventory {
                window_length_s: 0.0,
                videos: vec![super::InventoryVideo {
                    video_id: key.video_id().to_string(),
                    duration_s: 0.0,
                    n_windows: key.index() + 1,
                }],
            };
            let a = validate_annotation(row, &inv).map_err(|issues| {
                Error::invalid(format!("row for {}: {}", row.key, serde_json::to_string(&issues).unwrap_or_default()))
            })?;
            store.insert(a);
        }
        Ok(store)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(CSV_HEADER)?;
        for a in self.entries.values() {
            let key = a.key.to_string();
            let pass = a.pass_id.to_string();
            w.write_record([
                key.as_str(),
                a.context.as_str(),
                a.activity.as_str(),
                flag(a.context_transition),
                flag(a.activity_transition),
                pass.as_str(),
                a.annotator_id.as_str(),
                a.created_at.as_str(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("utf-8 csv")
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for a in self.entries.values() {
            serde_json::to_writer(&mut out, a)?;
            out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut store = LabelStore::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<jsonl>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let a: WindowAnnotation = serde_json::from_str(&line)
                .map_err(|e| Error::Format { what: "label jsonl", reason: format!("line {}: {e}", n + 1) })?;
            store.insert(a);
        }
        Ok(store)
    }

    /// Load a label file by extension: `.jsonl` or CSV.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "jsonl") {
            Self::read_jsonl(std::io::BufReader::new(file))
        } else {
            Self::from_rows_unchecked(&read_csv_rows(file)?)
        }
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Parse canonical label CSV into raw rows (validation happens later).
pub fn read_csv_rows<R: std::io::Read>(input: R) -> Result<Vec<RawAnnotation>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let cols: Vec<Option<usize>> = CSV_HEADER.iter().map(|h| col(h)).collect();
    if cols[0].is_none() {
        return Err(Error::Format { what: "label csv", reason: "missing `key` column".into() });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let cell = |i: usize| cols[i].and_then(|c| rec.get(c)).unwrap_or("").to_string();
        rows.push(RawAnnotation {
            key: cell(0),
            context: cell(1),
            activity: cell(2),
            context_transition: RawScalar::Str(cell(3)),
            activity_transition: RawScalar::Str(cell(4)),
            pass_id: RawScalar::Str(cell(5)),
            annotator_id: cell(6),
            created_at: cell(7),
        });
    }
    Ok(rows)
}
