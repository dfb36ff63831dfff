//! Dataset audits over one labeling pass: integrity, label distributions,
//! conditional activity rates, adjacent-window transitions, run lengths and
//! within-window transition burden.
//!
//! Adjacency means consecutive window indices of the same video that are both
//! labeled; an unlabeled gap breaks adjacency and runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::annotation::{
    validate_annotation, ActivityLabel, AnnotationIssue, Axis, ContextLabel, CountMatrix, Label, LabelStore,
    RawAnnotation, WindowAnnotation, WindowInventory, ACTIVITY_TABLE_ORDER, CONTEXT_TABLE_ORDER,
};
use crate::error::{Error, Result};
use crate::stats::{lower_median, percent_half_up, ratio_half_up, round_half_up};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntegrityReport {
    pub total_rows: usize,
    pub unique_keys: usize,
    pub duplicate_rows: usize,
    pub missing_labels: usize,
    pub oov: usize,
    pub dangling: usize,
    pub malformed: usize,
    pub passed: bool,
}

/// Count structural defects in raw label rows. Duplicates are repeated
/// `(key, pass_id)` pairs.
pub fn integrity_check(rows: &[RawAnnotation], inventory: &WindowInventory) -> IntegrityReport {
    let mut keys = BTreeSet::new();
    let mut slots = BTreeSet::new();
    let (mut missing, mut oov, mut dangling, mut malformed) = (0, 0, 0, 0);
    for row in rows {
        keys.insert(row.key.clone());
        let pass = serde_json::to_string(&row.pass_id).unwrap_or_default();
        slots.insert((row.key.clone(), pass));
        if let Err(issues) = validate_annotation(row, inventory) {
            for issue in issues {
                match issue {
                    i if i.is_missing_label() => missing += 1,
                    AnnotationIssue::OutOfVocabulary { .. } => oov += 1,
                    AnnotationIssue::DanglingKey { .. } => dangling += 1,
                    _ => malformed += 1,
                }
            }
        }
    }
    let duplicate_rows = rows.len() - slots.len();
    IntegrityReport {
        total_rows: rows.len(),
        unique_keys: keys.len(),
        duplicate_rows,
        missing_labels: missing,
        oov,
        dangling,
        malformed,
        passed: duplicate_rows == 0 && missing == 0 && oov == 0 && dangling == 0 && malformed == 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelShare {
    pub label: &'static str,
    pub count: u64,
    /// Percent of the pass, half-up at two decimals.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub axis: Axis,
    pub total: u64,
    /// Vocabulary order, zero counts retained.
    pub shares: Vec<LabelShare>,
}

impl Distribution {
    pub fn share(&self, label: &str) -> Option<&LabelShare> {
        self.shares.iter().find(|s| s.label == label)
    }
}

pub fn label_distribution(annotations: &[&WindowAnnotation], axis: Axis) -> Result<Distribution> {
    if annotations.is_empty() {
        return Err(Error::invalid("label distribution of an empty pass"));
    }
    let vocab = axis.vocabulary();
    let mut counts = vec![0u64; vocab.len()];
    for a in annotations {
        counts[a.label_index(axis)] += 1;
    }
    let total = annotations.len() as u64;
    Ok(Distribution {
        axis,
        total,
        shares: vocab
            .into_iter()
            .zip(counts)
            .map(|(label, count)| LabelShare { label, count, percent: percent_half_up(count, total, 2) })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalRow {
    pub context: ContextLabel,
    pub count: u64,
    /// `P(activity | context)` in activity vocabulary order; zeros when the
    /// context never occurs.
    pub rates: Vec<(ActivityLabel, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalRates {
    pub rows: Vec<ConditionalRow>,
}

impl ConditionalRates {
    pub fn rate(&self, context: ContextLabel, activity: ActivityLabel) -> f64 {
        self.rows[context.index()].rates[activity.index()].1
    }
}

pub fn conditional_rates(annotations: &[&WindowAnnotation]) -> ConditionalRates {
    let mut counts = vec![vec![0u64; ActivityLabel::ALL.len()]; ContextLabel::ALL.len()];
    for a in annotations {
        counts[a.context.index()][a.activity.index()] += 1;
    }
    let rows = ContextLabel::ALL
        .iter()
        .zip(counts)
        .map(|(&context, row)| {
            let count: u64 = row.iter().sum();
            ConditionalRow {
                context,
                count,
                rates: ActivityLabel::ALL
                    .iter()
                    .zip(&row)
                    .map(|(&act, &c)| (act, if count == 0 { 0.0 } else { c as f64 / count as f64 }))
                    .collect(),
            }
        })
        .collect();
    ConditionalRates { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCount {
    pub from: &'static str,
    pub to: &'static str,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionStats {
    pub axis: Axis,
    pub n_pairs: u64,
    pub n_changes: u64,
    /// `None` when no adjacent pairs exist.
    pub change_rate: Option<f64>,
    pub change_rate_3dp: Option<f64>,
    pub pair_counts: CountMatrix,
    /// Non-zero ordered pairs by descending count, ties in vocabulary order.
    pub ranked: Vec<PairCount>,
}

/// Group one pass into per-video `(index, label)` sequences, index-ordered.
fn sequences(annotations: &[&WindowAnnotation], axis: Axis) -> BTreeMap<String, Vec<(u32, usize)>> {
    let mut out: BTreeMap<String, Vec<(u32, usize)>> = BTreeMap::new();
    for a in annotations {
        out.entry(a.key.video_id().to_string()).or_default().push((a.key.index(), a.label_index(axis)));
    }
    for seq in out.values_mut() {
        seq.sort_unstable();
    }
    out
}

pub fn adjacent_transition_stats(annotations: &[&WindowAnnotation], axis: Axis) -> TransitionStats {
    let vocab = axis.vocabulary();
    let n = vocab.len();
    let mut counts = vec![vec![0u64; n]; n];
    for seq in sequences(annotations, axis).values() {
        for pair in seq.windows(2) {
            let ((i0, l0), (i1, l1)) = (pair[0], pair[1]);
            if i1 == i0 + 1 {
                counts[l0][l1] += 1;
            }
        }
    }
    let n_pairs: u64 = counts.iter().flatten().sum();
    let n_self: u64 = (0..n).map(|i| counts[i][i]).sum();
    let n_changes = n_pairs - n_self;
    let mut ranked: Vec<PairCount> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| counts[i][j] > 0)
        .map(|(i, j)| PairCount { from: vocab[i], to: vocab[j], count: counts[i][j] })
        .collect();
    ranked.sort_by_key(|r| std::cmp::Reverse(r.count));
    TransitionStats {
        axis,
        n_pairs,
        n_changes,
        change_rate: (n_pairs > 0).then(|| n_changes as f64 / n_pairs as f64),
        change_rate_3dp: (n_pairs > 0).then(|| ratio_half_up(n_changes, n_pairs, 3)),
        pair_counts: CountMatrix { labels: vocab.into_iter().map(String::from).collect(), counts },
        ranked,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLengthStats {
    pub label: &'static str,
    pub runs: u64,
    pub windows: u64,
    pub median: Option<u64>,
    /// Exact mean rounded half-up to two decimals.
    pub mean: Option<f64>,
}

/// Maximal constant-label runs of consecutive labeled windows, per video.
pub fn run_lengths(annotations: &[&WindowAnnotation], axis: Axis) -> Vec<RunLengthStats> {
    let vocab = axis.vocabulary();
    let mut runs: Vec<Vec<u64>> = vec![Vec::new(); vocab.len()];
    for seq in sequences(annotations, axis).values() {
        let mut iter = seq.iter();
        let Some(&(mut prev_idx, mut label)) = iter.next() else {
            continue;
        };
        let mut len = 1u64;
        for &(idx, l) in iter {
            if idx == prev_idx + 1 && l == label {
                len += 1;
            } else {
                runs[label].push(len);
                label = l;
                len = 1;
            }
            prev_idx = idx;
        }
        runs[label].push(len);
    }
    vocab
        .into_iter()
        .zip(runs)
        .map(|(label, r)| {
            let windows: u64 = r.iter().sum();
            RunLengthStats {
                label,
                runs: r.len() as u64,
                windows,
                median: lower_median(&r),
                mean: (!r.is_empty()).then(|| ratio_half_up(windows, r.len() as u64, 2)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionBurden {
    pub windows: u64,
    pub total: u64,
    pub activity_only: u64,
    pub context_only: u64,
    pub both: u64,
    /// Flagged windows as a percent of all windows (one decimal).
    pub percent_flagged: Option<f64>,
    /// Shares of the flagged subset (one decimal); `None` when nothing is flagged.
    pub percent_activity_only: Option<f64>,
    pub percent_context_only: Option<f64>,
    pub percent_both: Option<f64>,
}

pub fn within_window_burden(annotations: &[&WindowAnnotation]) -> TransitionBurden {
    let (mut act, mut ctx, mut both) = (0u64, 0u64, 0u64);
    for a in annotations {
        match (a.context_transition, a.activity_transition) {
            (true, true) => both += 1,
            (true, false) => ctx += 1,
            (false, true) => act += 1,
            (false, false) => {}
        }
    }
    let total = act + ctx + both;
    let windows = annotations.len() as u64;
    let share = |c: u64| (total > 0).then(|| percent_half_up(c, total, 1));
    TransitionBurden {
        windows,
        total,
        activity_only: act,
        context_only: ctx,
        both,
        percent_flagged: (windows > 0).then(|| percent_half_up(total, windows, 1)),
        percent_activity_only: share(act),
        percent_context_only: share(ctx),
        percent_both: share(both),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AxisPair<T> {
    pub context: T,
    pub activity: T,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditMetadata {
    pub pass_id: u32,
    pub adjacency_rule: &'static str,
    pub median_rule: &'static str,
    pub rounding: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub metadata: AuditMetadata,
    pub integrity: IntegrityReport,
    pub distributions: AxisPair<Distribution>,
    pub conditional: ConditionalRates,
    pub transitions: AxisPair<TransitionStats>,
    pub run_lengths: AxisPair<Vec<RunLengthStats>>,
    pub burden: TransitionBurden,
}

impl AuditReport {
    /// Audit raw rows: integrity over every row, statistics over the valid
    /// rows of `pass_id`.
    pub fn from_rows(rows: &[RawAnnotation], inventory: &WindowInventory, pass_id: u32) -> Result<Self> {
        let integrity = integrity_check(rows, inventory);
        let mut store = LabelStore::new();
        for row in rows {
            if let Ok(a) = validate_annotation(row, inventory) {
                store.insert(a);
            }
        }
        Self::with_integrity(&store, integrity, pass_id)
    }

    pub fn from_store(store: &LabelStore, inventory: &WindowInventory, pass_id: u32) -> Result<Self> {
        let rows: Vec<RawAnnotation> = store.iter().map(WindowAnnotation::to_raw).collect();
        Self::with_integrity(store, integrity_check(&rows, inventory), pass_id)
    }

    fn with_integrity(store: &LabelStore, integrity: IntegrityReport, pass_id: u32) -> Result<Self> {
        let pass = store.pass(pass_id);
        Ok(Self {
            metadata: AuditMetadata {
                pass_id,
                adjacency_rule: "consecutive window indices within a video, both labeled",
                median_rule: "lower median",
                rounding: "half-up: distribution percents 2dp, burden percents 1dp, change rates 3dp, run means 2dp",
            },
            integrity,
            distributions: AxisPair {
                context: label_distribution(&pass, Axis::Context)?,
                activity: label_distribution(&pass, Axis::Activity)?,
            },
            conditional: conditional_rates(&pass),
            transitions: AxisPair {
                context: adjacent_transition_stats(&pass, Axis::Context),
                activity: adjacent_transition_stats(&pass, Axis::Activity),
            },
            run_lengths: AxisPair {
                context: run_lengths(&pass, Axis::Context),
                activity: run_lengths(&pass, Axis::Activity),
            },
            burden: within_window_burden(&pass),
        })
    }

    /// Write `distribution.csv`, `conditional.csv` and `transitions.csv`.
    pub fn write_tables(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };

        let mut dist = String::from("axis,label,count,percent\n");
        for d in [&self.distributions.context, &self.distributions.activity] {
            let mut shares = d.shares.clone();
            shares.sort_by_key(|s| std::cmp::Reverse(s.count));
            for s in shares {
                dist.push_str(&format!("{},{},{},{:.2}\n", d.axis, s.label, s.count, s.percent));
            }
        }
        write("distribution.csv", dist)?;

        let mut cond = String::from("context");
        for a in ACTIVITY_TABLE_ORDER {
            cond.push(',');
            cond.push_str(a.as_str());
        }
        cond.push('\n');
        for c in CONTEXT_TABLE_ORDER {
            cond.push_str(c.as_str());
            for a in ACTIVITY_TABLE_ORDER {
                cond.push_str(&format!(",{:.3}", round_half_up(self.conditional.rate(c, a), 3)));
            }
            cond.push('\n');
        }
        write("conditional.csv", cond)?;

        let mut tr = String::from("axis,from,to,count\n");
        for t in [&self.transitions.context, &self.transitions.activity] {
            for p in &t.ranked {
                tr.push_str(&format!("{},{},{},{}\n", t.axis, p.from, p.to, p.count));
            }
        }
        write("transitions.csv", tr)
    }
}
