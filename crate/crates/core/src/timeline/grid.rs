//! The evaluation grid: named run configurations, shared video-level split,
//! cached per-window features, training and held-out evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, recurring_confusions, MetricsReport};
use crate::annotation::{Axis, LabelStore, WindowAnnotation};
use crate::corpus::{VideoSource, Window, WindowKey};
use crate::error::{Error, Result};
use crate::features::{extract_window, FlowParams, FrameEncoder, Pooling, RepresentationSpec};
use crate::models::{
    apply_threshold, train_for_representation, video_level_split, SoftmaxClassifier, Split, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub task: Axis,
    pub representation: RepresentationSpec,
    /// Confidence below which the low-evidence label is emitted.
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

pub const GRID_RUN_IDS: [&str; 22] = [
    "E1", "E2", "E3", "E4", "F1", "F2", "F3", "F4", "F5", "F6", "A1", "A2", "A3", "A4", "A5", "A6", "AF1", "AF2",
    "AF3", "AF4", "AF5", "AF6",
];

const BASE: &str = "ViT-B/32";

fn clip(encoder: &str, k: usize, pooling: Pooling) -> RepresentationSpec {
    RepresentationSpec::Clip { encoder_id: encoder.into(), k, pooling }
}

fn clip_delta(k: usize, pooling: Pooling) -> RepresentationSpec {
    RepresentationSpec::ClipDelta { encoder_id: BASE.into(), k, pooling }
}

fn representation(run_id: &str) -> Option<(Axis, RepresentationSpec)> {
    use Pooling::{Max, Mean};
    let flow = |k: usize, name: &str| RepresentationSpec::Flow { k, flow: FlowParams::preset(name).expect("preset") };
    let spec = match run_id {
        "E1" => (Axis::Context, clip(BASE, 5, Mean)),
        "E2" => (Axis::Context, clip(BASE, 10, Mean)),
        "E3" => (Axis::Context, clip("ViT-L/14", 5, Mean)),
        "E4" => (Axis::Context, clip(BASE, 10, Max)),
        "F1" => (Axis::Activity, flow(5, "F1")),
        "F2" | "F3" | "F4" | "F5" | "F6" => (Axis::Activity, flow(10, run_id)),
        "A1" => (Axis::Activity, clip(BASE, 10, Mean)),
        "A2" => (Axis::Activity, clip(BASE, 10, Max)),
        "A3" => (Axis::Activity, clip_delta(10, Mean)),
        "A4" => (Axis::Activity, clip_delta(10, Max)),
        "A5" => (Axis::Activity, clip_delta(5, Mean)),
        "A6" => (Axis::Activity, clip_delta(20, Mean)),
        _ => {
            let i = run_id.strip_prefix("AF")?;
            let (_, appearance) = representation(&format!("A{i}"))?;
            let (_, motion) = representation(&format!("F{i}"))?;
            (Axis::Activity, RepresentationSpec::Fused { appearance: Box::new(appearance), motion: Box::new(motion) })
        }
    };
    Some(spec)
}

/// The named grid configuration, with default training and split settings.
pub fn preset_run(run_id: &str) -> Option<RunConfig> {
    let (task, representation) = representation(&run_id.to_ascii_uppercase())?;
    Some(RunConfig {
        run_id: run_id.to_ascii_uppercase(),
        task,
        representation,
        tau: 0.0,
        train: TrainConfig::default(),
        split_seed: 0,
        test_fraction: default_test_fraction(),
    })
}

pub struct LabeledVideo {
    pub source: Box<dyn VideoSource>,
    pub windows: Vec<Window>,
}

pub struct GridInput<'a> {
    pub videos: &'a [LabeledVideo],
    pub labels: &'a LabelStore,
    pub pass_id: u32,
    pub encoders: &'a BTreeMap<String, Arc<dyn FrameEncoder>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRun {
    pub run_id: String,
    pub config: RunConfig,
    pub split: Split,
    pub model: SoftmaxClassifier,
    pub report: MetricsReport,
}

type FeatureTable = BTreeMap<WindowKey, Vec<f32>>;

fn components(spec: &RepresentationSpec) -> Vec<&RepresentationSpec> {
    match spec {
        RepresentationSpec::Fused { appearance, motion } => vec![appearance.as_ref(), motion.as_ref()],
        other => vec![other],
    }
}

impl GridInput<'_> {
    fn encoder(&self, spec: &RepresentationSpec) -> Result<Option<&dyn FrameEncoder>> {
        match spec.encoder_id() {
            None => Ok(None),
            Some(id) => self
                .encoders
                .get(id)
                .map(|e| Some(e.as_ref()))
                .ok_or_else(|| Error::Missing(format!("no embeddings or encoder available for {id}"))),
        }
    }

    fn labeled(&self) -> Vec<(&LabeledVideo, &Window, &WindowAnnotation)> {
        self.videos
            .iter()
            .flat_map(|v| v.windows.iter().map(move |w| (v, w)))
            .filter_map(|(v, w)| self.labels.get(&w.key, self.pass_id).map(|a| (v, w, a)))
            .collect()
    }

    fn extract(&self, spec: &RepresentationSpec) -> Result<FeatureTable> {
        let encoder = self.encoder(spec)?;
        self.labeled()
            .par_iter()
            .map(|(v, w, _)| Ok((w.key.clone(), extract_window(spec, w, v.source.as_ref(), encoder)?)))
            .collect()
    }
}

fn raw_row(spec: &RepresentationSpec, cache: &BTreeMap<String, FeatureTable>, key: &WindowKey) -> Vec<f32> {
    components(spec).iter().flat_map(|c| cache[&c.layout()][key].iter().copied()).collect()
}

fn run_one(config: &RunConfig, input: &GridInput<'_>, cache: &BTreeMap<String, FeatureTable>) -> Result<GridRun> {
    config.representation.validate()?;
    let labeled = input.labeled();
    let video_ids: Vec<String> =
        labeled.iter().map(|(_, w, _)| w.video_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let split = video_level_split(&video_ids, config.test_fraction, config.split_seed)?;
    let axis = config.task;
    let spec = &config.representation;

    let train: Vec<_> = labeled
        .iter()
        .filter(|(_, w, a)| split.is_train(&w.video_id) && (!config.train.exclude_transitions || a.is_clean()))
        .collect();
    let raw_train: Vec<Vec<f32>> = train.iter().map(|(_, w, _)| raw_row(spec, cache, &w.key)).collect();
    let y_train: Vec<String> = train.iter().map(|(_, _, a)| label_of(a, axis)).collect();

    let model = train_for_representation(axis, spec, &raw_train, &y_train, &config.train)?;

    let test: Vec<_> = labeled.iter().filter(|(_, w, _)| split.is_test(&w.video_id)).collect();
    let clean: Vec<_> = test.iter().filter(|(_, _, a)| a.is_clean()).collect();
    let mut y_true = Vec::with_capacity(clean.len());
    let mut y_pred = Vec::with_capacity(clean.len());
    for (_, w, a) in &clean {
        let x = model.prepare(&raw_row(spec, cache, &w.key))?;
        let pred = model.predict(&x)?;
        y_pred.push(apply_threshold(&pred, config.tau, axis.low_evidence())?);
        y_true.push(label_of(a, axis));
    }
    let space: Vec<String> = axis.vocabulary().into_iter().map(String::from).collect();
    let mut report = evaluate(&y_true, &y_pred, &space)?;
    report.excluded_transition_windows = test.len() - clean.len();
    Ok(GridRun { run_id: config.run_id.clone(), config: config.clone(), split, model, report })
}

fn label_of(a: &WindowAnnotation, axis: Axis) -> String {
    axis.vocabulary()[a.label_index(axis)].to_string()
}

/// Extract each distinct feature block once, then train and evaluate every
/// run in parallel. Results keep the order of `grid`.
pub fn run_experiment_grid(grid: &[RunConfig], input: &GridInput<'_>) -> Result<Vec<GridRun>> {
    let mut needed: BTreeMap<String, &RepresentationSpec> = BTreeMap::new();
    for run in grid {
        run.representation.validate()?;
        for c in components(&run.representation) {
            needed.entry(c.layout()).or_insert(c);
        }
    }
    let cache: BTreeMap<String, FeatureTable> =
        needed.into_par_iter().map(|(layout, spec)| Ok((layout, input.extract(spec)?))).collect::<Result<_>>()?;
    grid.par_iter().map(|run| run_one(run, input, &cache)).collect()
}

/// Persist models, reports, confusion tables, a summary and per-task
/// recurring confusions under `dir`.
pub fn write_grid_outputs(dir: &Path, runs: &[GridRun]) -> Result<()> {
    let models = dir.join("models");
    let reports = dir.join("reports");
    for d in [&models, &reports] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let write = |path: &Path, body: String| std::fs::write(path, body).map_err(|e| Error::io(path, e));
    let mut summary = String::from("run_id,task,accuracy,macro_f1,n_test,excluded_transition_windows\n");
    for run in runs {
        run.model.save(&models.join(format!("{}.json", run.run_id)))?;
        write(&reports.join(format!("{}.json", run.run_id)), serde_json::to_string_pretty(&run.report)?)?;
        write(&reports.join(format!("{}_confusion.csv", run.run_id)), run.report.confusion.to_csv(false))?;
        write(&reports.join(format!("{}_confusion_normalized.csv", run.run_id)), run.report.confusion.to_csv(true))?;
        summary.push_str(&format!(
            "{},{},{:.4},{:.4},{},{}\n",
            run.run_id,
            run.config.task,
            run.report.accuracy,
            run.report.macro_f1,
            run.report.n_test,
            run.report.excluded_transition_windows
        ));
    }
    write(&dir.join("summary.csv"), summary)?;
    for axis in [Axis::Context, Axis::Activity] {
        let of_axis: Vec<(String, &MetricsReport)> =
            runs.iter().filter(|r| r.config.task == axis).map(|r| (r.run_id.clone(), &r.report)).collect();
        if !of_axis.is_empty() {
            let ranked = recurring_confusions(&of_axis)?;
            write(&reports.join(format!("recurring_{axis}.json")), serde_json::to_string_pretty(&ranked)?)?;
        }
    }
    Ok(())
}
