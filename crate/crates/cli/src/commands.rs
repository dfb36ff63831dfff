//! Subcommand definitions and their mapping onto library operations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use egotime_core::annotation::{AgreementSummary, Axis, LabelStore, RawAnnotation, WindowInventory};
use egotime_core::audits::AuditReport;
use egotime_core::corpus::{build_sampling_plan, sample_frames, Window, WindowKey};
use egotime_core::features::{
    extract_window, read_features, write_embeddings, write_features, EmbeddingRow, FeatureMatrix, RepresentationSpec,
};
use egotime_core::models::{apply_threshold, train_for_representation, video_level_split, SoftmaxClassifier, Split};
use egotime_core::timeline::{
    evaluate, generate_timeline, run_experiment_grid, write_grid_outputs, write_timeline, GridInput, LabeledVideo,
    Pathway, RunConfig, TimelineHeader,
};

use crate::config::{resolve_run, GridConfig, ProjectConfig};
use crate::workspace::{inventory, load_labels, plan_seed, scan_corpus, EncoderRegistry, IndexedVideo};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "egotime", version, about = "Index long first-person videos into labeled 10-second windows")]
pub struct Cli {
    /// Project configuration (for `grid`: the grid configuration).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunSelection {
    /// Named grid run (E1..E4, F1..F6, A1..A6, AF1..AF6).
    #[arg(long, conflicts_with = "run_config")]
    pub run: Option<String>,
    /// Full run configuration as JSON.
    #[arg(long)]
    pub run_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report readiness, duration and frame rate of videos.
    Probe {
        uris: Vec<String>,
        /// Also write the window inventory of the probed videos.
        #[arg(long)]
        inventory: Option<PathBuf>,
        #[arg(long = "L")]
        window_s: Option<f64>,
    },
    /// List the complete windows of a video.
    Windows {
        uri: String,
        #[arg(long = "L")]
        window_s: Option<f64>,
    },
    /// Build the labeling sample plan of a video.
    SamplePlan {
        uri: String,
        #[arg(long)]
        kcov: Option<usize>,
        #[arg(long)]
        krand: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "L")]
        window_s: Option<f64>,
    },
    /// Integrity checks and descriptive statistics of a label file.
    Audit {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        inventory: PathBuf,
        #[arg(long, default_value_t = 1)]
        pass: u32,
        /// Also write the CSV tables into this directory.
        #[arg(long)]
        tables: Option<PathBuf>,
    },
    /// Agreement between two labeling passes.
    Agreement {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 1)]
        p1: u32,
        #[arg(long, default_value_t = 2)]
        p2: u32,
        #[arg(long)]
        tables: Option<PathBuf>,
    },
    /// Extract window features (or per-frame embeddings) to a binary file.
    Features {
        /// Videos to process; defaults to the configured corpus.
        #[arg(long = "video")]
        videos: Vec<String>,
        #[command(flatten)]
        selection: RunSelection,
        /// Representation spec as JSON, instead of a run.
        #[arg(long, conflicts_with_all = ["run", "run_config"])]
        spec: Option<PathBuf>,
        /// Write per-frame embeddings of `--encoder` instead of window features.
        #[arg(long, requires = "encoder")]
        embeddings: bool,
        #[arg(long)]
        encoder: Option<String>,
        /// Frames per window for `--embeddings`.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long = "L")]
        window_s: Option<f64>,
    },
    /// Train a classifier on extracted features.
    Train {
        #[arg(long = "features", required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        selection: RunSelection,
        #[arg(long, default_value_t = 1)]
        pass: u32,
        /// Use this split instead of computing one.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long)]
        test_fraction: Option<f64>,
        /// Train on every labeled video.
        #[arg(long, conflicts_with_all = ["split", "split_seed", "test_fraction"])]
        no_holdout: bool,
        /// Write the split used.
        #[arg(long)]
        split_out: Option<PathBuf>,
    },
    /// Per-window predictions of one model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        video: Option<String>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Generate the labeled timeline of a video.
    Timeline {
        #[arg(long)]
        video: String,
        #[arg(long)]
        ctx_model: PathBuf,
        #[arg(long)]
        act_model: PathBuf,
        #[arg(long)]
        tau_ctx: Option<f64>,
        #[arg(long)]
        tau_act: Option<f64>,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long = "L")]
        window_s: Option<f64>,
    },
    /// Score a model on clean held-out windows.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "features", required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 1)]
        pass: u32,
        /// Restrict scoring to the test videos of this split.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        /// Also write confusion CSVs into this directory.
        #[arg(long)]
        tables: Option<PathBuf>,
    },
    /// Run an experiment grid and write per-run models and reports.
    Grid,
    /// Serve the corpus, annotation queue, timelines and reports over HTTP.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Export a label store.
    Export {
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: LabelFormat,
        #[arg(long)]
        pass: Option<u32>,
    },
}

/// Loaded project configuration plus the output destination.
struct Session {
    config: Option<ProjectConfig>,
    out: Option<PathBuf>,
}

impl Session {
    fn window_s(&self, flag: Option<f64>) -> f64 {
        flag.or_else(|| self.config.as_ref().map(|c| c.window_s)).unwrap_or(10.0)
    }

    fn emit(&self, body: &[u8]) -> Result<()> {
        match &self.out {
            Some(path) => std::fs::write(path, body).with_context(|| format!("writing {}", path.display())),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(body)?;
                stdout.flush()?;
                Ok(())
            }
        }
    }

    fn emit_json<T: Serialize>(&self, value: &T) -> Result<()> {
        let mut body = serde_json::to_vec_pretty(value)?;
        body.push(b'\n');
        self.emit(&body)
    }

    fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("this command writes a binary artifact; pass --out".into()).into())
    }

    fn flow_presets(&self) -> BTreeMap<String, egotime_core::features::FlowParams> {
        self.config.as_ref().map(|c| c.flow_presets.clone()).unwrap_or_default()
    }

    /// Without a project configuration, unknown encoders fall back to the
    /// deterministic test encoder; with one, the registry is authoritative.
    fn encoders<'a>(&self, needed: impl IntoIterator<Item = &'a str>) -> Result<EncoderRegistry> {
        match &self.config {
            Some(cfg) => EncoderRegistry::build(&cfg.encoders, needed, false),
            None => EncoderRegistry::build(&BTreeMap::new(), needed, true),
        }
    }

    fn run_config(&self, sel: &RunSelection) -> Result<RunConfig> {
        match (&sel.run, &sel.run_config) {
            (Some(id), _) => Ok(resolve_run(id, &self.flow_presets())?),
            (None, Some(path)) => {
                let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
                let run: RunConfig =
                    serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                run.representation.validate()?;
                Ok(run)
            }
            (None, None) => Err(CliError::Usage("pass --run or --run-config".into()).into()),
        }
    }

    fn videos(&self, uris: &[String], window_s: f64) -> Result<Vec<IndexedVideo>> {
        if uris.is_empty() {
            let cfg = self
                .config
                .as_ref()
                .ok_or_else(|| CliError::Usage("name videos or pass --config with a corpus_root".into()))?;
            return scan_corpus(&cfg.corpus_root, window_s);
        }
        uris.iter().map(|u| IndexedVideo::probe(u, window_s)).collect()
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let project = match (&cli.command, &cli.config) {
        (Command::Grid, _) | (_, None) => None,
        (_, Some(path)) => Some(ProjectConfig::load(path)?),
    };
    let ctx = Session { config: project, out: cli.out.clone() };
    match cli.command {
        Command::Probe { uris, inventory: inv_out, window_s } => probe(&ctx, &uris, inv_out.as_deref(), window_s),
        Command::Windows { uri, window_s } => {
            let video = IndexedVideo::probe(&uri, ctx.window_s(window_s))?;
            video.record.ensure_ready()?;
            ctx.emit_json(&video.windows)
        }
        Command::SamplePlan { uri, kcov, krand, seed, window_s } => {
            let video = IndexedVideo::probe(&uri, ctx.window_s(window_s))?;
            video.record.ensure_ready()?;
            let sampling = ctx.config.as_ref().map(|c| c.sampling.clone()).unwrap_or_default();
            let seed = seed.unwrap_or_else(|| {
                plan_seed(ctx.config.as_ref().map_or(0, |c| c.seeds.sampling), &video.record.video_id)
            });
            let plan = build_sampling_plan(
                &video.windows,
                kcov.unwrap_or(sampling.k_cov),
                krand.unwrap_or(sampling.k_rand),
                seed,
            );
            ctx.emit_json(&plan)
        }
        Command::Audit { labels, inventory, pass, tables } => audit(&ctx, &labels, &inventory, pass, tables.as_deref()),
        Command::Agreement { labels, p1, p2, tables } => {
            let store = load_labels(&labels, None)?;
            let summary = AgreementSummary::compute(&store, p1, p2)?;
            if let Some(dir) = tables {
                std::fs::create_dir_all(&dir)?;
                for a in [&summary.context, &summary.activity] {
                    std::fs::write(dir.join(format!("agreement_{}.csv", a.axis)), a.matrix.to_csv(false))?;
                    std::fs::write(dir.join(format!("agreement_{}_normalized.csv", a.axis)), a.matrix.to_csv(true))?;
                }
            }
            ctx.emit_json(&summary)
        }
        Command::Features { videos, selection, spec, embeddings, encoder, k, window_s } => {
            let window_s = ctx.window_s(window_s);
            if embeddings {
                extract_embeddings(&ctx, &videos, encoder.as_deref().expect("required by clap"), k, window_s)
            } else {
                let spec = match spec {
                    Some(path) => {
                        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
                        let spec: RepresentationSpec = serde_json::from_slice(&bytes)
                            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                        spec.validate()?;
                        spec
                    }
                    None => ctx.run_config(&selection)?.representation,
                };
                extract_features(&ctx, &videos, &spec, window_s)
            }
        }
        Command::Train {
            features,
            labels,
            selection,
            pass,
            split,
            split_seed,
            test_fraction,
            no_holdout,
            split_out,
        } => {
            let run = ctx.run_config(&selection)?;
            let options = SplitOptions { file: split, seed: split_seed, test_fraction, holdout: !no_holdout };
            train(&ctx, &features, &labels, run, pass, &options, split_out.as_deref())
        }
        Command::Predict { model, video, features, tau } => {
            predict(&ctx, &model, video.as_deref(), features.as_deref(), tau)
        }
        Command::Timeline { video, ctx_model, act_model, tau_ctx, tau_act, run_id, window_s } => {
            let request = TimelineRequest { video, ctx_model, act_model, tau_ctx, tau_act, run_id, window_s };
            timeline(&ctx, &request)
        }
        Command::Evaluate { model, features, labels, pass, split, tau, tables } => {
            evaluate_model(&ctx, &model, &features, &labels, pass, split.as_deref(), tau, tables.as_deref())
        }
        Command::Grid => {
            let path = cli.config.ok_or_else(|| CliError::Usage("grid needs --config <grid.json>".into()))?;
            grid(&GridConfig::load(&path)?, ctx.out.as_deref())
        }
        Command::Serve { bind } => {
            let cfg = ctx.config.ok_or_else(|| CliError::Usage("serve needs --config <project.json>".into()))?;
            let bind = bind.unwrap_or_else(|| cfg.service.bind.clone());
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::service::serve(cfg, &bind))
        }
        Command::Export { labels, format, pass } => {
            let path = labels
                .or_else(|| ctx.config.as_ref().map(|c| c.storage.labels.clone()))
                .ok_or_else(|| CliError::Usage("pass --labels or --config".into()))?;
            let mut store = load_labels(&path, None)?;
            if let Some(p) = pass {
                let mut only = LabelStore::new();
                for a in store.pass(p) {
                    only.insert(a.clone());
                }
                store = only;
            }
            let mut body = Vec::new();
            match format {
                LabelFormat::Csv => store.write_csv(&mut body)?,
                LabelFormat::Jsonl => store.write_jsonl(&mut body)?,
            }
            ctx.emit(&body)
        }
    }
}

fn probe(ctx: &Session, uris: &[String], inventory_out: Option<&Path>, window_s: Option<f64>) -> Result<()> {
    let window_s = ctx.window_s(window_s);
    let videos = ctx.videos(uris, window_s)?;
    if let Some(path) = inventory_out {
        let inv = inventory(&videos, window_s);
        std::fs::write(path, serde_json::to_vec_pretty(&inv)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let records: Vec<_> = videos.iter().map(|v| &v.record).collect();
    ctx.emit_json(&records)
}

fn audit(ctx: &Session, labels: &Path, inventory: &Path, pass: u32, tables: Option<&Path>) -> Result<()> {
    if !labels.is_file() {
        return Err(CliError::Usage(format!("label file `{}` not found", labels.display())).into());
    }
    let inv = WindowInventory::load(inventory)?;
    let rows: Vec<RawAnnotation> = if labels.extension().is_some_and(|e| e == "jsonl") {
        LabelStore::load(labels)?.iter().map(|a| a.to_raw()).collect()
    } else {
        egotime_core::annotation::read_csv_rows(std::fs::File::open(labels)?)?
    };
    let report = AuditReport::from_rows(&rows, &inv, pass)?;
    if let Some(dir) = tables {
        report.write_tables(dir)?;
    }
    ctx.emit_json(&report)
}

fn extract_features(ctx: &Session, uris: &[String], spec: &RepresentationSpec, window_s: f64) -> Result<()> {
    let out = ctx.require_out()?;
    let videos = ctx.videos(uris, window_s)?;
    let encoders = ctx.encoders(spec_encoders(spec))?;
    let encoder = spec.encoder_id().and_then(|id| encoders.get(id));
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    for video in videos.iter().filter(|v| v.record.is_ready()) {
        let source = video.open()?;
        for w in &video.windows {
            rows.push(extract_window(spec, w, source.as_ref(), encoder)?);
            keys.push(w.key.clone());
        }
    }
    let dim = rows.first().map_or(0, Vec::len);
    let matrix = FeatureMatrix { layout: spec.layout(), dim, keys, rows };
    write_features(out, &matrix)?;
    let summary = serde_json::json!({ "layout": matrix.layout, "dim": dim, "rows": matrix.rows.len(), "out": out });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn spec_encoders(spec: &RepresentationSpec) -> Vec<&str> {
    match spec {
        RepresentationSpec::Fused { appearance, motion } => {
            let mut ids = spec_encoders(appearance);
            ids.extend(spec_encoders(motion));
            ids
        }
        other => other.encoder_id().into_iter().collect(),
    }
}

fn extract_embeddings(ctx: &Session, uris: &[String], encoder_id: &str, k: usize, window_s: f64) -> Result<()> {
    let out = ctx.require_out()?;
    let videos = ctx.videos(uris, window_s)?;
    let encoders = ctx.encoders([encoder_id])?;
    let encoder = encoders.get(encoder_id).expect("built above");
    let mut rows = Vec::new();
    for video in videos.iter().filter(|v| v.record.is_ready()) {
        let source = video.open()?;
        for w in &video.windows {
            for s in sample_frames(w, k, source.as_ref())? {
                if let Some(frame) = s.decoded() {
                    let v = encoder.encode(&s.frame_ref, frame)?;
                    rows.push((EmbeddingRow { key: w.key.clone(), frame_slot: s.frame_ref.frame_slot }, v));
                }
            }
        }
    }
    write_embeddings(out, encoder_id, encoder.dim(), &rows)?;
    let summary = serde_json::json!({ "encoder_id": encoder_id, "dim": encoder.dim(), "rows": rows.len(), "out": out });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Rows of several feature files sharing one layout, keyed by window.
fn load_feature_rows(paths: &[PathBuf]) -> Result<(String, BTreeMap<WindowKey, Vec<f32>>)> {
    let mut layout: Option<String> = None;
    let mut rows = BTreeMap::new();
    for path in paths {
        let m = read_features(path)?;
        match &layout {
            Some(l) if *l != m.layout => {
                return Err(CliError::Usage(format!("{} has layout {}, expected {l}", path.display(), m.layout)).into())
            }
            _ => layout = Some(m.layout.clone()),
        }
        for (k, r) in m.keys.into_iter().zip(m.rows) {
            if rows.insert(k.clone(), r).is_some() {
                return Err(CliError::Usage(format!("window {k} appears in more than one feature file")).into());
            }
        }
    }
    Ok((layout.unwrap_or_default(), rows))
}

struct SplitOptions {
    file: Option<PathBuf>,
    seed: Option<u64>,
    test_fraction: Option<f64>,
    holdout: bool,
}

fn read_split(path: &Path) -> Result<Split> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn label_of(store: &LabelStore, key: &WindowKey, pass: u32, axis: Axis) -> Option<(String, bool)> {
    store.get(key, pass).map(|a| (axis.vocabulary()[a.label_index(axis)].to_string(), a.is_clean()))
}

fn train(
    ctx: &Session,
    features: &[PathBuf],
    labels: &Path,
    run: RunConfig,
    pass: u32,
    options: &SplitOptions,
    split_out: Option<&Path>,
) -> Result<()> {
    let (layout, rows) = load_feature_rows(features)?;
    if layout != run.representation.layout() {
        return Err(CliError::Usage(format!(
            "features have layout {layout} but run {} expects {}",
            run.run_id,
            run.representation.layout()
        ))
        .into());
    }
    let store = load_labels(labels, None)?;
    let labeled: Vec<(&WindowKey, &Vec<f32>, String, bool)> = rows
        .iter()
        .filter_map(|(k, r)| label_of(&store, k, pass, run.task).map(|(l, clean)| (k, r, l, clean)))
        .collect();
    if labeled.is_empty() {
        return Err(CliError::Usage(format!("no feature rows carry pass-{pass} labels")).into());
    }
    let video_ids: Vec<String> =
        labeled.iter().map(|(k, ..)| k.video_id().to_string()).collect::<BTreeSet<_>>().into_iter().collect();
    let split = if let Some(path) = &options.file {
        read_split(path)?
    } else if options.holdout {
        let seed = options.seed.or_else(|| ctx.config.as_ref().map(|c| c.seeds.split)).unwrap_or(run.split_seed);
        video_level_split(&video_ids, options.test_fraction.unwrap_or(run.test_fraction), seed)?
    } else {
        Split { seed: 0, train_video_ids: video_ids, test_video_ids: Vec::new() }
    };
    let train_rows: Vec<_> = labeled
        .iter()
        .filter(|(k, _, _, clean)| split.is_train(k.video_id()) && (*clean || !run.train.exclude_transitions))
        .collect();
    let x: Vec<Vec<f32>> = train_rows.iter().map(|(_, r, ..)| (*r).clone()).collect();
    let y: Vec<String> = train_rows.iter().map(|(_, _, l, _)| l.clone()).collect();
    if x.is_empty() {
        return Err(CliError::Usage("the training split holds no usable windows".into()).into());
    }
    let model = train_for_representation(run.task, &run.representation, &x, &y, &run.train)?;
    if let Some(path) = split_out {
        std::fs::write(path, serde_json::to_vec_pretty(&split)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    match &ctx.out {
        Some(path) => {
            model.save(path)?;
            let summary = serde_json::json!({
                "run_id": run.run_id,
                "model": path,
                "class_order": model.class_order,
                "train_report": model.train_report,
                "split": split,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        None => ctx.emit_json(&model),
    }
}

fn default_tau(ctx: &Session, axis: Axis, flag: Option<f64>) -> f64 {
    flag.unwrap_or_else(|| {
        ctx.config.as_ref().map_or(0.0, |c| match axis {
            Axis::Context => c.thresholds.context,
            Axis::Activity => c.thresholds.activity,
        })
    })
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    key: &'a WindowKey,
    label: String,
    score: f64,
    argmax_label: &'a str,
    probs: BTreeMap<&'a str, f64>,
}

fn predict(
    ctx: &Session,
    model_path: &Path,
    video: Option<&str>,
    features: Option<&Path>,
    tau: Option<f64>,
) -> Result<()> {
    let model = SoftmaxClassifier::load(model_path)?;
    let tau = default_tau(ctx, model.axis, tau);
    let raw_rows: Vec<(WindowKey, Vec<f32>)> = match (video, features) {
        (_, Some(path)) => {
            let m = read_features(path)?;
            if m.layout != model.feature_layout_string {
                return Err(CliError::Usage(format!(
                    "features have layout {}, model expects {}",
                    m.layout, model.feature_layout_string
                ))
                .into());
            }
            m.keys.into_iter().zip(m.rows).collect()
        }
        (Some(uri), None) => {
            let spec = model
                .representation
                .as_ref()
                .ok_or_else(|| CliError::Usage("model carries no representation; pass --features".into()))?;
            let video = IndexedVideo::probe(uri, ctx.window_s(None))?;
            video.record.ensure_ready()?;
            let encoders = ctx.encoders(spec_encoders(spec))?;
            let encoder = spec.encoder_id().and_then(|id| encoders.get(id));
            let source = video.open()?;
            video
                .windows
                .iter()
                .map(|w: &Window| Ok((w.key.clone(), extract_window(spec, w, source.as_ref(), encoder)?)))
                .collect::<Result<_>>()?
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let mut body = Vec::new();
    for (key, raw) in &raw_rows {
        let pred = model.predict(&model.prepare(raw)?)?;
        let line = PredictionLine {
            key,
            label: apply_threshold(&pred, tau, model.axis.low_evidence())?,
            score: pred.score,
            argmax_label: &model.class_order[pred.argmax],
            probs: model.class_order.iter().map(String::as_str).zip(pred.probs.iter().copied()).collect(),
        };
        serde_json::to_writer(&mut body, &line)?;
        body.push(b'\n');
    }
    ctx.emit(&body)
}

struct TimelineRequest {
    video: String,
    ctx_model: PathBuf,
    act_model: PathBuf,
    tau_ctx: Option<f64>,
    tau_act: Option<f64>,
    run_id: Option<String>,
    window_s: Option<f64>,
}

fn model_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

fn timeline(ctx: &Session, req: &TimelineRequest) -> Result<()> {
    let window_s = ctx.window_s(req.window_s);
    let context = SoftmaxClassifier::load(&req.ctx_model)?;
    let activity = SoftmaxClassifier::load(&req.act_model)?;
    let needed: Vec<&str> =
        [&context, &activity].iter().filter_map(|m| m.representation.as_ref()).flat_map(spec_encoders).collect();
    let encoders = ctx.encoders(needed)?;
    let encoder_for = |m: &SoftmaxClassifier| m.encoder_id.as_deref().and_then(|id| encoders.get(id));
    let video = IndexedVideo::probe(&req.video, window_s)?;
    video.record.ensure_ready()?;
    let source = video.open()?;
    let records = generate_timeline(
        source.as_ref(),
        Pathway { model: &context, encoder: encoder_for(&context), tau: default_tau(ctx, Axis::Context, req.tau_ctx) },
        Pathway {
            model: &activity,
            encoder: encoder_for(&activity),
            tau: default_tau(ctx, Axis::Activity, req.tau_act),
        },
        window_s,
    )?;
    let run_id =
        req.run_id.clone().unwrap_or_else(|| format!("{}+{}", model_stem(&req.ctx_model), model_stem(&req.act_model)));
    let header = TimelineHeader::new(&video.record.video_id, window_s, &run_id, &context, &activity)?;
    let mut body = Vec::new();
    write_timeline(&mut body, &header, &records)?;
    ctx.emit(&body)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_model(
    ctx: &Session,
    model_path: &Path,
    features: &[PathBuf],
    labels: &Path,
    pass: u32,
    split: Option<&Path>,
    tau: Option<f64>,
    tables: Option<&Path>,
) -> Result<()> {
    let model = SoftmaxClassifier::load(model_path)?;
    let (layout, rows) = load_feature_rows(features)?;
    if layout != model.feature_layout_string {
        return Err(CliError::Usage(format!(
            "features have layout {layout}, model expects {}",
            model.feature_layout_string
        ))
        .into());
    }
    let store = load_labels(labels, None)?;
    let split = split.map(read_split).transpose()?;
    let tau = default_tau(ctx, model.axis, tau);
    let mut y_true = Vec::new();
    let mut y_pred = Vec::new();
    let mut excluded = 0;
    for (key, raw) in &rows {
        if split.as_ref().is_some_and(|s| !s.is_test(key.video_id())) {
            continue;
        }
        let Some((label, clean)) = label_of(&store, key, pass, model.axis) else { continue };
        if !clean {
            excluded += 1;
            continue;
        }
        let pred = model.predict(&model.prepare(raw)?)?;
        y_pred.push(apply_threshold(&pred, tau, model.axis.low_evidence())?);
        y_true.push(label);
    }
    if y_true.is_empty() {
        return Err(CliError::Usage("no clean labeled windows to evaluate".into()).into());
    }
    let space: Vec<String> = model.axis.vocabulary().into_iter().map(String::from).collect();
    let mut report = evaluate(&y_true, &y_pred, &space)?;
    report.excluded_transition_windows = excluded;
    if let Some(dir) = tables {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("confusion.csv"), report.confusion.to_csv(false))?;
        std::fs::write(dir.join("confusion_normalized.csv"), report.confusion.to_csv(true))?;
    }
    ctx.emit_json(&report)
}

#[derive(Serialize)]
struct GridSummaryRow<'a> {
    run_id: &'a str,
    task: Axis,
    accuracy: f64,
    macro_f1: f64,
    n_test: usize,
}

fn grid(cfg: &GridConfig, out_flag: Option<&Path>) -> Result<()> {
    let out = out_flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Usage("grid needs --out or out_dir in the grid configuration".into()))?;
    let runs = cfg.run_configs()?;
    let videos = scan_corpus(&cfg.corpus_root, cfg.window_s)?;
    let inv = inventory(&videos, cfg.window_s);
    let store = load_labels(&cfg.labels, Some(&inv))?;
    let needed: Vec<&str> = runs.iter().flat_map(|r| spec_encoders(&r.representation)).collect();
    let encoders = EncoderRegistry::build(&cfg.encoders, needed, false)?;
    let labeled = videos
        .iter()
        .filter(|v| v.record.is_ready())
        .map(|v| Ok(LabeledVideo { source: v.open()?, windows: v.windows.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let input = GridInput { videos: &labeled, labels: &store, pass_id: cfg.pass_id, encoders: encoders.as_map() };
    let results = run_experiment_grid(&runs, &input)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_grid_outputs(&out, &results)?;
    let splits: BTreeMap<&str, &Split> = results.iter().map(|r| (r.run_id.as_str(), &r.split)).collect();
    std::fs::write(out.join("splits.json"), serde_json::to_vec_pretty(&splits)?)?;
    let summary: Vec<GridSummaryRow> = results
        .iter()
        .map(|r| GridSummaryRow {
            run_id: &r.run_id,
            task: r.config.task,
            accuracy: r.report.accuracy,
            macro_f1: r.report.macro_f1,
            n_test: r.report.n_test,
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
