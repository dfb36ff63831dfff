//! Strictly parsed project and grid configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use egotime_core::features::{EncoderSource, FlowParams, RepresentationSpec, FLOW_PRESETS};
use egotime_core::timeline::{preset_run, RunConfig};

use crate::CliError;

fn default_window_s() -> f64 {
    10.0
}

fn default_k() -> usize {
    10
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub context: f64,
    pub activity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub k_cov: usize,
    pub k_rand: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { k_cov: 5, k_rand: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub sampling: u64,
    pub split: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Storage {
    /// Label store; `.jsonl` keeps revisions, anything else is written as CSV.
    pub labels: PathBuf,
    pub timelines: PathBuf,
    pub reports: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Shared token expected as `Authorization: Bearer <token>`; open when unset.
    pub token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: default_bind(), token: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub corpus_root: PathBuf,
    #[serde(default = "default_window_s")]
    pub window_s: f64,
    /// Frames sampled per window (K) for previews and default extraction.
    #[serde(default = "default_k")]
    pub frames_per_window: usize,
    #[serde(default)]
    pub encoders: BTreeMap<String, EncoderSource>,
    /// Overrides or additions to the named flow presets.
    #[serde(default)]
    pub flow_presets: BTreeMap<String, FlowParams>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub seeds: Seeds,
    pub storage: Storage,
    #[serde(default)]
    pub service: ServiceConfig,
}

fn read_strict<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn require_dir(what: &str, p: &Path) -> Result<(), CliError> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} `{}` is not an existing directory", p.display())))
    }
}

fn check_threshold(name: &str, tau: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(CliError::Config(format!("threshold {name} = {tau} outside [0, 1]")))
    }
}

fn resolve_encoders(base: &Path, encoders: &mut BTreeMap<String, EncoderSource>) -> Result<(), CliError> {
    for (id, src) in encoders.iter_mut() {
        if let EncoderSource::Precomputed { path } = src {
            resolve(base, path);
            if !path.is_file() {
                return Err(CliError::Config(format!("embeddings for {id} not found at `{}`", path.display())));
            }
        }
    }
    Ok(())
}

fn check_presets(presets: &BTreeMap<String, FlowParams>) -> Result<(), CliError> {
    for (name, p) in presets {
        p.validate().map_err(|e| CliError::Config(format!("flow preset {name}: {e}")))?;
    }
    Ok(())
}

impl ProjectConfig {
    /// Parse, resolve relative paths against the file's directory and check
    /// that every referenced path exists.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: ProjectConfig = read_strict(path)?;
        let base = base_dir(path);
        resolve(&base, &mut cfg.corpus_root);
        resolve(&base, &mut cfg.storage.labels);
        resolve(&base, &mut cfg.storage.timelines);
        resolve(&base, &mut cfg.storage.reports);
        resolve_encoders(&base, &mut cfg.encoders)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return Err(CliError::Config(format!("window_s must be positive, got {}", self.window_s)));
        }
        if self.frames_per_window == 0 {
            return Err(CliError::Config("frames_per_window must be at least 1".into()));
        }
        require_dir("corpus_root", &self.corpus_root)?;
        require_dir("storage.timelines", &self.storage.timelines)?;
        require_dir("storage.reports", &self.storage.reports)?;
        require_dir("directory of storage.labels", &base_dir(&self.storage.labels))?;
        check_threshold("context", self.thresholds.context)?;
        check_threshold("activity", self.thresholds.activity)?;
        check_presets(&self.flow_presets)
    }
}

/// A grid entry: a named preset or a full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunEntry {
    Preset(String),
    Full(RunConfig),
}

/// Self-contained description of an experiment grid over one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub corpus_root: PathBuf,
    pub labels: PathBuf,
    #[serde(default = "default_pass")]
    pub pass_id: u32,
    #[serde(default = "default_window_s")]
    pub window_s: f64,
    #[serde(default)]
    pub encoders: BTreeMap<String, EncoderSource>,
    #[serde(default)]
    pub flow_presets: BTreeMap<String, FlowParams>,
    pub runs: Vec<RunEntry>,
    /// Applied to every run so all runs share one split.
    #[serde(default)]
    pub split_seed: Option<u64>,
    #[serde(default)]
    pub test_fraction: Option<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_pass() -> u32 {
    1
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: GridConfig = read_strict(path)?;
        let base = base_dir(path);
        resolve(&base, &mut cfg.corpus_root);
        resolve(&base, &mut cfg.labels);
        if let Some(out) = cfg.out_dir.as_mut() {
            resolve(&base, out);
        }
        resolve_encoders(&base, &mut cfg.encoders)?;
        require_dir("corpus_root", &cfg.corpus_root)?;
        if !cfg.labels.is_file() {
            return Err(CliError::Config(format!("labels `{}` not found", cfg.labels.display())));
        }
        if cfg.runs.is_empty() {
            return Err(CliError::Config("grid lists no runs".into()));
        }
        check_presets(&cfg.flow_presets)?;
        Ok(cfg)
    }

    pub fn run_configs(&self) -> Result<Vec<RunConfig>, CliError> {
        self.runs
            .iter()
            .map(|entry| {
                let mut run = match entry {
                    RunEntry::Preset(id) => resolve_run(id, &self.flow_presets)?,
                    RunEntry::Full(run) => run.clone(),
                };
                if let Some(seed) = self.split_seed {
                    run.split_seed = seed;
                }
                if let Some(f) = self.test_fraction {
                    run.test_fraction = f;
                }
                Ok(run)
            })
            .collect()
    }
}

/// Look up a named run, substituting configured flow presets for the
/// built-in ones of the same name.
pub fn resolve_run(id: &str, flow_presets: &BTreeMap<String, FlowParams>) -> Result<RunConfig, CliError> {
    let mut run = preset_run(id).ok_or_else(|| CliError::Usage(format!("unknown run id `{id}`")))?;
    override_flow(&mut run.representation, flow_presets);
    Ok(run)
}

fn override_flow(spec: &mut RepresentationSpec, presets: &BTreeMap<String, FlowParams>) {
    match spec {
        RepresentationSpec::Flow { flow, .. } => {
            let name = FLOW_PRESETS.iter().find(|(_, p)| p == flow).map(|(n, _)| *n);
            if let Some(custom) = name.and_then(|n| presets.get(n)) {
                *flow = *custom;
            }
        }
        RepresentationSpec::Fused { motion, .. } => override_flow(motion, presets),
        _ => {}
    }
}
