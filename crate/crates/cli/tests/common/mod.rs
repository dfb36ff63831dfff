#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::json;
use tempfile::TempDir;

use egotime_core::annotation::LabelStore;
use egotime_core::synthetic::{generate_corpus, SyntheticCorpus, SyntheticSpec};

/// A synthetic corpus plus a project layout around it.
pub struct Project {
    pub dir: TempDir,
    pub corpus: SyntheticCorpus,
}

impl Project {
    pub fn new(spec: &SyntheticSpec) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("corpus");
        std::fs::create_dir_all(&root).unwrap();
        for sub in ["timelines", "reports", "state"] {
            std::fs::create_dir_all(dir.path().join(sub)).unwrap();
        }
        let corpus = generate_corpus(&root, spec).unwrap();
        Self { dir, corpus }
    }

    pub fn small() -> Self {
        Self::new(&SyntheticSpec {
            n_videos: 3,
            windows_per_video: 4,
            width: 32,
            height: 18,
            ..SyntheticSpec::default()
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Write `project.json` with paths relative to the project directory.
    pub fn write_config(&self, extra: serde_json::Value) -> PathBuf {
        let mut cfg = json!({
            "corpus_root": "corpus",
            "window_s": 10.0,
            "frames_per_window": 5,
            "encoders": { "ViT-B/32": { "source": "test_hash", "dim": 32 } },
            "sampling": { "k_cov": 2, "k_rand": 1 },
            "seeds": { "sampling": 3, "split": 1 },
            "storage": { "labels": "state/labels.jsonl", "timelines": "timelines", "reports": "reports" }
        });
        if let (Some(base), Some(more)) = (cfg.as_object_mut(), extra.as_object()) {
            for (k, v) in more {
                base.insert(k.clone(), v.clone());
            }
        }
        let path = self.path("project.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
        path
    }

    /// Ground-truth labels of pass 1 as canonical CSV.
    pub fn write_labels_csv(&self, name: &str) -> PathBuf {
        let mut store = LabelStore::new();
        for a in self.corpus.annotations(1) {
            store.insert(a);
        }
        let path = self.path(name);
        std::fs::write(&path, store.to_csv_string()).unwrap();
        path
    }

    pub fn video_dir(&self, i: usize) -> String {
        self.corpus.videos[i].dir.to_str().unwrap().to_string()
    }
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
