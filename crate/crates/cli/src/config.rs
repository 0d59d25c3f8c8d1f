//! Run configuration: one JSON document that fully determines a run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use chronolens_core::catalog::Task;
use chronolens_core::evaluation::FixedCountMode;
use chronolens_core::nn::BackboneFamily;
use chronolens_core::training::AugmentConfig;

/// Which detector adapter feeds the regions stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DetectorChoice {
    /// Deterministic sidecar files next to each image.
    Stub,
    /// External pretrained detector invoked as a subprocess.
    Command { program: PathBuf },
}

impl Default for DetectorChoice {
    fn default() -> Self {
        DetectorChoice::Stub
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub early_stop_patience: Option<usize>,
    pub batch_size_image: usize,
    pub batch_size_crops: usize,
    pub augment: AugmentConfig,
    /// Merged model: train only fusion scalars and head (default) or
    /// fine-tune branch backbones too.
    pub freeze_backbones: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            epochs: 30,
            early_stop_patience: Some(5),
            batch_size_image: 32,
            batch_size_crops: 64,
            augment: AugmentConfig::default(),
            freeze_backbones: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub time_distances: Vec<u32>,
    pub top_ks: Vec<usize>,
    pub ablation_n: u32,
    pub ablation_mode: FixedCountMode,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            time_distances: vec![0, 5, 10],
            top_ks: vec![1, 2, 3, 4, 5],
            ablation_n: 8,
            ablation_mode: FixedCountMode::Conjunctive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainTarget {
    Predicted,
    Truth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSettings {
    pub opacity: f64,
    pub target: ExplainTarget,
    /// Explained photos per run when no ids are given explicitly.
    pub sample: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings { opacity: 0.45, target: ExplainTarget::Predicted, sample: 8 }
    }
}

/// Everything a run needs, serialized into the run directory before any
/// stage writes an artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub manifest: PathBuf,
    pub image_root: PathBuf,
    pub run_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub detector: DetectorChoice,
    #[serde(default = "default_confidence_floor")]
    pub confidence_floor: f64,
    #[serde(default = "default_backbone")]
    pub backbone: BackboneFamily,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub evaluation: EvalSettings,
    #[serde(default)]
    pub explain: ExplainSettings,
}

fn default_confidence_floor() -> f64 {
    0.25
}

fn default_backbone() -> BackboneFamily {
    BackboneFamily::Resnet50Class
}

/// Flag-level overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<Task>,
    pub seed: Option<u64>,
    pub run_dir: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(config)
    }

    pub fn apply(mut self, overrides: &Overrides) -> RunConfig {
        if let Some(task) = overrides.task {
            self.task = task;
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(dir) = &overrides.run_dir {
            self.run_dir = dir.clone();
        }
        if let Some(root) = &overrides.image_root {
            self.image_root = root.clone();
        }
        if let Some(manifest) = &overrides.manifest {
            self.manifest = manifest.clone();
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            bail!("confidence floor {} outside [0,1]", self.confidence_floor);
        }
        if !(0.0..=1.0).contains(&self.explain.opacity) {
            bail!("explain opacity {} outside [0,1]", self.explain.opacity);
        }
        if self.evaluation.ablation_n == 0 {
            bail!("ablation n must be >= 1");
        }
        Ok(())
    }

    /// Persist into the run directory. Serialization is deterministic, so
    /// re-running an identical configuration leaves the file byte-identical.
    pub fn persist(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.run_dir)
            .with_context(|| format!("cannot create run dir {}", self.run_dir.display()))?;
        let path = self.run_dir.join("run_config.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

pub fn parse_task(s: &str) -> Result<Task> {
    match s.trim().to_ascii_lowercase().as_str() {
        "dating" => Ok(Task::Dating),
        "context" => Ok(Task::Context),
        other => bail!("unknown task {other:?} (expected dating or context)"),
    }
}
