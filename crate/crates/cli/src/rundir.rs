//! Run-directory layout, stage dependencies and the single-writer lock.
//!
//! Stages communicate only through files under the run directory, so any
//! stage can be re-run or replaced independently and a finished run is a
//! complete audit trail.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use chronolens_core::catalog::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Detect,
    Split,
    Train,
    Evaluate,
    Ablate,
    Explain,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Detect => "detect",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Ablate => "ablate",
            Stage::Explain => "explain",
            Stage::Report => "report",
        }
    }
}

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> RunDir {
        RunDir { root: root.to_path_buf() }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    /// Task-scoped stage directory for stages whose artifacts depend on the
    /// active task.
    pub fn task_dir(&self, stage: Stage, task: Task) -> PathBuf {
        self.stage_dir(stage).join(task.to_string())
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.stage_dir(Stage::Ingest).join("catalog.json")
    }

    pub fn rejections_path(&self) -> PathBuf {
        self.stage_dir(Stage::Ingest).join("rejections.json")
    }

    pub fn crop_index_path(&self) -> PathBuf {
        self.stage_dir(Stage::Detect).join("crop_index.json")
    }

    pub fn crops_dir(&self) -> PathBuf {
        self.stage_dir(Stage::Detect).join("crops")
    }

    pub fn split_path(&self, task: Task) -> PathBuf {
        self.stage_dir(Stage::Split).join(format!("{task}.json"))
    }

    pub fn model_dir(&self, task: Task, branch: &str) -> PathBuf {
        self.task_dir(Stage::Train, task).join(branch)
    }

    pub fn scores_path(&self, task: Task) -> PathBuf {
        self.task_dir(Stage::Evaluate, task).join("scores.json")
    }

    pub fn report_path(&self, task: Task, model_id: &str) -> PathBuf {
        self.task_dir(Stage::Evaluate, task).join(format!("report_{model_id}.json"))
    }

    pub fn ablation_path(&self, task: Task) -> PathBuf {
        self.task_dir(Stage::Ablate, task).join("ablation.json")
    }

    /// The artifact whose presence marks a stage as complete.
    pub fn marker(&self, stage: Stage, task: Task) -> PathBuf {
        match stage {
            Stage::Ingest => self.catalog_path(),
            Stage::Detect => self.crop_index_path(),
            Stage::Split => self.split_path(task),
            Stage::Train => self.model_dir(task, "image").join("model.json"),
            Stage::Evaluate => self.scores_path(task),
            Stage::Ablate => self.ablation_path(task),
            Stage::Explain => self.task_dir(Stage::Explain, task).join("records.jsonl"),
            Stage::Report => self.task_dir(Stage::Report, task).join("report.md"),
        }
    }

    /// Enforce the stage dependency graph: a missing prerequisite fails with
    /// the name of the stage that has to run first.
    pub fn require(&self, stages: &[Stage], task: Task) -> Result<()> {
        for &stage in stages {
            if !self.marker(stage, task).exists() {
                bail!(
                    "missing prerequisite stage \"{}\": run `chronolens {}` first",
                    stage.name(),
                    stage.name()
                );
            }
        }
        Ok(())
    }

    /// Exclusive run-directory lock. One stage writes at a time.
    pub fn lock(&self) -> Result<LockGuard> {
        std::fs::create_dir_all(&self.root)
            .with_context(|| format!("cannot create run dir {}", self.root.display()))?;
        let path = self.root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "run directory {} is locked by another stage (remove {} if that run crashed)",
                    self.root.display(),
                    path.display()
                )
            }
            Err(e) => Err(e).with_context(|| format!("cannot create lock {}", path.display())),
        }
    }
}

pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_excludes_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        let guard = run.lock().unwrap();
        assert!(run.lock().is_err());
        drop(guard);
        assert!(run.lock().is_ok());
    }

    #[test]
    fn missing_prerequisite_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        let err = run.require(&[Stage::Train], Task::Dating).unwrap_err().to_string();
        assert!(err.contains("\"train\""), "{err}");
    }
}
