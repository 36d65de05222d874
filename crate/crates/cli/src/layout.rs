//! On-disk layout of one run: every artifact lives under
//! `<runs_dir>/<run_id>/` next to the manifest that describes it.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use trialmatch_core::scorer_ranker::{Direction, ScoringMethod};

pub struct RunLayout {
    pub run_id: String,
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(runs_dir: &Path, run_id: &str) -> Self {
        RunLayout {
            run_id: run_id.to_string(),
            root: runs_dir.join(run_id),
        }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn trials_dir(&self) -> PathBuf {
        self.root.join("trials")
    }

    pub fn trial(&self, trial_id: &str) -> PathBuf {
        self.trials_dir().join(format!("{trial_id}.json"))
    }

    /// Composed trial files, sorted by filename for deterministic iteration.
    pub fn list_trials(&self) -> Result<Vec<PathBuf>> {
        let dir = self.trials_dir();
        let entries = fs::read_dir(&dir)
            .with_context(|| format!("no composed trials at {} (run compose first)", dir.display()))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        Ok(paths)
    }

    pub fn patients(&self) -> PathBuf {
        self.root.join("patients.json")
    }

    pub fn chunks(&self, patient_id: &str) -> PathBuf {
        self.root.join("chunks").join(format!("{patient_id}.jsonl"))
    }

    pub fn index(&self, patient_id: &str) -> PathBuf {
        self.root.join("index").join(format!("{patient_id}.json"))
    }

    pub fn answers(&self, patient_id: &str, trial_id: &str) -> PathBuf {
        self.root
            .join("answers")
            .join(format!("{patient_id}__{trial_id}.jsonl"))
    }

    pub fn verdicts(&self, patient_id: &str, trial_id: &str) -> PathBuf {
        self.root
            .join("verdicts")
            .join(format!("{patient_id}__{trial_id}.jsonl"))
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }

    pub fn usage(&self) -> PathBuf {
        self.root.join("usage.json")
    }

    pub fn rankings(&self, direction: Direction, method: ScoringMethod) -> PathBuf {
        self.root
            .join("rankings")
            .join(format!("{}__{}.json", direction.as_str(), method.as_str()))
    }

    pub fn metrics(&self, direction: Direction, method: ScoringMethod) -> PathBuf {
        self.root
            .join("metrics")
            .join(format!("{}__{}.json", direction.as_str(), method.as_str()))
    }

    pub fn cost(&self) -> PathBuf {
        self.root.join("cost.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }
}

/// Rejects ids that cannot serve as filename stems: they must start with an
/// ASCII alphanumeric and contain only alphanumerics, `.`, `_`, or `-`.
pub fn validate_id(kind: &str, id: &str) -> Result<()> {
    let mut chars = id.chars();
    let ok_first = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphanumeric());
    let ok_rest = id
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if !ok_first || !ok_rest || id.len() > 100 {
        bail!("invalid {kind} id {id:?}: ids must start with a letter or digit and use only letters, digits, '.', '_', '-' (max 100 chars)");
    }
    Ok(())
}
