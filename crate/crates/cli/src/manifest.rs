//! Run manifest: the single metadata record each run's artifacts belong to.
//! It snapshots the configuration, hashes the inputs, and tracks which
//! stages completed. Timestamps live only here, so data artifacts stay
//! byte-reproducible.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use trialmatch_core::qa_engine::PROMPT_VERSION_V1;
use trialmatch_core::util::{sha256_file, sha256_hex, write_atomic};

use crate::config::PipelineConfig;
use crate::layout::RunLayout;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_at: String,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IncompletePair {
    pub patient_id: String,
    pub trial_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: String,
    pub updated_at: String,
    pub prompt_version: String,
    pub backend_mode: String,
    #[serde(default)]
    pub backend_tags: BTreeMap<String, String>,
    #[serde(default)]
    pub input_hashes: BTreeMap<String, String>,
    pub config: serde_json::Value,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
    #[serde(default)]
    pub incomplete_pairs: Vec<IncompletePair>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// SHA-256 per input file; files that do not exist hash to "absent" so the
/// derived run id still changes when they appear.
pub fn input_hashes(config: &PipelineConfig) -> BTreeMap<String, String> {
    let mut entries: Vec<(&str, Option<&Path>)> = vec![
        ("trials", Some(config.paths.trials.as_path())),
        ("notes", Some(config.paths.notes.as_path())),
        ("patients", Some(config.paths.patients.as_path())),
        ("ground_truth", config.paths.ground_truth.as_deref()),
        (
            "generator_fixtures",
            config.backend.generator_fixtures.as_deref(),
        ),
        ("qa_fixtures", config.backend.qa_fixtures.as_deref()),
    ];
    let mut hashes = BTreeMap::new();
    for (name, path) in entries.drain(..) {
        let value = match path {
            Some(p) if p.exists() => sha256_file(p)
                .map(|h| format!("sha256:{h}"))
                .unwrap_or_else(|e| format!("unreadable: {e}")),
            _ => "absent".to_string(),
        };
        hashes.insert(name.to_string(), value);
    }
    hashes
}

/// Default run id: a stable digest of the effective configuration and the
/// input file hashes, so identical inputs land in the same run directory.
pub fn derive_run_id(config_snapshot: &serde_json::Value, hashes: &BTreeMap<String, String>) -> String {
    let mut material = config_snapshot.to_string();
    for (name, hash) in hashes {
        material.push('\n');
        material.push_str(name);
        material.push('=');
        material.push_str(hash);
    }
    sha256_hex(material.as_bytes())[..12].to_string()
}

impl RunManifest {
    /// Loads the run's manifest if present (keeping its creation time,
    /// stage history, and incomplete-pair list), otherwise starts a new one.
    /// The config snapshot, hashes, and backend mode always reflect the
    /// current invocation.
    pub fn load_or_create(
        layout: &RunLayout,
        config: &PipelineConfig,
        config_snapshot: serde_json::Value,
        hashes: BTreeMap<String, String>,
    ) -> Result<Self> {
        let path = layout.manifest();
        let mut manifest = if path.exists() {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("cannot read manifest {}", path.display()))?;
            serde_json::from_str::<RunManifest>(&text)
                .with_context(|| format!("corrupt manifest {}", path.display()))?
        } else {
            RunManifest {
                run_id: layout.run_id.clone(),
                created_at: now(),
                updated_at: now(),
                prompt_version: PROMPT_VERSION_V1.to_string(),
                backend_mode: String::new(),
                backend_tags: BTreeMap::new(),
                input_hashes: BTreeMap::new(),
                config: serde_json::Value::Null,
                stages: BTreeMap::new(),
                incomplete_pairs: Vec::new(),
            }
        };
        manifest.run_id = layout.run_id.clone();
        manifest.backend_mode = config.backend.mode.as_str().to_string();
        manifest.config = config_snapshot;
        manifest.input_hashes = hashes;
        Ok(manifest)
    }

    pub fn set_backend_tag(&mut self, role: &str, tag: &str) {
        self.backend_tags.insert(role.to_string(), tag.to_string());
    }

    pub fn record_stage(&mut self, name: &str, detail: impl Into<String>) {
        let stamp = now();
        self.updated_at = stamp.clone();
        self.stages.insert(
            name.to_string(),
            StageRecord {
                completed_at: stamp,
                detail: detail.into(),
            },
        );
    }

    pub fn save(&self, layout: &RunLayout) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).context("serialize manifest")?;
        bytes.push(b'\n');
        write_atomic(&layout.manifest(), &bytes)
            .with_context(|| format!("write manifest {}", layout.manifest().display()))?;
        Ok(())
    }
}
