//! Pipeline configuration: one TOML file with defaults for every section and
//! environment-variable overrides for backend endpoints.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use trialmatch_core::criteria_logic::{VerdictThresholds, DEFAULT_MAX_MARGINALIZED};
use trialmatch_core::cost_model::{ApiPricing, ThroughputProfile};
use trialmatch_core::note_store::DEFAULT_CATEGORIES;
use trialmatch_core::retriever::{MockEmbedder, DEFAULT_TOP_K};
use trialmatch_core::scorer_ranker::{ScoringMethod, TierWeights};

/// Which backend family serves generation, QA, and embedding calls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    /// Fixture-driven backends: fully offline and deterministic.
    Scripted,
    /// Remote HTTP services configured via URLs.
    Http,
}

impl BackendMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendMode::Scripted => "scripted",
            BackendMode::Http => "http",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Raw trials, one JSON object per line.
    pub trials: PathBuf,
    /// Clinical notes, one JSON object per line.
    pub notes: PathBuf,
    /// Patient headers, one JSON object per line.
    pub patients: PathBuf,
    /// Relevance ground truth for ranking metrics (optional).
    pub ground_truth: Option<PathBuf>,
    /// Directory that holds one subdirectory per run.
    pub runs_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            trials: PathBuf::from("trials.jsonl"),
            notes: PathBuf::from("notes.jsonl"),
            patients: PathBuf::from("patients.jsonl"),
            ground_truth: None,
            runs_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Chunks retrieved per question.
    pub k: usize,
    /// Whitespace-token budget per chunk.
    pub chunk_max_tokens: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: DEFAULT_TOP_K,
            chunk_max_tokens: 256,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotesConfig {
    /// Note categories admitted into the evidence corpus (case-insensitive).
    pub allowed_categories: Vec<String>,
}

impl Default for NotesConfig {
    fn default() -> Self {
        NotesConfig {
            allowed_categories: DEFAULT_CATEGORIES.iter().map(|c| c.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Maximum concurrent QA calls.
    pub max_in_flight: usize,
    /// Default scoring method for ranking and reports.
    pub scoring_method: ScoringMethod,
    /// Cap on unknown answers enumerated exactly per criterion.
    pub max_marginalized: usize,
    /// Declares that runs must be reproducible without seeds. With HTTP
    /// backends this cannot be guaranteed, so stages log a warning.
    pub deterministic: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            max_in_flight: 4,
            scoring_method: ScoringMethod::WeightedTier,
            max_marginalized: DEFAULT_MAX_MARGINALIZED,
            deterministic: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: BackendMode,
    /// Scripted mode: question-generator and concept fixtures.
    pub generator_fixtures: Option<PathBuf>,
    /// Scripted mode: canned QA responses keyed by patient and question.
    pub qa_fixtures: Option<PathBuf>,
    /// HTTP mode endpoints; overridable via `TRIALMATCH_GENERATOR_URL`,
    /// `TRIALMATCH_QA_URL`, and `TRIALMATCH_EMBED_URL`.
    pub generator_url: Option<String>,
    pub qa_url: Option<String>,
    pub embed_url: Option<String>,
    /// Embedding dimension expected from the HTTP embedder.
    pub embed_dim: usize,
    /// Provider tag recorded in indexes built by the HTTP embedder.
    pub embed_tag: String,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: BackendMode::Scripted,
            generator_fixtures: None,
            qa_fixtures: None,
            generator_url: None,
            qa_url: None,
            embed_url: None,
            embed_dim: MockEmbedder::DIM,
            embed_tag: "http-embed".to_string(),
            timeout_secs: 60,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    /// Self-hosted throughput and machine rate.
    pub self_hosted: Option<ThroughputProfile>,
    /// Per-1000-token API prices.
    pub api: Option<ApiPricing>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub thresholds: VerdictThresholds,
    pub tier_weights: TierWeights,
    pub retrieval: RetrievalConfig,
    pub notes: NotesConfig,
    pub pipeline: PipelineSection,
    pub backend: BackendConfig,
    pub cost: CostSection,
}

impl PipelineConfig {
    /// Loads, resolves relative paths against the config file's directory,
    /// applies environment overrides, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.apply_env_overrides();
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.paths.trials);
        resolve(&mut self.paths.notes);
        resolve(&mut self.paths.patients);
        resolve(&mut self.paths.runs_dir);
        if let Some(gt) = self.paths.ground_truth.as_mut() {
            resolve(gt);
        }
        if let Some(p) = self.backend.generator_fixtures.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.backend.qa_fixtures.as_mut() {
            resolve(p);
        }
    }

    fn apply_env_overrides(&mut self) {
        let over = |target: &mut Option<String>, var: &str| {
            if let Ok(value) = std::env::var(var) {
                if !value.trim().is_empty() {
                    *target = Some(value);
                }
            }
        };
        over(&mut self.backend.generator_url, "TRIALMATCH_GENERATOR_URL");
        over(&mut self.backend.qa_url, "TRIALMATCH_QA_URL");
        over(&mut self.backend.embed_url, "TRIALMATCH_EMBED_URL");
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds
            .validate()
            .context("invalid verdict thresholds")?;
        self.tier_weights.validate().context("invalid tier weights")?;
        if self.retrieval.k == 0 {
            bail!("retrieval.k must be at least 1");
        }
        if self.retrieval.chunk_max_tokens == 0 {
            bail!("retrieval.chunk_max_tokens must be at least 1");
        }
        if self.pipeline.max_in_flight == 0 {
            bail!("pipeline.max_in_flight must be at least 1");
        }
        if self.notes.allowed_categories.is_empty() {
            bail!("notes.allowed_categories must not be empty");
        }
        if self.backend.embed_dim == 0 {
            bail!("backend.embed_dim must be at least 1");
        }
        Ok(())
    }
}
