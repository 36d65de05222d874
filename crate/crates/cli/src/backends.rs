//! Backend construction from configuration: scripted (fixture-driven,
//! offline) or HTTP (remote services).

use anyhow::{bail, Context, Result};

use trialmatch_core::qa_engine::{HttpQaBackend, QaBackend, ScriptedQaBackend};
use trialmatch_core::retriever::{EmbeddingProvider, HttpEmbedder, MockEmbedder};
use trialmatch_core::trial_composer::{
    ComposerFixtures, ConceptClassifier, HttpQuestionGenerator, QuestionGenerator,
};

use crate::config::{BackendMode, PipelineConfig};

/// Generator plus the classifier that backfills missing question concepts.
pub fn generation_backends(
    config: &PipelineConfig,
) -> Result<(Box<dyn QuestionGenerator>, Box<dyn ConceptClassifier>)> {
    match config.backend.mode {
        BackendMode::Scripted => {
            let path = config
                .backend
                .generator_fixtures
                .as_deref()
                .context("backend.generator_fixtures is required in scripted mode")?;
            let fixtures = ComposerFixtures::from_file(path)
                .with_context(|| format!("loading generator fixtures {}", path.display()))?;
            let (generator, classifier) = fixtures.into_backends();
            Ok((Box::new(generator), Box::new(classifier)))
        }
        BackendMode::Http => {
            let url = config
                .backend
                .generator_url
                .as_deref()
                .context("backend.generator_url is required in http mode")?;
            warn_if_deterministic(config, "question generation");
            let generator =
                HttpQuestionGenerator::new(url, "http-gen", config.backend.timeout_secs);
            // No remote classifier contract exists; generated questions must
            // carry their own concepts in HTTP mode.
            let classifier = StrictClassifier;
            Ok((Box::new(generator), Box::new(classifier)))
        }
    }
}

/// Classifier used in HTTP mode: refuses questions without concepts so the
/// gap is visible instead of silently defaulting.
struct StrictClassifier;

impl ConceptClassifier for StrictClassifier {
    fn classify(
        &self,
        question_text: &str,
    ) -> std::result::Result<
        trialmatch_core::concepts::ConceptLabel,
        trialmatch_core::trial_composer::ComposeError,
    > {
        Err(trialmatch_core::trial_composer::ComposeError::MissingConceptFixture(
            question_text.to_string(),
        ))
    }
}

pub fn qa_backend(config: &PipelineConfig) -> Result<Box<dyn QaBackend>> {
    match config.backend.mode {
        BackendMode::Scripted => {
            let path = config
                .backend
                .qa_fixtures
                .as_deref()
                .context("backend.qa_fixtures is required in scripted mode")?;
            let backend = ScriptedQaBackend::from_file(path)
                .with_context(|| format!("loading QA fixtures {}", path.display()))?;
            Ok(Box::new(backend))
        }
        BackendMode::Http => {
            let url = config
                .backend
                .qa_url
                .as_deref()
                .context("backend.qa_url is required in http mode")?;
            warn_if_deterministic(config, "question answering");
            Ok(Box::new(HttpQaBackend::new(
                url,
                "http-qa",
                config.backend.timeout_secs,
            )))
        }
    }
}

pub fn embedder(config: &PipelineConfig) -> Result<Box<dyn EmbeddingProvider>> {
    match config.backend.mode {
        BackendMode::Scripted => Ok(Box::new(MockEmbedder)),
        BackendMode::Http => {
            let url = config
                .backend
                .embed_url
                .as_deref()
                .context("backend.embed_url is required in http mode")?;
            if config.backend.embed_tag.trim().is_empty() {
                bail!("backend.embed_tag must not be empty in http mode");
            }
            Ok(Box::new(HttpEmbedder::new(
                url,
                config.backend.embed_tag.as_str(),
                config.backend.embed_dim,
            )))
        }
    }
}

fn warn_if_deterministic(config: &PipelineConfig, what: &str) {
    if config.pipeline.deterministic {
        log::warn!(
            "pipeline.deterministic is set but {what} uses an HTTP backend; \
             reproducibility depends on the remote service"
        );
    }
}
