//! Builds chronological evidence prompts per question, calls a pluggable QA
//! backend under deterministic settings, parses structured answers, and
//! degrades to an explicit NA record when the backend output stays
//! malformed after retries.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::TokenUsage;
use crate::criteria_logic::{AnswerValue, Question};
use crate::note_store::{Chunk, PatientHeader};
use crate::retriever::{self, EmbeddingProvider, RetrieverError, VectorIndex};
use crate::util::FileError;

/// One evidence excerpt with the metadata used for ordering and display.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvidenceItem {
    pub note_date: chrono::NaiveDate,
    pub note_category: String,
    pub note_id: String,
    pub sentence_start: usize,
    pub chunk_id: String,
    pub text: String,
}

impl EvidenceItem {
    pub fn from_chunk(chunk: &Chunk) -> Self {
        EvidenceItem {
            note_date: chunk.note_date,
            note_category: chunk.note_category.clone(),
            note_id: chunk.note_id.clone(),
            sentence_start: chunk.sentence_range.0,
            chunk_id: chunk.chunk_id.clone(),
            text: chunk.text.clone(),
        }
    }
}

/// Evidence items sorted ascending by note date (ties: note id, then
/// sentence start), plus the patient header for the prompt preamble.
/// Construction sorts, so a bundle is always chronological.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvidenceBundle {
    header: PatientHeader,
    items: Vec<EvidenceItem>,
}

impl EvidenceBundle {
    pub fn new(header: PatientHeader, mut items: Vec<EvidenceItem>) -> Self {
        items.sort_by(|a, b| {
            a.note_date
                .cmp(&b.note_date)
                .then_with(|| a.note_id.cmp(&b.note_id))
                .then_with(|| a.sentence_start.cmp(&b.sentence_start))
        });
        EvidenceBundle { header, items }
    }

    pub fn header(&self) -> &PatientHeader {
        &self.header
    }

    pub fn items(&self) -> &[EvidenceItem] {
        &self.items
    }
}

/// Marker inserted in place of evidence lines when retrieval found nothing.
pub const NO_EVIDENCE_MARKER: &str = "(no evidence retrieved)";

/// Versioned prompt text with `{age}`, `{enrollment_date}`, `{evidence}`,
/// and `{question}` placeholders.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: String,
    pub text: String,
}

const QA_PROMPT_V1: &str = include_str!("../assets/qa_prompt_v1.txt");
pub const PROMPT_VERSION_V1: &str = "qa-v1";

const PLACEHOLDERS: [&str; 4] = ["{age}", "{enrollment_date}", "{evidence}", "{question}"];

impl PromptTemplate {
    /// The shipped template.
    pub fn qa_v1() -> Self {
        PromptTemplate {
            version: PROMPT_VERSION_V1.to_string(),
            text: QA_PROMPT_V1.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), QaError> {
        for placeholder in PLACEHOLDERS {
            if !self.text.contains(placeholder) {
                return Err(QaError::TemplateMissingPlaceholder {
                    version: self.version.clone(),
                    placeholder,
                });
            }
        }
        Ok(())
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::qa_v1()
    }
}

/// Renders the deterministic prompt: header, dated evidence lines in bundle
/// order, the question, and the output-format instructions.
pub fn build_prompt(
    question: &Question,
    bundle: &EvidenceBundle,
    template: &PromptTemplate,
) -> String {
    let evidence = if bundle.items().is_empty() {
        NO_EVIDENCE_MARKER.to_string()
    } else {
        bundle
            .items()
            .iter()
            .map(|item| {
                format!(
                    "[{}] [{}] {}",
                    item.note_date.format("%Y-%m-%d"),
                    item.note_category,
                    item.text
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    template
        .text
        .replace("{age}", &bundle.header().age_at_enrollment.to_string())
        .replace(
            "{enrollment_date}",
            &bundle.header().enrollment_date.format("%Y-%m-%d").to_string(),
        )
        .replace("{evidence}", &evidence)
        .replace("{question}", &question.text)
}

/// Backend call settings; temperature is pinned to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaBackendConfig {
    pub temperature: f64,
    pub max_response_chars: usize,
    pub timeout_secs: u64,
    pub retry_count: usize,
}

impl Default for QaBackendConfig {
    fn default() -> Self {
        QaBackendConfig {
            temperature: 0.0,
            max_response_chars: 8000,
            timeout_secs: 60,
            retry_count: 2,
        }
    }
}

impl QaBackendConfig {
    pub fn validate(&self) -> Result<(), QaError> {
        if self.temperature != 0.0 {
            return Err(QaError::InvalidTemperature(self.temperature));
        }
        Ok(())
    }
}

/// The structured fields parsed from a backend response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub question_explanation: String,
    pub answer_explanation: String,
    pub answer: AnswerValue,
    pub confidence: u8,
    pub citations: Vec<String>,
}

/// Machine-readable reason attached to fallback NA records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackReason {
    /// One of "parse_error", "validation_error", "response_too_long".
    pub kind: String,
    pub message: String,
    pub attempts: usize,
}

/// One persisted answer for one (patient, question) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub patient_id: String,
    pub question_id: String,
    pub question_explanation: String,
    pub answer_explanation: String,
    pub answer: AnswerValue,
    pub confidence: u8,
    #[serde(default)]
    pub citations: Vec<String>,
    pub backend_tag: String,
    pub prompt_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<FallbackReason>,
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error("backend response is not the expected JSON object: {message}")]
    Parse { message: String, raw: String },
    #[error("backend response failed validation: {message}")]
    Validation { message: String, raw: String },
    #[error("backend response has {len} chars, over the {max} char limit")]
    ResponseTooLong { len: usize, max: usize },
    #[error("temperature {0} is not supported; answers must be deterministic (temperature 0)")]
    InvalidTemperature(f64),
    #[error("prompt template {version} lacks required placeholder {placeholder}")]
    TemplateMissingPlaceholder {
        version: String,
        placeholder: &'static str,
    },
    #[error("retrieved chunk {0} is missing from the chunk store")]
    UnknownChunk(String),
    #[error("no scripted response for patient {patient_id}, question {question_id}")]
    MissingFixture {
        patient_id: String,
        question_id: String,
    },
    #[error("QA transport failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error(transparent)]
    Retrieval(#[from] RetrieverError),
    #[error(transparent)]
    File(#[from] FileError),
}

impl QaError {
    /// Format failures trigger the retry-then-NA fallback; everything else
    /// propagates.
    fn format_kind(&self) -> Option<&'static str> {
        match self {
            QaError::Parse { .. } => Some("parse_error"),
            QaError::Validation { .. } => Some("validation_error"),
            QaError::ResponseTooLong { .. } => Some("response_too_long"),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
struct RawAnswer {
    question_explanation: String,
    answer_explanation: String,
    answer: String,
    confidence: i64,
    #[serde(default)]
    citations: Vec<String>,
}

/// Parses a backend response into its structured fields, normalizing answer
/// case and validating the confidence range.
pub fn parse_response(raw: &str) -> Result<ParsedAnswer, QaError> {
    let parsed: RawAnswer = serde_json::from_str(raw).map_err(|e| QaError::Parse {
        message: e.to_string(),
        raw: raw.to_string(),
    })?;
    let answer: AnswerValue = parsed.answer.parse().map_err(|e: String| QaError::Validation {
        message: e,
        raw: raw.to_string(),
    })?;
    if !(1..=5).contains(&parsed.confidence) {
        return Err(QaError::Validation {
            message: format!("confidence {} outside 1..=5", parsed.confidence),
            raw: raw.to_string(),
        });
    }
    Ok(ParsedAnswer {
        question_explanation: parsed.question_explanation,
        answer_explanation: parsed.answer_explanation,
        answer,
        confidence: parsed.confidence as u8,
        citations: parsed.citations,
    })
}

/// One QA call addressed to a backend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QaRequest {
    pub patient_id: String,
    pub question_id: String,
    pub prompt: String,
}

/// Pluggable question-answering backend.
pub trait QaBackend: Send + Sync {
    /// Identifier recorded in every QaRecord.
    fn tag(&self) -> &str;
    /// Returns the raw response text for one prompt.
    fn call(&self, request: &QaRequest, config: &QaBackendConfig) -> Result<String, QaError>;
}

/// Offline backend answering from a fixture keyed by
/// `"<patient_id>|<question_id>"`. String fixture values are returned
/// verbatim (allowing deliberately malformed responses in tests); any other
/// JSON value is serialized compactly.
#[derive(Clone, Debug, Default)]
pub struct ScriptedQaBackend {
    responses: BTreeMap<String, serde_json::Value>,
}

impl ScriptedQaBackend {
    pub const TAG: &'static str = "scripted";

    pub fn new(responses: BTreeMap<String, serde_json::Value>) -> Self {
        ScriptedQaBackend { responses }
    }

    pub fn from_file(path: &Path) -> Result<Self, QaError> {
        let bytes = std::fs::read(path).map_err(|e| FileError::io(path, e))?;
        let responses = serde_json::from_slice(&bytes)
            .map_err(|e| FileError::line(path, 0, e.to_string()))?;
        Ok(ScriptedQaBackend { responses })
    }

    pub fn fixture_key(patient_id: &str, question_id: &str) -> String {
        format!("{patient_id}|{question_id}")
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl QaBackend for ScriptedQaBackend {
    fn tag(&self) -> &str {
        ScriptedQaBackend::TAG
    }

    fn call(&self, request: &QaRequest, _config: &QaBackendConfig) -> Result<String, QaError> {
        let key = ScriptedQaBackend::fixture_key(&request.patient_id, &request.question_id);
        match self.responses.get(&key) {
            Some(serde_json::Value::String(text)) => Ok(text.clone()),
            Some(value) => Ok(value.to_string()),
            None => Err(QaError::MissingFixture {
                patient_id: request.patient_id.clone(),
                question_id: request.question_id.clone(),
            }),
        }
    }
}

/// Backend speaking the HTTP contract
/// `POST {prompt, temperature, max_chars} -> {text}`.
pub struct HttpQaBackend {
    pub endpoint: String,
    pub tag: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct QaHttpRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_chars: usize,
}

#[derive(Deserialize)]
struct QaHttpResponse {
    text: String,
}

impl HttpQaBackend {
    pub fn new(endpoint: impl Into<String>, tag: impl Into<String>, timeout_secs: u64) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs)))
            .build();
        HttpQaBackend {
            endpoint: endpoint.into(),
            tag: tag.into(),
            agent: config.into(),
        }
    }
}

impl QaBackend for HttpQaBackend {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn call(&self, request: &QaRequest, config: &QaBackendConfig) -> Result<String, QaError> {
        config.validate()?;
        let response: QaHttpResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(QaHttpRequest {
                prompt: &request.prompt,
                temperature: config.temperature,
                max_chars: config.max_response_chars,
            })
            .map_err(|e| QaError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?
            .body_mut()
            .read_json()
            .map_err(|e| QaError::Transport {
                attempts: 1,
                message: format!("invalid QA response envelope: {e}"),
            })?;
        Ok(response.text)
    }
}

/// Everything needed to answer questions for one patient.
pub struct QaContext<'a> {
    pub header: &'a PatientHeader,
    pub chunks_by_id: &'a BTreeMap<String, Chunk>,
    pub index: &'a VectorIndex,
    pub provider: &'a dyn EmbeddingProvider,
    pub top_k: usize,
    pub template: &'a PromptTemplate,
}

/// An answer record plus the token usage spent producing it (prompt tokens
/// per attempt sent, response tokens per response received).
#[derive(Clone, Debug, PartialEq)]
pub struct QaOutcome {
    pub record: QaRecord,
    pub usage: TokenUsage,
}

/// Retrieves evidence, prompts the backend, and parses the answer.
///
/// Format failures (unparseable or invalid responses) are retried
/// `retry_count` times and then downgraded to an NA record with confidence 1
/// and a machine-readable reason. Transport failures after retries
/// propagate as errors so the pair is marked incomplete rather than
/// silently NA.
pub fn answer_question(
    ctx: &QaContext<'_>,
    question: &Question,
    backend: &dyn QaBackend,
    config: &QaBackendConfig,
) -> Result<QaOutcome, QaError> {
    config.validate()?;
    ctx.template.validate()?;
    let hits = retriever::retrieve(ctx.index, &question.text, ctx.top_k.max(1), ctx.provider)?;
    let mut items = Vec::with_capacity(hits.len());
    for hit in &hits {
        let chunk = ctx
            .chunks_by_id
            .get(&hit.chunk_id)
            .ok_or_else(|| QaError::UnknownChunk(hit.chunk_id.clone()))?;
        items.push(EvidenceItem::from_chunk(chunk));
    }
    let bundle = EvidenceBundle::new(ctx.header.clone(), items);
    let prompt = build_prompt(question, &bundle, ctx.template);
    let prompt_tokens = crate::cost_model::count_tokens(&prompt);
    let request = QaRequest {
        patient_id: ctx.header.patient_id.clone(),
        question_id: question.id.clone(),
        prompt,
    };

    let attempts_allowed = config.retry_count + 1;
    let mut usage = TokenUsage::default();
    let mut last_error: Option<QaError> = None;
    for _ in 0..attempts_allowed {
        usage.input_tokens += prompt_tokens;
        let text = match backend.call(&request, config) {
            Ok(text) => text,
            Err(e @ QaError::Transport { .. }) => {
                last_error = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        usage.output_tokens += crate::cost_model::count_tokens(&text);
        if text.chars().count() > config.max_response_chars {
            last_error = Some(QaError::ResponseTooLong {
                len: text.chars().count(),
                max: config.max_response_chars,
            });
            continue;
        }
        match parse_response(&text) {
            Ok(parsed) => {
                return Ok(QaOutcome {
                    record: QaRecord {
                        patient_id: ctx.header.patient_id.clone(),
                        question_id: question.id.clone(),
                        question_explanation: parsed.question_explanation,
                        answer_explanation: parsed.answer_explanation,
                        answer: parsed.answer,
                        confidence: parsed.confidence,
                        citations: parsed.citations,
                        backend_tag: backend.tag().to_string(),
                        prompt_version: ctx.template.version.clone(),
                        fallback_reason: None,
                    },
                    usage,
                })
            }
            Err(e) => {
                last_error = Some(e);
                continue;
            }
        }
    }

    let error = last_error.expect("at least one attempt was made");
    match error.format_kind() {
        Some(kind) => {
            log::warn!(
                "patient {} question {}: falling back to NA after {attempts_allowed} attempts ({kind})",
                ctx.header.patient_id,
                question.id
            );
            Ok(QaOutcome {
                record: QaRecord {
                    patient_id: ctx.header.patient_id.clone(),
                    question_id: question.id.clone(),
                    question_explanation: "the backend response could not be used".into(),
                    answer_explanation: error.to_string(),
                    answer: AnswerValue::Na,
                    confidence: 1,
                    citations: Vec::new(),
                    backend_tag: backend.tag().to_string(),
                    prompt_version: ctx.template.version.clone(),
                    fallback_reason: Some(FallbackReason {
                        kind: kind.to_string(),
                        message: error.to_string(),
                        attempts: attempts_allowed,
                    }),
                },
                usage,
            })
        }
        None => match error {
            QaError::Transport { message, .. } => Err(QaError::Transport {
                attempts: attempts_allowed,
                message,
            }),
            other => Err(other),
        },
    }
}

/// Writes QA records as JSON Lines.
pub fn save_answers(path: &Path, records: &[QaRecord]) -> Result<(), QaError> {
    crate::util::write_jsonl(path, records)?;
    Ok(())
}

/// Loads QA records written by [`save_answers`].
pub fn load_answers(path: &Path) -> Result<Vec<QaRecord>, QaError> {
    Ok(crate::util::read_jsonl(path)?)
}
