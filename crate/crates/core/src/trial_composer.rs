//! Converts raw trial criteria text into a validated trial specification:
//! segments the inclusion and exclusion sections into criteria, asks a
//! pluggable generator for Yes/No/NA questions plus DNF logic per
//! criterion, classifies question concepts, and assigns clinical-importance
//! tiers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::{ConceptBook, ConceptLabel};
use crate::criteria_logic::{Criterion, CriterionKind, DnfExpression, Literal, Question};
use crate::note_store::normalize_whitespace;
use crate::util::FileError;

pub use crate::concepts::assign_tier;

/// Raw registry text for one trial, before composition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTrial {
    pub trial_id: String,
    pub title: String,
    #[serde(default)]
    pub inclusion_text: String,
    #[serde(default)]
    pub exclusion_text: String,
}

impl RawTrial {
    pub fn validate(&self) -> Result<(), ComposeError> {
        if self.trial_id.trim().is_empty() {
            return Err(ComposeError::EmptyTrialId);
        }
        if self.inclusion_text.trim().is_empty() && self.exclusion_text.trim().is_empty() {
            return Err(ComposeError::NoCriteriaText(self.trial_id.clone()));
        }
        Ok(())
    }
}

/// Current trial document schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// A composed trial: questions and criteria with resolved logic and tiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub schema_version: u32,
    pub trial_id: String,
    pub title: String,
    pub questions: Vec<Question>,
    pub criteria: Vec<Criterion>,
}

/// One question emitted by a generator; `concept` may be omitted, in which
/// case the concept classifier is consulted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<ConceptLabel>,
}

/// A literal in generator output, referencing a question by position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedLiteral {
    pub q_index: usize,
    #[serde(default)]
    pub negated: bool,
}

/// Per-criterion generator output: questions plus DNF over their positions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorOutput {
    pub questions: Vec<GeneratedQuestion>,
    pub dnf: Vec<Vec<GeneratedLiteral>>,
}

impl GeneratorOutput {
    /// Structural checks; failures count as format errors and trigger the
    /// retry-then-flag policy.
    pub fn validate(&self) -> Result<(), String> {
        if self.questions.is_empty() {
            return Err("generator emitted no questions".into());
        }
        for (i, q) in self.questions.iter().enumerate() {
            if q.text.trim().is_empty() {
                return Err(format!("question {i} has empty text"));
            }
        }
        if self.dnf.is_empty() {
            return Err("generator emitted no DNF clauses".into());
        }
        for (ci, clause) in self.dnf.iter().enumerate() {
            if clause.is_empty() {
                return Err(format!("DNF clause {ci} is empty"));
            }
            for literal in clause {
                if literal.q_index >= self.questions.len() {
                    return Err(format!(
                        "DNF clause {ci} references question index {} but only {} questions exist",
                        literal.q_index,
                        self.questions.len()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Structural problem found in a composed trial.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DanglingReference {
        criterion_id: String,
        question_id: String,
    },
    DuplicateQuestionId {
        question_id: String,
    },
    DuplicateCriterionId {
        criterion_id: String,
    },
    EmptyClause {
        criterion_id: String,
        clause_index: usize,
    },
    EmptyLogic {
        criterion_id: String,
    },
    TierOutOfRange {
        criterion_id: String,
        tier: u8,
    },
}

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("trial id must be non-empty")]
    EmptyTrialId,
    #[error("trial {0} has no criteria text in either section")]
    NoCriteriaText(String),
    #[error("criterion text is empty")]
    EmptyCriterion,
    #[error("generator output malformed: {message}")]
    Format { message: String, raw: String },
    #[error("generator transport failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("no scripted generator fixture for criterion {0:?}")]
    MissingGeneratorFixture(String),
    #[error("no scripted concept fixture for question {0:?}")]
    MissingConceptFixture(String),
    #[error("composed trial {trial_id} is structurally invalid: {violations:?}")]
    Invalid {
        trial_id: String,
        violations: Vec<Violation>,
    },
    #[error("unsupported trial schema version {0}, expected {SCHEMA_VERSION}")]
    UnsupportedSchema(u32),
    #[error(transparent)]
    File(#[from] FileError),
}

/// Pluggable criterion-to-questions backend.
pub trait QuestionGenerator: Send + Sync {
    fn tag(&self) -> &str;
    fn generate(
        &self,
        criterion_text: &str,
        kind: CriterionKind,
    ) -> Result<GeneratorOutput, ComposeError>;
}

/// Assigns a concept to a question when the generator did not.
pub trait ConceptClassifier: Send + Sync {
    fn classify(&self, question_text: &str) -> Result<ConceptLabel, ComposeError>;
}

fn bullet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:[-*•·]+|\(?\d+[.)]|\(?[a-z][.)])\s+").unwrap())
}

fn ends_terminal(s: &str) -> bool {
    matches!(
        s.trim_end().chars().last(),
        Some('.') | Some('!') | Some('?') | Some(';') | Some(':')
    )
}

/// Splits one criteria section into criterion texts.
///
/// Bullet- or number-marked lines always start a new criterion (marker
/// stripped); blank lines seal the current one. An unmarked line merges
/// into the open criterion above it when either side lacks terminal
/// punctuation — joining wrapped sentences and stray fragments — and starts
/// a new criterion otherwise. Output texts are whitespace-normalized.
pub fn segment_criteria(text: &str) -> Vec<String> {
    let mut blocks: Vec<String> = Vec::new();
    let mut open = false;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            open = false;
            continue;
        }
        if let Some(marker) = bullet_re().find(trimmed) {
            blocks.push(trimmed[marker.end()..].to_string());
            open = true;
            continue;
        }
        let merge = open
            && blocks
                .last()
                .map(|prev| !ends_terminal(prev) || !ends_terminal(trimmed))
                .unwrap_or(false);
        if merge {
            let last = blocks.last_mut().expect("open implies a block exists");
            last.push(' ');
            last.push_str(trimmed);
        } else {
            blocks.push(trimmed.to_string());
            open = true;
        }
    }
    blocks
        .iter()
        .map(|b| normalize_whitespace(b))
        .filter(|b| !b.is_empty())
        .collect()
}

/// Calls the generator for one criterion and validates the output shape.
pub fn generate_questions(
    criterion_text: &str,
    kind: CriterionKind,
    backend: &dyn QuestionGenerator,
) -> Result<GeneratorOutput, ComposeError> {
    if criterion_text.trim().is_empty() {
        return Err(ComposeError::EmptyCriterion);
    }
    let output = backend.generate(criterion_text, kind)?;
    output.validate().map_err(|message| ComposeError::Format {
        message,
        raw: serde_json::to_string(&output).unwrap_or_default(),
    })?;
    Ok(output)
}

/// Retries on format errors before a criterion is flagged.
pub const GENERATION_RETRIES: usize = 2;

/// Tier given to flagged criteria, which have no questions to derive a
/// tier from.
pub const FLAGGED_TIER: u8 = 4;

/// Composes a raw trial into a validated spec.
///
/// Criteria are numbered per section (`<trial>-inc-<n>` / `<trial>-exc-<n>`)
/// and their questions `<criterion>-q<m>`. A criterion whose generation
/// still fails format checks after [`GENERATION_RETRIES`] retries is
/// recorded with empty logic and `flagged = true`; transport failures
/// propagate instead. The criterion tier is the most important (minimum)
/// tier among its questions' concepts.
pub fn compose_trial(
    raw: &RawTrial,
    generator: &dyn QuestionGenerator,
    classifier: &dyn ConceptClassifier,
    book: &ConceptBook,
) -> Result<TrialSpec, ComposeError> {
    raw.validate()?;
    let mut questions = Vec::new();
    let mut criteria = Vec::new();
    let sections = [
        (CriterionKind::Inclusion, "inc", &raw.inclusion_text),
        (CriterionKind::Exclusion, "exc", &raw.exclusion_text),
    ];
    for (kind, infix, text) in sections {
        for (idx, criterion_text) in segment_criteria(text).into_iter().enumerate() {
            let criterion_id = format!("{}-{}-{}", raw.trial_id, infix, idx + 1);
            match generate_with_retries(&criterion_text, kind, generator)? {
                Some(output) => {
                    let first_q = questions.len();
                    for (qi, generated) in output.questions.iter().enumerate() {
                        let concept = match &generated.concept {
                            Some(c) => c.clone(),
                            None => classifier.classify(&generated.text)?,
                        };
                        questions.push(Question {
                            id: format!("{criterion_id}-q{}", qi + 1),
                            text: generated.text.clone(),
                            concept,
                        });
                    }
                    let tier = questions[first_q..]
                        .iter()
                        .map(|q| book.assign_tier(&q.concept))
                        .min()
                        .expect("validated output has at least one question");
                    let clauses = output
                        .dnf
                        .iter()
                        .map(|clause| {
                            clause
                                .iter()
                                .map(|lit| Literal {
                                    question_id: questions[first_q + lit.q_index].id.clone(),
                                    negated: lit.negated,
                                })
                                .collect()
                        })
                        .collect();
                    criteria.push(Criterion {
                        id: criterion_id,
                        source_text: criterion_text,
                        kind,
                        logic: DnfExpression::new(clauses),
                        tier,
                        flagged: false,
                    });
                }
                None => {
                    log::warn!(
                        "criterion {criterion_id} flagged: generation failed format checks after {} attempts",
                        GENERATION_RETRIES + 1
                    );
                    criteria.push(Criterion {
                        id: criterion_id,
                        source_text: criterion_text,
                        kind,
                        logic: DnfExpression::empty(),
                        tier: FLAGGED_TIER,
                        flagged: true,
                    });
                }
            }
        }
    }
    let spec = TrialSpec {
        schema_version: SCHEMA_VERSION,
        trial_id: raw.trial_id.clone(),
        title: raw.title.clone(),
        questions,
        criteria,
    };
    let violations = validate_trial(&spec);
    if !violations.is_empty() {
        return Err(ComposeError::Invalid {
            trial_id: spec.trial_id,
            violations,
        });
    }
    Ok(spec)
}

/// Ok(Some) on success, Ok(None) when format errors persisted through all
/// retries (criterion should be flagged), Err for transport and other hard
/// failures.
fn generate_with_retries(
    criterion_text: &str,
    kind: CriterionKind,
    generator: &dyn QuestionGenerator,
) -> Result<Option<GeneratorOutput>, ComposeError> {
    let mut last_error: Option<ComposeError> = None;
    for _ in 0..=GENERATION_RETRIES {
        match generate_questions(criterion_text, kind, generator) {
            Ok(output) => return Ok(Some(output)),
            Err(e @ (ComposeError::Format { .. } | ComposeError::Transport { .. })) => {
                last_error = Some(e);
            }
            Err(other) => return Err(other),
        }
    }
    match last_error.expect("at least one attempt was made") {
        ComposeError::Format { .. } => Ok(None),
        ComposeError::Transport { message, .. } => Err(ComposeError::Transport {
            attempts: GENERATION_RETRIES + 1,
            message,
        }),
        other => Err(other),
    }
}

/// Returns the structural violations of a spec; empty means valid.
/// Flagged criteria are allowed to have empty logic.
pub fn validate_trial(spec: &TrialSpec) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut question_ids = BTreeSet::new();
    for q in &spec.questions {
        if !question_ids.insert(q.id.as_str()) {
            violations.push(Violation::DuplicateQuestionId {
                question_id: q.id.clone(),
            });
        }
    }
    let mut criterion_ids = BTreeSet::new();
    for c in &spec.criteria {
        if !criterion_ids.insert(c.id.as_str()) {
            violations.push(Violation::DuplicateCriterionId {
                criterion_id: c.id.clone(),
            });
        }
        if !(1..=4).contains(&c.tier) {
            violations.push(Violation::TierOutOfRange {
                criterion_id: c.id.clone(),
                tier: c.tier,
            });
        }
        if c.logic.clauses.is_empty() && !c.flagged {
            violations.push(Violation::EmptyLogic {
                criterion_id: c.id.clone(),
            });
        }
        for (ci, clause) in c.logic.clauses.iter().enumerate() {
            if clause.is_empty() {
                violations.push(Violation::EmptyClause {
                    criterion_id: c.id.clone(),
                    clause_index: ci,
                });
            }
            for literal in clause {
                if !question_ids.contains(literal.question_id.as_str()) {
                    violations.push(Violation::DanglingReference {
                        criterion_id: c.id.clone(),
                        question_id: literal.question_id.clone(),
                    });
                }
            }
        }
    }
    violations
}

/// Serializes a spec as a pretty JSON document with stable field order.
pub fn serialize_trial(spec: &TrialSpec) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(spec).expect("trial specs always serialize");
    bytes.push(b'\n');
    bytes
}

/// Parses and structurally validates a serialized spec.
pub fn deserialize_trial(bytes: &[u8], origin: &Path) -> Result<TrialSpec, ComposeError> {
    let spec: TrialSpec = serde_json::from_slice(bytes)
        .map_err(|e| FileError::line(origin, 0, e.to_string()))?;
    if spec.schema_version != SCHEMA_VERSION {
        return Err(ComposeError::UnsupportedSchema(spec.schema_version));
    }
    let violations = validate_trial(&spec);
    if !violations.is_empty() {
        return Err(ComposeError::Invalid {
            trial_id: spec.trial_id,
            violations,
        });
    }
    Ok(spec)
}

/// Writes a spec to disk atomically.
pub fn save_trial(path: &Path, spec: &TrialSpec) -> Result<(), ComposeError> {
    crate::util::write_atomic(path, &serialize_trial(spec))?;
    Ok(())
}

/// Loads and validates a spec written by [`save_trial`].
pub fn load_trial(path: &Path) -> Result<TrialSpec, ComposeError> {
    let bytes = std::fs::read(path).map_err(|e| FileError::io(path, e))?;
    deserialize_trial(&bytes, path)
}

/// Scripted generator keyed by (whitespace-normalized) criterion text.
/// A fixture may hold a deliberately malformed output to exercise the
/// flagging path.
#[derive(Clone, Debug, Default)]
pub struct ScriptedGenerator {
    outputs: BTreeMap<String, GeneratorOutput>,
}

impl ScriptedGenerator {
    pub const TAG: &'static str = "scripted";

    pub fn new(outputs: BTreeMap<String, GeneratorOutput>) -> Self {
        ScriptedGenerator { outputs }
    }
}

impl QuestionGenerator for ScriptedGenerator {
    fn tag(&self) -> &str {
        ScriptedGenerator::TAG
    }

    fn generate(
        &self,
        criterion_text: &str,
        _kind: CriterionKind,
    ) -> Result<GeneratorOutput, ComposeError> {
        self.outputs
            .get(criterion_text)
            .cloned()
            .ok_or_else(|| ComposeError::MissingGeneratorFixture(criterion_text.to_string()))
    }
}

/// Scripted classifier keyed by question text, with an optional fallback
/// concept for unmapped questions (logged when used).
#[derive(Clone, Debug, Default)]
pub struct ScriptedClassifier {
    concepts: BTreeMap<String, String>,
    fallback: Option<ConceptLabel>,
}

impl ScriptedClassifier {
    pub fn new(concepts: BTreeMap<String, String>) -> Self {
        ScriptedClassifier {
            concepts,
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, concept: ConceptLabel) -> Self {
        self.fallback = Some(concept);
        self
    }
}

impl ConceptClassifier for ScriptedClassifier {
    fn classify(&self, question_text: &str) -> Result<ConceptLabel, ComposeError> {
        if let Some(concept) = self.concepts.get(question_text) {
            return Ok(ConceptLabel::new(concept.clone()));
        }
        match &self.fallback {
            Some(concept) => {
                log::warn!(
                    "no concept fixture for question {question_text:?}; using fallback {concept}"
                );
                Ok(concept.clone())
            }
            None => Err(ComposeError::MissingConceptFixture(
                question_text.to_string(),
            )),
        }
    }
}

/// Fixture file for scripted composition: generator outputs keyed by
/// criterion text, plus question-text → concept assignments.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ComposerFixtures {
    #[serde(default)]
    pub generator: BTreeMap<String, GeneratorOutput>,
    #[serde(default)]
    pub concepts: BTreeMap<String, String>,
}

impl ComposerFixtures {
    pub fn from_file(path: &Path) -> Result<Self, ComposeError> {
        let bytes = std::fs::read(path).map_err(|e| FileError::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| FileError::line(path, 0, e.to_string()).into())
    }

    pub fn into_backends(self) -> (ScriptedGenerator, ScriptedClassifier) {
        (
            ScriptedGenerator::new(self.generator),
            ScriptedClassifier::new(self.concepts)
                .with_fallback(ConceptLabel::new("Others")),
        )
    }
}

/// Generator speaking the HTTP contract
/// `POST {criterion_text, kind} -> {questions: [{text, concept}], dnf: [[{q_index, negated}]]}`.
pub struct HttpQuestionGenerator {
    pub endpoint: String,
    pub tag: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct GeneratorHttpRequest<'a> {
    criterion_text: &'a str,
    kind: &'a str,
}

impl HttpQuestionGenerator {
    pub fn new(endpoint: impl Into<String>, tag: impl Into<String>, timeout_secs: u64) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs)))
            .build();
        HttpQuestionGenerator {
            endpoint: endpoint.into(),
            tag: tag.into(),
            agent: config.into(),
        }
    }
}

impl QuestionGenerator for HttpQuestionGenerator {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn generate(
        &self,
        criterion_text: &str,
        kind: CriterionKind,
    ) -> Result<GeneratorOutput, ComposeError> {
        let kind_str = match kind {
            CriterionKind::Inclusion => "Inclusion",
            CriterionKind::Exclusion => "Exclusion",
        };
        let body = self
            .agent
            .post(&self.endpoint)
            .send_json(GeneratorHttpRequest {
                criterion_text,
                kind: kind_str,
            })
            .map_err(|e| ComposeError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?
            .body_mut()
            .read_to_string()
            .map_err(|e| ComposeError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        serde_json::from_str(&body).map_err(|e| ComposeError::Format {
            message: e.to_string(),
            raw: body,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn output(questions: &[(&str, Option<&str>)], dnf: &[&[(usize, bool)]]) -> GeneratorOutput {
        GeneratorOutput {
            questions: questions
                .iter()
                .map(|(text, concept)| GeneratedQuestion {
                    text: text.to_string(),
                    concept: concept.map(ConceptLabel::new),
                })
                .collect(),
            dnf: dnf
                .iter()
                .map(|clause| {
                    clause
                        .iter()
                        .map(|(q_index, negated)| GeneratedLiteral {
                            q_index: *q_index,
                            negated: *negated,
                        })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn raw_trial_validation() {
        let valid = RawTrial {
            trial_id: "NCT0001".into(),
            title: "A trial".into(),
            inclusion_text: "Age over 18 years.".into(),
            exclusion_text: String::new(),
        };
        valid.validate().unwrap();

        let no_id = RawTrial {
            trial_id: "  ".into(),
            ..valid.clone()
        };
        assert!(matches!(no_id.validate(), Err(ComposeError::EmptyTrialId)));

        let no_text = RawTrial {
            inclusion_text: String::new(),
            exclusion_text: "\n".into(),
            ..valid
        };
        assert!(matches!(
            no_text.validate(),
            Err(ComposeError::NoCriteriaText(_))
        ));
    }

    #[test]
    fn segmentation_splits_bullets() {
        let text = "- Age 18 years or older\n- ECOG performance status 0 or 1";
        assert_eq!(
            segment_criteria(text),
            vec!["Age 18 years or older", "ECOG performance status 0 or 1"]
        );
        let numbered = "1. First criterion.\n2. Second criterion.";
        assert_eq!(
            segment_criteria(numbered),
            vec!["First criterion.", "Second criterion."]
        );
        let starred = "* One\n* Two";
        assert_eq!(segment_criteria(starred), vec!["One", "Two"]);
    }

    #[test]
    fn segmentation_joins_wrapped_lines() {
        let wrapped = "- Histologically confirmed breast cancer with\n  measurable disease.";
        assert_eq!(
            segment_criteria(wrapped),
            vec!["Histologically confirmed breast cancer with measurable disease."]
        );
        let fragment = "First criterion.\nand a trailing fragment";
        assert_eq!(
            segment_criteria(fragment),
            vec!["First criterion. and a trailing fragment"]
        );
    }

    #[test]
    fn segmentation_splits_terminated_lines_and_blank_blocks() {
        assert_eq!(
            segment_criteria("First criterion.\nSecond criterion."),
            vec!["First criterion.", "Second criterion."]
        );
        assert_eq!(
            segment_criteria("Alpha\n\nBeta"),
            vec!["Alpha", "Beta"]
        );
        assert_eq!(segment_criteria(""), Vec::<String>::new());
        assert_eq!(
            segment_criteria("  Age  over\t18. "),
            vec!["Age over 18."]
        );
    }

    #[test]
    fn generator_output_structural_checks() {
        assert!(output(&[("q", None)], &[&[(0, false)]]).validate().is_ok());
        assert!(output(&[], &[]).validate().is_err());
        assert!(output(&[("q", None)], &[]).validate().is_err());
        assert!(output(&[("q", None)], &[&[]]).validate().is_err());
        assert!(output(&[("q", None)], &[&[(3, false)]]).validate().is_err());
        assert!(output(&[("", None)], &[&[(0, false)]]).validate().is_err());
    }

    fn scripted_single() -> ScriptedGenerator {
        let mut outputs = BTreeMap::new();
        outputs.insert(
            "Age 18 years or older".to_string(),
            output(
                &[("Is the patient 18 years of age or older?", Some("Others"))],
                &[&[(0, false)]],
            ),
        );
        ScriptedGenerator::new(outputs)
    }

    #[test]
    fn generate_questions_validates_and_propagates() {
        let backend = scripted_single();
        let out = generate_questions("Age 18 years or older", CriterionKind::Inclusion, &backend)
            .unwrap();
        assert_eq!(out.questions.len(), 1);
        assert_eq!(out.dnf.len(), 1);

        assert!(matches!(
            generate_questions("", CriterionKind::Inclusion, &backend),
            Err(ComposeError::EmptyCriterion)
        ));
        assert!(matches!(
            generate_questions("unknown text", CriterionKind::Inclusion, &backend),
            Err(ComposeError::MissingGeneratorFixture(_))
        ));
    }

    fn full_fixtures() -> (ScriptedGenerator, ScriptedClassifier) {
        let mut outputs = BTreeMap::new();
        outputs.insert(
            "Age 18 years or older".to_string(),
            output(
                &[("Is the patient 18 years of age or older?", Some("Others"))],
                &[&[(0, false)]],
            ),
        );
        outputs.insert(
            "ER positive or PR positive breast cancer".to_string(),
            output(
                &[
                    ("Is the tumor estrogen receptor positive?", Some("Genetic & Biologic Markers")),
                    ("Is the tumor progesterone receptor positive?", Some("Genetic & Biologic Markers")),
                    ("Does the patient have breast cancer?", Some("Cancer Type")),
                ],
                &[&[(0, false), (2, false)], &[(1, false), (2, false)]],
            ),
        );
        outputs.insert(
            "Uncontrolled diabetes.".to_string(),
            output(
                &[("Does the patient have uncontrolled diabetes?", None)],
                &[&[(0, false)]],
            ),
        );
        let mut concepts = BTreeMap::new();
        concepts.insert(
            "Does the patient have uncontrolled diabetes?".to_string(),
            "Comorbidities".to_string(),
        );
        (
            ScriptedGenerator::new(outputs),
            ScriptedClassifier::new(concepts),
        )
    }

    fn raw_trial() -> RawTrial {
        RawTrial {
            trial_id: "NCT0001".into(),
            title: "A study".into(),
            inclusion_text:
                "- Age 18 years or older\n- ER positive or PR positive breast cancer".into(),
            exclusion_text: "- Uncontrolled diabetes.".into(),
        }
    }

    #[test]
    fn compose_builds_questions_criteria_and_tiers() {
        let (generator, classifier) = full_fixtures();
        let book = ConceptBook::default();
        let spec = compose_trial(&raw_trial(), &generator, &classifier, &book).unwrap();
        assert_eq!(spec.schema_version, SCHEMA_VERSION);
        assert_eq!(spec.criteria.len(), 3);
        assert_eq!(spec.questions.len(), 5);

        let c1 = &spec.criteria[0];
        assert_eq!(c1.id, "NCT0001-inc-1");
        assert_eq!(c1.kind, CriterionKind::Inclusion);
        assert_eq!(c1.tier, 4); // Others
        assert_eq!(c1.logic.clauses.len(), 1);

        // Min-tier rule: markers (tier 2) and cancer type (tier 1) → tier 1.
        let c2 = &spec.criteria[1];
        assert_eq!(c2.id, "NCT0001-inc-2");
        assert_eq!(c2.tier, 1);
        assert_eq!(c2.logic.clauses.len(), 2);
        assert_eq!(c2.logic.clauses[0].len(), 2);

        // Classifier consulted for the question without an inline concept.
        let c3 = &spec.criteria[2];
        assert_eq!(c3.id, "NCT0001-exc-1");
        assert_eq!(c3.kind, CriterionKind::Exclusion);
        assert_eq!(c3.tier, 3); // Comorbidities
        let q5 = &spec.questions[4];
        assert_eq!(q5.concept.as_str(), "Comorbidities");
        assert_eq!(q5.id, "NCT0001-exc-1-q1");

        assert!(validate_trial(&spec).is_empty());
    }

    #[test]
    fn compose_empty_exclusion_section_yields_no_exclusions() {
        let (generator, classifier) = full_fixtures();
        let raw = RawTrial {
            exclusion_text: String::new(),
            ..raw_trial()
        };
        let spec =
            compose_trial(&raw, &generator, &classifier, &ConceptBook::default()).unwrap();
        assert!(spec
            .criteria
            .iter()
            .all(|c| c.kind == CriterionKind::Inclusion));
    }

    #[test]
    fn compose_flags_criteria_that_fail_format_checks() {
        let mut outputs = BTreeMap::new();
        // Malformed on purpose: no questions.
        outputs.insert("Unparseable criterion.".to_string(), GeneratorOutput::default());
        outputs.insert(
            "Age 18 years or older".to_string(),
            output(&[("Is the patient an adult?", Some("Others"))], &[&[(0, false)]]),
        );
        let generator = ScriptedGenerator::new(outputs);
        let classifier = ScriptedClassifier::default();
        let raw = RawTrial {
            trial_id: "NCT0002".into(),
            title: "t".into(),
            inclusion_text: "- Age 18 years or older\n- Unparseable criterion.".into(),
            exclusion_text: String::new(),
        };
        let spec =
            compose_trial(&raw, &generator, &classifier, &ConceptBook::default()).unwrap();
        assert_eq!(spec.criteria.len(), 2);
        let flagged = &spec.criteria[1];
        assert!(flagged.flagged);
        assert!(flagged.logic.clauses.is_empty());
        assert_eq!(flagged.tier, FLAGGED_TIER);
        assert!(validate_trial(&spec).is_empty());
    }

    #[test]
    fn compose_is_deterministic() {
        let (generator, classifier) = full_fixtures();
        let book = ConceptBook::default();
        let a = compose_trial(&raw_trial(), &generator, &classifier, &book).unwrap();
        let b = compose_trial(&raw_trial(), &generator, &classifier, &book).unwrap();
        assert_eq!(serialize_trial(&a), serialize_trial(&b));
    }

    fn tiny_spec() -> TrialSpec {
        TrialSpec {
            schema_version: SCHEMA_VERSION,
            trial_id: "t1".into(),
            title: "t".into(),
            questions: vec![Question {
                id: "t1-inc-1-q1".into(),
                text: "Is the patient an adult?".into(),
                concept: ConceptLabel::new("Others"),
            }],
            criteria: vec![Criterion {
                id: "t1-inc-1".into(),
                source_text: "Adults only.".into(),
                kind: CriterionKind::Inclusion,
                logic: DnfExpression::new(vec![vec![Literal::positive("t1-inc-1-q1")]]),
                tier: 4,
                flagged: false,
            }],
        }
    }

    #[test]
    fn validation_reports_each_violation_kind() {
        assert!(validate_trial(&tiny_spec()).is_empty());

        let mut dangling = tiny_spec();
        dangling.criteria[0].logic =
            DnfExpression::new(vec![vec![Literal::positive("q9")]]);
        assert!(matches!(
            validate_trial(&dangling).as_slice(),
            [Violation::DanglingReference { question_id, .. }] if question_id == "q9"
        ));

        let mut dup_q = tiny_spec();
        dup_q.questions.push(dup_q.questions[0].clone());
        assert!(validate_trial(&dup_q)
            .iter()
            .any(|v| matches!(v, Violation::DuplicateQuestionId { .. })));

        let mut dup_c = tiny_spec();
        dup_c.criteria.push(dup_c.criteria[0].clone());
        assert!(validate_trial(&dup_c)
            .iter()
            .any(|v| matches!(v, Violation::DuplicateCriterionId { .. })));

        let mut empty_clause = tiny_spec();
        empty_clause.criteria[0].logic = DnfExpression::new(vec![vec![]]);
        assert!(validate_trial(&empty_clause)
            .iter()
            .any(|v| matches!(v, Violation::EmptyClause { .. })));

        let mut empty_logic = tiny_spec();
        empty_logic.criteria[0].logic = DnfExpression::empty();
        assert!(validate_trial(&empty_logic)
            .iter()
            .any(|v| matches!(v, Violation::EmptyLogic { .. })));

        let mut bad_tier = tiny_spec();
        bad_tier.criteria[0].tier = 0;
        assert!(validate_trial(&bad_tier)
            .iter()
            .any(|v| matches!(v, Violation::TierOutOfRange { tier: 0, .. })));
    }

    #[test]
    fn trial_serialization_round_trips_and_checks_schema() {
        let spec = tiny_spec();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trial.json");
        save_trial(&path, &spec).unwrap();
        assert_eq!(load_trial(&path).unwrap(), spec);

        let mut wrong_version = spec.clone();
        wrong_version.schema_version = 99;
        let bytes = serde_json::to_vec(&wrong_version).unwrap();
        assert!(matches!(
            deserialize_trial(&bytes, &path),
            Err(ComposeError::UnsupportedSchema(99))
        ));

        let mut invalid = spec;
        invalid.criteria[0].logic =
            DnfExpression::new(vec![vec![Literal::positive("q9")]]);
        let bytes = serde_json::to_vec(&invalid).unwrap();
        assert!(matches!(
            deserialize_trial(&bytes, &path),
            Err(ComposeError::Invalid { .. })
        ));
    }

    #[test]
    fn fixture_file_round_trip() {
        let fixtures = json!({
            "generator": {
                "Age 18 years or older": {
                    "questions": [
                        {"text": "Is the patient 18 years of age or older?", "concept": "Others"}
                    ],
                    "dnf": [[{"q_index": 0}]]
                }
            },
            "concepts": {
                "Is the patient 18 years of age or older?": "Others"
            }
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.json");
        std::fs::write(&path, serde_json::to_vec(&fixtures).unwrap()).unwrap();
        let loaded = ComposerFixtures::from_file(&path).unwrap();
        assert_eq!(loaded.generator.len(), 1);
        assert_eq!(loaded.concepts.len(), 1);
        let (generator, _classifier) = loaded.into_backends();
        let out =
            generate_questions("Age 18 years or older", CriterionKind::Inclusion, &generator)
                .unwrap();
        assert!(!out.questions[0].text.is_empty());
        assert!(!out.dnf[0][0].negated);
    }

    #[test]
    fn scripted_classifier_fallback_behavior() {
        let strict = ScriptedClassifier::default();
        assert!(matches!(
            strict.classify("unmapped question"),
            Err(ComposeError::MissingConceptFixture(_))
        ));
        let lenient = ScriptedClassifier::default().with_fallback(ConceptLabel::new("Others"));
        assert_eq!(lenient.classify("unmapped question").unwrap().as_str(), "Others");
    }
}
