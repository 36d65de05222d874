//! Ingests clinical notes and patient headers, filters notes by category and
//! enrollment date, splits note text into sentences with a rule-based
//! boundary detector, and packs sentences into overlapping chunks.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{self, FileError};

/// Note categories admitted by the default ingest filter.
pub const DEFAULT_CATEGORIES: [&str; 13] = [
    "Assessment & Plan Note",
    "Brief Op Note",
    "Consults",
    "Discharge Instructions",
    "Discharge Summary",
    "H&P",
    "H&P (View-Only)",
    "Op Note",
    "OR Surgeon",
    "Procedures",
    "Progress Notes",
    "Rad Onc Simulation",
    "Rad Onc Weekly Review",
];

/// One dated clinical note for one patient.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub patient_id: String,
    pub note_id: String,
    pub category: String,
    pub date: NaiveDate,
    pub text: String,
}

/// Demographics needed for prompt assembly and date filtering.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientHeader {
    pub patient_id: String,
    pub age_at_enrollment: u32,
    pub enrollment_date: NaiveDate,
}

/// A contiguous run of sentences from one note, with provenance metadata.
///
/// `sentence_range` holds 0-based inclusive sentence indices; `text` is the
/// covered sentences joined by single spaces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub patient_id: String,
    pub note_id: String,
    pub note_date: NaiveDate,
    pub note_category: String,
    pub sentence_range: (usize, usize),
    pub text: String,
}

#[derive(Debug, Error)]
pub enum NoteError {
    #[error("patient {patient_id} has duplicate note id {note_id}")]
    DuplicateNoteId { patient_id: String, note_id: String },
    #[error("duplicate patient id {0}")]
    DuplicatePatient(String),
    #[error("patient {patient_id} has age {age}, expected > 0")]
    InvalidAge { patient_id: String, age: i64 },
    #[error("chunk token budget must be >= 1")]
    InvalidBudget,
    #[error(transparent)]
    File(#[from] FileError),
}

/// A set of allowed note categories with case-insensitive membership.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategorySet {
    names: Vec<String>,
    lowered: BTreeSet<String>,
}

impl Default for CategorySet {
    fn default() -> Self {
        CategorySet::new(DEFAULT_CATEGORIES.iter().map(|s| s.to_string()))
    }
}

impl CategorySet {
    pub fn new(names: impl IntoIterator<Item = String>) -> Self {
        let names: Vec<String> = names.into_iter().collect();
        let lowered = names.iter().map(|n| n.to_lowercase()).collect();
        CategorySet { names, lowered }
    }

    pub fn contains(&self, category: &str) -> bool {
        self.lowered.contains(&category.to_lowercase())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Result of loading a notes file: parsed notes plus the ids of notes that
/// were dropped for lacking a parseable date.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NotesLoad {
    pub notes: Vec<ClinicalNote>,
    pub skipped_undated: Vec<String>,
}

#[derive(Deserialize)]
struct RawNote {
    patient_id: String,
    note_id: String,
    category: String,
    #[serde(default)]
    date: Option<String>,
    text: String,
}

/// Loads notes from JSON Lines. Notes without a parseable ISO-8601 date are
/// excluded with a warning; duplicate note ids within a patient are errors.
pub fn load_notes(path: &Path) -> Result<NotesLoad, NoteError> {
    let raw: Vec<RawNote> = util::read_jsonl(path)?;
    let mut load = NotesLoad::default();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for note in raw {
        if !seen.insert((note.patient_id.clone(), note.note_id.clone())) {
            return Err(NoteError::DuplicateNoteId {
                patient_id: note.patient_id,
                note_id: note.note_id,
            });
        }
        let date = note
            .date
            .as_deref()
            .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok());
        match date {
            Some(date) => load.notes.push(ClinicalNote {
                patient_id: note.patient_id,
                note_id: note.note_id,
                category: note.category,
                date,
                text: note.text,
            }),
            None => {
                log::warn!(
                    "excluding note {} of patient {}: no parseable date",
                    note.note_id,
                    note.patient_id
                );
                load.skipped_undated.push(note.note_id);
            }
        }
    }
    Ok(load)
}

/// Writes notes as JSON Lines in input order.
pub fn save_notes(path: &Path, notes: &[ClinicalNote]) -> Result<(), NoteError> {
    util::write_jsonl(path, notes)?;
    Ok(())
}

/// Loads patient headers from JSON Lines, rejecting duplicates and
/// non-positive ages.
pub fn load_patients(path: &Path) -> Result<Vec<PatientHeader>, NoteError> {
    let headers: Vec<PatientHeader> = util::read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for header in &headers {
        if header.age_at_enrollment == 0 {
            return Err(NoteError::InvalidAge {
                patient_id: header.patient_id.clone(),
                age: 0,
            });
        }
        if !seen.insert(header.patient_id.clone()) {
            return Err(NoteError::DuplicatePatient(header.patient_id.clone()));
        }
    }
    Ok(headers)
}

/// Keeps notes dated on or before enrollment whose category is allowed,
/// preserving input order.
pub fn filter_notes(
    notes: &[ClinicalNote],
    header: &PatientHeader,
    allowed: &CategorySet,
) -> Vec<ClinicalNote> {
    notes
        .iter()
        .filter(|n| n.date <= header.enrollment_date && allowed.contains(&n.category))
        .cloned()
        .collect()
}

/// Collapses all whitespace runs to single spaces and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Number of whitespace-delimited tokens; the budget unit for chunking.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Tokens that suppress a sentence boundary when they precede a period.
/// Matching is case-sensitive, so "No. 5" stays joined while "no." ends a
/// sentence.
pub const DEFAULT_ABBREVIATIONS: [&str; 16] = [
    "Dr", "Mr", "Mrs", "Ms", "Prof", "St", "vs", "etc", "e.g", "i.e", "mg", "ml", "mcg", "No",
    "Fig", "approx",
];

/// Rule-based sentence boundary detector.
///
/// Boundaries occur at '.', '!', or '?' followed by whitespace and an
/// uppercase letter or digit, and at blank lines. A period is not a boundary
/// when the token before it is in the abbreviation guard list. Sentences are
/// whitespace-normalized, so joining them with single spaces reconstructs
/// the normalized input text.
#[derive(Clone, Debug)]
pub struct SentenceSplitter {
    guards: BTreeSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        SentenceSplitter::new(DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()))
    }
}

impl SentenceSplitter {
    pub fn new(guards: impl IntoIterator<Item = String>) -> Self {
        SentenceSplitter {
            guards: guards.into_iter().collect(),
        }
    }

    pub fn split(&self, text: &str) -> Vec<String> {
        let mut sentences = Vec::new();
        for paragraph in split_paragraphs(text) {
            self.split_paragraph(&paragraph, &mut sentences);
        }
        sentences
    }

    fn split_paragraph(&self, paragraph: &str, sentences: &mut Vec<String>) {
        let chars: Vec<char> = paragraph.chars().collect();
        let mut start = 0usize;
        let mut i = 0usize;
        while i < chars.len() {
            let c = chars[i];
            if c == '.' || c == '!' || c == '?' {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_whitespace() {
                    j += 1;
                }
                let followed_by_ws = j > i + 1;
                let starts_new = j < chars.len()
                    && (chars[j].is_uppercase() || chars[j].is_ascii_digit());
                let guarded = c == '.' && self.is_guarded(&chars[..i]);
                if followed_by_ws && starts_new && !guarded {
                    push_sentence(sentences, &chars[start..=i]);
                    start = j;
                    i = j;
                    continue;
                }
            }
            i += 1;
        }
        if start < chars.len() {
            push_sentence(sentences, &chars[start..]);
        }
    }

    /// True when the maximal alphanumeric-or-dot run ending at the period is
    /// a guarded abbreviation.
    fn is_guarded(&self, before: &[char]) -> bool {
        let token: String = before
            .iter()
            .rev()
            .take_while(|c| c.is_alphanumeric() || **c == '.')
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        !token.is_empty() && self.guards.contains(&token)
    }
}

fn push_sentence(sentences: &mut Vec<String>, span: &[char]) {
    let normalized = normalize_whitespace(&span.iter().collect::<String>());
    if !normalized.is_empty() {
        sentences.push(normalized);
    }
}

/// Splits text at blank lines (lines containing only whitespace).
fn split_paragraphs(text: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                paragraphs.push(std::mem::take(&mut current));
            }
            current.clear();
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    if !current.trim().is_empty() {
        paragraphs.push(current);
    }
    paragraphs
}

/// Splits the default splitter's sentences; convenience for callers that do
/// not customize the guard list.
pub fn split_sentences(text: &str) -> Vec<String> {
    SentenceSplitter::default().split(text)
}

/// Packs sentence token counts into chunk spans (0-based inclusive).
///
/// The first chunk packs greedily from sentence 0 up to the budget. Each
/// subsequent chunk starts at the previous chunk's last sentence and must
/// take at least one new sentence, so a chunk may exceed the budget when a
/// single sentence (or a forced overlap pair) is larger than the budget;
/// such chunks are kept and logged.
pub fn chunk_spans(
    token_counts: &[usize],
    max_tokens_per_chunk: usize,
) -> Result<Vec<(usize, usize)>, NoteError> {
    if max_tokens_per_chunk == 0 {
        return Err(NoteError::InvalidBudget);
    }
    let n = token_counts.len();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    if n == 0 {
        return Ok(spans);
    }
    let mut start = 0usize;
    loop {
        // Later chunks begin at the previous chunk's last sentence and must
        // also include at least one sentence not yet covered.
        let min_end = if spans.is_empty() { start } else { start + 1 };
        let mut end = min_end;
        let mut tokens: usize = token_counts[start..=end].iter().sum();
        while end + 1 < n && tokens + token_counts[end + 1] <= max_tokens_per_chunk {
            end += 1;
            tokens += token_counts[end];
        }
        if tokens > max_tokens_per_chunk {
            log::warn!(
                "chunk spanning sentences {start}..={end} has {tokens} tokens, over the budget of {max_tokens_per_chunk}"
            );
        }
        spans.push((start, end));
        if end == n - 1 {
            return Ok(spans);
        }
        start = end;
    }
}

/// Splits a note into sentences and packs them into overlapping chunks.
pub fn chunk_note(
    note: &ClinicalNote,
    splitter: &SentenceSplitter,
    max_tokens_per_chunk: usize,
) -> Result<Vec<Chunk>, NoteError> {
    let sentences = splitter.split(&note.text);
    let counts: Vec<usize> = sentences.iter().map(|s| whitespace_token_count(s)).collect();
    let spans = chunk_spans(&counts, max_tokens_per_chunk)?;
    Ok(spans
        .into_iter()
        .map(|(start, end)| Chunk {
            chunk_id: util::stable_id(&[
                &note.patient_id,
                &note.note_id,
                &start.to_string(),
                &end.to_string(),
            ]),
            patient_id: note.patient_id.clone(),
            note_id: note.note_id.clone(),
            note_date: note.date,
            note_category: note.category.clone(),
            sentence_range: (start, end),
            text: sentences[start..=end].join(" "),
        })
        .collect())
}

/// Writes chunks as JSON Lines.
pub fn save_chunks(path: &Path, chunks: &[Chunk]) -> Result<(), NoteError> {
    util::write_jsonl(path, chunks)?;
    Ok(())
}

/// Loads chunks written by [`save_chunks`].
pub fn load_chunks(path: &Path) -> Result<Vec<Chunk>, NoteError> {
    Ok(util::read_jsonl(path)?)
}
