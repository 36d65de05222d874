//! Patient-trial matching over clinical notes.
//!
//! The pipeline turns free-text trial eligibility criteria into yes/no
//! questions wired together by boolean logic, answers each question against a
//! patient's notes with retrieval-augmented QA, and turns the answers into
//! per-criterion verdicts, match scores, and candidate rankings:
//!
//! 1. [`trial_composer`] segments criteria text and composes a structured
//!    trial specification (questions + DNF logic per criterion).
//! 2. [`note_store`] filters notes by category and date, splits them into
//!    sentences, and packs sentences into overlapping chunks.
//! 3. [`retriever`] embeds chunks and serves exact top-k cosine retrieval.
//! 4. [`qa_engine`] builds evidence-grounded prompts and parses structured
//!    yes/no/NA answers from a QA backend.
//! 5. [`criteria_logic`] evaluates criterion DNFs under three-valued answers,
//!    marginalizing over unknowns to a probability and a verdict.
//! 6. [`scorer_ranker`] aggregates verdicts into match scores, ranks
//!    candidates, and computes retrieval-quality metrics.
//! 7. [`cost_model`] estimates runtime and dollar cost of a matching run.
//!
//! Everything is deterministic: scripted backends, exact retrieval, and
//! stable tie-breaking make repeated runs byte-identical.

pub mod concepts;
pub mod cost_model;
pub mod criteria_logic;
pub mod note_store;
pub mod qa_engine;
pub mod retriever;
pub mod scorer_ranker;
pub mod trial_composer;
pub mod util;
