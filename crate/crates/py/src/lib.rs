//! Python bindings over the eligibility-matching core. The surface mirrors
//! the core operations with plain Python types: DNF clauses are lists of
//! `(question_index, negated)` tuples, answers and verdicts are strings, and
//! criterion results are `(criterion_id, tier, verdict)` tuples.

use std::collections::{BTreeMap, BTreeSet};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use trialmatch_core::concepts::{self, ConceptLabel};
use trialmatch_core::cost_model::{self, ApiPricing, ThroughputProfile, TokenUsage};
use trialmatch_core::criteria_logic::{
    evaluate_criterion as core_evaluate, verdict_with_thresholds, AnswerValue, Criterion,
    CriterionKind, DnfExpression, EvalConfig, Literal, Verdict, VerdictThresholds,
};
use trialmatch_core::note_store;
use trialmatch_core::qa_engine;
use trialmatch_core::retriever::{self, EmbeddingProvider, EmbeddingVector, MockEmbedder};
use trialmatch_core::scorer_ranker::{self, CriterionResult, TierWeights};
use trialmatch_core::trial_composer;

fn value_err(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn verdict_str(verdict: Verdict) -> &'static str {
    match verdict {
        Verdict::Met => "Met",
        Verdict::NotMet => "NotMet",
        Verdict::Na => "NA",
    }
}

fn parse_verdict(s: &str) -> PyResult<Verdict> {
    match s {
        "Met" => Ok(Verdict::Met),
        "NotMet" => Ok(Verdict::NotMet),
        "NA" => Ok(Verdict::Na),
        other => Err(value_err(format!(
            "unknown verdict {other:?}; expected Met, NotMet, or NA"
        ))),
    }
}

fn parse_results(results: Vec<(String, u8, String)>) -> PyResult<Vec<CriterionResult>> {
    results
        .into_iter()
        .map(|(id, tier, verdict)| Ok(CriterionResult::new(id, tier, parse_verdict(&verdict)?)))
        .collect()
}

/// Evaluates one criterion's DNF over three-valued answers.
///
/// `clauses` is an OR of ANDs of `(question_index, negated)` literals;
/// `answers[i]` ("yes" / "no" / "na", case-insensitive) answers question
/// `i`. Unknown answers are marginalized exactly up to `max_marginalized`;
/// beyond the cap the verdict degrades to NA at probability 0.5. For
/// exclusion criteria the eligibility probability is `1 - p`. Returns
/// `(probability, verdict, num_marginalized)`.
#[pyfunction]
#[pyo3(signature = (clauses, answers, exclusion = false, max_marginalized = 20, met = 0.66, not_met = 0.34))]
fn evaluate_dnf(
    clauses: Vec<Vec<(usize, bool)>>,
    answers: Vec<String>,
    exclusion: bool,
    max_marginalized: usize,
    met: f64,
    not_met: f64,
) -> PyResult<(f64, String, usize)> {
    let n = answers.len();
    let mut by_id: BTreeMap<String, AnswerValue> = BTreeMap::new();
    for (i, answer) in answers.iter().enumerate() {
        let value: AnswerValue = answer.parse().map_err(value_err)?;
        by_id.insert(format!("q{i}"), value);
    }
    let mut literal_clauses = Vec::with_capacity(clauses.len());
    for clause in &clauses {
        let mut literals = Vec::with_capacity(clause.len());
        for &(index, negated) in clause {
            if index >= n {
                return Err(value_err(format!(
                    "literal references question {index}, but only {n} answers were given"
                )));
            }
            literals.push(Literal {
                question_id: format!("q{index}"),
                negated,
            });
        }
        literal_clauses.push(literals);
    }
    let criterion = Criterion {
        id: "py".into(),
        source_text: String::new(),
        kind: if exclusion {
            CriterionKind::Exclusion
        } else {
            CriterionKind::Inclusion
        },
        logic: DnfExpression::new(literal_clauses),
        tier: 4,
        flagged: false,
    };
    let config = EvalConfig {
        thresholds: VerdictThresholds { met, not_met },
        max_marginalized,
    };
    let eval = core_evaluate(&criterion, &by_id, &config).map_err(value_err)?;
    Ok((
        eval.probability,
        verdict_str(eval.verdict).to_string(),
        eval.num_marginalized,
    ))
}

/// Maps an eligibility probability to "Met" / "NotMet" / "NA". Comparisons
/// are strict, so a probability exactly at a threshold yields "NA".
#[pyfunction]
#[pyo3(signature = (probability, met = 0.66, not_met = 0.34))]
fn verdict_for(probability: f64, met: f64, not_met: f64) -> PyResult<String> {
    let verdict = verdict_with_thresholds(probability, &VerdictThresholds { met, not_met })
        .map_err(value_err)?;
    Ok(verdict_str(verdict).to_string())
}

/// Clinical-importance tier (1-4) for a concept label, case-insensitive;
/// unknown concepts fall back to tier 4.
#[pyfunction]
fn assign_tier(concept: &str) -> u8 {
    concepts::assign_tier(&ConceptLabel::new(concept))
}

/// Fraction of criteria with verdict Met. `results` is a list of
/// `(criterion_id, tier, verdict)` tuples.
#[pyfunction]
fn score_simple(results: Vec<(String, u8, String)>) -> PyResult<f64> {
    scorer_ranker::score_simple(&parse_results(results)?).map_err(value_err)
}

/// Tier-ascending walk that stops at the first NotMet, normalized by the
/// total criterion count.
#[pyfunction]
fn score_iterative(results: Vec<(String, u8, String)>) -> PyResult<f64> {
    scorer_ranker::score_iterative(&parse_results(results)?).map_err(value_err)
}

/// Tier-weighted mean of per-tier criterion scores. `weights` optionally
/// overrides the default per-tier weights `(2.0, 1.5, 1.0, 0.5)`.
#[pyfunction]
#[pyo3(signature = (results, weights = None))]
fn score_weighted(
    results: Vec<(String, u8, String)>,
    weights: Option<(f64, f64, f64, f64)>,
) -> PyResult<f64> {
    let weights = match weights {
        Some((w1, w2, w3, w4)) => TierWeights { w1, w2, w3, w4 },
        None => TierWeights::default(),
    };
    scorer_ranker::score_weighted(&parse_results(results)?, &weights).map_err(value_err)
}

/// Binary NDCG of a ranked candidate list against a set of relevant ids.
#[pyfunction]
fn ndcg_binary(ordered: Vec<String>, relevant: Vec<String>) -> PyResult<f64> {
    let relevant: BTreeSet<String> = relevant.into_iter().collect();
    scorer_ranker::ndcg_binary_ids(&ordered, &relevant).map_err(value_err)
}

/// Splits text into sentences, guarding common clinical abbreviations.
#[pyfunction]
fn split_sentences(text: &str) -> Vec<String> {
    note_store::split_sentences(text)
}

/// Greedy whole-sentence chunking with exactly-one-sentence overlap.
/// `token_counts[i]` is the token count of sentence `i`; returns inclusive
/// `(start, end)` sentence spans.
#[pyfunction]
fn chunk_spans(token_counts: Vec<usize>, max_tokens_per_chunk: usize) -> PyResult<Vec<(usize, usize)>> {
    note_store::chunk_spans(&token_counts, max_tokens_per_chunk).map_err(value_err)
}

/// Splits a raw criteria section into individual criterion texts, honoring
/// bullet and numbered markers, wrapped lines, and blank-line separators.
#[pyfunction]
fn segment_criteria(text: &str) -> Vec<String> {
    trial_composer::segment_criteria(text)
}

/// Deterministic offline embedding: lowercased whitespace tokens hashed into
/// a 512-dimension L2-normalized count vector.
#[pyfunction]
fn mock_embed(texts: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
    let vectors = MockEmbedder.embed_batch(&texts).map_err(value_err)?;
    Ok(vectors.into_iter().map(|v| v.0).collect())
}

/// Cosine similarity clamped to [-1, 1]; zero vectors yield 0.
#[pyfunction]
fn cosine_similarity(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    retriever::cosine(&EmbeddingVector(u), &EmbeddingVector(v)).map_err(value_err)
}

/// Estimated wall-clock hours to push tokens through a self-hosted model.
#[pyfunction]
fn runtime_hours(
    input_tokens: u64,
    output_tokens: u64,
    input_speed: f64,
    output_speed: f64,
) -> PyResult<f64> {
    let profile = ThroughputProfile {
        input_speed,
        output_speed,
        hourly_rate: 0.0,
    };
    cost_model::runtime_hours(TokenUsage::new(input_tokens, output_tokens), &profile)
        .map_err(value_err)
}

/// Total dollar cost of a self-hosted run: runtime hours times machine rate.
#[pyfunction]
fn self_hosted_cost(
    input_tokens: u64,
    output_tokens: u64,
    input_speed: f64,
    output_speed: f64,
    hourly_rate: f64,
) -> PyResult<f64> {
    let profile = ThroughputProfile {
        input_speed,
        output_speed,
        hourly_rate,
    };
    cost_model::self_hosted_cost(TokenUsage::new(input_tokens, output_tokens), &profile)
        .map_err(value_err)
}

/// Total dollar cost under per-1000-token API pricing.
#[pyfunction]
fn api_cost(
    input_tokens: u64,
    output_tokens: u64,
    price_per_1k_in: f64,
    price_per_1k_out: f64,
) -> PyResult<f64> {
    let pricing = ApiPricing {
        price_per_1k_in,
        price_per_1k_out,
    };
    cost_model::api_cost(TokenUsage::new(input_tokens, output_tokens), &pricing).map_err(value_err)
}

/// Cost per patient-trial pair, rounded to cents.
#[pyfunction]
fn per_pair_cost(total: f64, n_pairs: u64) -> PyResult<f64> {
    cost_model::per_pair_cost(total, n_pairs)
        .map(cost_model::round_to_cents)
        .map_err(value_err)
}

/// Parses a QA backend response into
/// `(answer, confidence, citations, answer_explanation)`; raises ValueError
/// on malformed JSON, unknown answers, or out-of-range confidence.
#[pyfunction]
fn parse_qa_response(raw: &str) -> PyResult<(String, u8, Vec<String>, String)> {
    let parsed = qa_engine::parse_response(raw).map_err(value_err)?;
    let answer = match parsed.answer {
        AnswerValue::Yes => "Yes",
        AnswerValue::No => "No",
        AnswerValue::Na => "NA",
    };
    Ok((
        answer.to_string(),
        parsed.confidence,
        parsed.citations,
        parsed.answer_explanation,
    ))
}

#[pymodule]
fn trialmatch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(evaluate_dnf, m)?)?;
    m.add_function(wrap_pyfunction!(verdict_for, m)?)?;
    m.add_function(wrap_pyfunction!(assign_tier, m)?)?;
    m.add_function(wrap_pyfunction!(score_simple, m)?)?;
    m.add_function(wrap_pyfunction!(score_iterative, m)?)?;
    m.add_function(wrap_pyfunction!(score_weighted, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_binary, m)?)?;
    m.add_function(wrap_pyfunction!(split_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_spans, m)?)?;
    m.add_function(wrap_pyfunction!(segment_criteria, m)?)?;
    m.add_function(wrap_pyfunction!(mock_embed, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(runtime_hours, m)?)?;
    m.add_function(wrap_pyfunction!(self_hosted_cost, m)?)?;
    m.add_function(wrap_pyfunction!(api_cost, m)?)?;
    m.add_function(wrap_pyfunction!(per_pair_cost, m)?)?;
    m.add_function(wrap_pyfunction!(parse_qa_response, m)?)?;
    m.add("MOCK_EMBED_DIM", MockEmbedder::DIM)?;
    m.add("MOCK_EMBED_TAG", MockEmbedder::TAG)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dnf_evaluation_round_trips() {
        let (p, verdict, marginalized) = evaluate_dnf(
            vec![vec![(0, false), (1, false)]],
            vec!["no".into(), "na".into()],
            false,
            20,
            0.66,
            0.34,
        )
        .unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(verdict, "NotMet");
        // The NA question still counts as marginalized even though the fixed
        // No already decides the clause.
        assert_eq!(marginalized, 1);
    }

    #[test]
    fn exclusion_inverts_probability() {
        let (p, verdict, marginalized) =
            evaluate_dnf(vec![vec![(0, false)]], vec!["na".into()], true, 20, 0.66, 0.34).unwrap();
        assert_eq!(p, 0.5);
        assert_eq!(verdict, "NA");
        assert_eq!(marginalized, 1);
    }

    #[test]
    fn out_of_range_literal_is_rejected() {
        // Rendering a PyErr touches the interpreter, even outside a pymodule.
        Python::initialize();
        let err = evaluate_dnf(vec![vec![(3, false)]], vec!["yes".into()], false, 20, 0.66, 0.34)
            .unwrap_err();
        assert!(err.to_string().contains("question 3"));
    }

    #[test]
    fn verdict_strings_round_trip() {
        for verdict in ["Met", "NotMet", "NA"] {
            assert_eq!(verdict_str(parse_verdict(verdict).unwrap()), verdict);
        }
        assert!(parse_verdict("met").is_err());
    }
}
