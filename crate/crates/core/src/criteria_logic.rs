//! Three-valued criterion logic: DNF expressions over yes/no questions,
//! exact marginalization over unknown (NA) answers, and probability-to-verdict
//! thresholds.
//!
//! A criterion's logic is a disjunction of conjunctions of possibly negated
//! question literals. Answers are `Yes`/`No`/`NA`; `NA` answers referenced by
//! the logic are marginalized exactly: every completion of the unknowns is
//! enumerated under a uniform prior (`1/2^N`), and the criterion probability
//! is the fraction of completions satisfying the DNF.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::ConceptLabel;

/// Three-valued answer to an eligibility question.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerValue {
    Yes,
    No,
    #[serde(rename = "NA")]
    Na,
}

impl FromStr for AnswerValue {
    type Err = String;

    /// Case-insensitive parse; accepts "yes", "no", "na", and "n/a".
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "yes" => Ok(AnswerValue::Yes),
            "no" => Ok(AnswerValue::No),
            "na" | "n/a" => Ok(AnswerValue::Na),
            other => Err(format!("not a Yes/No/NA answer: {other:?}")),
        }
    }
}

/// Criterion-level outcome after marginalization and thresholding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Met,
    NotMet,
    #[serde(rename = "NA")]
    Na,
}

/// A yes/no question derived from a criterion, tagged with its clinical
/// concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub concept: ConceptLabel,
}

/// One DNF leaf: a reference to a question, optionally negated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub question_id: String,
    #[serde(default)]
    pub negated: bool,
}

impl Literal {
    pub fn positive(question_id: impl Into<String>) -> Self {
        Literal {
            question_id: question_id.into(),
            negated: false,
        }
    }

    pub fn negated(question_id: impl Into<String>) -> Self {
        Literal {
            question_id: question_id.into(),
            negated: true,
        }
    }
}

/// Disjunctive normal form: OR over clauses, AND within a clause.
///
/// A well-formed expression has at least one clause and no empty clauses;
/// structural checks live in `trial_composer::validate_trial`. An expression
/// with zero clauses evaluates to `false` (it arises only for criteria whose
/// question generation failed and was flagged).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnfExpression {
    pub clauses: Vec<Vec<Literal>>,
}

impl DnfExpression {
    pub fn new(clauses: Vec<Vec<Literal>>) -> Self {
        DnfExpression { clauses }
    }

    /// Expression used for criteria whose generation failed.
    pub fn empty() -> Self {
        DnfExpression { clauses: vec![] }
    }

    /// Question ids referenced anywhere in the expression, deduplicated and
    /// sorted.
    pub fn referenced_questions(&self) -> BTreeSet<&str> {
        self.clauses
            .iter()
            .flatten()
            .map(|lit| lit.question_id.as_str())
            .collect()
    }
}

/// Kind of criterion: a condition the patient must satisfy, or must not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriterionKind {
    Inclusion,
    Exclusion,
}

/// One eligibility criterion: source text, DNF logic over questions, and the
/// clinical-importance tier used by scoring.
///
/// For `Exclusion` criteria the stored logic encodes "the exclusion condition
/// holds as written"; eligibility inversion happens in [`evaluate_criterion`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub source_text: String,
    pub kind: CriterionKind,
    pub logic: DnfExpression,
    pub tier: u8,
    /// True when question generation failed after retries; `logic` is empty.
    #[serde(default)]
    pub flagged: bool,
}

/// Marginal probability plus verdict for one criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionEvaluation {
    pub criterion_id: String,
    pub probability: f64,
    pub verdict: Verdict,
    pub num_marginalized: usize,
}

/// Probability thresholds for the Met / NotMet / NA verdict mapping.
/// Comparisons are strict: probability exactly at a threshold yields NA.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictThresholds {
    pub met: f64,
    pub not_met: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        VerdictThresholds {
            met: 0.66,
            not_met: 0.34,
        }
    }
}

impl VerdictThresholds {
    pub fn validate(&self) -> Result<(), CriteriaError> {
        let ok = self.not_met >= 0.0
            && self.not_met < self.met
            && self.met <= 1.0
            && self.met.is_finite()
            && self.not_met.is_finite();
        if ok {
            Ok(())
        } else {
            Err(CriteriaError::InvalidThresholds {
                met: self.met,
                not_met: self.not_met,
            })
        }
    }
}

/// Default cap on the number of unknown answers enumerated exactly.
pub const DEFAULT_MAX_MARGINALIZED: usize = 20;

/// Configuration for criterion evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub thresholds: VerdictThresholds,
    pub max_marginalized: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: VerdictThresholds::default(),
            max_marginalized: DEFAULT_MAX_MARGINALIZED,
        }
    }
}

#[derive(Debug, Error)]
pub enum CriteriaError {
    #[error("no answer provided for question {0:?}")]
    MissingAnswer(String),
    #[error("{required} unknown answers exceed the marginalization cap of {cap}")]
    MarginalizationCap { required: usize, cap: usize },
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("thresholds must satisfy 0 <= not_met < met <= 1, got not_met={not_met}, met={met}")]
    InvalidThresholds { met: f64, not_met: f64 },
}

/// Evaluates a DNF under a total boolean assignment.
///
/// Negated literals invert the assigned value. Errors if any referenced
/// question is missing from the assignment.
pub fn eval_dnf(
    logic: &DnfExpression,
    assignment: &BTreeMap<String, bool>,
) -> Result<bool, CriteriaError> {
    for clause in &logic.clauses {
        let mut satisfied = true;
        for literal in clause {
            let value = assignment
                .get(&literal.question_id)
                .copied()
                .ok_or_else(|| CriteriaError::MissingAnswer(literal.question_id.clone()))?;
            if value == literal.negated {
                satisfied = false;
                break;
            }
        }
        if satisfied {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Result of exact marginalization: the satisfied fraction and how many
/// unknowns were enumerated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Marginal {
    pub probability: f64,
    pub num_marginalized: usize,
}

/// Exact marginal probability that the DNF holds, enumerating all `2^N`
/// completions of the `N` referenced questions answered NA.
///
/// `Yes`/`No` answers are fixed before enumeration; NA answers to questions
/// the logic never references do not count toward `N`. Errors when a
/// referenced question has no answer or `N` exceeds `max_marginalized`.
pub fn marginalize(
    logic: &DnfExpression,
    answers: &BTreeMap<String, AnswerValue>,
    max_marginalized: usize,
) -> Result<Marginal, CriteriaError> {
    // Enumeration uses u64 bitmasks, so cap the cap itself at 62 unknowns.
    let cap = max_marginalized.min(62);

    let referenced = logic.referenced_questions();
    let mut unknown_bits: BTreeMap<&str, u32> = BTreeMap::new();
    let mut fixed: BTreeMap<&str, bool> = BTreeMap::new();
    for question_id in referenced {
        match answers.get(question_id) {
            None => return Err(CriteriaError::MissingAnswer(question_id.to_string())),
            Some(AnswerValue::Yes) => {
                fixed.insert(question_id, true);
            }
            Some(AnswerValue::No) => {
                fixed.insert(question_id, false);
            }
            Some(AnswerValue::Na) => {
                let bit = unknown_bits.len() as u32;
                unknown_bits.insert(question_id, bit);
            }
        }
    }

    let n = unknown_bits.len();
    if n > cap {
        return Err(CriteriaError::MarginalizationCap {
            required: n,
            cap,
        });
    }

    // Compile each clause against the fixed answers: a literal over a fixed
    // answer either kills the clause or drops out; remaining literals test
    // completion bits.
    let mut compiled: Vec<Vec<(u32, bool)>> = Vec::new();
    let mut tautology = false;
    for clause in &logic.clauses {
        let mut bits: Vec<(u32, bool)> = Vec::new();
        let mut possible = true;
        for literal in clause {
            if let Some(&value) = fixed.get(literal.question_id.as_str()) {
                if value == literal.negated {
                    possible = false;
                    break;
                }
            } else {
                let bit = unknown_bits[literal.question_id.as_str()];
                bits.push((bit, literal.negated));
            }
        }
        if !possible {
            continue;
        }
        if bits.is_empty() {
            // Clause already satisfied by the fixed answers alone.
            tautology = true;
            break;
        }
        compiled.push(bits);
    }

    let total = 1u64 << n;
    let satisfied = if tautology {
        total
    } else {
        (0..total)
            .filter(|mask| {
                compiled.iter().any(|clause| {
                    clause
                        .iter()
                        .all(|(bit, negated)| ((mask >> bit) & 1 == 1) != *negated)
                })
            })
            .count() as u64
    };

    Ok(Marginal {
        probability: satisfied as f64 / total as f64,
        num_marginalized: n,
    })
}

/// [`marginalize`] with the default cap, returning only the probability.
pub fn marginal_probability(
    logic: &DnfExpression,
    answers: &BTreeMap<String, AnswerValue>,
) -> Result<f64, CriteriaError> {
    marginalize(logic, answers, DEFAULT_MAX_MARGINALIZED).map(|m| m.probability)
}

/// Maps a probability to a verdict under explicit thresholds.
pub fn verdict_with_thresholds(
    p: f64,
    thresholds: &VerdictThresholds,
) -> Result<Verdict, CriteriaError> {
    thresholds.validate()?;
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(CriteriaError::ProbabilityOutOfRange(p));
    }
    if p > thresholds.met {
        Ok(Verdict::Met)
    } else if p < thresholds.not_met {
        Ok(Verdict::NotMet)
    } else {
        Ok(Verdict::Na)
    }
}

/// Maps a probability to a verdict under the default thresholds
/// (Met above 0.66, NotMet below 0.34, NA between — boundaries inclusive of
/// NA).
pub fn verdict_from_probability(p: f64) -> Result<Verdict, CriteriaError> {
    verdict_with_thresholds(p, &VerdictThresholds::default())
}

/// Evaluates one criterion against a set of answers.
///
/// For exclusion criteria the stored logic encodes "the exclusion applies",
/// so the eligibility probability is inverted (`1 - p_raw`). When the number
/// of unknowns exceeds the cap, the verdict degrades to NA with probability
/// recorded as 0.5 rather than failing the evaluation. Flagged criteria
/// (no usable logic) evaluate to NA the same way.
pub fn evaluate_criterion(
    criterion: &Criterion,
    answers: &BTreeMap<String, AnswerValue>,
    config: &EvalConfig,
) -> Result<CriterionEvaluation, CriteriaError> {
    config.thresholds.validate()?;
    if criterion.flagged {
        return Ok(CriterionEvaluation {
            criterion_id: criterion.id.clone(),
            probability: 0.5,
            verdict: Verdict::Na,
            num_marginalized: 0,
        });
    }
    let marginal = match marginalize(&criterion.logic, answers, config.max_marginalized) {
        Ok(m) => m,
        Err(CriteriaError::MarginalizationCap { required, .. }) => {
            return Ok(CriterionEvaluation {
                criterion_id: criterion.id.clone(),
                probability: 0.5,
                verdict: Verdict::Na,
                num_marginalized: required,
            });
        }
        Err(other) => return Err(other),
    };
    let probability = match criterion.kind {
        CriterionKind::Inclusion => marginal.probability,
        CriterionKind::Exclusion => 1.0 - marginal.probability,
    };
    let verdict = verdict_with_thresholds(probability, &config.thresholds)?;
    Ok(CriterionEvaluation {
        criterion_id: criterion.id.clone(),
        probability,
        verdict,
        num_marginalized: marginal.num_marginalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dnf(clauses: &[&[(&str, bool)]]) -> DnfExpression {
        DnfExpression::new(
            clauses
                .iter()
                .map(|clause| {
                    clause
                        .iter()
                        .map(|(q, negated)| Literal {
                            question_id: q.to_string(),
                            negated: *negated,
                        })
                        .collect()
                })
                .collect(),
        )
    }

    fn answers(pairs: &[(&str, AnswerValue)]) -> BTreeMap<String, AnswerValue> {
        pairs
            .iter()
            .map(|(q, a)| (q.to_string(), *a))
            .collect()
    }

    fn booleans(pairs: &[(&str, bool)]) -> BTreeMap<String, bool> {
        pairs.iter().map(|(q, v)| (q.to_string(), *v)).collect()
    }

    #[test]
    fn eval_dnf_basic_truth_table() {
        let and = dnf(&[&[("q1", false), ("q2", false)]]);
        assert!(eval_dnf(&and, &booleans(&[("q1", true), ("q2", true)])).unwrap());
        assert!(!eval_dnf(&and, &booleans(&[("q1", false), ("q2", true)])).unwrap());

        let or_negated = dnf(&[&[("q1", false)], &[("q2", true)]]);
        assert!(eval_dnf(&or_negated, &booleans(&[("q1", false), ("q2", false)])).unwrap());
    }

    #[test]
    fn eval_dnf_missing_assignment_names_question() {
        let logic = dnf(&[&[("q1", false), ("q2", false)]]);
        let err = eval_dnf(&logic, &booleans(&[("q1", true)])).unwrap_err();
        assert!(err.to_string().contains("q2"));
    }

    #[test]
    fn marginal_no_unknowns_is_direct_evaluation() {
        let logic = dnf(&[&[("q1", false)]]);
        let m = marginalize(&logic, &answers(&[("q1", AnswerValue::Yes)]), 20).unwrap();
        assert_eq!(m.probability, 1.0);
        assert_eq!(m.num_marginalized, 0);
    }

    #[test]
    fn marginal_short_circuit_false_regardless_of_unknowns() {
        let logic = dnf(&[&[("q1", false), ("q2", false)]]);
        let m = marginalize(
            &logic,
            &answers(&[("q1", AnswerValue::No), ("q2", AnswerValue::Na)]),
            20,
        )
        .unwrap();
        assert_eq!(m.probability, 0.0);
        assert_eq!(m.num_marginalized, 1);
    }

    #[test]
    fn marginal_and_with_one_unknown() {
        let logic = dnf(&[&[("q1", false), ("q2", false)]]);
        let p = marginal_probability(
            &logic,
            &answers(&[("q1", AnswerValue::Yes), ("q2", AnswerValue::Na)]),
        )
        .unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn marginal_or_with_two_unknowns() {
        let logic = dnf(&[&[("q1", false)], &[("q2", false)]]);
        let p = marginal_probability(
            &logic,
            &answers(&[("q1", AnswerValue::Na), ("q2", AnswerValue::Na)]),
        )
        .unwrap();
        assert_eq!(p, 0.75);
    }

    #[test]
    fn marginal_ignores_unreferenced_na_answers() {
        let logic = dnf(&[&[("q1", false)]]);
        let m = marginalize(
            &logic,
            &answers(&[("q1", AnswerValue::Yes), ("q99", AnswerValue::Na)]),
            20,
        )
        .unwrap();
        assert_eq!(m.probability, 1.0);
        assert_eq!(m.num_marginalized, 0);
    }

    #[test]
    fn marginal_negation_duality_on_single_unknown() {
        let positive = dnf(&[&[("q1", false)]]);
        let negated = dnf(&[&[("q1", true)]]);
        let na = answers(&[("q1", AnswerValue::Na)]);
        assert_eq!(marginal_probability(&positive, &na).unwrap(), 0.5);
        assert_eq!(marginal_probability(&negated, &na).unwrap(), 0.5);
    }

    #[test]
    fn marginal_capacity_error_carries_counts() {
        let ids: Vec<String> = (0..21).map(|i| format!("q{i}")).collect();
        let clause: Vec<Literal> = ids.iter().map(Literal::positive).collect();
        let logic = DnfExpression::new(vec![clause]);
        let all_na: BTreeMap<String, AnswerValue> =
            ids.iter().map(|q| (q.clone(), AnswerValue::Na)).collect();
        match marginalize(&logic, &all_na, 20) {
            Err(CriteriaError::MarginalizationCap { required, cap }) => {
                assert_eq!(required, 21);
                assert_eq!(cap, 20);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn verdict_threshold_boundaries_are_strict() {
        assert_eq!(verdict_from_probability(1.0).unwrap(), Verdict::Met);
        assert_eq!(verdict_from_probability(0.67).unwrap(), Verdict::Met);
        assert_eq!(verdict_from_probability(0.66).unwrap(), Verdict::Na);
        assert_eq!(verdict_from_probability(0.5).unwrap(), Verdict::Na);
        assert_eq!(verdict_from_probability(0.34).unwrap(), Verdict::Na);
        assert_eq!(verdict_from_probability(0.33).unwrap(), Verdict::NotMet);
        assert_eq!(verdict_from_probability(0.0).unwrap(), Verdict::NotMet);
    }

    #[test]
    fn verdict_rejects_out_of_range_probabilities() {
        assert!(verdict_from_probability(-0.1).is_err());
        assert!(verdict_from_probability(1.1).is_err());
        assert!(verdict_from_probability(f64::NAN).is_err());
    }

    #[test]
    fn verdict_rejects_bad_thresholds() {
        let bad = VerdictThresholds {
            met: 0.3,
            not_met: 0.6,
        };
        assert!(verdict_with_thresholds(0.5, &bad).is_err());
    }

    fn criterion(kind: CriterionKind, logic: DnfExpression) -> Criterion {
        Criterion {
            id: "c1".into(),
            source_text: "test".into(),
            kind,
            logic,
            tier: 1,
            flagged: false,
        }
    }

    #[test]
    fn evaluate_inclusion_all_yes() {
        let c = criterion(
            CriterionKind::Inclusion,
            dnf(&[&[("q1", false), ("q2", false)]]),
        );
        let e = evaluate_criterion(
            &c,
            &answers(&[("q1", AnswerValue::Yes), ("q2", AnswerValue::Yes)]),
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(e.probability, 1.0);
        assert_eq!(e.verdict, Verdict::Met);
        assert_eq!(e.num_marginalized, 0);
    }

    #[test]
    fn evaluate_exclusion_inverts_probability() {
        let c = criterion(CriterionKind::Exclusion, dnf(&[&[("q3", false)]]));
        let e = evaluate_criterion(
            &c,
            &answers(&[("q3", AnswerValue::Yes)]),
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(e.probability, 0.0);
        assert_eq!(e.verdict, Verdict::NotMet);

        let e = evaluate_criterion(
            &c,
            &answers(&[("q3", AnswerValue::Na)]),
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(e.probability, 0.5);
        assert_eq!(e.verdict, Verdict::Na);
    }

    #[test]
    fn evaluate_inclusion_or_of_unknowns() {
        let c = criterion(
            CriterionKind::Inclusion,
            dnf(&[&[("q1", false)], &[("q2", false)]]),
        );
        let e = evaluate_criterion(
            &c,
            &answers(&[("q1", AnswerValue::Na), ("q2", AnswerValue::Na)]),
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(e.probability, 0.75);
        assert_eq!(e.verdict, Verdict::Met);
        assert_eq!(e.num_marginalized, 2);
    }

    #[test]
    fn evaluate_degrades_to_na_on_capacity() {
        let ids: Vec<String> = (0..25).map(|i| format!("q{i}")).collect();
        let clause: Vec<Literal> = ids.iter().map(Literal::positive).collect();
        let c = criterion(CriterionKind::Inclusion, DnfExpression::new(vec![clause]));
        let all_na: BTreeMap<String, AnswerValue> =
            ids.iter().map(|q| (q.clone(), AnswerValue::Na)).collect();
        let e = evaluate_criterion(&c, &all_na, &EvalConfig::default()).unwrap();
        assert_eq!(e.verdict, Verdict::Na);
        assert_eq!(e.probability, 0.5);
        assert_eq!(e.num_marginalized, 25);
    }

    #[test]
    fn evaluate_flagged_criterion_is_na() {
        let mut c = criterion(CriterionKind::Inclusion, DnfExpression::empty());
        c.flagged = true;
        let e = evaluate_criterion(&c, &BTreeMap::new(), &EvalConfig::default()).unwrap();
        assert_eq!(e.verdict, Verdict::Na);
        assert_eq!(e.probability, 0.5);
        assert_eq!(e.num_marginalized, 0);

        // Exclusion flagged criteria are NA too, with no inversion applied.
        let mut c = criterion(CriterionKind::Exclusion, DnfExpression::empty());
        c.flagged = true;
        let e = evaluate_criterion(&c, &BTreeMap::new(), &EvalConfig::default()).unwrap();
        assert_eq!(e.verdict, Verdict::Na);
        assert_eq!(e.probability, 0.5);
    }

    #[test]
    fn answer_value_parsing() {
        assert_eq!("Yes".parse::<AnswerValue>().unwrap(), AnswerValue::Yes);
        assert_eq!("YES".parse::<AnswerValue>().unwrap(), AnswerValue::Yes);
        assert_eq!("no".parse::<AnswerValue>().unwrap(), AnswerValue::No);
        assert_eq!("N/A".parse::<AnswerValue>().unwrap(), AnswerValue::Na);
        assert_eq!("na".parse::<AnswerValue>().unwrap(), AnswerValue::Na);
        assert!("maybe".parse::<AnswerValue>().is_err());
    }

    #[test]
    fn serde_uses_plain_enum_names() {
        assert_eq!(serde_json::to_string(&AnswerValue::Na).unwrap(), "\"NA\"");
        assert_eq!(serde_json::to_string(&Verdict::NotMet).unwrap(), "\"NotMet\"");
        assert_eq!(serde_json::to_string(&Verdict::Na).unwrap(), "\"NA\"");
    }

    /// Naive reference enumerator, deliberately written without reusing
    /// `marginalize`'s compiled representation: it substitutes every
    /// completion into a string-keyed map and walks the clauses directly.
    fn oracle_probability(
        logic: &DnfExpression,
        answers: &BTreeMap<String, AnswerValue>,
    ) -> f64 {
        let mut unknowns: Vec<String> = Vec::new();
        for q in logic.referenced_questions() {
            if answers[q] == AnswerValue::Na && !unknowns.contains(&q.to_string()) {
                unknowns.push(q.to_string());
            }
        }
        let total = 1usize << unknowns.len();
        let mut satisfied = 0usize;
        for mask in 0..total {
            let mut assignment: BTreeMap<String, bool> = BTreeMap::new();
            for (q, a) in answers {
                match a {
                    AnswerValue::Yes => {
                        assignment.insert(q.clone(), true);
                    }
                    AnswerValue::No => {
                        assignment.insert(q.clone(), false);
                    }
                    AnswerValue::Na => {}
                }
            }
            for (i, q) in unknowns.iter().enumerate() {
                assignment.insert(q.clone(), (mask >> i) & 1 == 1);
            }
            let mut value = false;
            for clause in &logic.clauses {
                let mut clause_true = !clause.is_empty();
                for literal in clause {
                    let v = assignment[&literal.question_id];
                    let lit_value = if literal.negated { !v } else { v };
                    if !lit_value {
                        clause_true = false;
                        break;
                    }
                }
                if clause_true {
                    value = true;
                    break;
                }
            }
            if value {
                satisfied += 1;
            }
        }
        satisfied as f64 / total as f64
    }

    prop_compose! {
        fn arb_case(max_questions: usize)
            (num_questions in 1..=max_questions)
            (
                clauses in prop::collection::vec(
                    prop::collection::vec((0..num_questions, any::<bool>()), 1..=3),
                    1..=4,
                ),
                answer_codes in prop::collection::vec(0u8..3, num_questions),
            )
            -> (DnfExpression, BTreeMap<String, AnswerValue>)
        {
            let logic = DnfExpression::new(
                clauses
                    .into_iter()
                    .map(|clause| {
                        clause
                            .into_iter()
                            .map(|(q, negated)| Literal {
                                question_id: format!("q{q}"),
                                negated,
                            })
                            .collect()
                    })
                    .collect(),
            );
            let answers = answer_codes
                .into_iter()
                .enumerate()
                .map(|(i, code)| {
                    let a = match code {
                        0 => AnswerValue::Yes,
                        1 => AnswerValue::No,
                        _ => AnswerValue::Na,
                    };
                    (format!("q{i}"), a)
                })
                .collect();
            (logic, answers)
        }
    }

    proptest! {
        #[test]
        fn marginalize_matches_naive_oracle((logic, ans) in arb_case(8)) {
            let got = marginalize(&logic, &ans, 20).unwrap();
            let expected = oracle_probability(&logic, &ans);
            prop_assert_eq!(got.probability, expected);
        }

        #[test]
        fn no_unknowns_means_zero_or_one((logic, ans) in arb_case(8)) {
            let decided: BTreeMap<String, AnswerValue> = ans
                .into_iter()
                .map(|(q, a)| {
                    let forced = if a == AnswerValue::Na { AnswerValue::No } else { a };
                    (q, forced)
                })
                .collect();
            let m = marginalize(&logic, &decided, 20).unwrap();
            prop_assert_eq!(m.num_marginalized, 0);
            prop_assert!(m.probability == 0.0 || m.probability == 1.0);
        }
    }
}
