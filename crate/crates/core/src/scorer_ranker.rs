//! Aggregates criterion verdicts into patient-trial match scores (simple
//! counting, iterative tier traversal, and tier-weighted averaging), ranks
//! candidates, and computes ranking metrics and verdict statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria_logic::{CriterionEvaluation, Verdict};
use crate::util::FileError;

/// One criterion's verdict in the integer encoding consumed by scoring:
/// Met → 1, NotMet → 0, NA → −1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion_id: String,
    pub tier: u8,
    pub x: i8,
}

impl CriterionResult {
    pub fn new(criterion_id: impl Into<String>, tier: u8, verdict: Verdict) -> Self {
        CriterionResult {
            criterion_id: criterion_id.into(),
            tier,
            x: encode_verdict(verdict),
        }
    }
}

/// Integer encoding of a verdict: Met → 1, NotMet → 0, NA → −1.
pub fn encode_verdict(verdict: Verdict) -> i8 {
    match verdict {
        Verdict::Met => 1,
        Verdict::NotMet => 0,
        Verdict::Na => -1,
    }
}

/// Per-tier weights for the weighted scoring method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for TierWeights {
    fn default() -> Self {
        TierWeights {
            w1: 2.0,
            w2: 1.5,
            w3: 1.0,
            w4: 0.5,
        }
    }
}

impl TierWeights {
    pub fn weight_for(&self, tier: u8) -> f64 {
        match tier {
            1 => self.w1,
            2 => self.w2,
            3 => self.w3,
            _ => self.w4,
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        for (tier, w) in [(1u8, self.w1), (2, self.w2), (3, self.w3), (4, self.w4)] {
            if !(w.is_finite() && w > 0.0) {
                return Err(ScoreError::NonPositiveWeight { tier, weight: w });
            }
        }
        Ok(())
    }
}

/// Scoring method identifier, as written into score artifacts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMethod {
    Simple,
    IterativeTier,
    WeightedTier,
}

impl ScoringMethod {
    pub const ALL: [ScoringMethod; 3] = [
        ScoringMethod::Simple,
        ScoringMethod::IterativeTier,
        ScoringMethod::WeightedTier,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScoringMethod::Simple => "simple",
            ScoringMethod::IterativeTier => "iterative_tier",
            ScoringMethod::WeightedTier => "weighted_tier",
        }
    }
}

impl fmt::Display for ScoringMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoringMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(ScoringMethod::Simple),
            "iterative_tier" => Ok(ScoringMethod::IterativeTier),
            "weighted_tier" => Ok(ScoringMethod::WeightedTier),
            other => Err(format!(
                "unknown scoring method {other:?}; expected simple, iterative_tier, or weighted_tier"
            )),
        }
    }
}

/// One patient-trial score under one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub patient_id: String,
    pub trial_id: String,
    pub method: ScoringMethod,
    pub score: f64,
}

/// Ranking direction: which id plays the subject and which the candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    TrialsForPatient,
    PatientsForTrial,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::TrialsForPatient => "trials-for-patient",
            Direction::PatientsForTrial => "patients-for-trial",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trials-for-patient" => Ok(Direction::TrialsForPatient),
            "patients-for-trial" => Ok(Direction::PatientsForTrial),
            other => Err(format!(
                "unknown direction {other:?}; expected trials-for-patient or patients-for-trial"
            )),
        }
    }
}

/// A ranked candidate list for one subject under one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub subject_id: String,
    pub method: ScoringMethod,
    pub ordered: Vec<RankedCandidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate_id: String,
    pub score: f64,
}

/// Met / NotMet / NA percentages over a set of criterion evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictStats {
    pub met_pct: f64,
    pub not_met_pct: f64,
    pub na_pct: f64,
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("results list is empty")]
    EmptyResults,
    #[error("criterion {criterion_id} has encoding x={x}, expected 1, 0, or -1")]
    InvalidEncoding { criterion_id: String, x: i8 },
    #[error("criterion {criterion_id} has tier {tier}, expected 1..=4")]
    InvalidTier { criterion_id: String, tier: u8 },
    #[error("tier {tier} weight {weight} is not positive and finite")]
    NonPositiveWeight { tier: u8, weight: f64 },
    #[error("invalid x={0}, expected 1, 0, or -1")]
    InvalidX(i8),
    #[error("scores mix subjects: {first} vs {second}")]
    MixedSubjects { first: String, second: String },
    #[error("scores mix methods: {first} vs {second}")]
    MixedMethods { first: String, second: String },
    #[error("score for candidate {candidate_id} is not finite")]
    NonFiniteScore { candidate_id: String },
    #[error("no ground-truth candidate for subject {0}")]
    MissingGroundTruth(String),
    #[error("ground-truth candidate {candidate} absent from ranking of subject {subject}")]
    GroundTruthNotRanked { subject: String, candidate: String },
    #[error("rankings list is empty")]
    EmptyRankings,
    #[error("k must be >= 1")]
    InvalidK,
    #[error("relevant set is empty")]
    EmptyRelevant,
    #[error("relevant candidate {0} absent from ranking")]
    RelevantNotRanked(String),
    #[error(transparent)]
    File(#[from] FileError),
}

fn validate_results(results: &[CriterionResult]) -> Result<(), ScoreError> {
    for r in results {
        if ![1, 0, -1].contains(&r.x) {
            return Err(ScoreError::InvalidEncoding {
                criterion_id: r.criterion_id.clone(),
                x: r.x,
            });
        }
        if !(1..=4).contains(&r.tier) {
            return Err(ScoreError::InvalidTier {
                criterion_id: r.criterion_id.clone(),
                tier: r.tier,
            });
        }
    }
    Ok(())
}

/// Fraction of criteria met: (count of x = 1) / (total count).
pub fn score_simple(results: &[CriterionResult]) -> Result<f64, ScoreError> {
    if results.is_empty() {
        return Err(ScoreError::EmptyResults);
    }
    validate_results(results)?;
    let met = results.iter().filter(|r| r.x == 1).count();
    Ok(met as f64 / results.len() as f64)
}

/// Tier-ordered traversal stopping at the first violation.
///
/// Criteria are visited by ascending tier (tier 1 first), within a tier by
/// criterion id. Met counts, NA is skipped, and the walk stops before the
/// first NotMet. The count is normalized by the total number of criteria.
pub fn score_iterative(results: &[CriterionResult]) -> Result<f64, ScoreError> {
    if results.is_empty() {
        return Err(ScoreError::EmptyResults);
    }
    validate_results(results)?;
    let mut ordered: Vec<&CriterionResult> = results.iter().collect();
    ordered.sort_by(|a, b| a.tier.cmp(&b.tier).then(a.criterion_id.cmp(&b.criterion_id)));
    let mut met = 0usize;
    for r in ordered {
        match r.x {
            1 => met += 1,
            0 => break,
            _ => {} // NA: neither met nor violation
        }
    }
    Ok(met as f64 / results.len() as f64)
}

/// Per-criterion score for the weighted method: 1 for Met, 0.5 for NA,
/// −0.5 for a tier-1 NotMet, 0 for a NotMet in any other tier.
pub fn tier_criterion_score(x: i8, tier: u8) -> Result<f64, ScoreError> {
    if !(1..=4).contains(&tier) {
        return Err(ScoreError::InvalidTier {
            criterion_id: String::new(),
            tier,
        });
    }
    match x {
        1 => Ok(1.0),
        -1 => Ok(0.5),
        0 if tier == 1 => Ok(-0.5),
        0 => Ok(0.0),
        other => Err(ScoreError::InvalidX(other)),
    }
}

/// Weighted average of per-tier mean criterion scores over the non-empty
/// tiers. Returns 0 when there are no criteria at all.
pub fn score_weighted(
    results: &[CriterionResult],
    weights: &TierWeights,
) -> Result<f64, ScoreError> {
    weights.validate()?;
    validate_results(results)?;
    let mut by_tier: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for r in results {
        by_tier
            .entry(r.tier)
            .or_default()
            .push(tier_criterion_score(r.x, r.tier)?);
    }
    let k = by_tier.len();
    if k == 0 {
        return Ok(0.0);
    }
    let sum: f64 = by_tier
        .iter()
        .map(|(tier, scores)| {
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            weights.weight_for(*tier) * mean
        })
        .sum();
    Ok(sum / k as f64)
}

/// Scores a result set under one method.
pub fn score_with_method(
    results: &[CriterionResult],
    method: ScoringMethod,
    weights: &TierWeights,
) -> Result<f64, ScoreError> {
    match method {
        ScoringMethod::Simple => score_simple(results),
        ScoringMethod::IterativeTier => score_iterative(results),
        ScoringMethod::WeightedTier => score_weighted(results, weights),
    }
}

/// Ranks one subject's candidates by score descending, candidate id
/// ascending on ties. All scores must share the subject and method.
pub fn rank_candidates(
    scores: &[MatchScore],
    direction: Direction,
) -> Result<Ranking, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::EmptyResults);
    }
    let subject_of = |s: &MatchScore| match direction {
        Direction::TrialsForPatient => s.patient_id.clone(),
        Direction::PatientsForTrial => s.trial_id.clone(),
    };
    let candidate_of = |s: &MatchScore| match direction {
        Direction::TrialsForPatient => s.trial_id.clone(),
        Direction::PatientsForTrial => s.patient_id.clone(),
    };
    let subject_id = subject_of(&scores[0]);
    let method = scores[0].method;
    for s in scores {
        if subject_of(s) != subject_id {
            return Err(ScoreError::MixedSubjects {
                first: subject_id,
                second: subject_of(s),
            });
        }
        if s.method != method {
            return Err(ScoreError::MixedMethods {
                first: method.to_string(),
                second: s.method.to_string(),
            });
        }
        if !s.score.is_finite() {
            return Err(ScoreError::NonFiniteScore {
                candidate_id: candidate_of(s),
            });
        }
    }
    let mut ordered: Vec<RankedCandidate> = scores
        .iter()
        .map(|s| RankedCandidate {
            candidate_id: candidate_of(s),
            score: s.score,
        })
        .collect();
    ordered.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores validated finite")
            .then_with(|| a.candidate_id.cmp(&b.candidate_id))
    });
    Ok(Ranking {
        subject_id,
        method,
        ordered,
    })
}

/// Fraction of subjects whose ground-truth candidate ranks within the top k.
pub fn topk_hit_rate(
    rankings: &[Ranking],
    ground_truth: &BTreeMap<String, String>,
    k: usize,
) -> Result<f64, ScoreError> {
    if k == 0 {
        return Err(ScoreError::InvalidK);
    }
    if rankings.is_empty() {
        return Err(ScoreError::EmptyRankings);
    }
    let mut hits = 0usize;
    for ranking in rankings {
        let target = ground_truth
            .get(&ranking.subject_id)
            .ok_or_else(|| ScoreError::MissingGroundTruth(ranking.subject_id.clone()))?;
        let rank = ranking
            .ordered
            .iter()
            .position(|c| &c.candidate_id == target)
            .ok_or_else(|| ScoreError::GroundTruthNotRanked {
                subject: ranking.subject_id.clone(),
                candidate: target.clone(),
            })?
            + 1;
        if rank <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

/// Binary-relevance NDCG over an ordered candidate id list.
///
/// DCG sums `1/log2(i+1)` over the 1-based ranks of relevant candidates;
/// IDCG assumes all relevant candidates occupy the top ranks.
pub fn ndcg_binary_ids(
    ordered_candidates: &[String],
    relevant: &BTreeSet<String>,
) -> Result<f64, ScoreError> {
    if relevant.is_empty() {
        return Err(ScoreError::EmptyRelevant);
    }
    for id in relevant {
        if !ordered_candidates.contains(id) {
            return Err(ScoreError::RelevantNotRanked(id.clone()));
        }
    }
    let dcg: f64 = ordered_candidates
        .iter()
        .enumerate()
        .filter(|(_, id)| relevant.contains(*id))
        .map(|(idx, _)| 1.0 / ((idx + 2) as f64).log2())
        .sum();
    let idcg: f64 = (1..=relevant.len())
        .map(|rank| 1.0 / ((rank + 1) as f64).log2())
        .sum();
    Ok(dcg / idcg)
}

/// [`ndcg_binary_ids`] over a [`Ranking`].
pub fn ndcg_binary(ranking: &Ranking, relevant: &BTreeSet<String>) -> Result<f64, ScoreError> {
    let ids: Vec<String> = ranking
        .ordered
        .iter()
        .map(|c| c.candidate_id.clone())
        .collect();
    ndcg_binary_ids(&ids, relevant)
}

/// Met / NotMet / NA percentages over criterion evaluations.
pub fn verdict_stats(evaluations: &[CriterionEvaluation]) -> Result<VerdictStats, ScoreError> {
    if evaluations.is_empty() {
        return Err(ScoreError::EmptyResults);
    }
    let total = evaluations.len() as f64;
    let count = |v: Verdict| evaluations.iter().filter(|e| e.verdict == v).count() as f64;
    Ok(VerdictStats {
        met_pct: count(Verdict::Met) / total * 100.0,
        not_met_pct: count(Verdict::NotMet) / total * 100.0,
        na_pct: count(Verdict::Na) / total * 100.0,
    })
}

/// Writes scores as CSV with columns patient_id, trial_id, method, score.
pub fn write_scores_csv(path: &Path, scores: &[MatchScore]) -> Result<(), ScoreError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for score in scores {
        writer
            .serialize(score)
            .map_err(|e| FileError::line(path, 0, e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| FileError::line(path, 0, e.to_string()))?;
    crate::util::write_atomic(path, &bytes)?;
    Ok(())
}

/// Reads scores written by [`write_scores_csv`].
pub fn read_scores_csv(path: &Path) -> Result<Vec<MatchScore>, ScoreError> {
    let file = std::fs::File::open(path).map_err(|e| FileError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut scores = Vec::new();
    for (idx, row) in reader.deserialize().enumerate() {
        let score: MatchScore = row.map_err(|e| FileError::line(path, idx + 2, e.to_string()))?;
        scores.push(score);
    }
    Ok(scores)
}
