//! Pipeline stages. Each function runs one subcommand against a run
//! directory and returns the process exit code (0 ok, 4 partial results);
//! input and backend failures propagate as errors and are mapped to exit
//! codes 2 and 3 by `main`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use trialmatch_core::cost_model::{CostReport, TokenUsage};
use trialmatch_core::criteria_logic::{
    evaluate_criterion, AnswerValue, CriterionKind, EvalConfig, Verdict,
};
use trialmatch_core::note_store::{
    chunk_note, filter_notes, load_chunks, load_notes, load_patients, save_chunks, CategorySet,
    ClinicalNote, PatientHeader, SentenceSplitter,
};
use trialmatch_core::qa_engine::{
    answer_question, save_answers, PromptTemplate, QaBackendConfig, QaContext, QaOutcome,
};
use trialmatch_core::retriever::{corpus_hash, index_chunks, load_index, save_index};
use trialmatch_core::scorer_ranker::{
    ndcg_binary_ids, rank_candidates, read_scores_csv, score_with_method, write_scores_csv,
    CriterionResult, Direction, MatchScore, Ranking, ScoringMethod,
};
use trialmatch_core::trial_composer::{compose_trial, load_trial, save_trial, RawTrial, TrialSpec};
use trialmatch_core::util::{read_jsonl, write_atomic, write_jsonl};

use crate::backends;
use crate::layout::{validate_id, RunLayout};
use crate::manifest::{IncompletePair, RunManifest};
use crate::config::PipelineConfig;

pub struct Ctx {
    pub config: PipelineConfig,
    pub layout: RunLayout,
    pub manifest: RunManifest,
}

/// One criterion's evaluation as persisted per pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerdictRow {
    pub criterion_id: String,
    pub kind: CriterionKind,
    pub tier: u8,
    pub flagged: bool,
    pub probability: f64,
    pub verdict: Verdict,
    pub num_marginalized: usize,
}

/// Token totals for a match stage, persisted for the cost stage.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct UsageArtifact {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub qa_calls: u64,
    /// Pairs that completed and were scored.
    pub n_pairs: u64,
}

// --- compose ---

pub fn cmd_compose(ctx: &mut Ctx) -> Result<i32> {
    let trials_path = ctx.config.paths.trials.clone();
    let raw_trials: Vec<RawTrial> = read_jsonl(&trials_path)
        .with_context(|| format!("loading raw trials from {}", trials_path.display()))?;
    let mut seen = BTreeSet::new();
    for raw in &raw_trials {
        validate_id("trial", &raw.trial_id)?;
        if !seen.insert(raw.trial_id.clone()) {
            bail!("duplicate trial id {:?} in {}", raw.trial_id, trials_path.display());
        }
    }

    let (generator, classifier) = backends::generation_backends(&ctx.config)?;
    let book = trialmatch_core::concepts::ConceptBook::default();
    for raw in &raw_trials {
        let spec = compose_trial(raw, generator.as_ref(), classifier.as_ref(), &book)
            .with_context(|| format!("composing trial {}", raw.trial_id))?;
        save_trial(&ctx.layout.trial(&spec.trial_id), &spec)
            .with_context(|| format!("writing trial spec for {}", spec.trial_id))?;
        log::info!(
            "composed {}: {} criteria, {} questions",
            spec.trial_id,
            spec.criteria.len(),
            spec.questions.len()
        );
    }

    ctx.manifest.set_backend_tag("generator", generator.tag());
    ctx.manifest
        .record_stage("compose", format!("{} trials", raw_trials.len()));
    ctx.manifest.save(&ctx.layout)?;
    println!("composed {} trial spec(s) under {}", raw_trials.len(), ctx.layout.trials_dir().display());
    Ok(0)
}

// --- ingest ---

pub fn cmd_ingest(ctx: &mut Ctx) -> Result<i32> {
    let patients_path = ctx.config.paths.patients.clone();
    let mut patients = load_patients(&patients_path)
        .with_context(|| format!("loading patients from {}", patients_path.display()))?;
    patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    for p in &patients {
        validate_id("patient", &p.patient_id)?;
    }
    let known: BTreeSet<&str> = patients.iter().map(|p| p.patient_id.as_str()).collect();

    let notes_path = ctx.config.paths.notes.clone();
    let load = load_notes(&notes_path)
        .with_context(|| format!("loading notes from {}", notes_path.display()))?;
    if !load.skipped_undated.is_empty() {
        log::warn!(
            "skipped {} undated note(s): {}",
            load.skipped_undated.len(),
            load.skipped_undated.join(", ")
        );
    }
    let mut by_patient: BTreeMap<&str, Vec<ClinicalNote>> = BTreeMap::new();
    for note in &load.notes {
        if known.contains(note.patient_id.as_str()) {
            by_patient
                .entry(note.patient_id.as_str())
                .or_default()
                .push(note.clone());
        } else {
            log::warn!(
                "note {} references unknown patient {}; ignored",
                note.note_id,
                note.patient_id
            );
        }
    }

    let categories = CategorySet::new(ctx.config.notes.allowed_categories.clone());
    let splitter = SentenceSplitter::default();
    let mut total_chunks = 0usize;
    for header in &patients {
        let notes = by_patient
            .get(header.patient_id.as_str())
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let admitted = filter_notes(notes, header, &categories);
        let mut chunks = Vec::new();
        for note in &admitted {
            chunks.extend(
                chunk_note(note, &splitter, ctx.config.retrieval.chunk_max_tokens)
                    .with_context(|| format!("chunking note {}", note.note_id))?,
            );
        }
        log::info!(
            "patient {}: {} of {} notes admitted, {} chunks",
            header.patient_id,
            admitted.len(),
            notes.len(),
            chunks.len()
        );
        total_chunks += chunks.len();
        save_chunks(&ctx.layout.chunks(&header.patient_id), &chunks)
            .with_context(|| format!("writing chunks for {}", header.patient_id))?;
    }

    let mut bytes = serde_json::to_vec_pretty(&patients).context("serialize patient headers")?;
    bytes.push(b'\n');
    write_atomic(&ctx.layout.patients(), &bytes).context("writing patient headers")?;

    ctx.manifest.record_stage(
        "ingest",
        format!("{} patients, {} chunks", patients.len(), total_chunks),
    );
    ctx.manifest.save(&ctx.layout)?;
    println!(
        "ingested {} patient(s), {} chunk(s) under {}",
        patients.len(),
        total_chunks,
        ctx.layout.root.display()
    );
    Ok(0)
}

fn load_patient_artifact(layout: &RunLayout) -> Result<Vec<PatientHeader>> {
    let path = layout.patients();
    let text = fs::read_to_string(&path)
        .with_context(|| format!("no patient artifact at {} (run ingest first)", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("corrupt patient artifact {}", path.display()))
}

// --- index ---

pub fn cmd_index(ctx: &mut Ctx) -> Result<i32> {
    let patients = load_patient_artifact(&ctx.layout)?;
    let provider = backends::embedder(&ctx.config)?;
    let mut total = 0usize;
    for header in &patients {
        let chunks = load_chunks(&ctx.layout.chunks(&header.patient_id))
            .with_context(|| format!("loading chunks for {} (run ingest first)", header.patient_id))?;
        let index = index_chunks(&chunks, provider.as_ref())
            .with_context(|| format!("embedding chunks for {}", header.patient_id))?;
        total += index.len();
        save_index(&ctx.layout.index(&header.patient_id), &index)
            .with_context(|| format!("writing index for {}", header.patient_id))?;
    }
    ctx.manifest.set_backend_tag("embedder", provider.tag());
    ctx.manifest.record_stage(
        "index",
        format!("{} patients, {} vectors", patients.len(), total),
    );
    ctx.manifest.save(&ctx.layout)?;
    println!("indexed {} patient(s), {} vector(s)", patients.len(), total);
    Ok(0)
}

// --- match ---

fn parse_selection(arg: Option<&str>, available: &[String], kind: &str) -> Result<Vec<String>> {
    match arg {
        None => Ok(available.to_vec()),
        Some(raw) if raw.trim() == "all" => Ok(available.to_vec()),
        Some(raw) => {
            let mut picked = BTreeSet::new();
            for part in raw.split(',') {
                let id = part.trim();
                if id.is_empty() {
                    continue;
                }
                if !available.iter().any(|a| a == id) {
                    bail!("unknown {kind} id {id:?}; available: {}", available.join(", "));
                }
                picked.insert(id.to_string());
            }
            if picked.is_empty() {
                bail!("empty {kind} selection");
            }
            Ok(picked.into_iter().collect())
        }
    }
}

pub fn cmd_match(
    ctx: &mut Ctx,
    patients_arg: Option<&str>,
    trials_arg: Option<&str>,
) -> Result<i32> {
    let headers = load_patient_artifact(&ctx.layout)?;
    let header_by_id: BTreeMap<&str, &PatientHeader> =
        headers.iter().map(|h| (h.patient_id.as_str(), h)).collect();
    let patient_ids: Vec<String> = headers.iter().map(|h| h.patient_id.clone()).collect();
    let selected_patients = parse_selection(patients_arg, &patient_ids, "patient")?;

    let mut specs: Vec<TrialSpec> = Vec::new();
    for path in ctx.layout.list_trials()? {
        specs.push(
            load_trial(&path)
                .with_context(|| format!("loading trial spec {}", path.display()))?,
        );
    }
    specs.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    let trial_ids: Vec<String> = specs.iter().map(|s| s.trial_id.clone()).collect();
    let selected_trials = parse_selection(trials_arg, &trial_ids, "trial")?;
    let spec_by_id: BTreeMap<&str, &TrialSpec> =
        specs.iter().map(|s| (s.trial_id.as_str(), s)).collect();

    let qa = backends::qa_backend(&ctx.config)?;
    let provider = backends::embedder(&ctx.config)?;
    let template = PromptTemplate::qa_v1();
    let qa_config = QaBackendConfig {
        timeout_secs: ctx.config.backend.timeout_secs,
        ..QaBackendConfig::default()
    };
    let eval_config = EvalConfig {
        thresholds: ctx.config.thresholds,
        max_marginalized: ctx.config.pipeline.max_marginalized,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.pipeline.max_in_flight)
        .build()
        .context("building worker pool")?;

    let mut scores: Vec<MatchScore> = Vec::new();
    let mut incomplete: Vec<IncompletePair> = Vec::new();
    let mut usage = UsageArtifact::default();

    for patient_id in &selected_patients {
        let header = header_by_id[patient_id.as_str()];
        let chunks = load_chunks(&ctx.layout.chunks(patient_id))
            .with_context(|| format!("loading chunks for {} (run ingest first)", patient_id))?;
        let index = load_index(&ctx.layout.index(patient_id))
            .with_context(|| format!("loading index for {} (run index first)", patient_id))?;
        index
            .validate_against(provider.as_ref(), &corpus_hash(&chunks))
            .with_context(|| format!("index for {} is stale; re-run index", patient_id))?;
        let chunks_by_id: BTreeMap<String, _> = chunks
            .iter()
            .map(|c| (c.chunk_id.clone(), c.clone()))
            .collect();

        for trial_id in &selected_trials {
            let spec = spec_by_id[trial_id.as_str()];
            let qa_ctx = QaContext {
                header,
                chunks_by_id: &chunks_by_id,
                index: &index,
                provider: provider.as_ref(),
                top_k: ctx.config.retrieval.k,
                template: &template,
            };
            let outcomes: Vec<Result<QaOutcome, _>> = pool.install(|| {
                spec.questions
                    .par_iter()
                    .map(|q| answer_question(&qa_ctx, q, qa.as_ref(), &qa_config))
                    .collect()
            });
            usage.qa_calls += outcomes.len() as u64;

            let mut records = Vec::with_capacity(outcomes.len());
            let mut failure: Option<String> = None;
            for (question, outcome) in spec.questions.iter().zip(outcomes) {
                match outcome {
                    Ok(o) => {
                        usage.input_tokens += o.usage.input_tokens;
                        usage.output_tokens += o.usage.output_tokens;
                        records.push(o.record);
                    }
                    Err(e) => {
                        failure.get_or_insert(format!("question {}: {e}", question.id));
                    }
                }
            }
            if let Some(reason) = failure {
                log::error!("pair {patient_id} x {trial_id} incomplete: {reason}");
                incomplete.push(IncompletePair {
                    patient_id: patient_id.clone(),
                    trial_id: trial_id.clone(),
                    reason,
                });
                continue;
            }

            save_answers(&ctx.layout.answers(patient_id, trial_id), &records)
                .with_context(|| format!("writing answers for {patient_id} x {trial_id}"))?;

            let answers: BTreeMap<String, AnswerValue> = records
                .iter()
                .map(|r| (r.question_id.clone(), r.answer))
                .collect();
            let mut rows = Vec::with_capacity(spec.criteria.len());
            let mut results = Vec::with_capacity(spec.criteria.len());
            let mut eval_failure: Option<String> = None;
            for criterion in &spec.criteria {
                match evaluate_criterion(criterion, &answers, &eval_config) {
                    Ok(eval) => {
                        results.push(CriterionResult::new(
                            &criterion.id,
                            criterion.tier,
                            eval.verdict,
                        ));
                        rows.push(VerdictRow {
                            criterion_id: criterion.id.clone(),
                            kind: criterion.kind,
                            tier: criterion.tier,
                            flagged: criterion.flagged,
                            probability: eval.probability,
                            verdict: eval.verdict,
                            num_marginalized: eval.num_marginalized,
                        });
                    }
                    Err(e) => {
                        eval_failure
                            .get_or_insert(format!("criterion {}: {e}", criterion.id));
                    }
                }
            }
            if let Some(reason) = eval_failure {
                log::error!("pair {patient_id} x {trial_id} incomplete: {reason}");
                incomplete.push(IncompletePair {
                    patient_id: patient_id.clone(),
                    trial_id: trial_id.clone(),
                    reason,
                });
                continue;
            }
            write_jsonl(&ctx.layout.verdicts(patient_id, trial_id), &rows)
                .with_context(|| format!("writing verdicts for {patient_id} x {trial_id}"))?;

            for method in ScoringMethod::ALL {
                let score = score_with_method(&results, method, &ctx.config.tier_weights)
                    .with_context(|| format!("scoring {patient_id} x {trial_id}"))?;
                scores.push(MatchScore {
                    patient_id: patient_id.clone(),
                    trial_id: trial_id.clone(),
                    method,
                    score,
                });
            }
            usage.n_pairs += 1;
        }
    }

    write_scores_csv(&ctx.layout.scores(), &scores).context("writing scores")?;
    let mut bytes = serde_json::to_vec_pretty(&usage).context("serialize usage")?;
    bytes.push(b'\n');
    write_atomic(&ctx.layout.usage(), &bytes).context("writing usage")?;

    let attempted = selected_patients.len() * selected_trials.len();
    ctx.manifest.incomplete_pairs = incomplete.clone();
    ctx.manifest.set_backend_tag("qa", qa.tag());
    ctx.manifest.record_stage(
        "match",
        format!(
            "{} of {} pairs complete",
            usage.n_pairs, attempted
        ),
    );
    ctx.manifest.save(&ctx.layout)?;

    println!(
        "matched {} of {} pair(s); scores at {}",
        usage.n_pairs,
        attempted,
        ctx.layout.scores().display()
    );
    if incomplete.is_empty() {
        Ok(0)
    } else {
        for pair in &incomplete {
            eprintln!(
                "incomplete: {} x {}: {}",
                pair.patient_id, pair.trial_id, pair.reason
            );
        }
        Ok(4)
    }
}

// --- rank / evaluate ---

/// Relevant candidates per subject, for each search direction.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruth {
    pub trials_for_patient: BTreeMap<String, Vec<String>>,
    pub patients_for_trial: BTreeMap<String, Vec<String>>,
}

impl GroundTruth {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read ground truth {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("invalid ground truth {}", path.display()))
    }

    pub fn for_direction(&self, direction: Direction) -> &BTreeMap<String, Vec<String>> {
        match direction {
            Direction::TrialsForPatient => &self.trials_for_patient,
            Direction::PatientsForTrial => &self.patients_for_trial,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub ndcg: f64,
    pub hit_at_k: f64,
    pub relevant: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub direction: Direction,
    pub method: ScoringMethod,
    pub k: usize,
    pub per_subject: BTreeMap<String, SubjectMetrics>,
    pub mean_ndcg: f64,
    pub mean_hit_at_k: f64,
}

pub fn compute_metrics(
    rankings: &[Ranking],
    truth: &GroundTruth,
    direction: Direction,
    method: ScoringMethod,
    k: usize,
) -> Result<MetricsReport> {
    if k == 0 {
        bail!("k must be at least 1");
    }
    let relevant_map = truth.for_direction(direction);
    let mut per_subject = BTreeMap::new();
    for ranking in rankings {
        let Some(relevant) = relevant_map.get(&ranking.subject_id) else {
            continue;
        };
        if relevant.is_empty() {
            bail!("ground truth for {} lists no candidates", ranking.subject_id);
        }
        let ordered: Vec<String> = ranking
            .ordered
            .iter()
            .map(|c| c.candidate_id.clone())
            .collect();
        let relevant_set: BTreeSet<String> = relevant.iter().cloned().collect();
        let ndcg = ndcg_binary_ids(&ordered, &relevant_set).with_context(|| {
            format!("computing NDCG for subject {}", ranking.subject_id)
        })?;
        let hit = ordered
            .iter()
            .take(k)
            .any(|id| relevant_set.contains(id));
        per_subject.insert(
            ranking.subject_id.clone(),
            SubjectMetrics {
                ndcg,
                hit_at_k: if hit { 1.0 } else { 0.0 },
                relevant: relevant.clone(),
            },
        );
    }
    if per_subject.is_empty() {
        bail!("ground truth covers none of the ranked subjects");
    }
    let n = per_subject.len() as f64;
    let mean_ndcg = per_subject.values().map(|m| m.ndcg).sum::<f64>() / n;
    let mean_hit_at_k = per_subject.values().map(|m| m.hit_at_k).sum::<f64>() / n;
    Ok(MetricsReport {
        direction,
        method,
        k,
        per_subject,
        mean_ndcg,
        mean_hit_at_k,
    })
}

fn build_rankings(
    ctx: &Ctx,
    direction: Direction,
    method: ScoringMethod,
) -> Result<Vec<Ranking>> {
    let path = ctx.layout.scores();
    let scores = read_scores_csv(&path)
        .with_context(|| format!("no scores at {} (run match first)", path.display()))?;
    let mut by_subject: BTreeMap<String, Vec<MatchScore>> = BTreeMap::new();
    for score in scores.into_iter().filter(|s| s.method == method) {
        let subject = match direction {
            Direction::TrialsForPatient => score.patient_id.clone(),
            Direction::PatientsForTrial => score.trial_id.clone(),
        };
        by_subject.entry(subject).or_default().push(score);
    }
    if by_subject.is_empty() {
        bail!(
            "no {} scores found in {}; run match first",
            method.as_str(),
            path.display()
        );
    }
    let mut rankings = Vec::with_capacity(by_subject.len());
    for (subject, group) in by_subject {
        rankings.push(
            rank_candidates(&group, direction)
                .with_context(|| format!("ranking candidates for {subject}"))?,
        );
    }
    Ok(rankings)
}

fn ground_truth_path(
    ctx: &Ctx,
    flag: Option<&std::path::Path>,
) -> Option<std::path::PathBuf> {
    flag.map(|p| p.to_path_buf())
        .or_else(|| ctx.config.paths.ground_truth.clone())
}

pub fn cmd_rank(
    ctx: &mut Ctx,
    direction: Direction,
    method: Option<ScoringMethod>,
    ground_truth: Option<&std::path::Path>,
    k: usize,
) -> Result<i32> {
    let method = method.unwrap_or(ctx.config.pipeline.scoring_method);
    let rankings = build_rankings(ctx, direction, method)?;

    let mut bytes = serde_json::to_vec_pretty(&rankings).context("serialize rankings")?;
    bytes.push(b'\n');
    let out = ctx.layout.rankings(direction, method);
    write_atomic(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "ranked {} subject(s) by {} into {}",
        rankings.len(),
        method.as_str(),
        out.display()
    );

    if let Some(gt_path) = ground_truth_path(ctx, ground_truth) {
        let truth = GroundTruth::load(&gt_path)?;
        let metrics = compute_metrics(&rankings, &truth, direction, method, k)?;
        let mut bytes = serde_json::to_vec_pretty(&metrics).context("serialize metrics")?;
        bytes.push(b'\n');
        let out = ctx.layout.metrics(direction, method);
        write_atomic(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
        println!(
            "metrics over {} subject(s): mean NDCG {:.4}, hit@{} {:.4} ({})",
            metrics.per_subject.len(),
            metrics.mean_ndcg,
            metrics.k,
            metrics.mean_hit_at_k,
            out.display()
        );
    }

    ctx.manifest.record_stage(
        &format!("rank:{}:{}", direction.as_str(), method.as_str()),
        format!("{} subjects", rankings.len()),
    );
    ctx.manifest.save(&ctx.layout)?;
    Ok(0)
}

pub fn cmd_evaluate(
    ctx: &mut Ctx,
    direction: Direction,
    method: Option<ScoringMethod>,
    ground_truth: Option<&std::path::Path>,
    k: usize,
) -> Result<i32> {
    let method = method.unwrap_or(ctx.config.pipeline.scoring_method);
    let rankings_path = ctx.layout.rankings(direction, method);
    let text = fs::read_to_string(&rankings_path).with_context(|| {
        format!(
            "no rankings at {} (run rank first)",
            rankings_path.display()
        )
    })?;
    let rankings: Vec<Ranking> = serde_json::from_str(&text)
        .with_context(|| format!("corrupt rankings {}", rankings_path.display()))?;

    let gt_path = ground_truth_path(ctx, ground_truth)
        .context("no ground truth: pass --ground-truth or set paths.ground_truth")?;
    let truth = GroundTruth::load(&gt_path)?;
    let metrics = compute_metrics(&rankings, &truth, direction, method, k)?;

    let mut bytes = serde_json::to_vec_pretty(&metrics).context("serialize metrics")?;
    bytes.push(b'\n');
    let out = ctx.layout.metrics(direction, method);
    write_atomic(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "metrics over {} subject(s): mean NDCG {:.4}, hit@{} {:.4} ({})",
        metrics.per_subject.len(),
        metrics.mean_ndcg,
        metrics.k,
        metrics.mean_hit_at_k,
        out.display()
    );

    ctx.manifest.record_stage(
        &format!("evaluate:{}:{}", direction.as_str(), method.as_str()),
        format!("{} subjects", metrics.per_subject.len()),
    );
    ctx.manifest.save(&ctx.layout)?;
    Ok(0)
}

// --- cost ---

pub fn cmd_cost(ctx: &mut Ctx) -> Result<i32> {
    let path = ctx.layout.usage();
    let text = fs::read_to_string(&path)
        .with_context(|| format!("no usage record at {} (run match first)", path.display()))?;
    let usage: UsageArtifact = serde_json::from_str(&text)
        .with_context(|| format!("corrupt usage record {}", path.display()))?;
    if usage.n_pairs == 0 {
        bail!("no completed pairs recorded; nothing to cost");
    }
    let tokens = TokenUsage::new(usage.input_tokens, usage.output_tokens);

    let mut reports: Vec<CostReport> = Vec::new();
    if let Some(profile) = &ctx.config.cost.self_hosted {
        reports.push(
            CostReport::self_hosted(tokens, profile, usage.n_pairs)
                .context("self-hosted cost estimate")?,
        );
    }
    if let Some(pricing) = &ctx.config.cost.api {
        reports
            .push(CostReport::api(tokens, pricing, usage.n_pairs).context("API cost estimate")?);
    }
    if reports.is_empty() {
        bail!("no [cost.self_hosted] or [cost.api] configuration present");
    }

    let mut bytes = serde_json::to_vec_pretty(&reports).context("serialize cost reports")?;
    bytes.push(b'\n');
    let out = ctx.layout.cost();
    write_atomic(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;

    for report in &reports {
        match report.runtime_hours {
            Some(hours) => println!(
                "{}: total ${:.2}, per pair ${:.2}, est. {:.2} h",
                report.method, report.total_cost, report.per_pair_cost, hours
            ),
            None => println!(
                "{}: total ${:.2}, per pair ${:.2}",
                report.method, report.total_cost, report.per_pair_cost
            ),
        }
    }
    ctx.manifest
        .record_stage("cost", format!("{} estimate(s)", reports.len()));
    ctx.manifest.save(&ctx.layout)?;
    println!("cost estimates at {}", out.display());
    Ok(0)
}
