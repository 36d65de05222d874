//! Human-readable run summary: scores per pair, verdict distributions,
//! per-question NA rates with fallback accounting, and the citations each
//! answer pointed at, so every NA and every verdict can be traced by hand.

use std::collections::BTreeMap;
use std::fmt::Write as FmtWrite;

use anyhow::{bail, Context, Result};

use trialmatch_core::criteria_logic::{AnswerValue, CriterionEvaluation, Verdict};
use trialmatch_core::qa_engine::{load_answers, QaRecord};
use trialmatch_core::scorer_ranker::{read_scores_csv, verdict_stats, ScoringMethod};
use trialmatch_core::util::{read_jsonl, write_atomic};

use crate::stages::{Ctx, VerdictRow};

fn answer_label(answer: AnswerValue) -> &'static str {
    match answer {
        AnswerValue::Yes => "Yes",
        AnswerValue::No => "No",
        AnswerValue::Na => "NA",
    }
}

fn verdict_label(verdict: Verdict) -> &'static str {
    match verdict {
        Verdict::Met => "Met",
        Verdict::NotMet => "NotMet",
        Verdict::Na => "NA",
    }
}

struct PairData {
    patient_id: String,
    trial_id: String,
    scores: BTreeMap<ScoringMethod, f64>,
    verdicts: Vec<VerdictRow>,
    answers: Vec<QaRecord>,
}

pub fn cmd_report(ctx: &mut Ctx) -> Result<i32> {
    if !ctx.layout.manifest().exists() {
        bail!(
            "unknown run {}: no manifest at {}",
            ctx.layout.run_id,
            ctx.layout.manifest().display()
        );
    }
    let scores_path = ctx.layout.scores();
    let scores = read_scores_csv(&scores_path)
        .with_context(|| format!("no scores at {} (run match first)", scores_path.display()))?;
    if scores.is_empty() {
        bail!("run {} has no scored pairs; nothing to report", ctx.layout.run_id);
    }

    let mut pairs: BTreeMap<(String, String), BTreeMap<ScoringMethod, f64>> = BTreeMap::new();
    for score in &scores {
        pairs
            .entry((score.patient_id.clone(), score.trial_id.clone()))
            .or_default()
            .insert(score.method, score.score);
    }
    let mut data = Vec::with_capacity(pairs.len());
    for ((patient_id, trial_id), methods) in pairs {
        let verdicts: Vec<VerdictRow> =
            read_jsonl(&ctx.layout.verdicts(&patient_id, &trial_id)).with_context(|| {
                format!("loading verdicts for {patient_id} x {trial_id}")
            })?;
        let answers = load_answers(&ctx.layout.answers(&patient_id, &trial_id))
            .with_context(|| format!("loading answers for {patient_id} x {trial_id}"))?;
        data.push(PairData {
            patient_id,
            trial_id,
            scores: methods,
            verdicts,
            answers,
        });
    }

    let text = render(ctx, &data)?;
    let out = ctx.layout.report();
    write_atomic(&out, text.as_bytes())
        .with_context(|| format!("writing {}", out.display()))?;
    println!("report at {}", out.display());

    ctx.manifest
        .record_stage("report", format!("{} pairs", data.len()));
    ctx.manifest.save(&ctx.layout)?;
    Ok(0)
}

fn render(ctx: &Ctx, data: &[PairData]) -> Result<String> {
    let manifest = &ctx.manifest;
    let mut out = String::new();
    writeln!(out, "# Run {}", ctx.layout.run_id)?;
    writeln!(out)?;
    let tags: Vec<String> = manifest
        .backend_tags
        .iter()
        .map(|(role, tag)| format!("{role}={tag}"))
        .collect();
    writeln!(out, "- backend mode: {}", manifest.backend_mode)?;
    if !tags.is_empty() {
        writeln!(out, "- backends: {}", tags.join(", "))?;
    }
    writeln!(out, "- prompt template: {}", manifest.prompt_version)?;
    writeln!(
        out,
        "- pairs scored: {} ({} incomplete)",
        data.len(),
        manifest.incomplete_pairs.len()
    )?;
    writeln!(out)?;

    // Scores.
    writeln!(out, "## Scores")?;
    writeln!(out)?;
    writeln!(out, "| patient | trial | simple | iterative_tier | weighted_tier |")?;
    writeln!(out, "|---|---|---|---|---|")?;
    for pair in data {
        let cell = |m: ScoringMethod| {
            pair.scores
                .get(&m)
                .map(|s| format!("{s:.4}"))
                .unwrap_or_else(|| "-".to_string())
        };
        writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            pair.patient_id,
            pair.trial_id,
            cell(ScoringMethod::Simple),
            cell(ScoringMethod::IterativeTier),
            cell(ScoringMethod::WeightedTier),
        )?;
    }
    writeln!(out)?;

    // Verdict distribution.
    writeln!(out, "## Verdict distribution")?;
    writeln!(out)?;
    let all_evals: Vec<CriterionEvaluation> = data
        .iter()
        .flat_map(|p| p.verdicts.iter())
        .map(|row| CriterionEvaluation {
            criterion_id: row.criterion_id.clone(),
            probability: row.probability,
            verdict: row.verdict,
            num_marginalized: row.num_marginalized,
        })
        .collect();
    if let Ok(stats) = verdict_stats(&all_evals) {
        writeln!(
            out,
            "Overall ({} criterion evaluations): Met {:.1}%, NotMet {:.1}%, NA {:.1}%",
            all_evals.len(),
            stats.met_pct,
            stats.not_met_pct,
            stats.na_pct
        )?;
        writeln!(out)?;
    }
    writeln!(out, "| patient | trial | met | not met | na | flagged |")?;
    writeln!(out, "|---|---|---|---|---|---|")?;
    for pair in data {
        let count = |v: Verdict| pair.verdicts.iter().filter(|r| r.verdict == v).count();
        let flagged = pair.verdicts.iter().filter(|r| r.flagged).count();
        writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            pair.patient_id,
            pair.trial_id,
            count(Verdict::Met),
            count(Verdict::NotMet),
            count(Verdict::Na),
            flagged,
        )?;
    }
    writeln!(out)?;

    // NA rate per question, with fallback attribution.
    writeln!(out, "## Question NA rates")?;
    writeln!(out)?;
    let mut per_question: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for pair in data {
        for record in &pair.answers {
            let entry = per_question.entry(record.question_id.as_str()).or_default();
            entry.0 += 1;
            if record.answer == AnswerValue::Na {
                entry.1 += 1;
            }
            if record.fallback_reason.is_some() {
                entry.2 += 1;
            }
        }
    }
    writeln!(out, "| question | answers | na | na rate | fallback na |")?;
    writeln!(out, "|---|---|---|---|---|")?;
    for (question, (total, na, fallback)) in &per_question {
        writeln!(
            out,
            "| {} | {} | {} | {:.2} | {} |",
            question,
            total,
            na,
            *na as f64 / *total as f64,
            fallback,
        )?;
    }
    writeln!(out)?;
    let mut fallback_lines = Vec::new();
    for pair in data {
        for record in &pair.answers {
            if let Some(reason) = &record.fallback_reason {
                fallback_lines.push(format!(
                    "- {} x {}, {}: {} after {} attempt(s): {}",
                    pair.patient_id,
                    pair.trial_id,
                    record.question_id,
                    reason.kind,
                    reason.attempts,
                    reason.message,
                ));
            }
        }
    }
    if fallback_lines.is_empty() {
        writeln!(out, "All NA answers were produced by the QA backend itself; none were imposed by fallbacks.")?;
    } else {
        writeln!(out, "NA answers imposed after backend failures:")?;
        for line in &fallback_lines {
            writeln!(out, "{line}")?;
        }
    }
    writeln!(out)?;

    // Citations.
    writeln!(out, "## Citations")?;
    for pair in data {
        writeln!(out)?;
        writeln!(out, "### {} x {}", pair.patient_id, pair.trial_id)?;
        writeln!(out)?;
        for record in &pair.answers {
            let citations = if record.citations.is_empty() {
                "(none)".to_string()
            } else {
                record.citations.join(", ")
            };
            writeln!(
                out,
                "- {} [{}, confidence {}]: {}",
                record.question_id,
                answer_label(record.answer),
                record.confidence,
                citations,
            )?;
        }
    }
    writeln!(out)?;

    // Criterion detail per pair.
    writeln!(out, "## Criterion verdicts")?;
    for pair in data {
        writeln!(out)?;
        writeln!(out, "### {} x {}", pair.patient_id, pair.trial_id)?;
        writeln!(out)?;
        writeln!(out, "| criterion | tier | verdict | probability | unknowns |")?;
        writeln!(out, "|---|---|---|---|---|")?;
        for row in &pair.verdicts {
            let mut label = verdict_label(row.verdict).to_string();
            if row.flagged {
                label.push_str(" (flagged)");
            }
            writeln!(
                out,
                "| {} | {} | {} | {:.4} | {} |",
                row.criterion_id, row.tier, label, row.probability, row.num_marginalized,
            )?;
        }
    }

    if !manifest.incomplete_pairs.is_empty() {
        writeln!(out)?;
        writeln!(out, "## Incomplete pairs")?;
        writeln!(out)?;
        writeln!(out, "| patient | trial | reason |")?;
        writeln!(out, "|---|---|---|")?;
        for pair in &manifest.incomplete_pairs {
            writeln!(
                out,
                "| {} | {} | {} |",
                pair.patient_id, pair.trial_id, pair.reason
            )?;
        }
    }
    Ok(out)
}
