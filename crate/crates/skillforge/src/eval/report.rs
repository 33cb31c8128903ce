//! Accuracy scoring of solve attempts against a corpus.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Problem};
use crate::prompting::Attempt;

use super::answers::{answers_equivalent, extract_final_answer, normalize_answer, ExtractionConvention, NormalizedAnswer};
use super::EvalError;

/// Key used for the per-topic and per-skill breakdowns when a problem or
/// attempt carries no topic/skill.
pub const UNLABELED: &str = "__unlabeled__";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub correct: usize,
}

impl Counts {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    /// The attempt produced no final answer at all.
    NoAnswer,
    /// The attempt's final answer did not match the reference.
    WrongAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub problem_id: String,
    pub category: FailureCategory,
    /// The (wrong) answer the attempt settled on, when there was one.
    pub answer: NormalizedAnswer,
    pub reference: NormalizedAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_topic: BTreeMap<String, Counts>,
    pub per_skill: BTreeMap<String, Counts>,
    pub failures: Vec<FailureRecord>,
}

/// The reference answer a problem is scored against: the explicit
/// `final_answer` field when present, otherwise whatever the auto convention
/// extracts from the worked reference solution.
pub fn reference_answer(problem: &Problem) -> Result<NormalizedAnswer, EvalError> {
    let answer = match &problem.final_answer {
        Some(explicit) => normalize_answer(explicit),
        None => extract_final_answer(&problem.reference_answer, ExtractionConvention::Auto),
    };
    if answer.is_none() {
        return Err(EvalError::NoReference {
            id: problem.id.clone(),
        });
    }
    Ok(answer)
}

/// Scores `attempts` against `corpus`. Every attempt must reference a corpus
/// problem; every scored problem must have an extractable reference answer.
pub fn evaluate(attempts: &[Attempt], corpus: &Corpus) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport {
        total: 0,
        correct: 0,
        accuracy: 0.0,
        per_topic: BTreeMap::new(),
        per_skill: BTreeMap::new(),
        failures: Vec::new(),
    };

    for attempt in attempts {
        let problem = corpus
            .get(&attempt.problem_id)
            .ok_or_else(|| EvalError::UnknownProblem(attempt.problem_id.clone()))?;
        let reference = reference_answer(problem)?;
        let correct = answers_equivalent(&attempt.final_answer, &reference);

        report.total += 1;
        let topic_key = problem.topic.clone().unwrap_or_else(|| UNLABELED.into());
        let skill_key = attempt
            .selected_skill
            .as_ref()
            .map(|s| s.as_str().to_string())
            .unwrap_or_else(|| UNLABELED.into());
        let topic_counts = report.per_topic.entry(topic_key).or_default();
        let skill_counts = report.per_skill.entry(skill_key).or_default();
        topic_counts.total += 1;
        skill_counts.total += 1;

        if correct {
            report.correct += 1;
            topic_counts.correct += 1;
            skill_counts.correct += 1;
        } else {
            report.failures.push(FailureRecord {
                problem_id: attempt.problem_id.clone(),
                category: if attempt.final_answer.is_none() {
                    FailureCategory::NoAnswer
                } else {
                    FailureCategory::WrongAnswer
                },
                answer: attempt.final_answer.clone(),
                reference,
            });
        }
    }

    report.accuracy = if report.total == 0 {
        0.0
    } else {
        report.correct as f64 / report.total as f64
    };
    Ok(report)
}

/// Plain-text summary table (overall, per topic, per skill).
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "overall: {}/{} = {:.4}\n",
        report.correct, report.total, report.accuracy
    ));
    if !report.per_topic.is_empty() {
        out.push_str("\nby topic:\n");
        for (topic, counts) in &report.per_topic {
            out.push_str(&format!(
                "  {:<32} {:>5}/{:<5} {:.4}\n",
                topic,
                counts.correct,
                counts.total,
                counts.accuracy()
            ));
        }
    }
    if !report.per_skill.is_empty() {
        out.push_str("\nby skill:\n");
        for (skill, counts) in &report.per_skill {
            out.push_str(&format!(
                "  {:<32} {:>5}/{:<5} {:.4}\n",
                skill,
                counts.correct,
                counts.total,
                counts.accuracy()
            ));
        }
    }
    out
}

/// Per-skill accuracy as CSV with a header row.
pub fn to_csv_per_skill(report: &EvalReport) -> String {
    let mut out = String::from("skill,total,correct,accuracy\n");
    for (skill, counts) in &report.per_skill {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            skill,
            counts.total,
            counts.correct,
            counts.accuracy()
        ));
    }
    out
}
