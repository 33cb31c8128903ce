//! LLM-driven error taxonomy for solved attempts.
//!
//! Each incorrect attempt is shown to a judge model together with the ground
//! truth and classified along three non-exclusive axes: calculation error,
//! main-skill (concept) error, and secondary-skill error. Correct attempts
//! short-circuit to all-clear without a model call. Error rates aggregate
//! into per-axis success rates.

use std::collections::BTreeMap;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::eval::{answers_equivalent, reference_answer, EvalError};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::prompting::Attempt;
use crate::template::{Template, TemplateError};
use crate::util::parallel_map;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("cannot parse classifier response: {0}")]
    Parse(String),
    #[error("attempt references unknown problem `{0}`")]
    UnknownProblem(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// The three error axes, in A1/A2/A3 answer order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorFlags {
    pub calculation: bool,
    pub main_skill: bool,
    pub secondary_skill: bool,
}

/// Classification for one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub problem_id: String,
    /// The attempt's voted answer matched the reference; such attempts are
    /// all-clear by definition and never reach the judge.
    pub answer_correct: bool,
    pub flags: ErrorFlags,
    /// Judge rationales in A1/A2/A3 order; empty for short-circuited or
    /// indeterminate records.
    pub rationales: Vec<String>,
    /// The judge's response never parsed, even after a format reminder; the
    /// flags are meaningless and the record is excluded from rate math.
    pub indeterminate: bool,
}

/// Parses a judge response of the shape
///
/// ```text
/// A1: no || rationale…
/// A2: yes || rationale…
/// A3: no || rationale…
/// ```
///
/// All three answers must be present; `yes`/`no` is case-insensitive and the
/// `|| rationale` part is optional.
pub fn parse_error_response(text: &str) -> Result<(ErrorFlags, Vec<String>), AnalysisError> {
    static ANSWER: Lazy<Regex> = Lazy::new(|| {
        Regex::new(r"(?i)^\s*A([123])\s*[:.]\s*(yes|no)[\s.,]*(?:\|\|\s*(.*))?$")
            .expect("valid regex")
    });
    let mut verdicts: BTreeMap<u8, (bool, String)> = BTreeMap::new();
    for line in text.lines() {
        let Some(caps) = ANSWER.captures(line) else {
            continue;
        };
        let index: u8 = caps[1].parse().expect("single digit");
        let verdict = caps[2].eq_ignore_ascii_case("yes");
        let rationale = caps
            .get(3)
            .map(|m| m.as_str().trim().to_string())
            .unwrap_or_default();
        // First occurrence of each answer wins.
        verdicts.entry(index).or_insert((verdict, rationale));
    }
    let missing: Vec<String> = [1u8, 2, 3]
        .iter()
        .filter(|i| !verdicts.contains_key(i))
        .map(|i| format!("A{i}"))
        .collect();
    if !missing.is_empty() {
        return Err(AnalysisError::Parse(format!(
            "missing answers: {}",
            missing.join(", ")
        )));
    }
    let flags = ErrorFlags {
        calculation: verdicts[&1].0,
        main_skill: verdicts[&2].0,
        secondary_skill: verdicts[&3].0,
    };
    let rationales = vec![
        verdicts[&1].1.clone(),
        verdicts[&2].1.clone(),
        verdicts[&3].1.clone(),
    ];
    Ok((flags, rationales))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Worker threads across attempts.
    pub jobs: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            model: "judge".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            jobs: 1,
        }
    }
}

const FORMAT_REMINDER: &str = "Answer exactly in the format:\nA1: yes/no || <reason>\nA2: yes/no || <reason>\nA3: yes/no || <reason>";

/// The completion whose extracted answer won the vote — the one worth
/// judging. Falls back to the first completion.
fn representative_completion(attempt: &Attempt) -> &str {
    attempt
        .extracted_answers
        .iter()
        .position(|a| !a.is_none() && answers_equivalent(a, &attempt.final_answer))
        .and_then(|i| attempt.completions.get(i))
        .or_else(|| attempt.completions.first())
        .map(String::as_str)
        .unwrap_or("")
}

/// Classifies every attempt. The template needs `{question}`, `{solution}`,
/// and `{ground_truth}`. Correct attempts never reach the judge; judge
/// responses that stay unparseable after one format-reminder retry yield
/// indeterminate records rather than failing the stage.
pub fn classify_errors(
    attempts: &[Attempt],
    corpus: &Corpus,
    gateway: &Gateway,
    template: &Template,
    opts: &AnalysisOptions,
) -> Result<Vec<ErrorRecord>, AnalysisError> {
    template.require(&["question", "solution", "ground_truth"])?;
    // Resolve references up front so a malformed corpus fails fast.
    let mut prepared = Vec::with_capacity(attempts.len());
    for attempt in attempts {
        let problem = corpus
            .get(&attempt.problem_id)
            .ok_or_else(|| AnalysisError::UnknownProblem(attempt.problem_id.clone()))?;
        let reference = reference_answer(problem)?;
        prepared.push((attempt, problem, reference));
    }
    let results = parallel_map(prepared, opts.jobs, |(attempt, problem, reference)| {
        let correct =
            !attempt.final_answer.is_none() && answers_equivalent(&attempt.final_answer, reference);
        if correct {
            return Ok(ErrorRecord {
                problem_id: attempt.problem_id.clone(),
                answer_correct: true,
                flags: ErrorFlags::default(),
                rationales: Vec::new(),
                indeterminate: false,
            });
        }
        let base = template.render(&[
            ("question", problem.question.as_str()),
            ("solution", representative_completion(attempt)),
            ("ground_truth", reference.value.as_str()),
        ]);
        let mut parsed = None;
        for attempt_no in 0..2 {
            let prompt = match attempt_no {
                0 => base.clone(),
                _ => format!("{base}\n\n{FORMAT_REMINDER}"),
            };
            let request = CompletionRequest {
                model: opts.model.clone(),
                messages: vec![ChatMessage::user(prompt)],
                temperature: opts.temperature,
                max_output_tokens: opts.max_output_tokens,
                n_samples: 1,
            };
            let response = gateway.complete(&request)?;
            let text = response.samples.into_iter().next().unwrap_or_default();
            if let Ok(result) = parse_error_response(&text) {
                parsed = Some(result);
                break;
            }
        }
        Ok(match parsed {
            Some((flags, rationales)) => ErrorRecord {
                problem_id: attempt.problem_id.clone(),
                answer_correct: false,
                flags,
                rationales,
                indeterminate: false,
            },
            None => ErrorRecord {
                problem_id: attempt.problem_id.clone(),
                answer_correct: false,
                flags: ErrorFlags::default(),
                rationales: Vec::new(),
                indeterminate: true,
            },
        })
    });
    results.into_iter().collect()
}

/// Error count and success rate for one axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateLine {
    pub errors: usize,
    pub success_rate: f64,
}

/// Per-axis success rates over the determinate records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessRates {
    pub total: usize,
    pub determinate: usize,
    pub indeterminate: usize,
    pub calculation: RateLine,
    pub main_skill: RateLine,
    pub secondary_skill: RateLine,
}

pub fn aggregate_rates(records: &[ErrorRecord]) -> SuccessRates {
    let determinate: Vec<&ErrorRecord> = records.iter().filter(|r| !r.indeterminate).collect();
    let line = |count: usize| RateLine {
        errors: count,
        success_rate: if determinate.is_empty() {
            0.0
        } else {
            (determinate.len() - count) as f64 / determinate.len() as f64
        },
    };
    SuccessRates {
        total: records.len(),
        determinate: determinate.len(),
        indeterminate: records.len() - determinate.len(),
        calculation: line(determinate.iter().filter(|r| r.flags.calculation).count()),
        main_skill: line(determinate.iter().filter(|r| r.flags.main_skill).count()),
        secondary_skill: line(
            determinate
                .iter()
                .filter(|r| r.flags.secondary_skill)
                .count(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Problem, Split};
    use crate::eval::normalize_answer;
    use crate::gateway::{MatchMode, ScriptEntry, ScriptMatcher, ScriptedBackend};
    use crate::prompting::PromptMode;
    use std::sync::Arc;

    fn attempt(id: &str, completion: &str, answer: &str) -> Attempt {
        Attempt {
            problem_id: id.into(),
            strategy: "skill_based(k=4)".into(),
            mode: PromptMode::CotText,
            selected_skill: None,
            completions: vec![completion.to_string()],
            extracted_answers: vec![normalize_answer(answer)],
            sample_notes: vec![None],
            final_answer: normalize_answer(answer),
            seed: 0,
        }
    }

    fn corpus() -> Corpus {
        let problems = vec![
            Problem {
                id: "q0".into(),
                question: "What is 6*7?".into(),
                reference_answer: "6*7 = 42. #### 42".into(),
                final_answer: Some("42".into()),
                topic: None,
            },
            Problem {
                id: "q1".into(),
                question: "What is 8*8?".into(),
                reference_answer: "8*8 = 64. #### 64".into(),
                final_answer: Some("64".into()),
                topic: None,
            },
        ];
        Corpus::new("unit", Split::Test, problems).unwrap()
    }

    fn judge_template() -> Template {
        Template::new(
            "Judge this.\n\nQuestion: {question}\n\nSolution:{solution}\n\nGroundtruth: {ground_truth}\n\nAnswer Q1, Q2, Q3.",
        )
    }

    #[test]
    fn parses_verdict_blocks_from_worked_examples() {
        // The judged verdicts for a solution that misunderstands the main
        // concept but calculates correctly.
        let descending = "A1: no || There are two calculations in the question: 9*10*9=810 and 810 - 9 = 801. Both are correct.\n\nA2: yes || The main concept is understanding of descending numbers, but this understanding is not correct. \n\nA3: no || The secondary concept of permutations is correctly used. ";
        let (flags, rationales) = parse_error_response(descending).unwrap();
        assert_eq!(
            flags,
            ErrorFlags {
                calculation: false,
                main_skill: true,
                secondary_skill: false
            }
        );
        assert!(rationales[1].starts_with("The main concept"));

        // All clear.
        let clean = "A1: no || fine\nA2: no || fine\nA3: no || fine";
        let (flags, _) = parse_error_response(clean).unwrap();
        assert_eq!(flags, ErrorFlags::default());

        // Secondary-skill failure only, tolerating case and prose around.
        let hyperbola =
            "Looking at it:\nA1: No || both correct\nA2: no\nA3: YES || wrong distance relation";
        let (flags, rationales) = parse_error_response(hyperbola).unwrap();
        assert!(!flags.calculation && !flags.main_skill && flags.secondary_skill);
        assert_eq!(rationales[1], "");
    }

    #[test]
    fn rejects_incomplete_or_unverdicted_responses() {
        assert!(parse_error_response("A1: no || x\nA2: yes || y").is_err());
        assert!(parse_error_response("A1: maybe || x\nA2: no\nA3: no").is_err());
        assert!(parse_error_response("no errors anywhere").is_err());
    }

    #[test]
    fn correct_attempts_short_circuit_without_model_calls() {
        let backend = ScriptedBackend::new(vec![ScriptEntry {
            matcher: ScriptMatcher {
                mode: MatchMode::Contains,
                text: "never matched".into(),
            },
            responses: vec!["unused".into()],
        }])
        .unwrap();
        let gateway = Gateway::builder(Arc::new(backend)).build().unwrap();
        let attempts = vec![attempt("q0", "6*7 = 42. The answer is 42.", "42")];
        let records = classify_errors(
            &attempts,
            &corpus(),
            &gateway,
            &judge_template(),
            &AnalysisOptions::default(),
        )
        .unwrap();
        assert_eq!(gateway.transport_calls(), 0);
        assert!(records[0].answer_correct);
        assert_eq!(records[0].flags, ErrorFlags::default());
        assert!(!records[0].indeterminate);
    }

    #[test]
    fn wrong_attempts_are_judged_and_reminded_once() {
        let backend = ScriptedBackend::new(vec![
            // The reminder retry for q1 (more specific match first).
            ScriptEntry {
                matcher: ScriptMatcher {
                    mode: MatchMode::Contains,
                    text: "Answer exactly in the format".into(),
                },
                responses: vec!["A1: yes || slipped a digit\nA2: no || right concept\nA3: no || fine".into()],
            },
            ScriptEntry {
                matcher: ScriptMatcher {
                    mode: MatchMode::Contains,
                    text: "What is 8*8?".into(),
                },
                responses: vec!["The solution seems to have issues but I cannot say.".into()],
            },
            ScriptEntry {
                matcher: ScriptMatcher {
                    mode: MatchMode::Contains,
                    text: "What is 6*7?".into(),
                },
                responses: vec![
                    "A1: no || arithmetic fine\nA2: yes || used addition not multiplication\nA3: no || n/a".into(),
                ],
            },
        ])
        .unwrap();
        let gateway = Gateway::builder(Arc::new(backend)).build().unwrap();
        let attempts = vec![
            attempt("q0", "6+7 = 13. The answer is 13.", "13"),
            attempt("q1", "8*8 = 46. The answer is 46.", "46"),
        ];
        let records = classify_errors(
            &attempts,
            &corpus(),
            &gateway,
            &judge_template(),
            &AnalysisOptions::default(),
        )
        .unwrap();
        assert!(!records[0].answer_correct);
        assert!(records[0].flags.main_skill && !records[0].flags.calculation);
        assert_eq!(records[0].rationales[1], "used addition not multiplication");
        // q1 needed the reminder, then parsed.
        assert!(records[1].flags.calculation && !records[1].flags.main_skill);
        assert!(!records[1].indeterminate);
        // q0: 1 call; q1: 2 calls.
        assert_eq!(gateway.transport_calls(), 3);
    }

    #[test]
    fn unparseable_judgements_become_indeterminate() {
        let backend = ScriptedBackend::new(vec![ScriptEntry {
            matcher: ScriptMatcher {
                mode: MatchMode::Contains,
                text: "What is 6*7?".into(),
            },
            responses: vec!["I refuse to use the format.".into()],
        }])
        .unwrap();
        let gateway = Gateway::builder(Arc::new(backend)).build().unwrap();
        let attempts = vec![attempt("q0", "wrong", "13")];
        let records = classify_errors(
            &attempts,
            &corpus(),
            &gateway,
            &judge_template(),
            &AnalysisOptions::default(),
        )
        .unwrap();
        assert!(records[0].indeterminate);
        assert_eq!(records[0].flags, ErrorFlags::default());
    }

    #[test]
    fn rates_aggregate_over_determinate_records() {
        let rec = |correct: bool, calc: bool, main: bool, sec: bool, indet: bool| ErrorRecord {
            problem_id: "x".into(),
            answer_correct: correct,
            flags: ErrorFlags {
                calculation: calc,
                main_skill: main,
                secondary_skill: sec,
            },
            rationales: Vec::new(),
            indeterminate: indet,
        };
        let records = vec![
            rec(true, false, false, false, false),
            rec(false, true, false, false, false),
            rec(false, true, true, false, false),
            rec(false, false, false, true, false),
            rec(false, false, false, false, true),
        ];
        let rates = aggregate_rates(&records);
        assert_eq!(rates.total, 5);
        assert_eq!(rates.determinate, 4);
        assert_eq!(rates.indeterminate, 1);
        assert_eq!(rates.calculation.errors, 2);
        assert!((rates.calculation.success_rate - 0.5).abs() < 1e-12);
        assert_eq!(rates.main_skill.errors, 1);
        assert!((rates.main_skill.success_rate - 0.75).abs() < 1e-12);
        assert_eq!(rates.secondary_skill.errors, 1);
        let empty = aggregate_rates(&[]);
        assert_eq!(empty.total, 0);
        assert_eq!(empty.calculation.success_rate, 0.0);
    }
}
