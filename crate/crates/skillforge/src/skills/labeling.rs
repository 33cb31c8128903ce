//! Per-problem skill labeling and corpus relabeling.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::template::Template;
use crate::util::parallel_map;

use super::{
    normalize_skill_name, normalized_distance, AnnotationStage, SkillAnnotation, SkillName,
    SkillsError,
};

/// Decode and retry settings shared by the labeling calls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelOptions {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Re-asks with a format reminder this many times when a response does
    /// not parse.
    pub parse_retries: u32,
    /// Worker threads across problems.
    pub jobs: usize,
}

impl Default for LabelOptions {
    fn default() -> Self {
        LabelOptions {
            model: "annotator".into(),
            temperature: 0.0,
            max_output_tokens: 512,
            parse_retries: 2,
            jobs: 1,
        }
    }
}

/// A problem whose label could not be obtained (unparseable responses or a
/// non-fatal gateway failure). Never dropped silently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelFailure {
    pub problem_id: String,
    /// Last raw response, when the model produced one.
    pub raw_response: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub annotations: Vec<SkillAnnotation>,
    pub failures: Vec<LabelFailure>,
}

/// Parses a label response of the shape
/// `<skill name>, reason: <free text>`.
///
/// Tolerates a leading label line, surrounding blank lines, and punctuation
/// before `reason:`; the skill text itself is canonicalized via
/// [`normalize_skill_name`]. Fails when the `reason:` marker or either part
/// is missing.
pub fn parse_label_response(text: &str) -> Result<(SkillName, String), SkillsError> {
    static REASON: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)reason\s*:").expect("valid regex"));
    let marker = REASON
        .find(text)
        .ok_or_else(|| SkillsError::LabelParse(format!("no `reason:` marker in {text:?}")))?;
    let rationale = text[marker.end()..].trim();
    if rationale.is_empty() {
        return Err(SkillsError::LabelParse("empty rationale".into()));
    }
    let head = text[..marker.start()].trim_end_matches(|c: char| {
        c.is_whitespace() || matches!(c, ',' | '.' | ';' | '-')
    });
    let line = head
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| SkillsError::LabelParse("nothing before `reason:`".into()))?
        .trim();
    // Strip a leading "skill:" / "skill name:" / "answer:" tag if the model
    // added one on the same line.
    static TAG: Lazy<Regex> =
        Lazy::new(|| Regex::new(r"(?i)^(?:the\s+)?(?:skill(?:\s+name)?|answer)\s*(?:is|:)\s*").expect("valid regex"));
    let line = TAG.replace(line, "");
    let skill = normalize_skill_name(&line)?;
    Ok((skill, rationale.to_string()))
}

const FORMAT_REMINDER: &str =
    "Your answer should be as follows:\n<name of the skill>, reason: <reason for the skill>";

/// Asks for a completion and parses it as a skill label, re-asking with a
/// format reminder up to `parse_retries` times. Each retry uses a distinct
/// prompt so it is a distinct request for the cache and the scripted backend.
pub(crate) fn complete_label(
    gateway: &Gateway,
    base_prompt: &str,
    opts: &LabelOptions,
) -> Result<Result<(SkillName, String), (Option<String>, String)>, GatewayError> {
    let mut last: Option<(String, SkillsError)> = None;
    for attempt in 0..=opts.parse_retries {
        let prompt = match attempt {
            0 => base_prompt.to_string(),
            1 => format!("{base_prompt}\n\n{FORMAT_REMINDER}"),
            n => format!(
                "{base_prompt}\n\n{FORMAT_REMINDER}\n\n(Attempt {}: the previous reply was not in the required format.)",
                n + 1
            ),
        };
        let request = CompletionRequest {
            model: opts.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: opts.temperature,
            max_output_tokens: opts.max_output_tokens,
            n_samples: 1,
        };
        let response = match gateway.complete(&request) {
            Ok(r) => r,
            // A script miss means the fixture itself is wrong; abort loudly.
            Err(e @ GatewayError::ScriptMiss(_)) => return Err(e),
            Err(e) => {
                return Ok(Err((
                    last.map(|(raw, _)| raw),
                    format!("gateway failure: {e}"),
                )))
            }
        };
        let text = response.samples.into_iter().next().unwrap_or_default();
        match parse_label_response(&text) {
            Ok(parsed) => return Ok(Ok(parsed)),
            Err(err) => last = Some((text, err)),
        }
    }
    let (raw, err) = last.expect("at least one attempt");
    Ok(Err((Some(raw), format!("unparseable response: {err}"))))
}

/// Labels every problem in `corpus` with a fine-grained skill name.
///
/// The template must contain `{question}`. Unparseable responses (after
/// retries) and non-fatal gateway failures become [`LabelFailure`] entries;
/// a scripted-backend miss aborts the whole stage.
pub fn label_corpus(
    corpus: &Corpus,
    gateway: &Gateway,
    template: &Template,
    opts: &LabelOptions,
) -> Result<LabelOutcome, SkillsError> {
    template.require(&["question"])?;
    let items: Vec<(String, String)> = corpus
        .problems()
        .iter()
        .map(|p| (p.id.clone(), template.render(&[("question", &p.question)])))
        .collect();
    let results = parallel_map(items, opts.jobs, |(id, prompt)| {
        (id.clone(), complete_label(gateway, prompt, opts))
    });

    let mut outcome = LabelOutcome::default();
    for (problem_id, result) in results {
        match result? {
            Ok((skill, rationale)) => outcome.annotations.push(SkillAnnotation {
                problem_id,
                skill,
                rationale,
                stage: AnnotationStage::Raw,
            }),
            Err((raw_response, error)) => outcome.failures.push(LabelFailure {
                problem_id,
                raw_response,
                error,
            }),
        }
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Off-list resolution
// ---------------------------------------------------------------------------

/// How a raw skill string was mapped onto the candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionMethod {
    /// Equal to a candidate after normalization.
    Exact,
    /// Unique substring relationship with exactly one candidate.
    Substring,
    /// Nearest candidate by normalized Levenshtein distance.
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillResolution {
    pub skill: SkillName,
    pub method: ResolutionMethod,
    /// Normalized edit distance for fuzzy resolutions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

/// Maps free-form text onto one of `candidates`:
/// exact match after normalization, then unique substring containment, then
/// nearest normalized Levenshtein distance (ties broken lexicographically).
///
/// With `max_distance = Some(t)`, a fuzzy match farther than `t` yields
/// `None` (the caller decides what "unmatched" means). With `None`, the
/// nearest candidate is returned unconditionally, so the result is `None`
/// only for an empty candidate list.
pub fn resolve_skill(
    raw: &str,
    candidates: &BTreeSet<SkillName>,
    max_distance: Option<f64>,
) -> Option<SkillResolution> {
    if candidates.is_empty() {
        return None;
    }
    let needle = match normalize_skill_name(raw) {
        Ok(name) => {
            if candidates.contains(&name) {
                return Some(SkillResolution {
                    skill: name,
                    method: ResolutionMethod::Exact,
                    distance: None,
                });
            }
            name.as_str().to_string()
        }
        // Nothing normalizable survives; match on the bare lowercased text.
        Err(_) => raw.trim().to_lowercase(),
    };

    if !needle.is_empty() {
        let contained: Vec<&SkillName> = candidates
            .iter()
            .filter(|c| c.as_str().contains(&needle) || needle.contains(c.as_str()))
            .collect();
        if contained.len() == 1 {
            return Some(SkillResolution {
                skill: contained[0].clone(),
                method: ResolutionMethod::Substring,
                distance: None,
            });
        }
    }

    // BTreeSet iterates sorted, and strict `<` keeps the first (i.e.
    // lexicographically smallest) of any tie.
    let mut best: Option<(&SkillName, f64)> = None;
    for candidate in candidates {
        let d = normalized_distance(&needle, candidate.as_str());
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((candidate, d));
        }
    }
    let (skill, distance) = best.expect("non-empty candidates");
    if max_distance.is_some_and(|t| distance > t) {
        return None;
    }
    Some(SkillResolution {
        skill: skill.clone(),
        method: ResolutionMethod::Fuzzy,
        distance: Some(distance),
    })
}

// ---------------------------------------------------------------------------
// Relabeling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelabelOptions {
    pub label: LabelOptions,
    /// Fuzzy-match ceiling for off-list responses (normalized Levenshtein).
    pub max_distance: f64,
}

impl Default for RelabelOptions {
    fn default() -> Self {
        RelabelOptions {
            label: LabelOptions::default(),
            max_distance: 0.35,
        }
    }
}

/// A response that was not an exact cluster-skill name and had to fall back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FallbackEvent {
    pub problem_id: String,
    pub raw_skill: String,
    /// Where it landed; the unmatched sentinel when nothing was close enough.
    pub resolved: SkillName,
    pub method: Option<ResolutionMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RelabelOutcome {
    pub annotations: Vec<SkillAnnotation>,
    pub failures: Vec<LabelFailure>,
    /// Every off-list response and how it was resolved.
    pub fallbacks: Vec<FallbackEvent>,
    pub unmatched_count: usize,
}

/// Renders the demos block: one `question: ... skill: ...` paragraph per
/// skill, in skill order.
pub fn render_demos(demos: &BTreeMap<SkillName, String>) -> String {
    demos
        .iter()
        .map(|(skill, question)| format!("question: {question} skill: {skill}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Relabels every problem against the clustered vocabulary.
///
/// `skills` is the cluster-skill list; `demos` maps each skill to one
/// demonstration question (every listed skill needs one). The template must
/// contain `{skills}`, `{demos}`, and `{question}`. Responses that are not
/// an exact skill name fall through substring and fuzzy matching and land on
/// [`SkillName::unmatched`] when nothing is within `max_distance`.
pub fn relabel_corpus(
    corpus: &Corpus,
    skills: &BTreeSet<SkillName>,
    demos: &BTreeMap<SkillName, String>,
    gateway: &Gateway,
    template: &Template,
    opts: &RelabelOptions,
) -> Result<RelabelOutcome, SkillsError> {
    template.require(&["skills", "demos", "question"])?;
    if skills.is_empty() {
        return Err(SkillsError::NoSkills);
    }
    for skill in skills {
        if !demos.contains_key(skill) {
            return Err(SkillsError::MissingDemo(skill.as_str().to_string()));
        }
    }

    let skill_list = skills
        .iter()
        .map(|s| s.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let demo_block = render_demos(demos);
    let base = template.render(&[("skills", &skill_list), ("demos", &demo_block)]);
    let base_template = Template::new(base);

    let items: Vec<(String, String)> = corpus
        .problems()
        .iter()
        .map(|p| {
            (
                p.id.clone(),
                base_template.render(&[("question", &p.question)]),
            )
        })
        .collect();
    let results = parallel_map(items, opts.label.jobs, |(id, prompt)| {
        (id.clone(), complete_label(gateway, prompt, &opts.label))
    });

    let mut outcome = RelabelOutcome::default();
    for (problem_id, result) in results {
        let (raw_skill, rationale) = match result? {
            Ok((skill, rationale)) => (skill.as_str().to_string(), rationale),
            Err((Some(raw), _)) => (raw, String::new()),
            Err((None, error)) => {
                // No text at all (gateway failure): a real failure entry.
                outcome.failures.push(LabelFailure {
                    problem_id,
                    raw_response: None,
                    error,
                });
                continue;
            }
        };

        let resolution = resolve_skill(&raw_skill, skills, Some(opts.max_distance));
        let (skill, method, distance) = match &resolution {
            Some(r) => (r.skill.clone(), Some(r.method), r.distance),
            None => (SkillName::unmatched(), None, None),
        };
        let is_exact = matches!(method, Some(ResolutionMethod::Exact));
        if !is_exact {
            outcome.fallbacks.push(FallbackEvent {
                problem_id: problem_id.clone(),
                raw_skill,
                resolved: skill.clone(),
                method,
                distance,
            });
        }
        if skill.is_unmatched() {
            outcome.unmatched_count += 1;
        }
        outcome.annotations.push(SkillAnnotation {
            problem_id,
            skill,
            rationale,
            stage: AnnotationStage::Clustered,
        });
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Problem, Split};
    use crate::gateway::{Gateway, MatchMode, ScriptEntry, ScriptMatcher, ScriptedBackend};
    use std::sync::Arc;

    #[test]
    fn parses_canonical_response() {
        let (skill, reason) = parse_label_response(
            "multi_step_problem_solving, reason: The problem involves many steps.",
        )
        .unwrap();
        assert_eq!(skill.as_str(), "multi_step_problem_solving");
        assert_eq!(reason, "The problem involves many steps.");
    }

    #[test]
    fn parses_response_with_blank_line_before_reason() {
        let text = "multi_step_problem_solving\n\nreason: The problem involves many steps -\nfirst one thing, then another.";
        let (skill, reason) = parse_label_response(text).unwrap();
        assert_eq!(skill.as_str(), "multi_step_problem_solving");
        assert!(reason.starts_with("The problem involves"));
    }

    #[test]
    fn tolerates_leading_label_and_case() {
        let (skill, _) =
            parse_label_response("Here is my answer.\nSkill: Ratio & Proportion, Reason: ratios.")
                .unwrap();
        assert_eq!(skill.as_str(), "ratio_proportion");
        let (skill, _) =
            parse_label_response("The skill is unit_conversion, reason: units.").unwrap();
        assert_eq!(skill.as_str(), "unit_conversion");
    }

    #[test]
    fn rejects_missing_reason_or_parts() {
        assert!(parse_label_response("just some text").is_err());
        assert!(parse_label_response("reason: only a reason").is_err());
        assert!(parse_label_response("algebra, reason:   ").is_err());
    }

    fn skill_set(names: &[&str]) -> BTreeSet<SkillName> {
        names.iter().map(|n| SkillName::new(n).unwrap()).collect()
    }

    #[test]
    fn resolve_prefers_exact_then_substring_then_fuzzy() {
        let skills = skill_set(&["addition_skills", "multiplication_skills", "division_skills"]);
        let exact = resolve_skill("Addition Skills", &skills, Some(0.35)).unwrap();
        assert_eq!(exact.method, ResolutionMethod::Exact);
        assert_eq!(exact.skill.as_str(), "addition_skills");

        let sub = resolve_skill("multiplication", &skills, Some(0.35)).unwrap();
        assert_eq!(sub.method, ResolutionMethod::Substring);
        assert_eq!(sub.skill.as_str(), "multiplication_skills");

        let fuzzy = resolve_skill("divsion_skills", &skills, Some(0.35)).unwrap();
        assert_eq!(fuzzy.method, ResolutionMethod::Fuzzy);
        assert_eq!(fuzzy.skill.as_str(), "division_skills");
        assert!(fuzzy.distance.unwrap() <= 0.35);

        assert!(resolve_skill("quantum_flux_capacitors", &skills, Some(0.35)).is_none());
        // Unconditional mode always lands somewhere.
        assert!(resolve_skill("quantum_flux_capacitors", &skills, None).is_some());
        assert!(resolve_skill("anything", &BTreeSet::new(), None).is_none());
    }

    #[test]
    fn substring_must_be_unique() {
        let skills = skill_set(&["addition_skills", "addition_skills_advanced"]);
        // "addition_skills" is exact for the first; use a probe that's a
        // substring of both and exact for neither.
        let r = resolve_skill("addition_skill", &skills, Some(0.35)).unwrap();
        // Two containment candidates -> falls through to fuzzy.
        assert_eq!(r.method, ResolutionMethod::Fuzzy);
        assert_eq!(r.skill.as_str(), "addition_skills");
    }

    #[test]
    fn fuzzy_ties_break_lexicographically() {
        let skills = skill_set(&["skill_a", "skill_b"]);
        let r = resolve_skill("skill_c", &skills, Some(0.5)).unwrap();
        assert_eq!(r.skill.as_str(), "skill_a");
    }

    fn mini_corpus() -> Corpus {
        Corpus::new(
            "mini",
            Split::Train,
            vec![
                Problem {
                    id: "p0".into(),
                    question: "What is 2 + 3?".into(),
                    reference_answer: "2 + 3 = 5. The answer is 5.".into(),
                    final_answer: Some("5".into()),
                    topic: None,
                },
                Problem {
                    id: "p1".into(),
                    question: "What is 7 - 4?".into(),
                    reference_answer: "7 - 4 = 3. The answer is 3.".into(),
                    final_answer: Some("3".into()),
                    topic: None,
                },
            ],
        )
        .unwrap()
    }

    fn label_template() -> Template {
        Template::new("Label the skill.\n\nquestion:\n{question}\n\nYour answer should be as follows:\n<name of the skill>, reason: <reason for the skill>")
    }

    fn scripted_gateway(entries: Vec<ScriptEntry>) -> Gateway {
        Gateway::builder(Arc::new(ScriptedBackend::new(entries).unwrap()))
            .build()
            .unwrap()
    }

    fn entry(mode: MatchMode, text: &str, responses: &[&str]) -> ScriptEntry {
        ScriptEntry {
            matcher: ScriptMatcher {
                mode,
                text: text.into(),
            },
            responses: responses.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn label_corpus_collects_annotations_and_failures() {
        let gateway = scripted_gateway(vec![
            entry(
                MatchMode::Contains,
                "question:\nWhat is 2 + 3?",
                &["addition, reason: adds two numbers"],
            ),
            // p1 never produces a parseable answer, even after reminders.
            entry(MatchMode::Contains, "question:\nWhat is 7 - 4?", &["gibberish"]),
        ]);
        let outcome = label_corpus(
            &mini_corpus(),
            &gateway,
            &label_template(),
            &LabelOptions::default(),
        )
        .unwrap();
        assert_eq!(outcome.annotations.len(), 1);
        assert_eq!(outcome.annotations[0].skill.as_str(), "addition");
        assert_eq!(outcome.annotations[0].stage, AnnotationStage::Raw);
        assert!(!outcome.annotations[0].rationale.is_empty());
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].problem_id, "p1");
        assert_eq!(outcome.failures[0].raw_response.as_deref(), Some("gibberish"));
    }

    #[test]
    fn label_retry_uses_format_reminder() {
        // A template without the trailing format line, so the reminder text
        // only ever appears in retry prompts.
        let bare = Template::new("Label the skill.\n\nquestion:\n{question}");
        let gateway = scripted_gateway(vec![
            // Third attempt carries the attempt counter...
            entry(
                MatchMode::Contains,
                "(Attempt 3",
                &["subtraction, reason: got it on the third try"],
            ),
            // ...second carries the reminder...
            entry(
                MatchMode::Contains,
                FORMAT_REMINDER,
                &["still not the format you want"],
            ),
            // ...and the plain prompt comes first. Most specific first,
            // because the later prompts contain the earlier ones.
            entry(MatchMode::Contains, "question:", &["nope"]),
        ]);
        let outcome = label_corpus(&mini_corpus(), &gateway, &bare, &LabelOptions::default())
            .unwrap();
        // Both problems follow the same path: fail, fail, succeed on attempt 3.
        assert_eq!(outcome.annotations.len(), 2);
        assert!(outcome
            .annotations
            .iter()
            .all(|a| a.skill.as_str() == "subtraction"));
        assert!(outcome.failures.is_empty());
    }

    #[test]
    fn script_miss_aborts_labeling() {
        let gateway = scripted_gateway(vec![entry(
            MatchMode::Exact,
            "will never match",
            &["x"],
        )]);
        let err = label_corpus(
            &mini_corpus(),
            &gateway,
            &label_template(),
            &LabelOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SkillsError::Gateway(GatewayError::ScriptMiss(_))));
    }

    fn relabel_template() -> Template {
        Template::new("Here is a list of skills: [{skills}]\n\nExamples:\n\n{demos}\n\nLabel the new question with one skill from the list.\n\nquestion: {question}\n\nYour answer should be as follows:\n<name of the skill>, reason: <reason for the skill>")
    }

    #[test]
    fn relabel_applies_fallback_chain() {
        let corpus = Corpus::new(
            "mini",
            Split::Train,
            vec![
                Problem {
                    id: "p0".into(),
                    question: "exact one".into(),
                    reference_answer: "r".into(),
                    final_answer: None,
                    topic: None,
                },
                Problem {
                    id: "p1".into(),
                    question: "case variant".into(),
                    reference_answer: "r".into(),
                    final_answer: None,
                    topic: None,
                },
                Problem {
                    id: "p2".into(),
                    question: "substring one".into(),
                    reference_answer: "r".into(),
                    final_answer: None,
                    topic: None,
                },
                Problem {
                    id: "p3".into(),
                    question: "typo one".into(),
                    reference_answer: "r".into(),
                    final_answer: None,
                    topic: None,
                },
                Problem {
                    id: "p4".into(),
                    question: "nonsense one".into(),
                    reference_answer: "r".into(),
                    final_answer: None,
                    topic: None,
                },
            ],
        )
        .unwrap();
        let skills = skill_set(&["addition_skills", "multiplication_skills", "division_skills"]);
        let demos: BTreeMap<SkillName, String> = skills
            .iter()
            .map(|s| (s.clone(), format!("demo for {s}")))
            .collect();
        let gateway = scripted_gateway(vec![
            entry(
                MatchMode::Contains,
                "question: exact one",
                &["addition_skills, reason: plain addition"],
            ),
            entry(
                MatchMode::Contains,
                "question: case variant",
                &["Addition Skills, reason: same after normalization"],
            ),
            entry(
                MatchMode::Contains,
                "question: substring one",
                &["multiplication, reason: shortened"],
            ),
            entry(
                MatchMode::Contains,
                "question: typo one",
                &["divsion_skills, reason: typo"],
            ),
            entry(
                MatchMode::Contains,
                "question: nonsense one",
                &["quantum_flux_capacitors, reason: way off"],
            ),
        ]);
        let outcome = relabel_corpus(
            &corpus,
            &skills,
            &demos,
            &gateway,
            &relabel_template(),
            &RelabelOptions::default(),
        )
        .unwrap();

        assert_eq!(outcome.annotations.len(), 5);
        let by_id: BTreeMap<&str, &SkillAnnotation> = outcome
            .annotations
            .iter()
            .map(|a| (a.problem_id.as_str(), a))
            .collect();
        assert_eq!(by_id["p0"].skill.as_str(), "addition_skills");
        assert_eq!(by_id["p1"].skill.as_str(), "addition_skills");
        assert_eq!(by_id["p2"].skill.as_str(), "multiplication_skills");
        assert_eq!(by_id["p3"].skill.as_str(), "division_skills");
        assert!(by_id["p4"].skill.is_unmatched());
        assert!(outcome
            .annotations
            .iter()
            .all(|a| a.stage == AnnotationStage::Clustered));

        assert_eq!(outcome.unmatched_count, 1);
        // p0 was exact from the raw response (no event); the normalization
        // novelty on p1 still counts as Exact so no event either.
        let fallback_ids: Vec<&str> = outcome
            .fallbacks
            .iter()
            .map(|f| f.problem_id.as_str())
            .collect();
        assert_eq!(fallback_ids, vec!["p2", "p3", "p4"]);
        assert_eq!(outcome.fallbacks[0].method, Some(ResolutionMethod::Substring));
        assert_eq!(outcome.fallbacks[1].method, Some(ResolutionMethod::Fuzzy));
        assert_eq!(outcome.fallbacks[2].method, None);
    }

    #[test]
    fn relabel_requires_demo_per_skill() {
        let skills = skill_set(&["addition_skills"]);
        let gateway = scripted_gateway(vec![entry(MatchMode::Contains, "x", &["y"])]);
        let err = relabel_corpus(
            &mini_corpus(),
            &skills,
            &BTreeMap::new(),
            &gateway,
            &relabel_template(),
            &RelabelOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SkillsError::MissingDemo(s) if s == "addition_skills"));
    }

    #[test]
    fn demos_render_in_skill_order() {
        let mut demos = BTreeMap::new();
        demos.insert(SkillName::new("b_skill").unwrap(), "Q-B?".to_string());
        demos.insert(SkillName::new("a_skill").unwrap(), "Q-A?".to_string());
        assert_eq!(
            render_demos(&demos),
            "question: Q-A? skill: a_skill\n\nquestion: Q-B? skill: b_skill"
        );
    }
}
