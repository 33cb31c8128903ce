//! Exemplar selection, prompt assembly, solving, and majority voting.
//!
//! A prompt is a system header, a sequence of few-shot question/answer
//! pairs, and the query question. Shots come from the exemplar repository
//! under one of several selection strategies; the skill-matched strategy
//! first asks the model which repository skill the query needs. Solving
//! draws `n` samples and majority-votes over the extracted answers.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Problem};
use crate::eval::{
    answers_equivalent, extract_final_answer, EvalError, ExtractionConvention, NormalizedAnswer,
    ProgramRunner, RunOutcome,
};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::repository::{derive_question_seed, ExemplarRecord, ExemplarRepository, RepoError};
use crate::skills::labeling::complete_label;
use crate::skills::{resolve_skill, LabelOptions, ResolutionMethod, SkillName};
use crate::template::{Template, TemplateError};
use crate::util::{parallel_map, squash_whitespace};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("an exemplar question equals the query question: {0:?}")]
    Leakage(String),
    #[error("invalid prompt shape: {0}")]
    ShapeViolation(String),
    #[error("problem `{0}` has no topic; topic-based selection needs one")]
    MissingTopic(String),
    #[error("problem `{0}` reached exemplar selection without a skill")]
    MissingSkill(String),
    #[error("no exemplar candidates: {0}")]
    NoCandidates(String),
    #[error("the repository has no skills to select from")]
    NoSkills,
    #[error("skill-based solving requires a skill selector")]
    NoSelector,
    #[error("skill selection failed: {0}")]
    Selection(String),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotKind {
    Text,
    Code,
}

/// One few-shot exemplar: a question and its worked answer (text
/// chain-of-thought or a program).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub kind: ShotKind,
    pub question: String,
    pub answer: String,
}

impl Shot {
    pub fn text(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Shot {
            kind: ShotKind::Text,
            question: question.into(),
            answer: answer.into(),
        }
    }

    pub fn code(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Shot {
            kind: ShotKind::Code,
            question: question.into(),
            answer: answer.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Text chain-of-thought shots only.
    CotText,
    /// Text shots plus one trailing program shot; each completion may answer
    /// in text or with a program, whichever it chooses.
    PalHybrid,
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::CotText => "cot_text",
            PromptMode::PalHybrid => "pal_hybrid",
        })
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cot_text" => Ok(PromptMode::CotText),
            "pal_hybrid" => Ok(PromptMode::PalHybrid),
            other => Err(format!("unknown prompt mode `{other}` (cot_text, pal_hybrid)")),
        }
    }
}

/// How the few-shot exemplars for a query are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Ask the model which repository skill the query needs, then sample
    /// exemplars filed under that skill.
    SkillBased { k: usize },
    /// Exemplars sharing the query's topic.
    TopicBased { k: usize },
    /// Uniform over the whole repository.
    Random { k: usize },
    /// The k most complex exemplars, measured by non-empty solution lines;
    /// deterministic, seed-independent.
    ComplexCot { k: usize },
    /// A fixed, hand-picked shot list.
    Fixed,
}

impl SelectionStrategy {
    pub fn shots(&self) -> Option<usize> {
        match self {
            SelectionStrategy::SkillBased { k }
            | SelectionStrategy::TopicBased { k }
            | SelectionStrategy::Random { k }
            | SelectionStrategy::ComplexCot { k } => Some(*k),
            SelectionStrategy::Fixed => None,
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionStrategy::SkillBased { k } => write!(f, "skill_based(k={k})"),
            SelectionStrategy::TopicBased { k } => write!(f, "topic_based(k={k})"),
            SelectionStrategy::Random { k } => write!(f, "random(k={k})"),
            SelectionStrategy::ComplexCot { k } => write!(f, "complex_cot(k={k})"),
            SelectionStrategy::Fixed => f.write_str("fixed"),
        }
    }
}

/// An assembled prompt, ready to become chat messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub system: Option<String>,
    pub shots: Vec<Shot>,
    pub query: String,
}

impl PromptSpec {
    /// Renders as chat messages: optional system turn, then one user and
    /// one assistant turn per shot, then the query as the final user turn.
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut messages = Vec::with_capacity(2 * self.shots.len() + 2);
        if let Some(system) = &self.system {
            messages.push(ChatMessage::system(system.clone()));
        }
        for shot in &self.shots {
            messages.push(ChatMessage::user(shot.question.clone()));
            messages.push(ChatMessage::assistant(shot.answer.clone()));
        }
        messages.push(ChatMessage::user(self.query.clone()));
        messages
    }
}

/// Validates shot shape and leakage, then builds a [`PromptSpec`].
///
/// Text mode allows text shots only. PAL-hybrid mode requires exactly one
/// code shot, in the final position. Any shot whose question equals the
/// query (compared with collapsed whitespace) is rejected — exemplars must
/// never leak the query itself.
pub fn assemble_prompt(
    header: Option<&str>,
    shots: &[Shot],
    query: &str,
    mode: PromptMode,
) -> Result<PromptSpec, PromptError> {
    let query_key = squash_whitespace(query);
    for shot in shots {
        if squash_whitespace(&shot.question) == query_key {
            let preview: String = query.chars().take(80).collect();
            return Err(PromptError::Leakage(preview));
        }
    }
    let code_positions: Vec<usize> = shots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == ShotKind::Code)
        .map(|(i, _)| i)
        .collect();
    match mode {
        PromptMode::CotText => {
            if !code_positions.is_empty() {
                return Err(PromptError::ShapeViolation(
                    "text mode does not take code shots".into(),
                ));
            }
        }
        PromptMode::PalHybrid => {
            if code_positions.len() != 1 || code_positions[0] != shots.len() - 1 {
                return Err(PromptError::ShapeViolation(format!(
                    "PAL-hybrid mode needs exactly one code shot in the final position, \
                     found {} code shot(s) among {}",
                    code_positions.len(),
                    shots.len()
                )));
            }
        }
    }
    Ok(PromptSpec {
        system: header.map(String::from),
        shots: shots.to_vec(),
        query: query.to_string(),
    })
}

/// Majority vote over extracted answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub answer: NormalizedAnswer,
    /// Ballots for the winning equivalence class.
    pub votes: usize,
    /// Ballots that voted at all (samples with no extractable answer
    /// abstain).
    pub ballots: usize,
}

/// Groups answers into equivalence classes, picks the modal class, and
/// returns its earliest member. Ties go to the class that appeared first.
/// Samples with no answer abstain; if everyone abstains there is no vote.
pub fn majority_vote(answers: &[NormalizedAnswer]) -> Option<VoteOutcome> {
    let voting: Vec<&NormalizedAnswer> = answers.iter().filter(|a| !a.is_none()).collect();
    if voting.is_empty() {
        return None;
    }
    // (index of first member, count), in first-appearance order.
    let mut classes: Vec<(usize, usize)> = Vec::new();
    'next: for (i, answer) in voting.iter().enumerate() {
        for (first, count) in classes.iter_mut() {
            if answers_equivalent(voting[*first], answer) {
                *count += 1;
                continue 'next;
            }
        }
        classes.push((i, 1));
    }
    let (first, votes) = classes
        .into_iter()
        // Strict `>` keeps the earliest class on ties.
        .fold(None::<(usize, usize)>, |best, cls| match best {
            Some((_, n)) if cls.1 > n => Some(cls),
            None => Some(cls),
            keep => keep,
        })
        .expect("at least one class");
    Some(VoteOutcome {
        answer: voting[first].clone(),
        votes,
        ballots: voting.len(),
    })
}

/// The skill chosen for a query question, with how the raw model output was
/// resolved onto the repository vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillChoice {
    pub skill: SkillName,
    pub method: ResolutionMethod,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distance: Option<f64>,
    pub rationale: String,
}

/// Asks the model to pick one repository skill for `question`.
///
/// The template needs `{skills}`, `{demos}`, and `{question}`. Off-list
/// replies resolve to the nearest repository skill unconditionally — a test
/// question always gets some skill, unlike training relabeling where a bad
/// fit is left unmatched.
pub fn select_skill(
    gateway: &Gateway,
    template: &Template,
    question: &str,
    skills: &BTreeSet<SkillName>,
    demos: &str,
    opts: &LabelOptions,
) -> Result<SkillChoice, PromptError> {
    template.require(&["skills", "demos", "question"])?;
    if skills.is_empty() {
        return Err(PromptError::NoSkills);
    }
    let list = skills
        .iter()
        .map(|s| s.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let prompt = template.render(&[
        ("skills", list.as_str()),
        ("demos", demos),
        ("question", question),
    ]);
    let resolved = |raw: &str, rationale: String| {
        let resolution =
            resolve_skill(raw, skills, None).expect("non-empty candidates always resolve");
        SkillChoice {
            skill: resolution.skill,
            method: resolution.method,
            distance: resolution.distance,
            rationale,
        }
    };
    match complete_label(gateway, &prompt, opts)? {
        Ok((name, rationale)) => Ok(resolved(name.as_str(), rationale)),
        Err((Some(raw), _)) => Ok(resolved(&raw, String::new())),
        Err((None, error)) => Err(PromptError::Selection(error)),
    }
}

fn complexity(record: &ExemplarRecord) -> usize {
    record
        .answer
        .lines()
        .filter(|l| !l.trim().is_empty())
        .count()
}

fn seeded_draw<'r>(
    mut candidates: Vec<&'r ExemplarRecord>,
    k: usize,
    seed: u64,
) -> Vec<&'r ExemplarRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    candidates.truncate(k);
    candidates
}

fn to_shot(record: &ExemplarRecord) -> Shot {
    Shot::text(record.question.clone(), record.answer.clone())
}

/// Draws the text shots for `problem` under `strategy`. The query question
/// itself is always excluded from the candidate pool.
pub fn select_exemplars(
    repo: &ExemplarRepository,
    strategy: &SelectionStrategy,
    problem: &Problem,
    skill: Option<&SkillName>,
    seed: u64,
    fixed_shots: &[Shot],
) -> Result<Vec<Shot>, PromptError> {
    let query_key = squash_whitespace(&problem.question);
    let not_leaked = |r: &&ExemplarRecord| squash_whitespace(&r.question) != query_key;
    match strategy {
        SelectionStrategy::SkillBased { k } => {
            let skill = skill.ok_or_else(|| PromptError::MissingSkill(problem.id.clone()))?;
            let records = repo.sample_exemplars(skill, *k, seed, Some(&problem.question))?;
            Ok(records.into_iter().map(to_shot).collect())
        }
        SelectionStrategy::TopicBased { k } => {
            let topic = problem
                .topic
                .as_deref()
                .ok_or_else(|| PromptError::MissingTopic(problem.id.clone()))?;
            let candidates: Vec<&ExemplarRecord> = repo
                .records()
                .iter()
                .filter(|r| r.topic.as_deref() == Some(topic))
                .filter(not_leaked)
                .collect();
            if candidates.is_empty() {
                return Err(PromptError::NoCandidates(format!(
                    "no exemplars share topic `{topic}`"
                )));
            }
            Ok(seeded_draw(candidates, *k, seed).into_iter().map(to_shot).collect())
        }
        SelectionStrategy::Random { k } => {
            let candidates: Vec<&ExemplarRecord> =
                repo.records().iter().filter(not_leaked).collect();
            Ok(seeded_draw(candidates, *k, seed).into_iter().map(to_shot).collect())
        }
        SelectionStrategy::ComplexCot { k } => {
            let mut candidates: Vec<&ExemplarRecord> =
                repo.records().iter().filter(not_leaked).collect();
            candidates.sort_by(|a, b| {
                complexity(b)
                    .cmp(&complexity(a))
                    .then_with(|| a.problem_id.cmp(&b.problem_id))
            });
            candidates.truncate(*k);
            Ok(candidates.into_iter().map(to_shot).collect())
        }
        SelectionStrategy::Fixed => Ok(fixed_shots.to_vec()),
    }
}

/// Everything recorded about solving one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub problem_id: String,
    /// Rendered strategy, e.g. `skill_based(k=4)`.
    pub strategy: String,
    pub mode: PromptMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected_skill: Option<SkillName>,
    /// Raw completions, one per sample.
    pub completions: Vec<String>,
    /// Extracted answer per sample (the none kind when nothing extracted).
    pub extracted_answers: Vec<NormalizedAnswer>,
    /// Per-sample notes, e.g. `pal:ok` when a sample answered with a program.
    pub sample_notes: Vec<Option<String>>,
    /// Majority-vote result over the extracted answers.
    pub final_answer: NormalizedAnswer,
    /// Per-question exemplar sampling seed (derived from the run seed).
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Samples per problem; the final answer majority-votes over them.
    pub n_samples: u32,
    pub mode: PromptMode,
    pub strategy: SelectionStrategy,
    /// System header prepended to every prompt.
    pub header: Option<String>,
    /// The trailing program shot for PAL-hybrid prompts.
    pub code_shot: Option<Shot>,
    /// Shot list for the fixed strategy.
    pub fixed_shots: Vec<Shot>,
    pub convention: ExtractionConvention,
    /// Sandbox for program-of-thought samples.
    pub runner: ProgramRunner,
    /// Run seed; each question derives its own sampling seed from it.
    pub seed: u64,
    /// Worker threads across problems. Keep at 1 when replaying ordered
    /// scripted fixtures.
    pub jobs: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            model: "solver".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            n_samples: 1,
            mode: PromptMode::CotText,
            strategy: SelectionStrategy::SkillBased { k: 4 },
            header: None,
            code_shot: None,
            fixed_shots: Vec::new(),
            convention: ExtractionConvention::Auto,
            runner: ProgramRunner::default(),
            seed: 0,
            jobs: 1,
        }
    }
}

/// The skill-selection dependencies for the skill-based strategy.
pub struct SkillSelector<'a> {
    pub template: &'a Template,
    /// Pre-rendered demo block listing one example question per skill.
    pub demos: String,
    pub options: LabelOptions,
}

/// Solves problems against a repository and a gateway.
pub struct Solver<'a> {
    repo: &'a ExemplarRepository,
    gateway: &'a Gateway,
    opts: SolveOptions,
    selector: Option<SkillSelector<'a>>,
}

impl<'a> Solver<'a> {
    pub fn new(repo: &'a ExemplarRepository, gateway: &'a Gateway, opts: SolveOptions) -> Self {
        Solver {
            repo,
            gateway,
            opts,
            selector: None,
        }
    }

    pub fn with_selector(mut self, selector: SkillSelector<'a>) -> Self {
        self.selector = Some(selector);
        self
    }

    pub fn options(&self) -> &SolveOptions {
        &self.opts
    }

    pub fn solve_problem(&self, problem: &Problem) -> Result<Attempt, PromptError> {
        let seed = derive_question_seed(self.opts.seed, &problem.question);
        let selected_skill = match &self.opts.strategy {
            SelectionStrategy::SkillBased { .. } => {
                let selector = self.selector.as_ref().ok_or(PromptError::NoSelector)?;
                let skills: BTreeSet<SkillName> = self.repo.skills().cloned().collect();
                let choice = select_skill(
                    self.gateway,
                    selector.template,
                    &problem.question,
                    &skills,
                    &selector.demos,
                    &selector.options,
                )?;
                Some(choice.skill)
            }
            _ => None,
        };
        let mut shots = select_exemplars(
            self.repo,
            &self.opts.strategy,
            problem,
            selected_skill.as_ref(),
            seed,
            &self.opts.fixed_shots,
        )?;
        if self.opts.mode == PromptMode::PalHybrid {
            let code_shot = self.opts.code_shot.clone().ok_or_else(|| {
                PromptError::ShapeViolation("PAL-hybrid mode requires a code shot".into())
            })?;
            shots.push(code_shot);
        }
        let spec = assemble_prompt(
            self.opts.header.as_deref(),
            &shots,
            &problem.question,
            self.opts.mode,
        )?;
        let request = CompletionRequest {
            model: self.opts.model.clone(),
            messages: spec.messages(),
            temperature: self.opts.temperature,
            max_output_tokens: self.opts.max_output_tokens,
            n_samples: self.opts.n_samples,
        };
        let response = self.gateway.complete(&request)?;
        let mut extracted_answers = Vec::with_capacity(response.samples.len());
        let mut sample_notes = Vec::with_capacity(response.samples.len());
        for sample in &response.samples {
            let (answer, note) = self.interpret_completion(sample)?;
            extracted_answers.push(answer);
            sample_notes.push(note);
        }
        let final_answer = majority_vote(&extracted_answers)
            .map(|v| v.answer)
            .unwrap_or_else(NormalizedAnswer::none);
        Ok(Attempt {
            problem_id: problem.id.clone(),
            strategy: self.opts.strategy.to_string(),
            mode: self.opts.mode,
            selected_skill,
            completions: response.samples,
            extracted_answers,
            sample_notes,
            final_answer,
            seed,
        })
    }

    /// Solves every problem, in corpus order. With `jobs > 1` problems run
    /// concurrently; the first failure (in corpus order) is returned.
    pub fn solve_corpus(&self, corpus: &Corpus) -> Result<Vec<Attempt>, PromptError> {
        let problems: Vec<&Problem> = corpus.problems().iter().collect();
        let results = parallel_map(problems, self.opts.jobs, |p| self.solve_problem(p));
        results.into_iter().collect()
    }

    /// Text samples go through final-answer extraction; samples that answer
    /// with a fenced program are executed in the sandbox and their last
    /// stdout line becomes the answer.
    fn interpret_completion(
        &self,
        text: &str,
    ) -> Result<(NormalizedAnswer, Option<String>), PromptError> {
        if self.opts.mode == PromptMode::PalHybrid {
            if let Some(code) = extract_code_block(text) {
                let result = self.opts.runner.run(&code)?;
                let note = match result.outcome() {
                    RunOutcome::Ok => "pal:ok",
                    RunOutcome::Timeout => "pal:timeout",
                    RunOutcome::RuntimeError => "pal:runtime_error",
                    RunOutcome::NoOutput => "pal:no_output",
                };
                let answer = result.answer.unwrap_or_else(NormalizedAnswer::none);
                return Ok((answer, Some(note.to_string())));
            }
        }
        Ok((extract_final_answer(text, self.opts.convention), None))
    }
}

/// The last complete fenced code block in `text`, language tag stripped.
pub fn extract_code_block(text: &str) -> Option<String> {
    let mut rest = text;
    let mut last: Option<String> = None;
    loop {
        let Some(open) = rest.find("```") else { break };
        let after_open = &rest[open + 3..];
        let Some(line_end) = after_open.find('\n') else { break };
        let body_start = line_end + 1;
        let Some(close) = after_open[body_start..].find("```") else { break };
        let body = &after_open[body_start..body_start + close];
        if !body.trim().is_empty() {
            last = Some(body.trim_end().to_string());
        }
        rest = &after_open[body_start + close + 3..];
    }
    last
}
