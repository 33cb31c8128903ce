//! The pipeline stages behind the CLI subcommands. Each stage reads its
//! inputs (config-named sources or upstream artifacts), does its work
//! through the library modules, writes artifacts with provenance headers,
//! and records itself in the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::analysis::{aggregate_rates, classify_errors, AnalysisOptions, ErrorRecord};
use crate::corpus::{load_corpus, Corpus, Problem, Split};
use crate::eval::{
    evaluate, render_table, to_csv_per_skill, EvalReport, ExtractionConvention, ProgramRunner,
};
use crate::gateway::{
    CompletionBackend, Gateway, LiveBackend, LiveConfig, ScriptedBackend,
};
use crate::prompting::{
    Attempt, PromptMode, Shot, SkillSelector, SolveOptions, Solver,
};
use crate::repository::{BuildOptions, ExemplarRepository, RepoStage};
use crate::skills::{
    cluster_skills, relabel_corpus, AnnotationStage, ClusterChunking, ClusterMap, ClusterOptions,
    CoverageReport, DuplicateAssignment, LabelOptions, RelabelOptions, SkillAnnotation, SkillName,
    SkillsError,
};
use crate::skills::label_corpus;
use crate::template::Template;

use super::config::{BackendKind, RunConfig, StrategyName};
use super::run::{
    now_unix, read_jsonl_artifact, write_json_artifact, write_jsonl_artifact, ArtifactMeta,
    RunDir, StageEntry, StageStatus,
};
use super::PipelineError;

// Artifact file names, one set per stage.
pub const CORPUS_TRAIN: &str = "corpus.train.jsonl";
pub const CORPUS_TEST: &str = "corpus.test.jsonl";
pub const ANNOTATIONS_RAW: &str = "annotations_raw.jsonl";
pub const LABEL_FAILURES: &str = "label_failures.jsonl";
pub const SKILLS_FINE: &str = "skills_fine.json";
pub const CLUSTER_MAP: &str = "cluster_map.json";
pub const ANNOTATIONS_CLUSTERED: &str = "annotations_clustered.jsonl";
pub const RELABEL_FAILURES: &str = "relabel_failures.jsonl";
pub const RELABEL_FALLBACKS: &str = "relabel_fallbacks.jsonl";
pub const REPOSITORY: &str = "repository.jsonl";
pub const REPOSITORY_PRE: &str = "repository_pre.jsonl";
pub const ATTEMPTS: &str = "attempts.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const PER_SKILL_CSV: &str = "per_skill.csv";
pub const ERROR_FLAGS: &str = "error_flags.jsonl";
pub const SUCCESS_RATES: &str = "success_rates.json";
pub const TRANSFER_ATTEMPTS: &str = "transfer_attempts.jsonl";
pub const TRANSFER_REPORT_JSON: &str = "transfer_report.json";
pub const TRANSFER_REPORT_TXT: &str = "transfer_report.txt";

// Prompt template files expected under `templates.dir`.
const LABEL_TEMPLATE: &str = "label_skill.txt";
const CLUSTER_TEMPLATE: &str = "cluster_skills.txt";
const SELECT_TEMPLATE: &str = "select_skill.txt";
const CLASSIFIER_TEMPLATE: &str = "error_classifier.txt";
const COT_HEADER: &str = "cot_header.txt";
const PAL_HEADER: &str = "pal_header.txt";
const PAL_CODE_SHOT: &str = "pal_code_shot.json";
const FIXED_SHOTS: &str = "fixed_cot_shots.json";

/// What a stage did, for the CLI to print.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: String,
    /// The stage had already completed here under the same configuration.
    pub skipped: bool,
    pub artifacts: Vec<String>,
    pub transport_calls: u64,
    pub summary: String,
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Skip a completed stage, refuse a conflicting one, or proceed.
fn begin_stage(
    run: &RunDir,
    stage: &str,
    config_digest: &str,
) -> Result<Option<StageReport>, PipelineError> {
    match run.stage_status(stage, config_digest) {
        StageStatus::Absent => Ok(None),
        StageStatus::Complete => {
            let entry = &run.manifest().stages[stage];
            Ok(Some(StageReport {
                stage: stage.to_string(),
                skipped: true,
                artifacts: entry.artifacts.clone(),
                transport_calls: 0,
                summary: format!("`{stage}` already complete in this run directory; skipping"),
            }))
        }
        StageStatus::Conflict { .. } => Err(PipelineError::StageConflict(stage.to_string())),
    }
}

fn finish_stage(
    run: &mut RunDir,
    stage: &str,
    config_digest: &str,
    artifacts: Vec<String>,
    transport_calls: u64,
    summary: String,
) -> Result<StageReport, PipelineError> {
    run.record_stage(
        stage,
        StageEntry {
            config_digest: config_digest.to_string(),
            artifacts: artifacts.clone(),
            completed_unix: now_unix(),
            transport_calls,
        },
    )?;
    Ok(StageReport {
        stage: stage.to_string(),
        skipped: false,
        artifacts,
        transport_calls,
        summary,
    })
}

fn meta_for(config: &RunConfig, stage: &str) -> ArtifactMeta {
    ArtifactMeta {
        stage: stage.to_string(),
        config_digest: config.config_digest(),
        lineage_digest: config.lineage_digest(),
        created_unix: now_unix(),
    }
}

fn build_gateway(config: &RunConfig) -> Result<Gateway, PipelineError> {
    let backend: Arc<dyn CompletionBackend> = match config.backend.kind {
        BackendKind::Scripted => {
            let script = config.backend.script.as_deref().ok_or_else(|| {
                PipelineError::InvalidConfig(
                    "backend.script is required for the scripted backend".into(),
                )
            })?;
            Arc::new(ScriptedBackend::load(script).map_err(PipelineError::Backend)?)
        }
        BackendKind::Live => {
            let endpoint = config.backend.endpoint.clone().ok_or_else(|| {
                PipelineError::InvalidConfig(
                    "backend.endpoint is required for the live backend".into(),
                )
            })?;
            Arc::new(
                LiveBackend::new(LiveConfig {
                    endpoint,
                    api_key_env: config.backend.api_key_env.clone(),
                    timeout_secs: config.backend.timeout_secs,
                })
                .map_err(PipelineError::Backend)?,
            )
        }
    };
    let mut builder = Gateway::builder(backend)
        .concurrency(config.backend.concurrency.max(1).min(config.run.jobs.max(1)));
    if let Some(dir) = &config.backend.cache_dir {
        builder = builder.cache_dir(dir);
    }
    if config.backend.rate_limit_per_minute > 0 {
        builder = builder.rate_limit_per_minute(config.backend.rate_limit_per_minute);
    }
    Ok(builder.build()?)
}

fn load_template(config: &RunConfig, name: &str) -> Result<Template, PipelineError> {
    Ok(Template::load(&config.templates.dir.join(name))?)
}

/// Reads an optional template file (prompt headers); absent file means none.
fn optional_header(config: &RunConfig, name: &str) -> Result<Option<String>, PipelineError> {
    let path = config.templates.dir.join(name);
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|source| PipelineError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(Some(text.trim_end_matches('\n').to_string()))
}

fn corpus_artifact(split: Split) -> &'static str {
    match split {
        Split::Train => CORPUS_TRAIN,
        Split::Test => CORPUS_TEST,
    }
}

/// Loads one corpus split: the run directory's ingest artifact when present,
/// the config-named source file otherwise.
fn corpus_for(config: &RunConfig, run: &RunDir, split: Split) -> Result<Corpus, PipelineError> {
    let artifact = run.artifact_path(corpus_artifact(split));
    if artifact.is_file() {
        let (_, problems): (_, Vec<Problem>) =
            read_jsonl_artifact(&artifact, &config.lineage_digest())?;
        return Ok(Corpus::new(&config.corpus.name, split, problems)?);
    }
    let source = match split {
        Split::Train => config.corpus.train.as_deref(),
        Split::Test => config.corpus.test.as_deref(),
    };
    let source = source.ok_or_else(|| {
        PipelineError::InvalidConfig(format!(
            "no {split} corpus: set corpus.{split} in the config or run `ingest` first"
        ))
    })?;
    Ok(load_corpus(source, config.corpus.format, split)?)
}

fn label_options(config: &RunConfig) -> LabelOptions {
    LabelOptions {
        model: config.label.model.clone(),
        temperature: config.label.temperature,
        max_output_tokens: config.label.max_output_tokens,
        parse_retries: config.label.parse_retries,
        jobs: config.run.jobs.max(1),
    }
}

/// Decode settings for vocabulary-constrained selection (relabeling and
/// solve-time skill choice).
fn select_options(config: &RunConfig) -> LabelOptions {
    LabelOptions {
        model: config.select.model.clone(),
        temperature: config.select.temperature,
        max_output_tokens: config.select.max_output_tokens,
        parse_retries: config.select.parse_retries,
        jobs: config.run.jobs.max(1),
    }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

/// Validates a source corpus and snapshots it into the run directory.
/// Expects the source path and format to already be folded into
/// `config.corpus` (the CLI does this for `ingest <path> --format F`).
pub fn run_ingest(
    config: &RunConfig,
    run: &mut RunDir,
    split: Split,
) -> Result<StageReport, PipelineError> {
    let stage = format!("ingest:{split}");
    let digest = config.config_digest();
    if let Some(report) = begin_stage(run, &stage, &digest)? {
        return Ok(report);
    }
    let source = match split {
        Split::Train => config.corpus.train.as_deref(),
        Split::Test => config.corpus.test.as_deref(),
    }
    .ok_or_else(|| {
        PipelineError::InvalidConfig(format!("ingest: no {split} corpus path configured"))
    })?;
    let corpus = load_corpus(source, config.corpus.format, split)?;

    let artifact = corpus_artifact(split);
    let path = run.reserve_artifact(artifact)?;
    write_jsonl_artifact(&path, &meta_for(config, &stage), corpus.problems())?;
    let summary = format!(
        "ingested {} problems from {} into {artifact}",
        corpus.len(),
        source.display()
    );
    finish_stage(run, &stage, &digest, vec![artifact.to_string()], 0, summary)
}

// ---------------------------------------------------------------------------
// label
// ---------------------------------------------------------------------------

/// Per-skill counts over the fine vocabulary, written as `skills_fine.json`.
#[derive(Debug, Serialize, Deserialize)]
struct FineVocabulary {
    total_problems: usize,
    distinct_skills: usize,
    counts: BTreeMap<SkillName, usize>,
}

/// Stage 1: ask the model for one fine-grained skill per training problem.
pub fn run_label(config: &RunConfig, run: &mut RunDir) -> Result<StageReport, PipelineError> {
    let stage = "label";
    let digest = config.config_digest();
    if let Some(report) = begin_stage(run, stage, &digest)? {
        return Ok(report);
    }
    let corpus = corpus_for(config, run, Split::Train)?;
    let gateway = build_gateway(config)?;
    let template = load_template(config, LABEL_TEMPLATE)?;
    let outcome = label_corpus(&corpus, &gateway, &template, &label_options(config))?;

    let mut counts: BTreeMap<SkillName, usize> = BTreeMap::new();
    for annotation in &outcome.annotations {
        *counts.entry(annotation.skill.clone()).or_default() += 1;
    }
    let vocabulary = FineVocabulary {
        total_problems: corpus.len(),
        distinct_skills: counts.len(),
        counts,
    };

    let meta = meta_for(config, stage);
    write_jsonl_artifact(
        &run.reserve_artifact(ANNOTATIONS_RAW)?,
        &meta,
        &outcome.annotations,
    )?;
    write_jsonl_artifact(
        &run.reserve_artifact(LABEL_FAILURES)?,
        &meta,
        &outcome.failures,
    )?;
    write_json_artifact(&run.reserve_artifact(SKILLS_FINE)?, &meta, &vocabulary)?;

    let summary = format!(
        "labeled {}/{} problems with {} distinct fine skills ({} failures)",
        outcome.annotations.len(),
        corpus.len(),
        vocabulary.distinct_skills,
        outcome.failures.len()
    );
    finish_stage(
        run,
        stage,
        &digest,
        vec![
            ANNOTATIONS_RAW.to_string(),
            LABEL_FAILURES.to_string(),
            SKILLS_FINE.to_string(),
        ],
        gateway.transport_calls(),
        summary,
    )
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

/// The `cluster_map.json` payload.
#[derive(Debug, Serialize, Deserialize)]
struct ClusterArtifact {
    map: ClusterMap,
    coverage: CoverageReport,
    /// Fine skills clustered in several topic scopes; first assignment won.
    conflicts: Vec<DuplicateAssignment>,
}

fn read_raw_annotations(
    config: &RunConfig,
    run: &RunDir,
) -> Result<Vec<SkillAnnotation>, PipelineError> {
    let path = run.require_artifact(ANNOTATIONS_RAW, "label")?;
    let (_, annotations) = read_jsonl_artifact(&path, &config.lineage_digest())?;
    Ok(annotations)
}

/// Stage 2: cluster the fine-skill vocabulary into coarse categories.
pub fn run_cluster(config: &RunConfig, run: &mut RunDir) -> Result<StageReport, PipelineError> {
    let stage = "cluster";
    let digest = config.config_digest();
    if let Some(report) = begin_stage(run, stage, &digest)? {
        return Ok(report);
    }
    let annotations = read_raw_annotations(config, run)?;
    let vocabulary: BTreeSet<SkillName> =
        annotations.iter().map(|a| a.skill.clone()).collect();
    if vocabulary.is_empty() {
        return Err(SkillsError::NoSkills.into());
    }
    let gateway = build_gateway(config)?;
    let template = load_template(config, CLUSTER_TEMPLATE)?;
    let opts = ClusterOptions {
        model: config.cluster.model.clone(),
        temperature: config.cluster.temperature,
        max_output_tokens: config.cluster.max_output_tokens,
        chunking: ClusterChunking {
            batch_size: config.cluster.batch_size.max(1),
        },
        max_distance: config.cluster.max_distance,
    };

    let (map, coverage, conflicts) = if config.cluster.per_topic {
        cluster_per_topic(config, run, &annotations, &gateway, &template, &opts)?
    } else {
        let (map, coverage) = cluster_skills(&vocabulary, &gateway, &template, &opts)?;
        (map, coverage, Vec::new())
    };
    if !map.is_partition_of(&vocabulary) {
        return Err(SkillsError::NotAPartition(
            "cluster map does not cover the labeled vocabulary exactly".into(),
        )
        .into());
    }

    let artifact = ClusterArtifact {
        map,
        coverage,
        conflicts,
    };
    write_json_artifact(
        &run.reserve_artifact(CLUSTER_MAP)?,
        &meta_for(config, stage),
        &artifact,
    )?;
    let summary = format!(
        "clustered {} fine skills into {} coarse skills ({} omitted became singletons, {} cross-scope conflicts)",
        vocabulary.len(),
        artifact.map.len(),
        artifact.coverage.omitted_singletons.len(),
        artifact.conflicts.len()
    );
    finish_stage(
        run,
        stage,
        &digest,
        vec![CLUSTER_MAP.to_string()],
        gateway.transport_calls(),
        summary,
    )
}

/// Clusters each corpus topic's vocabulary separately, then unions the
/// per-topic maps (first assignment wins when a fine skill was labeled under
/// several topics).
fn cluster_per_topic(
    config: &RunConfig,
    run: &RunDir,
    annotations: &[SkillAnnotation],
    gateway: &Gateway,
    template: &Template,
    opts: &ClusterOptions,
) -> Result<(ClusterMap, CoverageReport, Vec<DuplicateAssignment>), PipelineError> {
    let corpus = corpus_for(config, run, Split::Train)?;
    let mut by_topic: BTreeMap<String, BTreeSet<SkillName>> = BTreeMap::new();
    for annotation in annotations {
        let topic = corpus
            .get(&annotation.problem_id)
            .and_then(|p| p.topic.clone())
            .unwrap_or_default();
        by_topic.entry(topic).or_default().insert(annotation.skill.clone());
    }

    let mut maps = Vec::new();
    let mut coverage = CoverageReport::default();
    for (topic, vocabulary) in by_topic {
        let (mut map, scope_coverage) = cluster_skills(&vocabulary, gateway, template, opts)?;
        map.scope = Some(topic);
        coverage.total_fine += scope_coverage.total_fine;
        coverage.covered_by_response += scope_coverage.covered_by_response;
        coverage.omitted_singletons.extend(scope_coverage.omitted_singletons);
        coverage.alias_resolutions.extend(scope_coverage.alias_resolutions);
        coverage.dropped_unknown.extend(scope_coverage.dropped_unknown);
        coverage
            .duplicate_assignments
            .extend(scope_coverage.duplicate_assignments);
        maps.push(map);
    }
    let (merged, conflicts) = ClusterMap::union_first_wins(maps);
    Ok((merged, coverage, conflicts))
}

// ---------------------------------------------------------------------------
// relabel
// ---------------------------------------------------------------------------

fn read_cluster_map(config: &RunConfig, run: &RunDir) -> Result<ClusterArtifact, PipelineError> {
    let path = run.require_artifact(CLUSTER_MAP, "cluster")?;
    let (_, value) = super::run::read_json_artifact(&path, &config.lineage_digest())?;
    serde_json::from_value(value).map_err(|e| PipelineError::MalformedArtifact {
        path,
        detail: e.to_string(),
    })
}

/// One demonstration question per coarse skill: the lowest-id training
/// problem whose fine label falls in that cluster.
fn relabel_demos(
    map: &ClusterMap,
    annotations: &[SkillAnnotation],
    corpus: &Corpus,
) -> Result<BTreeMap<SkillName, String>, PipelineError> {
    let mut sorted: Vec<&SkillAnnotation> = annotations.iter().collect();
    sorted.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    let mut demos: BTreeMap<SkillName, String> = BTreeMap::new();
    for annotation in sorted {
        let Some(coarse) = map.cluster_of(&annotation.skill) else {
            continue;
        };
        if demos.contains_key(coarse) {
            continue;
        }
        let problem = corpus.get(&annotation.problem_id).ok_or_else(|| {
            PipelineError::MalformedArtifact {
                path: std::path::PathBuf::from(ANNOTATIONS_RAW),
                detail: format!(
                    "annotation references `{}`, which is not in the training corpus",
                    annotation.problem_id
                ),
            }
        })?;
        demos.insert(coarse.clone(), problem.question.clone());
    }
    Ok(demos)
}

/// Stage 3: relabel every training problem against the coarse vocabulary.
pub fn run_relabel(config: &RunConfig, run: &mut RunDir) -> Result<StageReport, PipelineError> {
    let stage = "relabel";
    let digest = config.config_digest();
    if let Some(report) = begin_stage(run, stage, &digest)? {
        return Ok(report);
    }
    let corpus = corpus_for(config, run, Split::Train)?;
    let annotations = read_raw_annotations(config, run)?;
    let cluster = read_cluster_map(config, run)?;
    let skills = cluster.map.coarse_skills();
    let demos = relabel_demos(&cluster.map, &annotations, &corpus)?;

    let gateway = build_gateway(config)?;
    let template = load_template(config, SELECT_TEMPLATE)?;
    let opts = RelabelOptions {
        label: select_options(config),
        max_distance: config.cluster.max_distance,
    };
    let outcome = relabel_corpus(&corpus, &skills, &demos, &gateway, &template, &opts)?;

    let meta = meta_for(config, stage);
    write_jsonl_artifact(
        &run.reserve_artifact(ANNOTATIONS_CLUSTERED)?,
        &meta,
        &outcome.annotations,
    )?;
    write_jsonl_artifact(
        &run.reserve_artifact(RELABEL_FAILURES)?,
        &meta,
        &outcome.failures,
    )?;
    write_jsonl_artifact(
        &run.reserve_artifact(RELABEL_FALLBACKS)?,
        &meta,
        &outcome.fallbacks,
    )?;

    let summary = format!(
        "relabeled {}/{} problems onto {} coarse skills ({} off-list fallbacks, {} unmatched, {} failures)",
        outcome.annotations.len(),
        corpus.len(),
        skills.len(),
        outcome.fallbacks.len(),
        outcome.unmatched_count,
        outcome.failures.len()
    );
    finish_stage(
        run,
        stage,
        &digest,
        vec![
            ANNOTATIONS_CLUSTERED.to_string(),
            RELABEL_FAILURES.to_string(),
            RELABEL_FALLBACKS.to_string(),
        ],
        gateway.transport_calls(),
        summary,
    )
}

// ---------------------------------------------------------------------------
// build-repo
// ---------------------------------------------------------------------------

/// Builds and saves the exemplar repository from the training corpus and the
/// requested annotation stage. Problems whose labeling failed outright get a
/// synthetic unmatched annotation so they are counted as excluded rather
/// than silently dropped.
pub fn run_build_repo(
    config: &RunConfig,
    run: &mut RunDir,
    repo_stage: RepoStage,
) -> Result<StageReport, PipelineError> {
    let (stage, artifact, source_artifact, source_stage, annotation_stage) = match repo_stage {
        RepoStage::PostCluster => (
            "build_repo:post_cluster",
            REPOSITORY,
            ANNOTATIONS_CLUSTERED,
            "relabel",
            AnnotationStage::Clustered,
        ),
        RepoStage::PreCluster => (
            "build_repo:pre_cluster",
            REPOSITORY_PRE,
            ANNOTATIONS_RAW,
            "label",
            AnnotationStage::Raw,
        ),
    };
    let digest = config.config_digest();
    if let Some(report) = begin_stage(run, stage, &digest)? {
        return Ok(report);
    }
    let corpus = corpus_for(config, run, Split::Train)?;
    let path = run.require_artifact(source_artifact, source_stage)?;
    let (_, mut annotations): (_, Vec<SkillAnnotation>) =
        read_jsonl_artifact(&path, &config.lineage_digest())?;

    let covered: BTreeSet<&str> = annotations.iter().map(|a| a.problem_id.as_str()).collect();
    let uncovered: Vec<String> = corpus
        .problems()
        .iter()
        .filter(|p| !covered.contains(p.id.as_str()))
        .map(|p| p.id.clone())
        .collect();
    for problem_id in uncovered {
        annotations.push(SkillAnnotation {
            problem_id,
            skill: SkillName::unmatched(),
            rationale: String::new(),
            stage: annotation_stage,
        });
    }

    // For post-cluster repositories, keep each exemplar's raw fine skill
    // visible when the label stage artifacts are available.
    let fine_skills: BTreeMap<String, SkillName> = match repo_stage {
        RepoStage::PostCluster if run.artifact_path(ANNOTATIONS_RAW).is_file() => {
            read_raw_annotations(config, run)?
                .into_iter()
                .map(|a| (a.problem_id, a.skill))
                .collect()
        }
        _ => BTreeMap::new(),
    };

    let mut repo = ExemplarRepository::build(
        &corpus,
        &annotations,
        &BuildOptions {
            stage: repo_stage,
            fine_skills,
        },
    )?;
    repo.set_provenance(&digest, &config.lineage_digest());

    let out = run.reserve_artifact(artifact)?;
    let tmp = out.with_extension("tmp");
    repo.save(&tmp)?;
    std::fs::rename(&tmp, &out).map_err(|source| PipelineError::Io {
        path: out.clone(),
        source,
    })?;

    let metadata = repo.metadata();
    let summary = format!(
        "repository ({}): {} exemplars across {} skills ({} unmatched problems excluded)",
        match repo_stage {
            RepoStage::PostCluster => "post-cluster",
            RepoStage::PreCluster => "pre-cluster",
        },
        metadata.total_records,
        metadata.skill_count,
        metadata.excluded_unmatched
    );
    finish_stage(run, stage, &digest, vec![artifact.to_string()], 0, summary)
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn load_code_shot(config: &RunConfig) -> Result<Shot, PipelineError> {
    #[derive(Deserialize)]
    struct Pair {
        question: String,
        answer: String,
    }
    let path = config.templates.dir.join(PAL_CODE_SHOT);
    let raw = std::fs::read_to_string(&path).map_err(|e| {
        PipelineError::InvalidConfig(format!(
            "PAL-hybrid mode needs a code shot at {}: {e}",
            path.display()
        ))
    })?;
    let pair: Pair = serde_json::from_str(&raw).map_err(|e| PipelineError::MalformedArtifact {
        path,
        detail: e.to_string(),
    })?;
    Ok(Shot::code(pair.question, pair.answer))
}

fn load_fixed_shots(config: &RunConfig) -> Result<Vec<Shot>, PipelineError> {
    #[derive(Deserialize)]
    struct Pair {
        question: String,
        answer: String,
    }
    let path = config.templates.dir.join(FIXED_SHOTS);
    let raw = std::fs::read_to_string(&path).map_err(|e| {
        PipelineError::InvalidConfig(format!(
            "the fixed strategy needs a shot list at {}: {e}",
            path.display()
        ))
    })?;
    let pairs: Vec<Pair> =
        serde_json::from_str(&raw).map_err(|e| PipelineError::MalformedArtifact {
            path,
            detail: e.to_string(),
        })?;
    Ok(pairs
        .into_iter()
        .map(|p| Shot::text(p.question, p.answer))
        .collect())
}

fn solve_options(config: &RunConfig) -> Result<SolveOptions, PipelineError> {
    let solve = &config.solve;
    let header = match solve.mode {
        PromptMode::CotText => optional_header(config, COT_HEADER)?,
        PromptMode::PalHybrid => optional_header(config, PAL_HEADER)?,
    };
    let code_shot = match solve.mode {
        PromptMode::PalHybrid => Some(load_code_shot(config)?),
        PromptMode::CotText => None,
    };
    let fixed_shots = match solve.strategy {
        StrategyName::Fixed => load_fixed_shots(config)?,
        _ => Vec::new(),
    };
    Ok(SolveOptions {
        model: solve.model.clone(),
        temperature: solve.temperature,
        max_output_tokens: solve.max_output_tokens,
        n_samples: solve.n_samples.max(1),
        mode: solve.mode,
        strategy: solve.strategy.with_shots(solve.shots),
        header,
        code_shot,
        fixed_shots,
        convention: ExtractionConvention::Auto,
        runner: ProgramRunner {
            timeout: Duration::from_secs(config.solve.program_timeout_secs.max(1)),
            ..ProgramRunner::default()
        },
        seed: config.run.seed,
        jobs: config.run.jobs.max(1),
    })
}

/// The demo block for solve-time skill selection: up to
/// `select.demos_per_skill` exemplar questions per repository skill, trimmed
/// from the end to the character budget (the skill list is never trimmed).
fn selection_demos(repo: &ExemplarRepository, config: &RunConfig) -> String {
    let select = &config.select;
    let mut paragraphs: Vec<String> = Vec::new();
    for skill in repo.skills() {
        let mut records: Vec<_> = repo.exemplars(skill).collect();
        records.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
        for record in records.into_iter().take(select.demos_per_skill.max(1)) {
            paragraphs.push(format!("question: {} skill: {}", record.question, skill));
        }
    }
    let mut block = paragraphs.join("\n\n");
    while block.len() > select.max_demo_chars && !paragraphs.is_empty() {
        paragraphs.pop();
        block = paragraphs.join("\n\n");
    }
    block
}

fn check_repo_lineage(
    repo: &ExemplarRepository,
    expected: &str,
    path: &Path,
) -> Result<(), PipelineError> {
    if let Some(found) = &repo.metadata().lineage_digest {
        if found != expected {
            return Err(PipelineError::LineageMismatch {
                path: path.to_path_buf(),
                expected: expected.to_string(),
                found: found.clone(),
            });
        }
    }
    Ok(())
}

fn solve_corpus_with_repo(
    config: &RunConfig,
    repo: &ExemplarRepository,
    gateway: &Gateway,
    corpus: &Corpus,
) -> Result<Vec<Attempt>, PipelineError> {
    let opts = solve_options(config)?;
    let select_template;
    let mut solver = Solver::new(repo, gateway, opts);
    if config.solve.strategy == StrategyName::SkillBased {
        select_template = load_template(config, SELECT_TEMPLATE)?;
        solver = solver.with_selector(SkillSelector {
            template: &select_template,
            demos: selection_demos(repo, config),
            options: select_options(config),
        });
    }
    Ok(solver.solve_corpus(corpus)?)
}

/// Solves the test split against the run's repository with skill-matched
/// few-shot prompts and self-consistency voting.
pub fn run_solve(config: &RunConfig, run: &mut RunDir) -> Result<StageReport, PipelineError> {
    let stage = "solve";
    let digest = config.config_digest();
    if let Some(report) = begin_stage(run, stage, &digest)? {
        return Ok(report);
    }
    let corpus = corpus_for(config, run, Split::Test)?;
    let repo_path = run.require_artifact(REPOSITORY, "build-repo")?;
    let repo = ExemplarRepository::load(&repo_path)?;
    check_repo_lineage(&repo, &config.lineage_digest(), &repo_path)?;
    let gateway = build_gateway(config)?;

    let attempts = solve_corpus_with_repo(config, &repo, &gateway, &corpus)?;
    write_jsonl_artifact(
        &run.reserve_artifact(ATTEMPTS)?,
        &meta_for(config, stage),
        &attempts,
    )?;

    let voted = attempts.iter().filter(|a| !a.final_answer.is_none()).count();
    let summary = format!(
        "solved {} problems ({} mode, {} strategy, {} samples each; {} reached a voted answer)",
        attempts.len(),
        config.solve.mode,
        config.solve.strategy,
        config.solve.n_samples.max(1),
        voted
    );
    finish_stage(
        run,
        stage,
        &digest,
        vec![ATTEMPTS.to_string()],
        gateway.transport_calls(),
        summary,
    )
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn text_artifact_header(meta: &ArtifactMeta) -> String {
    format!(
        "# stage={} config_digest={} lineage_digest={}\n",
        meta.stage, meta.config_digest, meta.lineage_digest
    )
}

/// Writes the report triple (JSON, rendered table, per-skill CSV) for an
/// evaluated attempt set. Used by both `eval` and `transfer`.
fn write_report_artifacts(
    run: &RunDir,
    meta: &ArtifactMeta,
    report: &EvalReport,
    json_name: &str,
    txt_name: &str,
    csv_name: Option<&str>,
) -> Result<Vec<String>, PipelineError> {
    let mut written = Vec::new();
    write_json_artifact(&run.reserve_artifact(json_name)?, meta, report)?;
    written.push(json_name.to_string());

    let header = text_artifact_header(meta);
    let txt_path = run.reserve_artifact(txt_name)?;
    std::fs::write(&txt_path, format!("{header}{}", render_table(report))).map_err(|source| {
        PipelineError::Io {
            path: txt_path.clone(),
            source,
        }
    })?;
    written.push(txt_name.to_string());

    if let Some(csv_name) = csv_name {
        let csv_path = run.reserve_artifact(csv_name)?;
        std::fs::write(&csv_path, format!("{header}{}", to_csv_per_skill(report))).map_err(
            |source| PipelineError::Io {
                path: csv_path.clone(),
                source,
            },
        )?;
        written.push(csv_name.to_string());
    }
    Ok(written)
}

/// Scores the solve attempts against the test corpus references.
pub fn run_eval(config: &RunConfig, run: &mut RunDir) -> Result<StageReport, PipelineError> {
    let stage = "eval";
    let digest = config.config_digest();
    if let Some(report) = begin_stage(run, stage, &digest)? {
        return Ok(report);
    }
    let attempts_path = run.require_artifact(ATTEMPTS, "solve")?;
    let (_, attempts): (_, Vec<Attempt>) =
        read_jsonl_artifact(&attempts_path, &config.lineage_digest())?;
    let corpus = corpus_for(config, run, Split::Test)?;
    let report = evaluate(&attempts, &corpus)?;

    let meta = meta_for(config, stage);
    let artifacts = write_report_artifacts(
        run,
        &meta,
        &report,
        REPORT_JSON,
        REPORT_TXT,
        Some(PER_SKILL_CSV),
    )?;
    let summary = format!(
        "accuracy {}/{} = {:.4}",
        report.correct, report.total, report.accuracy
    );
    finish_stage(run, stage, &digest, artifacts, 0, summary)
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

/// Classifies wrong attempts with the LLM judge and aggregates
/// calculation / main-skill / secondary-skill success rates.
pub fn run_analyze(config: &RunConfig, run: &mut RunDir) -> Result<StageReport, PipelineError> {
    let stage = "analyze";
    let digest = config.config_digest();
    if let Some(report) = begin_stage(run, stage, &digest)? {
        return Ok(report);
    }
    let attempts_path = run.require_artifact(ATTEMPTS, "solve")?;
    let (_, attempts): (_, Vec<Attempt>) =
        read_jsonl_artifact(&attempts_path, &config.lineage_digest())?;
    let corpus = corpus_for(config, run, Split::Test)?;
    let gateway = build_gateway(config)?;
    let template = load_template(config, CLASSIFIER_TEMPLATE)?;
    let opts = AnalysisOptions {
        model: config.analyze.model.clone(),
        temperature: config.analyze.temperature,
        max_output_tokens: config.analyze.max_output_tokens,
        jobs: config.run.jobs.max(1),
    };
    let records = classify_errors(&attempts, &corpus, &gateway, &template, &opts)?;
    let rates = aggregate_rates(&records);

    let meta = meta_for(config, stage);
    write_jsonl_artifact(&run.reserve_artifact(ERROR_FLAGS)?, &meta, &records)?;
    write_json_artifact(&run.reserve_artifact(SUCCESS_RATES)?, &meta, &rates)?;

    let wrong = records.iter().filter(|r: &&ErrorRecord| !r.answer_correct).count();
    let summary = format!(
        "classified {} attempts ({} wrong, {} indeterminate); success rates: \
         calculation {:.4}, main skill {:.4}, secondary skill {:.4}",
        records.len(),
        wrong,
        rates.indeterminate,
        rates.calculation.success_rate,
        rates.main_skill.success_rate,
        rates.secondary_skill.success_rate
    );
    finish_stage(
        run,
        stage,
        &digest,
        vec![ERROR_FLAGS.to_string(), SUCCESS_RATES.to_string()],
        gateway.transport_calls(),
        summary,
    )
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

/// Solves and scores a foreign corpus using an already-built repository
/// (e.g. exemplars mined from one dataset applied to another). Expects the
/// CLI to have folded the target corpus into `config.corpus.test`, so the
/// run directory and digests reflect the actual inputs.
pub fn run_transfer(
    config: &RunConfig,
    run: &mut RunDir,
    repo_path: &Path,
) -> Result<StageReport, PipelineError> {
    let stage = "transfer";
    let digest = config.config_digest();
    if let Some(report) = begin_stage(run, stage, &digest)? {
        return Ok(report);
    }
    let corpus = corpus_for(config, run, Split::Test)?;
    // A foreign repository is the point of transfer: no lineage check.
    let repo = ExemplarRepository::load(repo_path)?;
    let gateway = build_gateway(config)?;

    let attempts = solve_corpus_with_repo(config, &repo, &gateway, &corpus)?;
    let report = evaluate(&attempts, &corpus)?;

    let meta = meta_for(config, stage);
    write_jsonl_artifact(&run.reserve_artifact(TRANSFER_ATTEMPTS)?, &meta, &attempts)?;
    let mut artifacts = vec![TRANSFER_ATTEMPTS.to_string()];
    artifacts.extend(write_report_artifacts(
        run,
        &meta,
        &report,
        TRANSFER_REPORT_JSON,
        TRANSFER_REPORT_TXT,
        None,
    )?);

    let summary = format!(
        "transfer accuracy {}/{} = {:.4} using {} exemplars from {}",
        report.correct,
        report.total,
        report.accuracy,
        repo.metadata().total_records,
        repo_path.display()
    );
    finish_stage(
        run,
        stage,
        &digest,
        artifacts,
        gateway.transport_calls(),
        summary,
    )
}
