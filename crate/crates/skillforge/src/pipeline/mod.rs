//! End-to-end pipeline plumbing: run configuration, timestamped run
//! directories with append-only artifacts, and the stage functions the CLI
//! dispatches to (`ingest`, `label`, `cluster`, `relabel`, `build-repo`,
//! `solve`, `eval`, `analyze`, `transfer`).
//!
//! Every artifact starts with a `_meta` header embedding two digests of the
//! configuration that produced it: the full `config_digest` (provenance) and
//! the `lineage_digest` over the settings that determine discovery outputs
//! (seed, corpus, backend identity, templates, label/cluster/select
//! sections). Downstream stages refuse artifacts whose lineage differs from
//! the current configuration, and a run directory is only resumed when the
//! lineage still matches; otherwise a new timestamped directory is created.

mod config;
mod run;
mod stages;

pub use config::{
    AnalyzeSection, BackendKind, BackendSection, ClusterSection, CorpusSection, LabelSection,
    Preset, RunConfig, RunSection, SelectSection, SolveSection, StrategyName, TemplatesSection,
};
pub use run::{
    read_json_artifact, read_jsonl_artifact, ArtifactMeta, RunDir, RunManifest, StageEntry,
    StageStatus,
};
pub use stages::{
    run_analyze, run_build_repo, run_cluster, run_eval, run_ingest, run_label, run_relabel,
    run_solve, run_transfer, StageReport,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::corpus::CorpusError;
use crate::eval::EvalError;
use crate::gateway::GatewayError;
use crate::prompting::PromptError;
use crate::repository::RepoError;
use crate::skills::SkillsError;
use crate::template::TemplateError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot load config {path}: {detail}")]
    Config { path: PathBuf, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing artifact `{artifact}`: run the `{stage}` stage first")]
    MissingArtifact { artifact: String, stage: String },
    #[error(
        "artifact {path} came from an incompatible run \
         (lineage {found} != expected {expected})"
    )]
    LineageMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("malformed artifact {path}: {detail}")]
    MalformedArtifact { path: PathBuf, detail: String },
    #[error(
        "stage `{0}` already completed in this run directory under a different \
         configuration; artifacts are append-only — pass --fresh to start a new run directory"
    )]
    StageConflict(String),
    #[error(
        "artifact {path} already exists; artifacts are append-only — \
         pass --fresh to start a new run directory"
    )]
    AppendOnly { path: PathBuf },
    #[error("backend initialization failed: {0}")]
    Backend(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Skills(#[from] SkillsError),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl PipelineError {
    /// Whether the failure originates in the completion backend (transport,
    /// script miss, exhausted retries) rather than in a pipeline stage.
    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            PipelineError::Gateway(_)
                | PipelineError::Backend(_)
                | PipelineError::Skills(SkillsError::Gateway(_))
                | PipelineError::Prompt(PromptError::Gateway(_))
                | PipelineError::Analysis(AnalysisError::Gateway(_))
        )
    }

    /// CLI exit code: 3 for backend failures, 2 for stage failures. (Usage
    /// errors exit 1 before a `PipelineError` ever exists.)
    pub fn exit_code(&self) -> i32 {
        if self.is_backend_failure() {
            3
        } else {
            2
        }
    }
}
