//! Run configuration: a single TOML or JSON file, optional presets, and the
//! two digests that gate artifact compatibility.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusFormat;
use crate::prompting::{PromptMode, SelectionStrategy};

use super::PipelineError;

/// Everything a run needs, one section per concern. Unknown keys are
/// rejected so config typos fail loudly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub backend: BackendSection,
    pub corpus: CorpusSection,
    pub templates: TemplatesSection,
    pub label: LabelSection,
    pub cluster: ClusterSection,
    pub select: SelectSection,
    pub solve: SolveSection,
    pub analyze: AnalyzeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Human-readable run name, recorded in the manifest.
    pub name: String,
    /// Global seed; per-question sampling seeds derive from it.
    pub seed: u64,
    /// Directory that holds the timestamped run subdirectories.
    pub output_dir: PathBuf,
    /// Worker-thread cap for every parallel stage and the gateway.
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: "run".into(),
            seed: 0,
            output_dir: PathBuf::from("runs"),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Replays canned responses from a JSONL script; no network.
    Scripted,
    /// An OpenAI-compatible chat completions endpoint.
    Live,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Scripted => "scripted",
            BackendKind::Live => "live",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Script file for the scripted backend.
    pub script: Option<PathBuf>,
    /// Chat completions URL for the live backend.
    pub endpoint: Option<String>,
    /// Environment variable holding the live API key.
    pub api_key_env: String,
    /// Per-request timeout for the live backend.
    pub timeout_secs: u64,
    /// Response cache directory; absent means no caching.
    pub cache_dir: Option<PathBuf>,
    /// Requests per minute; 0 disables rate limiting.
    pub rate_limit_per_minute: u32,
    /// In-flight request cap (further capped by `run.jobs`).
    pub concurrency: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Scripted,
            script: None,
            endpoint: None,
            api_key_env: "SKILLFORGE_API_KEY".into(),
            timeout_secs: 120,
            cache_dir: None,
            rate_limit_per_minute: 0,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Corpus name recorded in artifacts and repository metadata.
    pub name: String,
    /// Training-split source (exemplar repository side).
    pub train: Option<PathBuf>,
    /// Test-split source (solving side).
    pub test: Option<PathBuf>,
    pub format: CorpusFormat,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            name: "corpus".into(),
            train: None,
            test: None,
            format: CorpusFormat::GenericJsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatesSection {
    /// Directory holding the prompt template files.
    pub dir: PathBuf,
}

impl Default for TemplatesSection {
    fn default() -> Self {
        TemplatesSection {
            dir: PathBuf::from("templates"),
        }
    }
}

/// Stage-1 per-problem skill labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Format-reminder re-asks when a response does not parse.
    pub parse_retries: u32,
}

impl Default for LabelSection {
    fn default() -> Self {
        LabelSection {
            model: "annotator".into(),
            temperature: 0.0,
            max_output_tokens: 512,
            parse_retries: 2,
        }
    }
}

/// Stage-2 semantic clustering of the fine-skill vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Maximum fine skills per clustering request; larger vocabularies are
    /// chunked and merged.
    pub batch_size: usize,
    /// Cluster each corpus topic separately, then union the per-topic maps
    /// (first assignment wins on conflicts).
    pub per_topic: bool,
    /// Fuzzy-match ceiling (normalized Levenshtein) when repairing drifted
    /// skill spellings in cluster responses, and when resolving off-list
    /// relabel responses.
    pub max_distance: f64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            model: "annotator".into(),
            temperature: 0.0,
            max_output_tokens: 4096,
            batch_size: 400,
            per_topic: false,
            max_distance: 0.35,
        }
    }
}

/// Skill selection against a fixed vocabulary: stage-3 relabeling of the
/// training corpus and per-question selection at solve time share these
/// settings (they use the same prompt).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub parse_retries: u32,
    /// Demonstration questions listed per skill in the selection prompt.
    pub demos_per_skill: usize,
    /// Character budget for the rendered demo block; over budget, demos are
    /// dropped from the end (the skill list itself is never trimmed).
    pub max_demo_chars: usize,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection {
            model: "annotator".into(),
            temperature: 0.0,
            max_output_tokens: 512,
            parse_retries: 2,
            demos_per_skill: 1,
            max_demo_chars: 20_000,
        }
    }
}

/// How exemplars are picked for a query question. Pairs with `solve.shots`
/// to form the full strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    SkillBased,
    TopicBased,
    Random,
    ComplexCot,
    Fixed,
}

impl StrategyName {
    pub fn with_shots(self, k: usize) -> SelectionStrategy {
        match self {
            StrategyName::SkillBased => SelectionStrategy::SkillBased { k },
            StrategyName::TopicBased => SelectionStrategy::TopicBased { k },
            StrategyName::Random => SelectionStrategy::Random { k },
            StrategyName::ComplexCot => SelectionStrategy::ComplexCot { k },
            StrategyName::Fixed => SelectionStrategy::Fixed,
        }
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyName::SkillBased => "skill_based",
            StrategyName::TopicBased => "topic_based",
            StrategyName::Random => "random",
            StrategyName::ComplexCot => "complex_cot",
            StrategyName::Fixed => "fixed",
        })
    }
}

impl std::str::FromStr for StrategyName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "skill_based" => Ok(StrategyName::SkillBased),
            "topic_based" => Ok(StrategyName::TopicBased),
            "random" => Ok(StrategyName::Random),
            "complex_cot" => Ok(StrategyName::ComplexCot),
            "fixed" => Ok(StrategyName::Fixed),
            other => Err(format!(
                "unknown strategy `{other}` (expected skill_based, topic_based, \
                 random, complex_cot, or fixed)"
            )),
        }
    }
}

/// Few-shot solving over the test split. The defaults mirror the common
/// text setup: 8 chain-of-thought shots sampled at temperature 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub model: String,
    pub temperature: f64,
    /// Samples per problem; the final answer majority-votes over them.
    pub n_samples: u32,
    /// Exemplars per prompt (the K in K-shot).
    pub shots: usize,
    pub strategy: StrategyName,
    pub mode: PromptMode,
    pub max_output_tokens: u32,
    /// Wall-clock limit for one sandboxed program run.
    pub program_timeout_secs: u64,
}

impl Default for SolveSection {
    fn default() -> Self {
        SolveSection {
            model: "solver".into(),
            temperature: 1.0,
            n_samples: 1,
            shots: 8,
            strategy: StrategyName::SkillBased,
            mode: PromptMode::CotText,
            max_output_tokens: 1024,
            program_timeout_secs: 10,
        }
    }
}

/// LLM-judged error classification of wrong attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection {
            model: "judge".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

/// Named hyperparameter bundles for the solve stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 8 text shots, temperature 1.0, single sample.
    Cot8,
    /// Like `cot8` with 5-sample self-consistency.
    Maj5,
    /// Like `cot8` with 4-sample self-consistency.
    Maj4,
    /// Cross-dataset transfer: 4 shots at temperature 0.2.
    Transfer,
}

impl Preset {
    pub fn apply(self, config: &mut RunConfig) {
        let solve = &mut config.solve;
        solve.strategy = StrategyName::SkillBased;
        solve.mode = PromptMode::CotText;
        match self {
            Preset::Cot8 => {
                solve.shots = 8;
                solve.temperature = 1.0;
                solve.n_samples = 1;
            }
            Preset::Maj5 => {
                solve.shots = 8;
                solve.temperature = 1.0;
                solve.n_samples = 5;
            }
            Preset::Maj4 => {
                solve.shots = 8;
                solve.temperature = 1.0;
                solve.n_samples = 4;
            }
            Preset::Transfer => {
                solve.shots = 4;
                solve.temperature = 0.2;
                solve.n_samples = 1;
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Cot8 => "cot8",
            Preset::Maj5 => "maj5",
            Preset::Maj4 => "maj4",
            Preset::Transfer => "transfer",
        })
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cot8" => Ok(Preset::Cot8),
            "maj5" => Ok(Preset::Maj5),
            "maj4" => Ok(Preset::Maj4),
            "transfer" => Ok(Preset::Transfer),
            other => Err(format!(
                "unknown preset `{other}` (expected cot8, maj5, maj4, or transfer)"
            )),
        }
    }
}

/// The configuration subset that determines skill-discovery outputs. Two
/// configs with equal lineage can share a run directory; anything else
/// (different seed, corpus, backend identity, or discovery settings) must
/// start fresh. Solve/analyze settings are deliberately excluded — they are
/// covered by the full config digest embedded in each artifact.
#[derive(Serialize)]
struct LineageView<'a> {
    seed: u64,
    corpus: &'a CorpusSection,
    backend_kind: BackendKind,
    script: &'a Option<PathBuf>,
    endpoint: &'a Option<String>,
    templates: &'a TemplatesSection,
    label: &'a LabelSection,
    cluster: &'a ClusterSection,
    select: &'a SelectSection,
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    /// Reads a TOML (default) or JSON (`.json` extension) config file.
    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let err = |detail: String| PipelineError::Config {
            path: path.to_path_buf(),
            detail,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw).map_err(|e| err(e.to_string()))
        } else {
            toml::from_str(&raw).map_err(|e| err(e.to_string()))
        }
    }

    /// Digest of the full effective configuration; embedded in every
    /// artifact this run produces.
    pub fn config_digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }

    /// Digest of the lineage subset; see [`RunDir::attach`] and the artifact
    /// compatibility checks.
    ///
    /// [`RunDir::attach`]: super::RunDir::attach
    pub fn lineage_digest(&self) -> String {
        let view = LineageView {
            seed: self.run.seed,
            corpus: &self.corpus,
            backend_kind: self.backend.kind,
            script: &self.backend.script,
            endpoint: &self.backend.endpoint,
            templates: &self.templates,
            label: &self.label,
            cluster: &self.cluster,
            select: &self.select,
        };
        let json = serde_json::to_vec(&view).expect("lineage view serializes");
        hex_digest(&json)
    }
}
