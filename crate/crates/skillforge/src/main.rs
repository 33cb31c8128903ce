//! Thin CLI over [`skillforge::pipeline`]: parse flags, fold them into the
//! run configuration, attach a run directory, dispatch one stage.
//!
//! Exit codes: 0 success, 1 usage or configuration errors, 2 stage failures,
//! 3 backend (transport) failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use skillforge::corpus::{CorpusFormat, Split};
use skillforge::pipeline::{
    run_analyze, run_build_repo, run_cluster, run_eval, run_ingest, run_label, run_relabel,
    run_solve, run_transfer, PipelineError, Preset, RunConfig, RunDir, StrategyName,
};
use skillforge::prompting::PromptMode;
use skillforge::repository::RepoStage;

const DEFAULT_CONFIG: &str = "skillforge.toml";

#[derive(Parser)]
#[command(
    name = "skillforge",
    version,
    about = "Skill-matched few-shot prompting for math QA corpora",
    disable_help_subcommand = true
)]
struct Cli {
    /// Run configuration file (TOML, or JSON with a .json extension).
    /// The default path may be absent; explicit paths must exist.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Named hyperparameter bundle applied over the config file
    /// (cot8, maj4, maj5, transfer).
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<Preset>,

    /// Root RNG seed for all sampling [default: 0].
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Directory that holds timestamped run directories.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    /// Worker threads for backend calls and program execution.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Start a new run directory instead of resuming the latest
    /// lineage-compatible one.
    #[arg(long, global = true)]
    fresh: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a source corpus and snapshot it into the run directory.
    Ingest {
        /// Source dataset file or directory.
        path: PathBuf,
        /// Input format.
        #[arg(long, value_name = "FORMAT")]
        format: Option<CorpusFormat>,
        /// Which split this source feeds.
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Label each training problem with a fine-grained skill.
    Label,
    /// Cluster the fine-grained skill names into coarse categories.
    Cluster,
    /// Relabel the training corpus with the coarse skill names.
    Relabel,
    /// Build the skill exemplar repository from the annotated corpus.
    BuildRepo {
        /// Which annotation stage keys the repository.
        #[arg(long, value_enum, default_value_t = StageArg::PostCluster)]
        stage: StageArg,
    },
    /// Solve the test split with skill-matched few-shot prompts.
    Solve(SolveArgs),
    /// Score solve attempts against the reference answers.
    Eval,
    /// Classify wrong attempts with the LLM judge.
    Analyze,
    /// Solve a foreign corpus using an existing repository.
    Transfer {
        /// Path of a saved repository file.
        #[arg(long, value_name = "PATH")]
        repo: PathBuf,
        /// Corpus to solve with the foreign repository.
        #[arg(long, value_name = "PATH")]
        target_corpus: PathBuf,
        /// Input format of the target corpus.
        #[arg(long, value_name = "FORMAT")]
        format: Option<CorpusFormat>,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// Exemplar selection strategy (skill_based, topic_based, random,
    /// complex_cot, fixed).
    #[arg(long, value_name = "NAME")]
    strategy: Option<StrategyName>,
    /// Prompt mode (cot_text, pal_hybrid).
    #[arg(long, value_name = "NAME")]
    mode: Option<PromptMode>,
    /// Shots per prompt.
    #[arg(long, value_name = "K")]
    k: Option<usize>,
    /// Self-consistency samples per problem.
    #[arg(long, value_name = "N")]
    maj: Option<u32>,
    /// Sampling temperature for the solver model.
    #[arg(long, value_name = "T")]
    temperature: Option<f64>,
    /// Solver model name.
    #[arg(long, value_name = "NAME")]
    model: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(value: SplitArg) -> Split {
        match value {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "pre_cluster")]
    PreCluster,
    #[value(name = "post_cluster")]
    PostCluster,
}

impl From<StageArg> for RepoStage {
    fn from(value: StageArg) -> RepoStage {
        match value {
            StageArg::PreCluster => RepoStage::PreCluster,
            StageArg::PostCluster => RepoStage::PostCluster,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version arrive here too; they are not failures.
            let is_error = err.use_stderr();
            let _ = err.print();
            return if is_error {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Pipeline(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

enum CliError {
    Usage(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        CliError::Pipeline(err)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = configure(&cli)?;
    let mut run_dir = RunDir::attach(&config, cli.fresh)?;
    println!("run directory: {}", run_dir.root().display());

    let report = match &cli.command {
        Command::Ingest { split, .. } => run_ingest(&config, &mut run_dir, (*split).into())?,
        Command::Label => run_label(&config, &mut run_dir)?,
        Command::Cluster => run_cluster(&config, &mut run_dir)?,
        Command::Relabel => run_relabel(&config, &mut run_dir)?,
        Command::BuildRepo { stage } => run_build_repo(&config, &mut run_dir, (*stage).into())?,
        Command::Solve(_) => run_solve(&config, &mut run_dir)?,
        Command::Eval => run_eval(&config, &mut run_dir)?,
        Command::Analyze => run_analyze(&config, &mut run_dir)?,
        Command::Transfer { repo, .. } => run_transfer(&config, &mut run_dir, repo)?,
    };

    if report.skipped {
        println!("{}", report.summary);
    } else {
        println!("{}: {}", report.stage, report.summary);
        for artifact in &report.artifacts {
            println!("  wrote {}", run_dir.artifact_path(artifact).display());
        }
        if report.transport_calls > 0 {
            println!("  transport calls: {}", report.transport_calls);
        }
    }
    Ok(())
}

/// Builds the effective configuration: config file, then preset, then global
/// flags, then per-command overrides. Everything that shapes a stage's
/// behavior lands in the config *before* digests are computed, so run
/// directories and artifact provenance reflect the actual inputs.
fn configure(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None => {
            let default = PathBuf::from(DEFAULT_CONFIG);
            if default.is_file() {
                RunConfig::load(&default).map_err(|e| CliError::Usage(e.to_string()))?
            } else {
                RunConfig::default()
            }
        }
    };

    if let Some(preset) = cli.preset {
        preset.apply(&mut config);
    }
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.run.output_dir = dir.clone();
    }
    if let Some(jobs) = cli.jobs {
        config.run.jobs = jobs.max(1);
    }

    match &cli.command {
        Command::Ingest {
            path,
            format,
            split,
        } => {
            match Split::from(*split) {
                Split::Train => config.corpus.train = Some(path.clone()),
                Split::Test => config.corpus.test = Some(path.clone()),
            }
            if let Some(format) = format {
                config.corpus.format = *format;
            }
        }
        Command::Solve(args) => {
            if let Some(strategy) = args.strategy {
                config.solve.strategy = strategy;
            }
            if let Some(mode) = args.mode {
                config.solve.mode = mode;
            }
            if let Some(k) = args.k {
                config.solve.shots = k;
            }
            if let Some(maj) = args.maj {
                config.solve.n_samples = maj.max(1);
            }
            if let Some(temperature) = args.temperature {
                config.solve.temperature = temperature;
            }
            if let Some(model) = &args.model {
                config.solve.model = model.clone();
            }
        }
        Command::Transfer {
            target_corpus,
            format,
            ..
        } => {
            config.corpus.test = Some(target_corpus.clone());
            if let Some(format) = format {
                config.corpus.format = *format;
            }
        }
        _ => {}
    }
    Ok(config)
}
