//! Run every pipeline stage end-to-end against the bundled fixtures: label,
//! cluster, relabel, build-repo, solve, eval, analyze.
//!
//! ```sh
//! cargo run -p skillforge --example full_pipeline
//! ```
//!
//! This is the library-level equivalent of the CLI sequence
//!
//! ```sh
//! skillforge --config pipeline.toml label
//! skillforge --config pipeline.toml cluster
//! ...
//! ```
//!
//! Artifacts land in a timestamped run directory (under a temp dir here);
//! every artifact embeds the config and lineage digests, stages skip when
//! already complete, and the scripted backend stands in for the model, so
//! the whole run is offline and reproducible.

use std::path::{Path, PathBuf};

use skillforge::corpus::Split;
use skillforge::pipeline::{
    run_analyze, run_build_repo, run_cluster, run_eval, run_ingest, run_label, run_relabel,
    run_solve, BackendKind, RunConfig, RunDir, StageReport,
};
use skillforge::repository::RepoStage;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn show(report: &StageReport) {
    println!(
        "{:<12} {:<44} backend calls: {}",
        report.stage, report.summary, report.transport_calls
    );
    for artifact in &report.artifacts {
        println!("{:<12}   wrote {artifact}", "");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let workdir = tempfile::tempdir()?;

    let mut config = RunConfig::default();
    config.run.name = "pipeline-demo".into();
    config.run.output_dir = workdir.path().join("runs");
    config.backend.kind = BackendKind::Scripted;
    config.backend.script = Some(fixture("fixtures/synthetic/script_pipeline.jsonl"));
    config.backend.cache_dir = Some(workdir.path().join("cache"));
    config.corpus.name = "synthetic50".into();
    config.corpus.train = Some(fixture("fixtures/synthetic/corpus_train.jsonl"));
    config.corpus.test = Some(fixture("fixtures/synthetic/corpus_test.jsonl"));
    config.templates.dir = fixture("fixtures/templates");

    let mut run = RunDir::attach(&config, false)?;
    println!("run directory: {}\n", run.root().display());

    show(&run_ingest(&config, &mut run, Split::Train)?);
    show(&run_ingest(&config, &mut run, Split::Test)?);
    show(&run_label(&config, &mut run)?);
    show(&run_cluster(&config, &mut run)?);
    show(&run_relabel(&config, &mut run)?);
    show(&run_build_repo(&config, &mut run, RepoStage::PostCluster)?);
    show(&run_solve(&config, &mut run)?);
    show(&run_eval(&config, &mut run)?);
    show(&run_analyze(&config, &mut run)?);

    // Stages are idempotent within a run directory: a second invocation
    // under the same digests skips instead of re-running.
    println!();
    let again = run_label(&config, &mut run)?;
    println!(
        "label again -> skipped={} ({})",
        again.skipped, again.summary
    );

    println!("\nreport.txt:\n");
    let report = std::fs::read_to_string(run.root().join("report.txt"))?;
    println!("{report}");

    Ok(())
}
