//! Load the bundled synthetic corpora and inspect what normalization does.
//!
//! ```sh
//! cargo run -p skillforge --example ingest_corpus
//! ```
//!
//! Corpora arrive as JSONL (one `{id, question, answer, final_answer?,
//! topic?}` object per line) and come out as validated [`Corpus`] values:
//! trimmed fields, unique ids, explicit split. Everything downstream —
//! labeling, repository building, solving — consumes this one normal form.

use std::collections::BTreeMap;
use std::path::Path;

use skillforge::corpus::{load_corpus, Corpus, CorpusFormat, Split};
use skillforge::eval::reference_answer;

fn fixture(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn describe(corpus: &Corpus) {
    println!(
        "corpus `{}` ({:?} split): {} problems",
        corpus.name,
        corpus.split,
        corpus.len()
    );
    let mut by_topic: BTreeMap<&str, usize> = BTreeMap::new();
    for problem in corpus.problems() {
        *by_topic.entry(problem.topic.as_deref().unwrap_or("-")).or_default() += 1;
    }
    for (topic, count) in by_topic {
        println!("  topic {topic:<14} {count} problems");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train = load_corpus(
        &fixture("fixtures/synthetic/corpus_train.jsonl"),
        CorpusFormat::GenericJsonl,
        Split::Train,
    )?;
    let test = load_corpus(
        &fixture("fixtures/synthetic/corpus_test.jsonl"),
        CorpusFormat::GenericJsonl,
        Split::Test,
    )?;

    describe(&train);
    println!();
    describe(&test);

    // Each problem carries a worked reference solution plus (optionally) an
    // explicit final answer; `reference_answer` prefers the explicit field
    // and otherwise extracts from the worked solution.
    let sample = &test.problems()[0];
    println!("\nfirst test problem `{}`:", sample.id);
    println!("  question:  {}", sample.question);
    println!("  solution:  {}", sample.reference_answer);
    println!("  reference: {:?}", reference_answer(sample)?);

    Ok(())
}
