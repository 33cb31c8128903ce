//! Stage 1 of skill discovery: ask a model to name the skill each problem
//! needs, building the fine-grained vocabulary.
//!
//! ```sh
//! cargo run -p skillforge --example label_skills
//! ```
//!
//! The example runs offline: a [`ScriptedBackend`] plays the model, matching
//! each labeling prompt by the question it contains. One reply arrives in
//! the wrong format on purpose — the labeler re-asks with a format reminder
//! and, when that fails too, records a parse failure instead of inventing a
//! skill.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use skillforge::corpus::{Corpus, Problem, Split};
use skillforge::gateway::{Gateway, MatchMode, ScriptEntry, ScriptMatcher, ScriptedBackend};
use skillforge::skills::{label_corpus, LabelOptions};
use skillforge::template::Template;

fn problem(id: &str, question: &str, solution: &str) -> Problem {
    Problem {
        id: id.into(),
        question: question.into(),
        reference_answer: solution.into(),
        final_answer: None,
        topic: None,
    }
}

fn reply(question: &str, response: &str) -> ScriptEntry {
    ScriptEntry {
        matcher: ScriptMatcher {
            mode: MatchMode::Contains,
            // The labeling prompt embeds the question as `question:\n...`.
            text: format!("question:\n{question}"),
        },
        responses: vec![response.to_string()],
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Corpus::new(
        "labeling-demo",
        Split::Train,
        vec![
            problem(
                "d0",
                "A pot holds 3 liters. How many pots fill a 12 liter tub?",
                "12 / 3 = 4. The answer is 4.",
            ),
            problem(
                "d1",
                "Nina buys 4 pens at 2 dollars each. What does she pay?",
                "4 * 2 = 8. The answer is 8.",
            ),
            problem(
                "d2",
                "A rope of 10 meters loses 4 meters. How long is it now?",
                "10 - 4 = 6. The answer is 6.",
            ),
        ],
    )?;

    let script = vec![
        reply("A pot holds 3 liters.", "dividing_whole_numbers, reason: the tub volume is split into equal pots"),
        reply("Nina buys 4 pens", "multiplying_small_numbers, reason: total price is a product"),
        // Never answers in `<skill>, reason: <why>` form, even after the
        // reminder: becomes a recorded failure, not a made-up skill.
        reply("A rope of 10 meters", "I think this one is about subtraction."),
    ];
    let gateway = Gateway::builder(Arc::new(ScriptedBackend::new(script)?))
        .no_cache()
        .build()?;

    let template = Template::load(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/templates/label_skill.txt"),
    )?;

    let outcome = label_corpus(&corpus, &gateway, &template, &LabelOptions::default())?;

    println!("labeled {} / {} problems", outcome.annotations.len(), corpus.len());
    for annotation in &outcome.annotations {
        println!("  {}  ->  {}", annotation.problem_id, annotation.skill.as_str());
        println!("      rationale: {}", annotation.rationale);
    }
    for failure in &outcome.failures {
        println!("  {}  ->  FAILED: {}", failure.problem_id, failure.error);
    }

    // The fine vocabulary is just the multiset of assigned skills.
    let mut vocabulary: BTreeMap<&str, usize> = BTreeMap::new();
    for annotation in &outcome.annotations {
        *vocabulary.entry(annotation.skill.as_str()).or_default() += 1;
    }
    println!("\nfine vocabulary ({} skills):", vocabulary.len());
    for (skill, count) in vocabulary {
        println!("  {skill:<28} x{count}");
    }
    println!("transport calls: {}", gateway.transport_calls());

    Ok(())
}
