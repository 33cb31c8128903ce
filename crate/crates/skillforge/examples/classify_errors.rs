//! Classify wrong attempts along three axes with an LLM judge: calculation
//! mistake, wrong main skill, wrong secondary skill.
//!
//! ```sh
//! cargo run -p skillforge --example classify_errors
//! ```
//!
//! Correct attempts short-circuit (they never reach the judge); wrong ones
//! are sent with the question, the voted solution, and the ground truth, and
//! the judge answers three yes/no questions. Per-axis success rates are then
//! aggregated over the determinate records.

use std::path::Path;
use std::sync::Arc;

use skillforge::analysis::{aggregate_rates, classify_errors, AnalysisOptions};
use skillforge::corpus::{Corpus, Problem, Split};
use skillforge::eval::{extract_final_answer, ExtractionConvention};
use skillforge::gateway::{Gateway, MatchMode, ScriptEntry, ScriptMatcher, ScriptedBackend};
use skillforge::prompting::{Attempt, PromptMode};
use skillforge::template::Template;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Corpus::new(
        "analysis-demo",
        Split::Test,
        vec![
            demo_problem("a0", "What is 25 plus 17?", "42"),
            demo_problem("a1", "A box of 84 pears loses 66. How many remain?", "18"),
            demo_problem("a2", "What is 45 divided by 5, remainder included?", "9"),
        ],
    )?;
    let attempts = vec![
        demo_attempt("a0", "25 + 17 = 42. The answer is 42."), // correct: short-circuits
        demo_attempt("a1", "84 - 66 = 28. The answer is 28."), // arithmetic slip
        demo_attempt("a2", "45 / 5 leaves remainder 5. The answer is 5."), // wrong concept
    ];

    // The judge is scripted: one verdict per wrong attempt, matched by the
    // question text inside the judge prompt's query block.
    let script = vec![
        judge_reply(
            "A box of 84 pears loses 66.",
            "A1: yes || 84 - 66 is 18, not 28; the subtraction itself slipped.\n\n\
             A2: no || Subtraction is the right operation for the problem.\n\n\
             A3: no || No secondary concept is involved.",
        ),
        judge_reply(
            "What is 45 divided by 5, remainder included?",
            "A1: no || The division step is carried out correctly.\n\n\
             A2: yes || The question asks for the quotient, but the solution reports a remainder.\n\n\
             A3: no || No secondary concept is involved.",
        ),
    ];
    let gateway = Gateway::builder(Arc::new(ScriptedBackend::new(script)?))
        .no_cache()
        .build()?;
    let template = Template::load(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/templates/error_classifier.txt"),
    )?;

    let records = classify_errors(
        &attempts,
        &corpus,
        &gateway,
        &template,
        &AnalysisOptions::default(),
    )?;

    for record in &records {
        println!("{}:", record.problem_id);
        if record.answer_correct {
            println!("  correct; never sent to the judge");
            continue;
        }
        println!(
            "  calculation={} main_skill={} secondary_skill={}",
            record.flags.calculation, record.flags.main_skill, record.flags.secondary_skill
        );
        for (axis, rationale) in ["A1", "A2", "A3"].iter().zip(&record.rationales) {
            if !rationale.is_empty() {
                println!("    {axis}: {rationale}");
            }
        }
    }

    let rates = aggregate_rates(&records);
    println!(
        "\nsuccess rates over {} determinate records:",
        rates.determinate
    );
    println!(
        "  calculation     {:.3} ({} errors)",
        rates.calculation.success_rate, rates.calculation.errors
    );
    println!(
        "  main skill      {:.3} ({} errors)",
        rates.main_skill.success_rate, rates.main_skill.errors
    );
    println!(
        "  secondary skill {:.3} ({} errors)",
        rates.secondary_skill.success_rate, rates.secondary_skill.errors
    );

    Ok(())
}

fn demo_problem(id: &str, question: &str, final_answer: &str) -> Problem {
    Problem {
        id: id.into(),
        question: question.into(),
        reference_answer: format!("The answer is {final_answer}."),
        final_answer: Some(final_answer.into()),
        topic: None,
    }
}

fn demo_attempt(problem_id: &str, completion: &str) -> Attempt {
    let extracted = extract_final_answer(completion, ExtractionConvention::Auto);
    Attempt {
        problem_id: problem_id.into(),
        strategy: "fixed".into(),
        mode: PromptMode::CotText,
        selected_skill: None,
        completions: vec![completion.into()],
        extracted_answers: vec![extracted.clone()],
        sample_notes: vec![None],
        final_answer: extracted,
        seed: 0,
    }
}

fn judge_reply(question_fragment: &str, verdict: &str) -> ScriptEntry {
    ScriptEntry {
        matcher: ScriptMatcher {
            mode: MatchMode::Contains,
            text: format!("Question: {question_fragment}"),
        },
        responses: vec![verdict.to_string()],
    }
}
