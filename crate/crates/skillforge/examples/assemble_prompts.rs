//! Build skill-matched few-shot prompts in both modes: text chain-of-thought
//! and PAL-hybrid (text shots plus one trailing program shot).
//!
//! ```sh
//! cargo run -p skillforge --example assemble_prompts
//! ```
//!
//! Assembly enforces two invariants. Shape: text mode takes text shots only,
//! PAL-hybrid takes exactly one code shot in the final position. Leakage:
//! no shot may repeat the query question — an exemplar that answers the very
//! question being asked would turn evaluation into copying.

use skillforge::corpus::Problem;
use skillforge::prompting::{
    assemble_prompt, select_exemplars, PromptMode, SelectionStrategy, Shot,
};
use skillforge::repository::{BuildOptions, ExemplarRepository, RepoStage};
use skillforge::corpus::{Corpus, Split};
use skillforge::skills::{AnnotationStage, SkillAnnotation, SkillName};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A small single-skill repository to draw exemplars from.
    let skill = SkillName::new("two_step_word_problems")?;
    let problems: Vec<Problem> = (0..6)
        .map(|i| Problem {
            id: format!("w{i}"),
            question: format!(
                "A crate holds {} apples. {} crates arrive and {} apples spoil. How many are left?",
                10 + i,
                i + 2,
                3 + i,
            ),
            reference_answer: format!(
                "{} * {} = {}. {} - {} = {}. The answer is {}.",
                10 + i,
                i + 2,
                (10 + i) * (i + 2),
                (10 + i) * (i + 2),
                3 + i,
                (10 + i) * (i + 2) - (3 + i),
                (10 + i) * (i + 2) - (3 + i),
            ),
            final_answer: Some(((10 + i) * (i + 2) - (3 + i)).to_string()),
            topic: None,
        })
        .collect();
    let corpus = Corpus::new("prompting-demo", Split::Train, problems)?;
    let annotations: Vec<SkillAnnotation> = corpus
        .problems()
        .iter()
        .map(|p| SkillAnnotation {
            problem_id: p.id.clone(),
            skill: skill.clone(),
            rationale: String::new(),
            stage: AnnotationStage::Raw,
        })
        .collect();
    let repo = ExemplarRepository::build(
        &corpus,
        &annotations,
        &BuildOptions {
            stage: RepoStage::PreCluster,
            ..BuildOptions::default()
        },
    )?;

    let query = &corpus.problems()[2];
    println!("query: {}\n", query.question);

    // --- text chain-of-thought, three skill-matched shots -----------------
    let shots = select_exemplars(
        &repo,
        &SelectionStrategy::SkillBased { k: 3 },
        query,
        Some(&skill),
        11,
        &[],
    )?;
    let spec = assemble_prompt(
        Some("Work through each problem step by step."),
        &shots,
        &query.question,
        PromptMode::CotText,
    )?;
    println!("cot_text prompt ({} chat messages):", spec.messages().len());
    for message in spec.messages() {
        let preview: String = message.content.chars().take(64).collect();
        println!("  [{}] {preview}", message.role.as_str());
    }

    // --- PAL-hybrid: same text shots plus one trailing program shot -------
    let mut pal_shots = shots.clone();
    pal_shots.push(Shot::code(
        "A sack holds 50 onions. 8 sacks arrive and 5 onions spoil. How many are left?",
        "```python\nonions = 50 * 8\nprint(onions - 5)\n```",
    ));
    let spec = assemble_prompt(None, &pal_shots, &query.question, PromptMode::PalHybrid)?;
    println!("\npal_hybrid prompt: {} shots, final shot is code:", spec.shots.len());
    println!("{}", spec.shots.last().expect("has shots").answer);

    // --- the leakage guard in action --------------------------------------
    let poisoned = vec![Shot::text(query.question.clone(), "Copied answer.")];
    match assemble_prompt(None, &poisoned, &query.question, PromptMode::CotText) {
        Err(err) => println!("\npoisoned shot rejected: {err}"),
        Ok(_) => unreachable!("leakage must be rejected"),
    }

    Ok(())
}
