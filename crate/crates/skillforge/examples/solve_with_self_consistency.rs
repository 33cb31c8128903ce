//! Solve problems with skill-matched shots and self-consistency: sample
//! several completions per question and majority-vote the extracted answers.
//!
//! ```sh
//! cargo run -p skillforge --example solve_with_self_consistency
//! ```
//!
//! The scripted backend returns five completions for the question below;
//! they disagree (three say 36, one says 35, one never states an answer and
//! abstains), so the vote demonstrates how self-consistency shrugs off
//! individual bad samples.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use skillforge::corpus::{Corpus, Problem, Split};
use skillforge::gateway::{Gateway, MatchMode, ScriptEntry, ScriptMatcher, ScriptedBackend};
use skillforge::prompting::{SelectionStrategy, SkillSelector, SolveOptions, Solver};
use skillforge::repository::{BuildOptions, ExemplarRepository, RepoStage};
use skillforge::skills::{render_demos, AnnotationStage, LabelOptions, SkillAnnotation, SkillName};
use skillforge::template::Template;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Exemplar repository: four worked multiplication problems.
    let skill = SkillName::new("multiplying_small_numbers")?;
    let problems: Vec<Problem> = (2..6)
        .map(|i| Problem {
            id: format!("m{i}"),
            question: format!("What is {i} times {}?", i + 1),
            reference_answer: format!("{i} * {} = {}. The answer is {}.", i + 1, i * (i + 1), i * (i + 1)),
            final_answer: Some((i * (i + 1)).to_string()),
            topic: None,
        })
        .collect();
    let train = Corpus::new("voting-demo", Split::Train, problems)?;
    let annotations: Vec<SkillAnnotation> = train
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
        &train,
        &annotations,
        &BuildOptions {
            stage: RepoStage::PreCluster,
            ..BuildOptions::default()
        },
    )?;

    let query = "A tray holds 6 muffins. How many muffins are on 6 trays?";
    let test = Corpus::new(
        "voting-demo-test",
        Split::Test,
        vec![Problem {
            id: "q0".into(),
            question: query.into(),
            reference_answer: "6 * 6 = 36. The answer is 36.".into(),
            final_answer: Some("36".into()),
            topic: None,
        }],
    )?;

    // Two scripted exchanges: the skill-selection request (matched by the
    // `question: ...` line in the selection prompt) and the solving request
    // (matched by the bare question), which yields five samples.
    let script = vec![
        ScriptEntry {
            matcher: ScriptMatcher {
                mode: MatchMode::Contains,
                text: format!("question: {query}\n"),
            },
            responses: vec![format!("{}, reason: repeated groups", skill.as_str())],
        },
        ScriptEntry {
            matcher: ScriptMatcher {
                mode: MatchMode::Contains,
                text: query.to_string(),
            },
            responses: vec![
                "6 muffins per tray, 6 trays: 6 * 6 = 36. The answer is 36.".into(),
                "Each tray has 6, so 6 + 6 + 6 + 6 + 6 + 6 = 35. The answer is 35.".into(),
                "6 * 6 = 36. The answer is 36.".into(),
                "I would need to know the tray size to answer this.".into(),
                "Six sixes are 36. The answer is 36.".into(),
            ],
        },
    ];
    let gateway = Gateway::builder(Arc::new(ScriptedBackend::new(script)?))
        .no_cache()
        .build()?;

    let select_template = Template::load(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/templates/select_skill.txt"),
    )?;
    let demos: BTreeMap<SkillName, String> = [(skill.clone(), train.problems()[0].question.clone())]
        .into_iter()
        .collect();

    let solver = Solver::new(
        &repo,
        &gateway,
        SolveOptions {
            temperature: 0.7,
            n_samples: 5,
            strategy: SelectionStrategy::SkillBased { k: 2 },
            header: Some("Solve the problem step by step.".into()),
            seed: 17,
            ..SolveOptions::default()
        },
    )
    .with_selector(SkillSelector {
        template: &select_template,
        demos: render_demos(&demos),
        options: LabelOptions::default(),
    });

    let attempt = solver.solve_problem(&test.problems()[0])?;

    println!("question: {query}");
    println!(
        "selected skill: {}",
        attempt.selected_skill.as_ref().map(|s| s.as_str()).unwrap_or("-")
    );
    println!("\nsamples and extracted answers:");
    for (completion, answer) in attempt.completions.iter().zip(&attempt.extracted_answers) {
        let preview: String = completion.chars().take(56).collect();
        let extracted = if answer.is_none() { "(abstains)".to_string() } else { format!("{answer:?}") };
        println!("  {preview:<58} -> {extracted}");
    }
    println!("\nmajority vote: {:?}", attempt.final_answer);

    Ok(())
}
