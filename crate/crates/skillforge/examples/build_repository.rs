//! Stage 3 of skill discovery plus the exemplar repository: relabel the
//! training corpus against the clustered vocabulary, file each problem under
//! its cluster skill, then draw seeded exemplar samples.
//!
//! ```sh
//! cargo run -p skillforge --example build_repository
//! ```
//!
//! Relabeling is a closed-vocabulary choice: the model picks one cluster
//! skill per problem. Off-list replies fall through normalization, substring
//! and fuzzy matching; anything still unresolved is filed as `__unmatched__`
//! and the repository excludes it (a few-shot exemplar with a wrong skill is
//! worse than one exemplar fewer).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use skillforge::corpus::{Corpus, Problem, Split};
use skillforge::gateway::{Gateway, MatchMode, ScriptEntry, ScriptMatcher, ScriptedBackend};
use skillforge::repository::{BuildOptions, ExemplarRepository};
use skillforge::skills::{relabel_corpus, RelabelOptions, SkillName};
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
            // The selection prompt renders the query as `question: ...` on
            // its own line; demo paragraphs continue with ` skill:` instead,
            // so the trailing newline keeps them from matching.
            text: format!("question: {question}\n"),
        },
        responses: vec![response.to_string()],
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let questions = [
        "Tom has 23 marbles and finds 18 more. How many now?",
        "A box holds 6 rows of 4 eggs. How many eggs?",
        "Lena had 52 cards and gave away 17. How many left?",
        "Three friends share 27 cherries evenly. How many each?",
        "A shelf has 35 books, 12 are removed. How many remain?",
        "What is 14 plus 29?",
    ];
    let solutions = [
        "23 + 18 = 41. The answer is 41.",
        "6 * 4 = 24. The answer is 24.",
        "52 - 17 = 35. The answer is 35.",
        "27 / 3 = 9. The answer is 9.",
        "35 - 12 = 23. The answer is 23.",
        "14 + 29 = 43. The answer is 43.",
    ];
    let problems = questions
        .iter()
        .zip(solutions)
        .enumerate()
        .map(|(i, (q, s))| problem(&format!("r{i}"), q, s))
        .collect();
    let corpus = Corpus::new("repository-demo", Split::Train, problems)?;

    let coarse: BTreeSet<SkillName> = ["addition_skills", "subtraction_skills", "multiplication_skills"]
        .into_iter()
        .map(|s| SkillName::new(s).expect("valid skill name"))
        .collect();
    let demos: BTreeMap<SkillName, String> = coarse
        .iter()
        .zip([
            "What is 2 plus 3?",
            "A box holds 2 rows of 3 pencils. How many pencils?",
            "What is 9 minus 4?",
        ])
        .map(|(skill, q)| (skill.clone(), q.to_string()))
        .collect();

    // Replies exercise the resolution ladder: exact names, a spaced alias,
    // a fuzzy misspelling, and one answer that fits no cluster at all.
    let script = vec![
        reply(questions[0], "addition_skills, reason: joining two quantities"),
        reply(questions[1], "multiplication_skills, reason: rows times columns"),
        reply(questions[2], "Subtraction Skills, reason: taking away"),
        reply(questions[3], "estimating_area_of_shapes, reason: sharing evenly"),
        reply(questions[4], "subtraction_skills, reason: removal"),
        reply(questions[5], "addition_skils, reason: plain addition"),
    ];
    let gateway = Gateway::builder(Arc::new(ScriptedBackend::new(script)?))
        .no_cache()
        .build()?;
    let template = Template::load(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/templates/select_skill.txt"),
    )?;

    let outcome = relabel_corpus(
        &corpus,
        &coarse,
        &demos,
        &gateway,
        &template,
        &RelabelOptions::default(),
    )?;

    println!("relabeled {} problems:", outcome.annotations.len());
    for annotation in &outcome.annotations {
        println!("  {}  ->  {}", annotation.problem_id, annotation.skill.as_str());
    }
    println!("\noff-list replies and how they resolved:");
    for event in &outcome.fallbacks {
        println!(
            "  {}: `{}` -> {} ({})",
            event.problem_id,
            event.raw_skill,
            event.resolved.as_str(),
            event
                .method
                .map(|m| format!("{m:?}"))
                .unwrap_or_else(|| "no match within distance".into()),
        );
    }

    // File everything under its cluster skill. `__unmatched__` problems are
    // counted but never become exemplars.
    let repo = ExemplarRepository::build(&corpus, &outcome.annotations, &BuildOptions::default())?;
    let meta = repo.metadata();
    println!(
        "\nrepository: {} exemplars across {} skills ({} unmatched excluded)",
        meta.total_records, meta.skill_count, meta.excluded_unmatched
    );

    // Seeded sampling: the same seed always reproduces the same draw.
    let addition = SkillName::new("addition_skills").expect("valid skill name");
    for seed in [7, 7, 8] {
        let sample = repo.sample_exemplars(&addition, 2, seed, None)?;
        let ids: Vec<&str> = sample.iter().map(|r| r.problem_id.as_str()).collect();
        println!("  sample(skill=addition_skills, k=2, seed={seed}) -> {ids:?}");
    }

    Ok(())
}
