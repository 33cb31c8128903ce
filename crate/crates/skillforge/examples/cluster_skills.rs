//! Stage 2 of skill discovery: collapse the fine-grained vocabulary into
//! semantic clusters, then repair the model's reply into an exact partition.
//!
//! ```sh
//! cargo run -p skillforge --example cluster_skills
//! ```
//!
//! Model replies are never trusted as-is. The scripted reply below misspells
//! one skill, invents one that was never in the vocabulary, and forgets
//! another entirely; repair resolves the misspelling, drops the invention,
//! and gives the forgotten skill its own singleton cluster — so the result
//! is always an exact partition of the input vocabulary.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use skillforge::gateway::{Gateway, MatchMode, ScriptEntry, ScriptMatcher, ScriptedBackend};
use skillforge::skills::{cluster_skills, ClusterOptions, SkillName};
use skillforge::template::Template;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fine: BTreeSet<SkillName> = [
        "adding_two_digit_numbers",
        "adding_three_numbers",
        "subtracting_two_digit_numbers",
        "multiplying_one_digit_numbers",
        "multiplying_by_tens",
        "dividing_evenly",
    ]
    .into_iter()
    .map(|s| SkillName::new(s).map_err(Into::into))
    .collect::<Result<_, Box<dyn std::error::Error>>>()?;

    // One scripted exchange answers the clustering prompt. Note the three
    // defects: `subtracting_two_digit_numbrs` (typo), `estimating_sums`
    // (never in the vocabulary), and `dividing_evenly` (omitted).
    let reply = "\
Grouping similar skills into categories.

1. addition_skills: adding_two_digit_numbers, adding_three_numbers, estimating_sums
2. subtraction_skills: subtracting_two_digit_numbrs
3. multiplication_skills: multiplying_one_digit_numbers, multiplying_by_tens";
    let script = vec![ScriptEntry {
        matcher: ScriptMatcher {
            mode: MatchMode::Contains,
            text: "Reduce the number of unique skills".into(),
        },
        responses: vec![reply.to_string()],
    }];
    let gateway = Gateway::builder(Arc::new(ScriptedBackend::new(script)?))
        .no_cache()
        .build()?;
    let template = Template::load(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/templates/cluster_skills.txt"),
    )?;

    let (map, coverage) = cluster_skills(&fine, &gateway, &template, &ClusterOptions::default())?;

    println!("{} fine skills -> {} clusters\n", fine.len(), map.clusters().len());
    for (coarse, members) in map.clusters() {
        println!("{}:", coarse.as_str());
        for member in members {
            println!("  - {}", member.as_str());
        }
    }

    println!("\nrepair log:");
    println!("  covered by the reply itself: {}", coverage.covered_by_response);
    for (drifted, resolved) in &coverage.alias_resolutions {
        println!("  alias resolved: {drifted} -> {}", resolved.as_str());
    }
    for unknown in &coverage.dropped_unknown {
        println!("  dropped (not in the vocabulary): {unknown}");
    }
    for omitted in &coverage.omitted_singletons {
        println!("  omitted, kept as singleton: {}", omitted.as_str());
    }

    assert!(map.is_partition_of(&fine), "repair always yields a partition");
    println!("\npartition check: every fine skill in exactly one cluster");

    Ok(())
}
