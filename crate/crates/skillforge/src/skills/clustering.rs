//! Semantic clustering of the fine-grained skill vocabulary.
//!
//! The model is shown the list of fine skill names and asked to group them
//! into named categories. Model responses are messy in practice — drifted
//! spellings, inconsistent numbering, omitted names — so parsing is tolerant
//! and a repair pass restores the partition invariant: every fine skill ends
//! up in exactly one cluster.

use std::collections::{BTreeMap, BTreeSet};

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, CompletionRequest, Gateway};
use crate::template::Template;

use super::labeling::resolve_skill;
use super::{normalize_skill_name, SkillName, SkillsError};

/// One cluster as stated by the model, in response order, before repair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCluster {
    pub coarse: SkillName,
    pub fines: Vec<SkillName>,
}

/// Parses a clustering response. Accepted line shapes (all seen in the
/// wild):
///
/// ```text
/// 1. coarse_name: fine_a, fine_b
/// 2.coarse_name: fine_a
/// 5: coarse_name: fine_a, fine_b
/// - coarse_name: fine_a
/// coarse_name: fine_a, fine_b
/// ```
///
/// Blank lines and lines without a `name: members` shape are ignored; an
/// entirely unusable response is an error.
pub fn parse_cluster_response(text: &str) -> Result<Vec<RawCluster>, SkillsError> {
    static ENUMERATION: Lazy<Regex> =
        Lazy::new(|| Regex::new(r"^\s*\d+\s*[.):\-]*\s*").expect("valid regex"));
    static BULLET: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*[-*]\s*").expect("valid regex"));

    let mut clusters = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rest = ENUMERATION.replace(line, "");
        let rest = BULLET.replace(&rest, "");
        let Some((head, tail)) = rest.split_once(':') else {
            continue;
        };
        let Ok(coarse) = normalize_skill_name(head) else {
            continue;
        };
        let fines: Vec<SkillName> = tail
            .split(',')
            .filter_map(|s| normalize_skill_name(s).ok())
            .collect();
        if fines.is_empty() {
            continue;
        }
        clusters.push(RawCluster { coarse, fines });
    }
    if clusters.is_empty() {
        let preview: String = text.chars().take(200).collect();
        return Err(SkillsError::ClusterParse(format!(
            "no `name: members` lines found in {preview:?}"
        )));
    }
    Ok(clusters)
}

/// What the repair pass did to make the response a partition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Size of the input vocabulary.
    pub total_fine: usize,
    /// Fine skills placed by the response itself (after alias resolution).
    pub covered_by_response: usize,
    /// Fine skills the response never mentioned; each became its own
    /// singleton cluster.
    pub omitted_singletons: Vec<SkillName>,
    /// Drifted spellings resolved back to a real fine skill.
    pub alias_resolutions: Vec<(String, SkillName)>,
    /// Response names that matched nothing within the distance ceiling.
    pub dropped_unknown: Vec<String>,
    /// Fine skills listed under several clusters; the first assignment wins.
    pub duplicate_assignments: Vec<DuplicateAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateAssignment {
    pub fine: SkillName,
    pub kept: SkillName,
    pub dropped: SkillName,
}

impl CoverageReport {
    fn absorb(&mut self, other: CoverageReport) {
        self.omitted_singletons.extend(other.omitted_singletons);
        self.alias_resolutions.extend(other.alias_resolutions);
        self.dropped_unknown.extend(other.dropped_unknown);
        self.duplicate_assignments.extend(other.duplicate_assignments);
    }
}

/// A partition of the fine skill vocabulary into named clusters.
///
/// Invariants (checked on construction and on load): no empty clusters, and
/// every fine skill appears in exactly one cluster — which also caps the
/// cluster count at the fine-skill count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterMap {
    /// Label for the slice of the corpus this map covers (a topic name), if
    /// clustering ran per topic.
    pub scope: Option<String>,
    clusters: BTreeMap<SkillName, BTreeSet<SkillName>>,
}

impl ClusterMap {
    pub fn from_parts(
        scope: Option<String>,
        clusters: BTreeMap<SkillName, BTreeSet<SkillName>>,
    ) -> Result<Self, SkillsError> {
        let mut seen: BTreeMap<&SkillName, &SkillName> = BTreeMap::new();
        for (coarse, fines) in &clusters {
            if fines.is_empty() {
                return Err(SkillsError::NotAPartition(format!(
                    "cluster `{coarse}` is empty"
                )));
            }
            for fine in fines {
                if let Some(other) = seen.insert(fine, coarse) {
                    return Err(SkillsError::NotAPartition(format!(
                        "fine skill `{fine}` appears in both `{other}` and `{coarse}`"
                    )));
                }
            }
        }
        Ok(ClusterMap { scope, clusters })
    }

    pub fn clusters(&self) -> &BTreeMap<SkillName, BTreeSet<SkillName>> {
        &self.clusters
    }

    pub fn coarse_skills(&self) -> BTreeSet<SkillName> {
        self.clusters.keys().cloned().collect()
    }

    pub fn fine_skills(&self) -> BTreeSet<SkillName> {
        self.clusters.values().flatten().cloned().collect()
    }

    /// The cluster a fine skill belongs to.
    pub fn cluster_of(&self, fine: &SkillName) -> Option<&SkillName> {
        self.clusters
            .iter()
            .find(|(_, fines)| fines.contains(fine))
            .map(|(coarse, _)| coarse)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Checks this map is exactly a partition of `fine_skills`.
    pub fn is_partition_of(&self, fine_skills: &BTreeSet<SkillName>) -> bool {
        let mut seen = BTreeSet::new();
        for fines in self.clusters.values() {
            for fine in fines {
                if !fine_skills.contains(fine) || !seen.insert(fine) {
                    return false;
                }
            }
        }
        seen.len() == fine_skills.len()
    }

    /// Unions per-scope maps into one global map. If the same fine skill was
    /// clustered in several scopes, the first (in input order) wins and the
    /// conflict is reported.
    pub fn union_first_wins(maps: Vec<ClusterMap>) -> (ClusterMap, Vec<DuplicateAssignment>) {
        let mut assigned: BTreeMap<SkillName, SkillName> = BTreeMap::new();
        let mut conflicts = Vec::new();
        for map in &maps {
            for (coarse, fines) in &map.clusters {
                for fine in fines {
                    match assigned.get(fine) {
                        Some(kept) if kept != coarse => conflicts.push(DuplicateAssignment {
                            fine: fine.clone(),
                            kept: kept.clone(),
                            dropped: coarse.clone(),
                        }),
                        Some(_) => {}
                        None => {
                            assigned.insert(fine.clone(), coarse.clone());
                        }
                    }
                }
            }
        }
        let mut clusters: BTreeMap<SkillName, BTreeSet<SkillName>> = BTreeMap::new();
        for (fine, coarse) in assigned {
            clusters.entry(coarse).or_default().insert(fine);
        }
        let map = ClusterMap::from_parts(None, clusters).expect("first-wins union is a partition");
        (map, conflicts)
    }
}

impl<'de> Deserialize<'de> for ClusterMap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            scope: Option<String>,
            clusters: BTreeMap<SkillName, BTreeSet<SkillName>>,
        }
        let wire = Wire::deserialize(deserializer)?;
        ClusterMap::from_parts(wire.scope, wire.clusters).map_err(serde::de::Error::custom)
    }
}

/// Turns a parsed response into a valid [`ClusterMap`] over exactly
/// `fine_skills`:
///
/// - names within `max_distance` of a real fine skill are resolved to it;
/// - unknown names are dropped;
/// - fine skills listed twice keep their first cluster;
/// - fine skills never mentioned become singleton clusters named after
///   themselves.
pub fn repair_clusters(
    raw: &[RawCluster],
    fine_skills: &BTreeSet<SkillName>,
    max_distance: f64,
) -> (ClusterMap, CoverageReport) {
    let mut coverage = CoverageReport {
        total_fine: fine_skills.len(),
        ..CoverageReport::default()
    };
    let mut assignment: BTreeMap<SkillName, SkillName> = BTreeMap::new();

    for cluster in raw {
        for fine in &cluster.fines {
            let resolved = if fine_skills.contains(fine) {
                Some(fine.clone())
            } else {
                match resolve_skill(fine.as_str(), fine_skills, Some(max_distance)) {
                    Some(r) => {
                        coverage
                            .alias_resolutions
                            .push((fine.as_str().to_string(), r.skill.clone()));
                        Some(r.skill)
                    }
                    None => {
                        coverage.dropped_unknown.push(fine.as_str().to_string());
                        None
                    }
                }
            };
            let Some(fine) = resolved else { continue };
            match assignment.get(&fine) {
                Some(kept) if kept != &cluster.coarse => {
                    coverage.duplicate_assignments.push(DuplicateAssignment {
                        fine: fine.clone(),
                        kept: kept.clone(),
                        dropped: cluster.coarse.clone(),
                    });
                }
                Some(_) => {}
                None => {
                    assignment.insert(fine, cluster.coarse.clone());
                }
            }
        }
    }

    coverage.covered_by_response = assignment.len();
    for fine in fine_skills {
        if !assignment.contains_key(fine) {
            coverage.omitted_singletons.push(fine.clone());
            assignment.insert(fine.clone(), fine.clone());
        }
    }

    let mut clusters: BTreeMap<SkillName, BTreeSet<SkillName>> = BTreeMap::new();
    for (fine, coarse) in assignment {
        clusters.entry(coarse).or_default().insert(fine);
    }
    let map = ClusterMap::from_parts(None, clusters).expect("repair yields a partition");
    (map, coverage)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterChunking {
    /// Maximum fine skills per clustering request. Vocabularies larger than
    /// this are split into batches, clustered per batch, and the batch-level
    /// category names are merged in one final round.
    pub batch_size: usize,
}

impl Default for ClusterChunking {
    fn default() -> Self {
        ClusterChunking { batch_size: 400 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub chunking: ClusterChunking,
    /// Fuzzy-resolution ceiling used during repair.
    pub max_distance: f64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            model: "annotator".into(),
            temperature: 0.0,
            max_output_tokens: 4096,
            chunking: ClusterChunking::default(),
            max_distance: 0.35,
        }
    }
}

fn cluster_once(
    fine_skills: &BTreeSet<SkillName>,
    gateway: &Gateway,
    template: &Template,
    opts: &ClusterOptions,
) -> Result<(ClusterMap, CoverageReport), SkillsError> {
    let list = fine_skills
        .iter()
        .map(|s| s.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let prompt = template.render(&[("skills", &list)]);
    let request = CompletionRequest {
        model: opts.model.clone(),
        messages: vec![ChatMessage::user(prompt)],
        temperature: opts.temperature,
        max_output_tokens: opts.max_output_tokens,
        n_samples: 1,
    };
    let response = gateway.complete(&request)?;
    let text = response.samples.into_iter().next().unwrap_or_default();
    let raw = parse_cluster_response(&text)?;
    Ok(repair_clusters(&raw, fine_skills, opts.max_distance))
}

/// Clusters the fine vocabulary, batching when it exceeds the chunk size.
///
/// For an oversized vocabulary: the sorted names are cut into batches, each
/// batch is clustered independently, and one merge round clusters the union
/// of batch-level category names. Fine skills then map through their batch
/// category into the merged category. Coverage notes from every round are
/// combined.
pub fn cluster_skills(
    fine_skills: &BTreeSet<SkillName>,
    gateway: &Gateway,
    template: &Template,
    opts: &ClusterOptions,
) -> Result<(ClusterMap, CoverageReport), SkillsError> {
    template.require(&["skills"])?;
    if fine_skills.is_empty() {
        return Err(SkillsError::NoSkills);
    }
    if fine_skills.len() <= opts.chunking.batch_size {
        return cluster_once(fine_skills, gateway, template, opts);
    }

    let sorted: Vec<&SkillName> = fine_skills.iter().collect();
    let mut batch_maps = Vec::new();
    let mut coverage = CoverageReport {
        total_fine: fine_skills.len(),
        ..CoverageReport::default()
    };
    for chunk in sorted.chunks(opts.chunking.batch_size) {
        let subset: BTreeSet<SkillName> = chunk.iter().map(|s| (*s).clone()).collect();
        let (map, partial) = cluster_once(&subset, gateway, template, opts)?;
        coverage.covered_by_response += partial.covered_by_response;
        coverage.absorb(partial);
        batch_maps.push(map);
    }

    // One merge round over the union of batch-level category names.
    let batch_coarse: BTreeSet<SkillName> = batch_maps
        .iter()
        .flat_map(|m| m.coarse_skills())
        .collect();
    let (merged, merge_coverage) = cluster_once(&batch_coarse, gateway, template, opts)?;
    coverage.absorb(merge_coverage);

    let mut clusters: BTreeMap<SkillName, BTreeSet<SkillName>> = BTreeMap::new();
    for map in &batch_maps {
        for (coarse, fines) in map.clusters() {
            let merged_coarse = merged
                .cluster_of(coarse)
                .cloned()
                // Repair guarantees every batch category is assigned, but be
                // defensive rather than panic on a future refactor.
                .unwrap_or_else(|| coarse.clone());
            clusters
                .entry(merged_coarse)
                .or_default()
                .extend(fines.iter().cloned());
        }
    }
    let map = ClusterMap::from_parts(None, clusters)?;
    (map.is_partition_of(fine_skills))
        .then_some(())
        .ok_or_else(|| SkillsError::NotAPartition("merged map lost fine skills".into()))?;
    Ok((map, coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MatchMode, ScriptEntry, ScriptMatcher, ScriptedBackend};
    use std::sync::Arc;

    fn names(list: &[&str]) -> BTreeSet<SkillName> {
        list.iter().map(|n| SkillName::new(n).unwrap()).collect()
    }

    /// The clustering response shape this parser has to survive, including
    /// a missing space after the enumerator, a colon in place of the dot,
    /// and a drifted member spelling.
    const MESSY_RESPONSE: &str = "1. basic_arithmetic_operations: addition, subtraction, multiplication\n\n2.fractions_and_percentages: addition_of_fractions, understanding_fraction_and_inqualities, percentages\n\n3. average_and_proportion: average_calculation, proportion_calculation\n\n4. order_of_operations: order_of_operations\n\n5: combinatorics_and_counting: counting, permutations_combinations\n";

    fn messy_input() -> BTreeSet<SkillName> {
        names(&[
            "average_calculation",
            "proportion_calculation",
            "percentages",
            "order_of_operations",
            "subtraction",
            "addition",
            "multiplication",
            "addition_of_fractions",
            "permutations_combinations",
            "counting",
            "understanding_fractions_and_inequalities",
        ])
    }

    #[test]
    fn parses_the_messy_numbered_response() {
        let raw = parse_cluster_response(MESSY_RESPONSE).unwrap();
        assert_eq!(raw.len(), 5);
        assert_eq!(raw[0].coarse.as_str(), "basic_arithmetic_operations");
        assert_eq!(raw[1].coarse.as_str(), "fractions_and_percentages");
        assert_eq!(raw[4].coarse.as_str(), "combinatorics_and_counting");
        assert_eq!(raw[4].fines.len(), 2);
    }

    #[test]
    fn repair_restores_the_partition_over_eleven_skills() {
        let fine = messy_input();
        let raw = parse_cluster_response(MESSY_RESPONSE).unwrap();
        let (map, coverage) = repair_clusters(&raw, &fine, 0.35);

        assert_eq!(map.len(), 5);
        assert!(map.is_partition_of(&fine));
        // The drifted spelling resolved back to the real name.
        assert_eq!(coverage.alias_resolutions.len(), 1);
        assert_eq!(
            coverage.alias_resolutions[0].0,
            "understanding_fraction_and_inqualities"
        );
        assert_eq!(
            map.cluster_of(&SkillName::new("understanding_fractions_and_inequalities").unwrap())
                .unwrap()
                .as_str(),
            "fractions_and_percentages"
        );
        assert!(coverage.omitted_singletons.is_empty());
        assert!(coverage.dropped_unknown.is_empty());
        assert_eq!(coverage.covered_by_response, 11);
    }

    #[test]
    fn omitted_fines_become_singletons_and_duplicates_keep_first() {
        let fine = names(&["alpha", "beta", "gamma", "delta"]);
        let raw = parse_cluster_response(
            "1. group_one: alpha, beta\n2. group_two: beta, totally_unknown_name\n",
        )
        .unwrap();
        let (map, coverage) = repair_clusters(&raw, &fine, 0.35);
        assert!(map.is_partition_of(&fine));
        // beta stayed in group_one.
        assert_eq!(
            map.cluster_of(&SkillName::new("beta").unwrap()).unwrap().as_str(),
            "group_one"
        );
        assert_eq!(coverage.duplicate_assignments.len(), 1);
        assert_eq!(coverage.duplicate_assignments[0].fine.as_str(), "beta");
        // gamma and delta were never mentioned.
        let singles: Vec<&str> = coverage
            .omitted_singletons
            .iter()
            .map(|s| s.as_str())
            .collect();
        assert_eq!(singles, vec!["delta", "gamma"]);
        assert!(map.clusters().contains_key(&SkillName::new("gamma").unwrap()));
        assert_eq!(coverage.dropped_unknown, vec!["totally_unknown_name"]);
        // group_two ended up empty after repairs and was dropped.
        assert!(!map.clusters().contains_key(&SkillName::new("group_two").unwrap()));
    }

    #[test]
    fn unusable_response_is_an_error() {
        assert!(parse_cluster_response("I could not group these, sorry.").is_err());
        assert!(parse_cluster_response("").is_err());
    }

    #[test]
    fn cluster_map_rejects_double_assignment() {
        let mut clusters: BTreeMap<SkillName, BTreeSet<SkillName>> = BTreeMap::new();
        clusters.insert(SkillName::new("a").unwrap(), names(&["x", "y"]));
        clusters.insert(SkillName::new("b").unwrap(), names(&["y"]));
        assert!(matches!(
            ClusterMap::from_parts(None, clusters),
            Err(SkillsError::NotAPartition(_))
        ));
    }

    #[test]
    fn cluster_map_serde_round_trips_and_validates() {
        let fine = messy_input();
        let raw = parse_cluster_response(MESSY_RESPONSE).unwrap();
        let (map, _) = repair_clusters(&raw, &fine, 0.35);
        let json = serde_json::to_string_pretty(&map).unwrap();
        let back: ClusterMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, map);

        let bad = r#"{"scope":null,"clusters":{"a":["x"],"b":["x"]}}"#;
        assert!(serde_json::from_str::<ClusterMap>(bad).is_err());
    }

    #[test]
    fn union_first_wins_reports_conflicts() {
        let mut c1: BTreeMap<SkillName, BTreeSet<SkillName>> = BTreeMap::new();
        c1.insert(SkillName::new("arith").unwrap(), names(&["addition"]));
        let mut c2: BTreeMap<SkillName, BTreeSet<SkillName>> = BTreeMap::new();
        c2.insert(SkillName::new("basics").unwrap(), names(&["addition", "counting"]));
        let m1 = ClusterMap::from_parts(Some("t1".into()), c1).unwrap();
        let m2 = ClusterMap::from_parts(Some("t2".into()), c2).unwrap();
        let (union, conflicts) = ClusterMap::union_first_wins(vec![m1, m2]);
        assert_eq!(conflicts.len(), 1);
        assert_eq!(conflicts[0].fine.as_str(), "addition");
        assert_eq!(
            union.cluster_of(&SkillName::new("addition").unwrap()).unwrap().as_str(),
            "arith"
        );
        assert_eq!(
            union.cluster_of(&SkillName::new("counting").unwrap()).unwrap().as_str(),
            "basics"
        );
    }

    #[test]
    fn end_to_end_cluster_call_with_scripted_backend() {
        let backend = ScriptedBackend::new(vec![ScriptEntry {
            matcher: ScriptMatcher {
                mode: MatchMode::Contains,
                text: "Reduce the number of unique skills".into(),
            },
            responses: vec![MESSY_RESPONSE.to_string()],
        }])
        .unwrap();
        let gateway = Gateway::builder(Arc::new(backend)).build().unwrap();
        let template = Template::new(
            "Here is a list of skills required to solve a mathematical question:\n\n[{skills}]\n\nReduce the number of unique skills by grouping similar skills into categories and give a descriptive name to each category.",
        );
        let (map, coverage) = cluster_skills(
            &messy_input(),
            &gateway,
            &template,
            &ClusterOptions::default(),
        )
        .unwrap();
        assert_eq!(map.len(), 5);
        assert!(map.is_partition_of(&messy_input()));
        assert_eq!(coverage.total_fine, 11);
    }

    /// Oversized vocabularies go through batch + merge rounds.
    #[test]
    fn chunked_clustering_merges_batch_categories() {
        // 6 skills with batch size 4 -> two batches, then a merge round.
        let fine = names(&[
            "add_a", "add_b", "add_c", "mul_a", "mul_b", "mul_c",
        ]);
        let backend = ScriptedBackend::new(vec![
            // Batch 1 is the first four sorted names.
            ScriptEntry {
                matcher: ScriptMatcher {
                    mode: MatchMode::Contains,
                    text: "[add_a, add_b, add_c, mul_a]".into(),
                },
                responses: vec![
                    "1. addition_group: add_a, add_b, add_c\n2. multiplication_group: mul_a".into(),
                ],
            },
            // Batch 2 is the remaining two.
            ScriptEntry {
                matcher: ScriptMatcher {
                    mode: MatchMode::Contains,
                    text: "[mul_b, mul_c]".into(),
                },
                responses: vec!["1. product_group: mul_b, mul_c".into()],
            },
            // Merge round sees the three batch categories.
            ScriptEntry {
                matcher: ScriptMatcher {
                    mode: MatchMode::Contains,
                    text: "[addition_group, multiplication_group, product_group]".into(),
                },
                responses: vec![
                    "1. additive: addition_group\n2. multiplicative: multiplication_group, product_group"
                        .into(),
                ],
            },
        ])
        .unwrap();
        let gateway = Gateway::builder(Arc::new(backend)).build().unwrap();
        let template = Template::new("skills: [{skills}]\nReduce the number of unique skills.");
        let opts = ClusterOptions {
            chunking: ClusterChunking { batch_size: 4 },
            ..ClusterOptions::default()
        };
        let (map, _) = cluster_skills(&fine, &gateway, &template, &opts).unwrap();
        assert!(map.is_partition_of(&fine));
        assert_eq!(map.len(), 2);
        let additive = map
            .clusters()
            .get(&SkillName::new("additive").unwrap())
            .unwrap();
        assert_eq!(additive.len(), 3);
        let multiplicative = map
            .clusters()
            .get(&SkillName::new("multiplicative").unwrap())
            .unwrap();
        assert_eq!(multiplicative.len(), 3);
    }
}
