//! Skill names, annotations, and the three-stage discovery pipeline:
//! per-problem labeling, semantic clustering of the label vocabulary, and
//! corpus relabeling against the clustered vocabulary.

mod clustering;
pub(crate) mod labeling;

pub use clustering::{
    cluster_skills, parse_cluster_response, repair_clusters, ClusterChunking, ClusterMap,
    ClusterOptions, CoverageReport, DuplicateAssignment, RawCluster,
};
pub use labeling::{
    label_corpus, parse_label_response, relabel_corpus, render_demos, resolve_skill,
    FallbackEvent, LabelFailure, LabelOptions, LabelOutcome, RelabelOptions, RelabelOutcome,
    ResolutionMethod, SkillResolution,
};

use std::fmt;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::template::TemplateError;

/// Reserved name for problems whose relabel response could not be resolved
/// to any cluster skill. Deliberately outside the valid-name grammar so it
/// can never collide with a real skill.
pub const UNMATCHED_SKILL: &str = "__unmatched__";

static SKILL_NAME: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^[a-z0-9]+(_[a-z0-9]+)*$").expect("valid regex"));

#[derive(Debug, Error)]
pub enum SkillsError {
    #[error("invalid skill name `{0}`: must be lowercase words joined by single underscores")]
    InvalidName(String),
    #[error("`{0}` normalizes to an empty skill name")]
    EmptyName(String),
    #[error("cannot parse label response: {0}")]
    LabelParse(String),
    #[error("cannot parse cluster response: {0}")]
    ClusterParse(String),
    #[error("no skills to cluster")]
    NoSkills,
    #[error("not a partition: {0}")]
    NotAPartition(String),
    #[error("no demo example for skill `{0}`")]
    MissingDemo(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A validated skill name: lowercase ASCII words joined by single
/// underscores (`prime_factorization`, `3d_geometry`). The only exception is
/// the reserved [`UNMATCHED_SKILL`] sentinel, constructed via
/// [`SkillName::unmatched`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SkillName(String);

impl SkillName {
    /// Accepts an already-canonical name; rejects anything else.
    pub fn new(raw: &str) -> Result<Self, SkillsError> {
        if SKILL_NAME.is_match(raw) {
            Ok(SkillName(raw.to_string()))
        } else {
            Err(SkillsError::InvalidName(raw.to_string()))
        }
    }

    /// Canonicalizes free-form text into a skill name; see
    /// [`normalize_skill_name`].
    pub fn normalized(raw: &str) -> Result<Self, SkillsError> {
        normalize_skill_name(raw)
    }

    pub fn unmatched() -> Self {
        SkillName(UNMATCHED_SKILL.to_string())
    }

    pub fn is_unmatched(&self) -> bool {
        self.0 == UNMATCHED_SKILL
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SkillName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for SkillName {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for SkillName {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        if raw == UNMATCHED_SKILL {
            return Ok(SkillName::unmatched());
        }
        SkillName::new(&raw).map_err(serde::de::Error::custom)
    }
}

/// Lowercases, maps every run of non-alphanumeric characters to a single
/// underscore, and trims leading/trailing underscores. Idempotent on its own
/// output; errors when nothing survives.
pub fn normalize_skill_name(raw: &str) -> Result<SkillName, SkillsError> {
    let mut out = String::with_capacity(raw.len());
    for c in raw.to_lowercase().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.is_empty() && !out.ends_with('_') {
            out.push('_');
        }
    }
    let trimmed = out.trim_matches('_');
    if trimmed.is_empty() {
        return Err(SkillsError::EmptyName(raw.to_string()));
    }
    SkillName::new(trimmed)
}

/// Classic dynamic-programming Levenshtein distance over characters.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut current = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            current[j + 1] = substitution.min(prev[j + 1] + 1).min(current[j] + 1);
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

/// Levenshtein distance normalized by the longer string's length, in
/// `[0, 1]`. Two empty strings are at distance 0.
pub fn normalized_distance(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / longest as f64
}

/// Which pipeline stage produced an annotation: `raw` names come straight
/// from per-problem labeling, `clustered` names come from relabeling against
/// the clustered vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationStage {
    Raw,
    Clustered,
}

/// One problem's skill label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillAnnotation {
    pub problem_id: String,
    pub skill: SkillName,
    /// The model's stated reason. Non-empty for `raw` annotations; may be
    /// empty for `clustered` ones resolved purely by the fallback chain.
    pub rationale: String,
    pub stage: AnnotationStage,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_names_pass() {
        for name in [
            "addition",
            "multi_step_problem_solving",
            "3d_geometry_and_volume_calculation_skills",
            "a1_b2",
        ] {
            assert!(SkillName::new(name).is_ok(), "{name}");
        }
    }

    #[test]
    fn invalid_names_fail() {
        for name in [
            "",
            "Addition",
            "two words",
            "_leading",
            "trailing_",
            "double__underscore",
            "hyphen-ated",
            UNMATCHED_SKILL,
        ] {
            assert!(SkillName::new(name).is_err(), "{name}");
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(
            normalize_skill_name("Ratio & Proportion!").unwrap().as_str(),
            "ratio_proportion"
        );
        assert_eq!(
            normalize_skill_name("  Multi-Step  Problem Solving ").unwrap().as_str(),
            "multi_step_problem_solving"
        );
        assert_eq!(normalize_skill_name("algebra").unwrap().as_str(), "algebra");
        assert!(normalize_skill_name("!!!").is_err());
        assert!(normalize_skill_name("___").is_err());
    }

    #[test]
    fn normalization_is_idempotent() {
        for raw in ["Ratio & Proportion!", "A  b--C", "x_1  y_2"] {
            let once = normalize_skill_name(raw).unwrap();
            let twice = normalize_skill_name(once.as_str()).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn unmatched_is_reserved_but_constructible() {
        let u = SkillName::unmatched();
        assert!(u.is_unmatched());
        assert!(SkillName::new(UNMATCHED_SKILL).is_err());
        assert!(normalize_skill_name(UNMATCHED_SKILL).is_ok_and(|s| s.as_str() == "unmatched"));
        // Serde accepts the sentinel (it appears in annotation artifacts).
        let json = serde_json::to_string(&u).unwrap();
        let back: SkillName = serde_json::from_str(&json).unwrap();
        assert!(back.is_unmatched());
        // ...but rejects other non-canonical strings.
        assert!(serde_json::from_str::<SkillName>("\"Bad Name\"").is_err());
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("same", "same"), 0);
        // The drifted spelling an LLM once produced for this list entry:
        // one deleted `s`, one deleted `e`.
        assert_eq!(
            levenshtein(
                "understanding_fractions_and_inequalities",
                "understanding_fraction_and_inqualities"
            ),
            2
        );
    }

    #[test]
    fn normalized_distance_uses_longer_length() {
        assert!((normalized_distance("abcd", "abce") - 0.25).abs() < 1e-12);
        assert_eq!(normalized_distance("", ""), 0.0);
        assert_eq!(normalized_distance("", "xx"), 1.0);
    }

    #[cfg(test)]
    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_output_is_always_valid(raw in ".{1,60}") {
                if let Ok(name) = normalize_skill_name(&raw) {
                    prop_assert!(SKILL_NAME.is_match(name.as_str()));
                    let again = normalize_skill_name(name.as_str()).unwrap();
                    prop_assert_eq!(name, again);
                }
            }

            #[test]
            fn levenshtein_is_symmetric_and_bounded(a in "[a-z_]{0,24}", b in "[a-z_]{0,24}") {
                let d = levenshtein(&a, &b);
                prop_assert_eq!(d, levenshtein(&b, &a));
                prop_assert!(d <= a.chars().count().max(b.chars().count()));
                prop_assert_eq!(d == 0, a == b);
            }
        }
    }
}
