//! Final-answer extraction and exact answer equivalence.
//!
//! Numeric answers are kept as exact rationals ([`num::BigRational`]); two
//! answers are never compared through floating point. Non-numeric answers
//! fall back to canonical string forms: math expressions keep their symbols
//! but lose all whitespace, free text is lowercased with whitespace runs
//! collapsed.

use std::fmt;
use std::str::FromStr;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Zero};
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

/// The shape of a normalized answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    /// Exact rational; `value` is the reduced `p/q` (or integer) form.
    Rational,
    /// Exact rational that arrived as a decimal literal. Normalization folds
    /// these into [`AnswerKind::Rational`]; the variant exists so artifacts
    /// produced by other tools that keep the distinction still round-trip.
    Decimal,
    /// Symbolic/math content; `value` has all whitespace removed.
    Expression,
    /// Free text; `value` is lowercased with whitespace collapsed.
    Text,
    /// No answer found. `value` is empty.
    #[serde(rename = "none")]
    NoAnswer,
}

/// A canonicalized final answer. Construct via [`normalize_answer`] or
/// [`extract_final_answer`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAnswer {
    pub kind: AnswerKind,
    pub value: String,
    /// Present exactly when `kind` is numeric (rational / decimal).
    pub numeric: Option<BigRational>,
}

impl NormalizedAnswer {
    pub fn none() -> Self {
        NormalizedAnswer {
            kind: AnswerKind::NoAnswer,
            value: String::new(),
            numeric: None,
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == AnswerKind::NoAnswer
    }

    fn rational(value: BigRational) -> Self {
        NormalizedAnswer {
            kind: AnswerKind::Rational,
            value: format_rational(&value),
            numeric: Some(value),
        }
    }
}

impl fmt::Display for NormalizedAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_none() {
            write!(f, "<none>")
        } else {
            write!(f, "{}", self.value)
        }
    }
}

/// Serialized form: `{kind, value}`; `numeric` is re-derived on load so the
/// exact-rational invariant survives the round trip.
#[derive(Serialize, Deserialize)]
struct WireAnswer {
    kind: AnswerKind,
    value: String,
}

impl Serialize for NormalizedAnswer {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        WireAnswer {
            kind: self.kind,
            value: self.value.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NormalizedAnswer {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = WireAnswer::deserialize(deserializer)?;
        let numeric = match wire.kind {
            AnswerKind::Rational | AnswerKind::Decimal => parse_ratio_value(&wire.value),
            _ => None,
        };
        Ok(NormalizedAnswer {
            kind: wire.kind,
            value: wire.value,
            numeric,
        })
    }
}

fn parse_ratio_value(value: &str) -> Option<BigRational> {
    if let Some((p, q)) = value.split_once('/') {
        let p = BigInt::from_str(p.trim()).ok()?;
        let q = BigInt::from_str(q.trim()).ok()?;
        (!q.is_zero()).then(|| BigRational::new(p, q))
    } else if value.contains('.') {
        parse_decimal(value)
    } else {
        BigInt::from_str(value.trim())
            .ok()
            .map(BigRational::from_integer)
    }
}

fn format_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Strips LaTeX decoration that carries no meaning for comparison: `$`
/// wrappers, `\left`/`\right`, spacing commands, `\(`/`\)`/`\[`/`\]`
/// delimiters, a single `\text{...}` wrapper, and digit-grouping commas
/// (`125,000` and `125,\!000` both become `125000`).
fn strip_wrappers(raw: &str) -> String {
    let mut s = raw.trim().to_string();
    loop {
        let before = s.len();
        s = s.trim_matches('$').trim().to_string();
        for delim in ["\\(", "\\)", "\\[", "\\]"] {
            if let Some(stripped) = s.strip_prefix(delim) {
                s = stripped.trim_start().to_string();
            }
            if let Some(stripped) = s.strip_suffix(delim) {
                s = stripped.trim_end().to_string();
            }
        }
        if s.len() == before {
            break;
        }
    }
    for token in ["\\left", "\\right", "\\!", "\\,", "\\;"] {
        s = s.replace(token, "");
    }
    static TEXT_WRAPPER: Lazy<Regex> =
        Lazy::new(|| Regex::new(r"^\\text\{([^{}]*)\}$").expect("valid regex"));
    if let Some(caps) = TEXT_WRAPPER.captures(s.trim()) {
        s = caps[1].trim().to_string();
    }
    s = strip_group_commas(&s);
    let s = s.trim();
    // A single trailing sentence period; "0.5." -> "0.5", "east." -> "east".
    let s = match s.strip_suffix('.') {
        Some(rest) if !rest.is_empty() && !rest.ends_with('.') => rest,
        _ => s,
    };
    let s = s.trim();
    // Parentheses left behind by `\left( ... \right)` around a bare number.
    // Tuples like `(1,2)` are not numbers and keep their parentheses.
    if let Some(inner) = s.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
        let inner = inner.trim();
        if !inner.contains(['(', ')']) && parse_exact_number(inner).is_some() {
            return inner.to_string();
        }
    }
    s.to_string()
}

/// Removes a comma only when it sits between a digit and exactly three
/// digits that are not followed by a fourth — i.e. digit grouping, not tuple
/// separators. The `regex` crate has no lookaround, so this is a hand scan.
fn strip_group_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ',' {
            let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
            let next_three = chars.get(i + 1).map_or(false, |c| c.is_ascii_digit())
                && chars.get(i + 2).map_or(false, |c| c.is_ascii_digit())
                && chars.get(i + 3).map_or(false, |c| c.is_ascii_digit());
            let fourth_digit = chars.get(i + 4).map_or(false, |c| c.is_ascii_digit());
            if prev_digit && next_three && !fourth_digit {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn parse_decimal(s: &str) -> Option<BigRational> {
    static DECIMAL: Lazy<Regex> =
        Lazy::new(|| Regex::new(r"^([+-]?)(\d*)\.(\d+)$|^([+-]?)(\d+)\.$").expect("valid regex"));
    let caps = DECIMAL.captures(s.trim())?;
    let (sign, int_part, frac_part) = if caps.get(3).is_some() {
        (&caps[1], caps.get(2).map_or("", |m| m.as_str()), &caps[3])
    } else {
        (&caps[4], caps.get(5).map_or("", |m| m.as_str()), "")
    };
    let int_part = if int_part.is_empty() { "0" } else { int_part };
    let numer = BigInt::from_str(&format!("{int_part}{frac_part}")).ok()?;
    let denom = BigInt::from(10u8).pow(frac_part.len() as u32);
    let value = BigRational::new(numer, denom);
    Some(if sign == "-" { -value } else { value })
}

/// Parses any exact numeric surface form: signed integers, `a/b`,
/// `\frac{a}{b}` (plus `\dfrac`/`\tfrac`, optionally signed outside),
/// decimal literals, and scientific notation.
fn parse_exact_number(s: &str) -> Option<BigRational> {
    let s = s.trim();
    static INT: Lazy<Regex> = Lazy::new(|| Regex::new(r"^[+-]?\d+$").expect("valid regex"));
    if INT.is_match(s) {
        return BigInt::from_str(s).ok().map(BigRational::from_integer);
    }

    static FRAC: Lazy<Regex> = Lazy::new(|| {
        Regex::new(r"^([+-]?)\\[dt]?frac\{([+-]?\d+)\}\{([+-]?\d+)\}$").expect("valid regex")
    });
    if let Some(caps) = FRAC.captures(s) {
        let p = BigInt::from_str(&caps[2]).ok()?;
        let q = BigInt::from_str(&caps[3]).ok()?;
        if q.is_zero() {
            return None;
        }
        let value = BigRational::new(p, q);
        return Some(if &caps[1] == "-" { -value } else { value });
    }

    static SLASH: Lazy<Regex> =
        Lazy::new(|| Regex::new(r"^([+-]?\d+)\s*/\s*([+-]?\d+)$").expect("valid regex"));
    if let Some(caps) = SLASH.captures(s) {
        let p = BigInt::from_str(&caps[1]).ok()?;
        let q = BigInt::from_str(&caps[2]).ok()?;
        if q.is_zero() {
            return None;
        }
        return Some(BigRational::new(p, q));
    }

    static SCI: Lazy<Regex> = Lazy::new(|| {
        Regex::new(r"^([+-]?(?:\d+\.?\d*|\.\d+))[eE]([+-]?\d+)$").expect("valid regex")
    });
    if let Some(caps) = SCI.captures(s) {
        let mantissa = parse_exact_number(&caps[1])?;
        let exp: i32 = caps[2].parse().ok()?;
        let ten = BigRational::from_integer(BigInt::from(10u8));
        let scale = ten.pow(exp);
        return Some(mantissa * scale);
    }

    parse_decimal(s)
}

/// Canonicalizes a raw answer string. Numeric forms become exact rationals;
/// everything else becomes a whitespace-canonical expression or lowercased
/// text; an empty string is the no-answer value.
pub fn normalize_answer(raw: &str) -> NormalizedAnswer {
    let stripped = strip_wrappers(raw);
    if stripped.is_empty() {
        return NormalizedAnswer::none();
    }
    if let Some(value) = parse_exact_number(&stripped) {
        return NormalizedAnswer::rational(value);
    }
    let is_textual = stripped.chars().any(|c| c.is_alphabetic())
        && stripped
            .chars()
            .all(|c| c.is_alphabetic() || c.is_whitespace() || matches!(c, '-' | '\'' | ',' | '.'));
    if is_textual {
        let value = stripped
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        NormalizedAnswer {
            kind: AnswerKind::Text,
            value,
            numeric: None,
        }
    } else {
        let value: String = stripped.chars().filter(|c| !c.is_whitespace()).collect();
        NormalizedAnswer {
            kind: AnswerKind::Expression,
            value,
            numeric: None,
        }
    }
}

/// Exact equivalence. The no-answer value is equivalent to nothing,
/// including itself: a solver that produced nothing is never "right".
pub fn answers_equivalent(a: &NormalizedAnswer, b: &NormalizedAnswer) -> bool {
    if a.is_none() || b.is_none() {
        return false;
    }
    match (&a.numeric, &b.numeric) {
        (Some(x), Some(y)) => x == y,
        (None, None) => a.kind == b.kind && a.value == b.value,
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

/// How the final answer is located inside a full solution text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionConvention {
    /// Content of the last `\boxed{...}` (balanced braces, innermost box).
    Boxed,
    /// Everything after the last `####` marker.
    HashMarks,
    /// The last numeric token in the text.
    LastNumber,
    /// Boxed, then `####`, then last number — first convention that yields
    /// an answer wins.
    Auto,
}

impl Default for ExtractionConvention {
    fn default() -> Self {
        ExtractionConvention::Auto
    }
}

/// Returns the content of the last `\boxed{...}` in `text`, scanning braces
/// as balanced pairs (an escaped `\{` / `\}` does not count). Nested boxes
/// resolve to the innermost content.
fn boxed_content(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let start = text.rfind(MARKER)? + MARKER.len();
    let mut depth = 1usize;
    let mut content = String::new();
    let mut chars = text[start..].chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                content.push(c);
                if let Some(next) = chars.next() {
                    content.push(next);
                }
            }
            '{' => {
                depth += 1;
                content.push(c);
            }
            '}' => {
                depth -= 1;
                if depth == 0 {
                    break;
                }
                content.push(c);
            }
            _ => content.push(c),
        }
    }
    if depth != 0 {
        return None; // unbalanced to end of text
    }
    if content.contains(MARKER) {
        return boxed_content(&content);
    }
    Some(content)
}

fn hash_marks_content(text: &str) -> Option<String> {
    text.rfind("####").map(|idx| text[idx + 4..].to_string())
}

fn last_number(text: &str) -> Option<String> {
    static NUMBER: Lazy<Regex> =
        Lazy::new(|| Regex::new(r"-?\d+(?:,\d{3})*(?:\.\d+)?").expect("valid regex"));
    NUMBER
        .find_iter(text)
        .last()
        .map(|m| m.as_str().to_string())
}

/// Pulls the final answer out of a full solution according to `convention`
/// and normalizes it. Produces the no-answer value when nothing matches.
pub fn extract_final_answer(text: &str, convention: ExtractionConvention) -> NormalizedAnswer {
    let candidate = match convention {
        ExtractionConvention::Boxed => boxed_content(text),
        ExtractionConvention::HashMarks => hash_marks_content(text),
        ExtractionConvention::LastNumber => last_number(text),
        ExtractionConvention::Auto => {
            for extractor in [boxed_content, hash_marks_content, last_number] {
                if let Some(c) = extractor(text) {
                    let normalized = normalize_answer(&c);
                    if !normalized.is_none() {
                        return normalized;
                    }
                }
            }
            return NormalizedAnswer::none();
        }
    };
    candidate
        .map(|c| normalize_answer(&c))
        .unwrap_or_else(NormalizedAnswer::none)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rational(s: &str) -> NormalizedAnswer {
        let n = normalize_answer(s);
        assert_eq!(n.kind, AnswerKind::Rational, "{s} should be rational");
        n
    }

    #[test]
    fn decimals_become_exact_rationals() {
        let n = rational("-0.50");
        assert_eq!(n.value, "-1/2");
        assert_eq!(
            n.numeric,
            Some(BigRational::new(BigInt::from(-1), BigInt::from(2)))
        );
        assert_eq!(rational("2.25").value, "9/4");
        assert_eq!(rational(".5").value, "1/2");
        assert_eq!(rational("43.").value, "43");
    }

    #[test]
    fn integers_and_fractions_reduce() {
        assert_eq!(rational("42").value, "42");
        assert_eq!(rational("-7").value, "-7");
        assert_eq!(rational("4/8").value, "1/2");
        assert_eq!(rational("\\frac{15}{56}").value, "15/56");
        assert_eq!(rational("-\\frac{3}{6}").value, "-1/2");
        assert_eq!(rational("\\dfrac{10}{4}").value, "5/2");
        assert_eq!(rational("1e3").value, "1000");
        assert_eq!(rational("2.5e-1").value, "1/4");
    }

    #[test]
    fn zero_denominator_is_not_a_rational() {
        assert_eq!(normalize_answer("3/0").kind, AnswerKind::Expression);
        assert_eq!(normalize_answer("\\frac{1}{0}").kind, AnswerKind::Expression);
    }

    #[test]
    fn grouping_commas_are_stripped_but_tuples_survive() {
        assert_eq!(rational("125,000").value, "125000");
        assert_eq!(rational("125,\\!000").value, "125000");
        assert_eq!(rational("1,000,000").value, "1000000");
        assert_eq!(rational("1,234.5").value, "2469/2");
        let tuple = normalize_answer("(1,2)");
        assert_eq!(tuple.kind, AnswerKind::Expression);
        assert_eq!(tuple.value, "(1,2)");
        // Four digits after the comma is not digit grouping either.
        assert_eq!(normalize_answer("(3,1415)").value, "(3,1415)");
    }

    #[test]
    fn dollar_and_latex_wrappers_are_stripped() {
        assert_eq!(rational("$42$").value, "42");
        assert_eq!(rational("$$ 42 $$").value, "42");
        assert_eq!(rational("\\left( 42 \\right)").kind, AnswerKind::Rational);
        assert_eq!(normalize_answer("\\(x+1\\)").value, "x+1");
        assert_eq!(normalize_answer("\\text{east}").value, "east");
    }

    #[test]
    fn expressions_canonicalize_whitespace_away() {
        let a = normalize_answer("6\\sqrt{11}");
        let b = normalize_answer("6 \\sqrt{11}");
        assert_eq!(a.kind, AnswerKind::Expression);
        assert!(answers_equivalent(&a, &b));
        let c = normalize_answer("5 - 12i");
        assert_eq!(c.value, "5-12i");
    }

    #[test]
    fn text_lowercases_and_collapses() {
        let a = normalize_answer("  East   ");
        assert_eq!(a.kind, AnswerKind::Text);
        assert_eq!(a.value, "east");
        let b = normalize_answer("No    Solution");
        assert_eq!(b.value, "no solution");
        assert!(answers_equivalent(&b, &normalize_answer("no solution")));
    }

    #[test]
    fn none_is_equivalent_to_nothing() {
        let none = NormalizedAnswer::none();
        assert!(!answers_equivalent(&none, &none));
        assert!(!answers_equivalent(&none, &normalize_answer("5")));
        assert!(normalize_answer("").is_none());
        assert!(normalize_answer("   ").is_none());
    }

    #[test]
    fn numeric_forms_cross_compare_exactly() {
        assert!(answers_equivalent(
            &normalize_answer("0.5"),
            &normalize_answer("1/2")
        ));
        assert!(answers_equivalent(
            &normalize_answer("\\frac{15}{56}"),
            &normalize_answer("15/56")
        ));
        assert!(!answers_equivalent(
            &normalize_answer("0.3333"),
            &normalize_answer("1/3")
        ));
        assert!(!answers_equivalent(
            &normalize_answer("42"),
            &normalize_answer("x+42")
        ));
    }

    #[test]
    fn boxed_extraction_takes_last_and_handles_nesting() {
        let n = extract_final_answer(
            "First \\boxed{1}. Later we find \\boxed{\\frac{15}{56}}.",
            ExtractionConvention::Boxed,
        );
        assert_eq!(n.value, "15/56");
        let nested = extract_final_answer(
            "Thus \\boxed{\\boxed{7}}",
            ExtractionConvention::Boxed,
        );
        assert_eq!(nested.value, "7");
        let balanced = extract_final_answer(
            "Answer: \\boxed{\\frac{1}{2} + x}",
            ExtractionConvention::Boxed,
        );
        assert_eq!(balanced.kind, AnswerKind::Expression);
        assert_eq!(balanced.value, "\\frac{1}{2}+x");
        let unbalanced = extract_final_answer("\\boxed{42", ExtractionConvention::Boxed);
        assert!(unbalanced.is_none());
    }

    #[test]
    fn spec_extraction_examples() {
        let frac = extract_final_answer(
            "The answer is \\boxed{\\frac{15}{56}}.",
            ExtractionConvention::Auto,
        );
        assert!(answers_equivalent(&frac, &normalize_answer("15/56")));

        let grouped = extract_final_answer("\\boxed{125,\\!000}", ExtractionConvention::Auto);
        assert!(answers_equivalent(&grouped, &normalize_answer("125000")));

        let complex = extract_final_answer("$\\boxed{5-12i}$", ExtractionConvention::Auto);
        assert!(answers_equivalent(&complex, &normalize_answer("5 - 12i")));

        let hash = extract_final_answer("He pays #### 72", ExtractionConvention::HashMarks);
        assert!(answers_equivalent(&hash, &normalize_answer("72")));

        let last = extract_final_answer(
            "So 17 + 26 = 43. The answer is 43.",
            ExtractionConvention::LastNumber,
        );
        assert_eq!(last.value, "43");

        assert!(extract_final_answer("no answer here", ExtractionConvention::Boxed).is_none());
    }

    #[test]
    fn auto_prefers_boxed_then_hash_then_number() {
        let both = "reasoning #### 10 and also \\boxed{20}";
        assert_eq!(
            extract_final_answer(both, ExtractionConvention::Auto).value,
            "20"
        );
        let hash_only = "reasoning gives #### 10";
        assert_eq!(
            extract_final_answer(hash_only, ExtractionConvention::Auto).value,
            "10"
        );
        let number_only = "the total is 12 apples";
        assert_eq!(
            extract_final_answer(number_only, ExtractionConvention::Auto).value,
            "12"
        );
        assert!(extract_final_answer("nothing at all", ExtractionConvention::Auto).is_none());
        // An empty box falls through to the next convention.
        let empty_box = "\\boxed{} but the count was 9";
        assert_eq!(
            extract_final_answer(empty_box, ExtractionConvention::Auto).value,
            "9"
        );
    }

    #[test]
    fn last_number_keeps_grouped_digits_together() {
        assert_eq!(
            extract_final_answer("total: 1,250,000 dollars", ExtractionConvention::LastNumber)
                .value,
            "1250000"
        );
        assert_eq!(
            extract_final_answer("x = -3.5 done", ExtractionConvention::LastNumber).value,
            "-7/2"
        );
    }

    #[test]
    fn serde_round_trip_restores_numeric() {
        let original = normalize_answer("\\frac{15}{56}");
        let json = serde_json::to_string(&original).unwrap();
        assert_eq!(json, r#"{"kind":"rational","value":"15/56"}"#);
        let back: NormalizedAnswer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, original);
        assert!(back.numeric.is_some());

        let none = NormalizedAnswer::none();
        let back: NormalizedAnswer =
            serde_json::from_str(&serde_json::to_string(&none).unwrap()).unwrap();
        assert!(back.is_none());
    }
}
