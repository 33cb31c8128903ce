//! Final-answer extraction, exact-rational normalization, and corpus-level
//! scoring.
//!
//! ```sh
//! cargo run -p skillforge --example evaluate_answers
//! ```
//!
//! Comparison is exact, never floating-point: `1/2` equals `0.5` because
//! both normalize to the rational 1/2, while `5/6` does not equal
//! `0.8333333333` no matter how many digits the decimal carries.

use skillforge::corpus::{Corpus, Problem, Split};
use skillforge::eval::{
    answers_equivalent, evaluate, extract_final_answer, normalize_answer, render_table,
    ExtractionConvention,
};
use skillforge::prompting::{Attempt, PromptMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // --- extraction conventions -------------------------------------------
    let texts = [
        "Half of the class passed, so the fraction is $\\boxed{\\frac{1}{2}}$.",
        "Adding the two groups gives 7 + 11 = 18.\n#### 18",
        "So there are 27 apples left in the basket, 27 in total.",
    ];
    println!("extraction (auto convention tries boxed, then ####, then last number):");
    for text in texts {
        let answer = extract_final_answer(text, ExtractionConvention::Auto);
        let preview: String = text.chars().take(48).collect();
        println!("  {preview:<50} -> {answer:?}");
    }

    // --- exact equivalence --------------------------------------------------
    let pairs = [
        ("1/2", "0.5"),
        ("125,\\!000", "125000"),
        ("\\frac{15}{56}", "15/56"),
        ("5/6", "0.8333333333"),
        ("forty-two apples", "Forty-two  APPLES"),
    ];
    println!("\nequivalence:");
    for (left, right) in pairs {
        let verdict = answers_equivalent(&normalize_answer(left), &normalize_answer(right));
        println!("  {left:<16} == {right:<16} ? {verdict}");
    }

    // --- corpus-level scoring ----------------------------------------------
    let corpus = Corpus::new(
        "scoring-demo",
        Split::Test,
        vec![
            scored_problem("s0", "What is 12 plus 30?", "42", "arithmetic"),
            scored_problem("s1", "Reduce the fraction 2/6 to lowest terms.", "1/3", "fractions"),
            scored_problem("s2", "What is 9 times 9?", "81", "arithmetic"),
        ],
    )?;
    let attempts = vec![
        attempt("s0", "12 + 30 = 42. The answer is 42."),
        // Boxed answers survive extraction even when other numbers follow;
        // 2/6 then compares equal to the reference 1/3 as an exact rational.
        attempt("s1", "2 and 6 share the factor 2. The answer is $\\boxed{2/6}$."),
        attempt("s2", "9 * 9 = 80. The answer is 80."), // wrong
    ];
    let report = evaluate(&attempts, &corpus)?;
    println!("\n{}", render_table(&report));
    Ok(())
}

fn scored_problem(id: &str, question: &str, final_answer: &str, topic: &str) -> Problem {
    Problem {
        id: id.into(),
        question: question.into(),
        reference_answer: format!("The answer is {final_answer}."),
        final_answer: Some(final_answer.into()),
        topic: Some(topic.into()),
    }
}

/// A minimal single-sample attempt, as the solver would have produced.
fn attempt(problem_id: &str, completion: &str) -> Attempt {
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
