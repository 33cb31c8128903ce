//! Answer handling and evaluation: final-answer extraction from model
//! output, exact normalization and equivalence, sandboxed execution of
//! program-of-thought completions, and accuracy reporting.

mod answers;
mod report;
mod runner;

pub use answers::{
    answers_equivalent, extract_final_answer, normalize_answer, AnswerKind, ExtractionConvention,
    NormalizedAnswer,
};
pub use report::{
    evaluate, reference_answer, render_table, to_csv_per_skill, Counts, EvalReport,
    FailureCategory, FailureRecord,
};
pub use runner::{ProgramResult, ProgramRunner, RunOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("program source is empty")]
    EmptyProgram,
    #[error("cannot run interpreter `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sandbox I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("attempt references unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("problem `{id}` has no extractable reference answer")]
    NoReference { id: String },
}
