//! Execute program-of-thought answers in the sandboxed runner.
//!
//! ```sh
//! cargo run -p skillforge --example run_programs
//! ```
//!
//! PAL-hybrid completions may answer with a fenced Python program instead of
//! prose. The runner executes the program with an isolated interpreter
//! (`python3 -I`), captures stdout, normalizes the last line into an answer,
//! and enforces a wall-clock timeout so a runaway program cannot stall a
//! run. Requires `python3` on PATH.

use std::path::Path;
use std::time::Duration;

use skillforge::eval::{ProgramRunner, RunOutcome};

fn fixture(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A well-behaved program: prints the value its reasoning computes.
    let program = std::fs::read_to_string(fixture("fixtures/pal/print_answer.py"))?;
    println!("--- fixtures/pal/print_answer.py ---\n{program}");
    let runner = ProgramRunner::default();
    let result = runner.run(&program)?;
    println!("outcome:  {:?}", result.outcome());
    println!("stdout:   {:?}", result.stdout.trim_end());
    println!("answer:   {:?}", result.answer);
    println!("duration: {:?}", result.duration);

    // A runaway program: the timeout converts it into a clean Timeout
    // outcome (and an abstaining answer) instead of a hung pipeline.
    let looper = std::fs::read_to_string(fixture("fixtures/pal/infinite_loop.py"))?;
    println!("\n--- fixtures/pal/infinite_loop.py (2s budget) ---\n{looper}");
    let strict = ProgramRunner {
        timeout: Duration::from_secs(2),
        ..ProgramRunner::default()
    };
    let result = strict.run(&looper)?;
    println!("outcome:  {:?}", result.outcome());
    assert_eq!(result.outcome(), RunOutcome::Timeout);
    println!("answer:   {:?} (abstains in any vote)", result.answer);

    // A crashing program: stderr is preserved for the failure note.
    let result = runner.run("raise ValueError('no answer today')")?;
    println!("\n--- crashing program ---");
    println!("outcome:  {:?}", result.outcome());
    println!("exit:     {:?}", result.exit_status);
    println!(
        "stderr:   {:?}",
        result.stderr.lines().last().unwrap_or_default()
    );

    Ok(())
}
