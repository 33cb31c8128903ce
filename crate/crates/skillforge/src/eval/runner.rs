//! Sandboxed execution of program-of-thought completions.
//!
//! Generated code runs as a child process in a throwaway temp directory with
//! a scrubbed environment, a wall-clock timeout, and a cap on captured
//! stdout. The program's answer is, by convention, the last non-empty line
//! it prints.

use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::answers::{normalize_answer, NormalizedAnswer};
use super::EvalError;

/// How a run ended, for error-rate accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Ok,
    Timeout,
    RuntimeError,
    NoOutput,
}

#[derive(Debug, Clone)]
pub struct ProgramResult {
    pub stdout: String,
    pub stderr: String,
    pub exit_status: Option<i32>,
    pub duration: Duration,
    pub timed_out: bool,
    /// Captured stdout hit the size cap and was cut off.
    pub truncated: bool,
    /// Last non-empty stdout line, normalized; absent on timeout, nonzero
    /// exit, or empty output.
    pub answer: Option<NormalizedAnswer>,
}

impl ProgramResult {
    pub fn outcome(&self) -> RunOutcome {
        if self.timed_out {
            RunOutcome::Timeout
        } else if self.exit_status != Some(0) {
            RunOutcome::RuntimeError
        } else if self.answer.is_none() {
            RunOutcome::NoOutput
        } else {
            RunOutcome::Ok
        }
    }
}

/// Runs one program per call; cheap to clone and share across workers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProgramRunner {
    /// Interpreter argv prefix; the program file path is appended. The
    /// default is `python3 -I` (isolated mode: no user site-packages, no
    /// PYTHON* environment).
    pub command: Vec<String>,
    pub timeout: Duration,
    pub max_stdout_bytes: usize,
}

impl Default for ProgramRunner {
    fn default() -> Self {
        ProgramRunner {
            command: vec!["python3".into(), "-I".into()],
            timeout: Duration::from_secs(10),
            max_stdout_bytes: 64 * 1024,
        }
    }
}

/// Reads up to `cap` bytes from `pipe` on a helper thread so the child can
/// never block on a full pipe while we wait for it.
fn drain_capped<R: Read + Send + 'static>(
    mut pipe: R,
    cap: usize,
) -> std::thread::JoinHandle<(Vec<u8>, bool)> {
    std::thread::spawn(move || {
        let mut collected = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if collected.len() < cap {
                        let take = n.min(cap - collected.len());
                        collected.extend_from_slice(&buf[..take]);
                        if take < n {
                            truncated = true;
                        }
                    } else {
                        truncated = true;
                    }
                }
            }
        }
        (collected, truncated)
    })
}

impl ProgramRunner {
    /// Executes `code` and returns the captured result. Fails only on
    /// sandbox-level problems (empty code, interpreter missing); program
    /// crashes and timeouts are reported inside [`ProgramResult`].
    pub fn run(&self, code: &str) -> Result<ProgramResult, EvalError> {
        if code.trim().is_empty() {
            return Err(EvalError::EmptyProgram);
        }
        let dir = tempfile::tempdir()?;
        let program_path = dir.path().join("program.py");
        std::fs::write(&program_path, code)?;

        let (exe, args) = self
            .command
            .split_first()
            .ok_or(EvalError::EmptyProgram)?;
        // PATH survives so the interpreter itself resolves; everything else
        // (API keys, proxies, locale surprises) is dropped.
        let path_var = std::env::var_os("PATH").unwrap_or_default();
        let mut child = Command::new(exe)
            .args(args)
            .arg(&program_path)
            .current_dir(dir.path())
            .env_clear()
            .env("PATH", path_var)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| EvalError::Spawn {
                command: exe.clone(),
                source,
            })?;

        let stdout_handle = drain_capped(child.stdout.take().expect("piped"), self.max_stdout_bytes);
        let stderr_handle = drain_capped(child.stderr.take().expect("piped"), self.max_stdout_bytes);

        let started = Instant::now();
        let mut timed_out = false;
        let exit_status = loop {
            match child.try_wait()? {
                Some(status) => break status.code(),
                None => {
                    if started.elapsed() >= self.timeout {
                        timed_out = true;
                        let _ = child.kill();
                        let _ = child.wait();
                        break None;
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
            }
        };
        let duration = started.elapsed();

        let (stdout_bytes, out_truncated) = stdout_handle.join().unwrap_or_default();
        let (stderr_bytes, err_truncated) = stderr_handle.join().unwrap_or_default();
        let stdout = String::from_utf8_lossy(&stdout_bytes).into_owned();
        let stderr = String::from_utf8_lossy(&stderr_bytes).into_owned();

        let answer = if !timed_out && exit_status == Some(0) {
            stdout
                .lines()
                .rev()
                .find(|l| !l.trim().is_empty())
                .map(normalize_answer)
                .filter(|a| !a.is_none())
        } else {
            None
        };

        Ok(ProgramResult {
            stdout,
            stderr,
            exit_status,
            duration,
            timed_out,
            truncated: out_truncated || err_truncated,
            answer,
        })
    }
}
