//! Skill-matched few-shot prompting for math QA corpora.
//!
//! This crate builds a *skill exemplar repository* from a training corpus by
//! asking an LLM to name the skill each problem exercises, clustering those
//! fine-grained skill names into coarse categories, and relabeling the corpus
//! with the coarse names. At inference time a test question is matched to one
//! repository skill and solved with skill-matched in-context examples, either
//! as text chain-of-thought or as a program-aided hybrid prompt, with optional
//! self-consistency voting over multiple samples.
//!
//! The main pieces:
//!
//! - [`corpus`]: load and validate math QA datasets in a normalized record form.
//! - [`gateway`]: provider-agnostic chat-completion client with retries, rate
//!   limiting, on-disk response caching, and a deterministic scripted backend.
//! - [`skills`]: the three-stage labeling pipeline (label, cluster, relabel).
//! - [`repository`]: the persistent skill exemplar store with seeded sampling.
//! - [`prompting`]: exemplar selection strategies, prompt assembly, solving,
//!   and majority voting.
//! - [`eval`]: answer extraction/equivalence, sandboxed program execution, and
//!   accuracy reports.
//! - [`analysis`]: LLM-driven error taxonomy (calculation / main skill /
//!   secondary skill) and success-rate aggregation.
//! - [`pipeline`]: resumable stage runner behind the `skillforge` binary.
//!
//! See the crate `examples/` directory for one runnable example per capability;
//! all of them work offline against the bundled scripted fixtures.

pub mod analysis;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod pipeline;
pub mod prompting;
pub mod repository;
pub mod skills;
pub mod template;

pub(crate) mod util;
