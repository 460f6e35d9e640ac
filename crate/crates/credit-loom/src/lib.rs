//! credit-loom: multi-agent debate with per-round aggregation, role/round
//! credit assignment, and credit-guided prompt optimization.
//!
//! A fixed panel of roles debates a multiple-choice question over several
//! rounds. Each round is compressed into a shared state by an aggregation
//! prompt, and only that state flows forward. Critics grade agent turns,
//! a judge scores each round's contributions, and the two signals fuse into
//! per-role credit; aggregation failures that lose a correct answer decay
//! per-round credit. An alternating optimizer then rewrites only the
//! weakest role prompts and the weakest rounds' aggregator prompts, holding
//! everything else fixed.
//!
//! Entry points:
//! - [`protocol`]: topology, prompts, rounds, trajectories.
//! - [`gateway`]: live / synthetic / record-replay completion channel.
//! - [`critic`]: answer grading, round judging, aggregation checks.
//! - [`credit`]: credit fusion and weak-component selection.
//! - [`optimizer`]: the alternating two-block prompt optimizer.
//! - [`epoch`]: one evaluation pass tying the above together.
//! - [`datastore`]: datasets, splits, run logs, prompt persistence.
//! - [`report`]: summary tables, shift tables, CSV export.
//!
//! The `examples/` directory has one runnable example per capability; the
//! `credit-loom` binary wires the same entry points into subcommands.

pub mod answer;
pub mod assets;
pub mod config;
pub mod credit;
pub mod critic;
pub mod datastore;
pub mod epoch;
pub mod error;
pub mod gateway;
pub mod optimizer;
pub mod protocol;
pub mod report;
mod wire;

pub use answer::{extract_answer, score_exact, OptionLabel};
pub use error::{Error, ErrorKind, Result};
