//! Benchmark harness and method kit for face presentation-attack detection
//! (PAD) on low-quality surveillance imagery.
//!
//! The crate has two halves that share one vocabulary:
//!
//! * **Benchmark harness** — quality-banded protocol construction
//!   ([`dataset`]), ISO/IEC 30107-3 style scoring with dev-to-test threshold
//!   transfer ([`metrics`]), and a two-phase challenge simulator with a
//!   label-access firewall, submission budgets and leaderboard reporting
//!   ([`challenge`]).
//! * **Method kit** — the training-time machinery PAD systems lean on:
//!   frequency-domain and geometric preprocessing ([`preprocess`]), losses
//!   with analytic gradients ([`losses`]), sample-selection and scheduling
//!   strategies ([`strategies`]), and a desk-scale trainer that wires them
//!   together end to end ([`trainer`]).
//!
//! Everything is deterministic: every random choice flows from an explicit
//! seed through per-item ChaCha streams ([`seeding`]), and batch-level
//! parallelism ([`par`]) preserves input order so the `parallel` and
//! sequential builds produce bit-identical output.

pub mod challenge;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod preprocess;
pub mod seeding;
pub mod strategies;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{PadError, Result};
