//! Proficiency-aware sample selection for group-relative policy optimisation,
//! on a synthetic multi-label event-detection task.
//!
//! The crate is organised around the training pipeline:
//!
//! - [`task_env`] generates dialogues with planted cues and gold event sets.
//! - [`policy`] is a small GRU sequence policy with hand-written gradients.
//! - [`reward`] parses responses and scores them.
//! - [`inner_rl`] holds the clipped, KL-regularised group objective.
//! - [`outer_sampler`] assesses proficiency and filters batches.
//! - [`trainer`] runs the dual loop and the SFT/GRPO/DAPO baselines.
//! - [`metrics`] computes P/R/F1 and pass@1 histograms and exports curves.
//! - [`cli`] implements the `gen-data`, `train`, `eval` and `compare` commands.

pub mod cli;
pub mod config;
pub mod error;
pub mod inner_rl;
pub mod metrics;
pub mod outer_sampler;
pub mod policy;
pub mod reward;
pub mod seeding;
pub mod task_env;
pub mod trainer;
pub mod vocab;

pub use config::{Algorithm, RunConfig};
pub use error::{AparlError, Result};
