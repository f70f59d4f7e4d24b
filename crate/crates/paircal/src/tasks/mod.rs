//! Synthetic tasks with exact oracles.
//!
//! Each task provides a sampler for inputs, an exact conditional
//! evaluator, and a support test, so every bound in the library can be
//! checked against ground truth rather than against another estimate.

pub mod lake;
pub mod pcfg;
pub mod pi;
pub mod sin1d;

use serde::{Deserialize, Serialize};

/// One paired record in the task-tagged JSONL dataset schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum PairedExample {
    Sin1d {
        x: f64,
        y1: u8,
        y2: u8,
    },
    Pi {
        offset: u32,
        digit: u8,
        y1: String,
        y2: String,
    },
    Lake {
        hidden: bool,
        y1: String,
        y2: String,
        /// Audit-only latent: the shared unsafe-patch index. Never an
        /// input to models on the hidden view.
        patch_index: usize,
    },
}

/// Task names accepted by the CLI.
pub const TASK_NAMES: [&str; 3] = ["sin1d", "pi", "lake"];
