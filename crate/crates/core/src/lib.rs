//! Sentence-level hallucination feedback, severity-weighted preference
//! optimization and caption hallucination metrics.
//!
//! The crate is organized as a pipeline:
//!
//! * [`types`], [`segment`], [`jsonl`]: the shared record model and its files.
//! * [`pipeline`]: synthetic corpora, detect-then-rewrite, balancing.
//! * [`policy`], [`preference`], [`trainer`]: a small bigram policy trained
//!   with DPO or its severity-weighted variant.
//! * [`metrics`]: CHAIR, AMBER and detection metrics.
//! * [`cli`]: the `hallu-pref` command line.

pub mod cli;
pub mod jsonl;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod preference;
pub mod segment;
pub mod trainer;
pub mod types;
