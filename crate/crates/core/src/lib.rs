//! Multimodal preference alignment for live-streaming author recommendation.
//!
//! The crate is organised as a pipeline:
//!
//! - [`types`]: the shared data model (authors, tipping sessions, candidate sets).
//! - [`composer`]: bundles, prompts, completion backends and text encoders that
//!   turn a tipping history into a preference text and embedding.
//! - [`policy`]: recommendation policies over a candidate set.
//! - [`rewards`] and [`grpo`]: rule-based rewards and group-relative policy
//!   optimisation of the trainable policy.
//! - [`metrics`]: exact retrieval and the evaluation metrics.
//! - [`synth`]: synthetic catalogs, sessions, candidate sets and triples.
//! - [`pipeline`]: file-level steps used by the `mspa` binary.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to sequential iteration
//! otherwise. Results never depend on the execution mode.

pub mod composer;
pub mod config;
pub mod exec;
pub mod grpo;
pub mod jsonl;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod synth;
pub mod types;

pub use exec::Execution;
