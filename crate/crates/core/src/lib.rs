//! Coreset-based selection of task data for low-budget instruction tuning.
//!
//! The pipeline embeds formatted samples upstream, then:
//!
//! 1. pools and L2-normalizes sentence embeddings ([`embedding_store`]),
//! 2. clusters them with K-Means ([`clustering`]),
//! 3. finds the task's distribution center and task center ([`center_finder`]),
//! 4. selects a budgeted subset with k-center greedy or a baseline ([`coreset_sampler`]),
//! 5. reports token budgets ([`budget`]).
//!
//! [`scoring`] implements the multiple-choice evaluation rule used on the
//! tuned model's outputs.

pub mod budget;
pub mod center_finder;
pub mod clustering;
pub mod coreset_sampler;
pub mod data_model;
pub mod embedding_store;
pub mod pipeline;
pub mod scoring;
pub mod synthetic;

pub use center_finder::TaskCenters;
pub use clustering::{ClusterModel, KMeansConfig};
pub use coreset_sampler::{Method, SelectionBudget, SelectionResult};
pub use data_model::{InstructionTemplate, RawSample, SampleRecord};
pub use embedding_store::EmbeddingStore;
pub use pipeline::{PipelineConfig, PipelineError, SelectionSettings};
