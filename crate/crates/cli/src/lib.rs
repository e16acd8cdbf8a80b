//! End-to-end pruning harness: binary tensor files, JSON model manifests,
//! the block-by-block pruning pipeline, run reports, and the `thanos`
//! command-line tool built on top of `thanos-core`.

pub mod cli;
pub mod generate;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod tensor;
pub mod verify;

pub use cli::run;
