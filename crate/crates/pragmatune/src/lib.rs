//! Search-based autotuner for code-transformation parameter spaces.
//!
//! The crate searches constrained spaces of source-level tuning choices
//! (loop pragmas, tile sizes, training hyperparameters) for the
//! configuration that minimizes a measured metric. Candidate selection is
//! model-based: a surrogate regressor is refit on every observed result and
//! the next configuration is picked by lower-confidence-bound acquisition
//! over a sampled batch. Candidates are turned into concrete source files by
//! marker substitution, compiled and run in subprocesses, and every result
//! is appended to an on-disk performance database. A second search mode
//! explores stacks of loop transformations over an explicit loop-nest tree.

pub mod evaluator;
pub mod optimizer;
pub mod perfdb;
pub mod space;
pub mod surrogate;
pub mod treespace;

pub mod cli;
