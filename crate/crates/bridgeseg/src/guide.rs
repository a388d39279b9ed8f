//! The book, compiled.
//!
//! The narrative guide lives in `book/` at the repository root (an mdbook).
//! Each chapter is included here as module documentation, which turns every
//! code block in the book into a doc-test: `cargo test --doc` keeps the
//! guide and the library in sync.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/noise-schedule.md")]
pub mod noise_schedule {}

#[doc = include_str!("../../../book/src/bridge-math.md")]
pub mod bridge_math {}

#[doc = include_str!("../../../book/src/targets-and-packing.md")]
pub mod targets_and_packing {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/inference-and-instances.md")]
pub mod inference_and_instances {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli-workflow.md")]
pub mod cli_workflow {}
