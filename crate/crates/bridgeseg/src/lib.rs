//! Multi-task image-to-image Schrödinger bridge for cell instance
//! segmentation.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`schedule`] — symmetric noise schedule with exactly integrated
//!   variance accumulators,
//! * [`bridge`] — closed-form posterior algebra: sampling, training
//!   targets, and the deterministic reverse recursion,
//! * [`packing`] — channel duplication between image and (mask, reverse
//!   distance map) states,
//! * [`rdm`] — exact Euclidean distance transform and the
//!   boundary-emphasizing reverse distance map,
//! * [`model`] — denoiser interface, a small reference denoiser with
//!   analytic gradients, Adam, EMA, and the training loop,
//! * [`inference`] — deterministic reverse generation and thresholding,
//! * [`instances`] — connected components, hole filling, shape statistics,
//! * [`metrics`] — binary panoptic quality and centroid-matched detection
//!   metrics,
//! * [`config`], [`dataset`], [`synth`], [`io`] — run configuration, data
//!   layout, the synthetic ellipse dataset, and file formats.
//!
//! The `bridgeseg` binary ties these together as `synth`, `rdm`, `train`,
//! `infer`, `eval`, and `shape-stats` subcommands. A narrative guide lives
//! in `book/`; its code snippets compile and run as doc-tests through the
//! [`guide`] module.
//!
//! ```
//! use bridgeseg::schedule::build_schedule;
//! use bridgeseg::bridge::{posterior_params, BridgeState};
//! use bridgeseg::tensor::ImageTensor;
//!
//! let schedule = build_schedule(50, 0.3, 1e-4)?;
//! let x0 = ImageTensor::constant(8, 8, 6, -1.0);
//! let x1 = ImageTensor::constant(8, 8, 6, 1.0);
//! // At t=0 the posterior collapses onto the target endpoint.
//! let (mu, var) = posterior_params(&x0, &x1, 0.0, &schedule)?;
//! assert_eq!(mu.data(), x0.data());
//! assert_eq!(var, 0.0);
//! # Ok::<(), bridgeseg::error::Error>(())
//! ```

pub mod bridge;
pub mod config;
pub mod dataset;
pub mod error;
pub mod guide;
pub mod inference;
pub mod instances;
pub mod io;
pub mod metrics;
pub mod model;
pub mod packing;
pub mod rdm;
pub mod schedule;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
