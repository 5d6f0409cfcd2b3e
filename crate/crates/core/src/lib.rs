//! Graph-based semi-supervised learning for multi-modal survival classification.
//!
//! The pipeline runs per data modality:
//!
//! 1. load expression matrices and clinical records, derive ternary labels
//!    from a survival threshold ([`dataset`]);
//! 2. z-score and discretize features ([`preprocess`]), then rank them with
//!    minimum-redundancy maximum-relevance selection ([`mrmr`]);
//! 3. build a k-nearest-neighbor heat-kernel graph over labeled and unlabeled
//!    samples and its Laplacian ([`graph`]);
//! 4. train a Laplacian SVM, or a plain SVM for comparison ([`learner`]);
//!
//! and finally combines the per-modality decision scores with a linear SVM
//! meta-learner ([`stacking`]). [`evaluation`] drives repeated cross-validated
//! experiments and paired significance tests, and [`cli`] wires everything to
//! the `manifold-ssl` binary.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod kernel;
pub mod learner;
pub mod mrmr;
pub mod preprocess;
pub mod qp;
pub mod stacking;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
