//! Adversarial Shapley value experience replay for task-free continual
//! learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`numeric`]: distances, stable argsort, the seeded random stream.
//! - [`knn_shapley`]: exact KNN Shapley values and the KNN utility.
//! - [`scoring`]: adversarial Shapley and distance-based retrieval scores.
//! - [`memory`]: the replay buffer with its update and retrieval policies.
//! - [`learner`]: a small rectifier network and the online replay loop.
//! - [`stream`]: synthetic and CSV task streams.
//! - [`metrics`]: average accuracy and average forgetting.
//! - [`harness`]: multi-seed experiment driver and result files.

pub mod error;
pub mod harness;
pub mod knn_shapley;
pub mod learner;
pub mod memory;
pub mod metrics;
pub mod numeric;
pub mod scoring;
pub mod stream;

pub use error::{Error, Result};
pub use knn_shapley::{knn_sv_matrix, knn_sv_single, knn_utility, LabeledEmbedding, ShapleyMatrix};
pub use memory::{MemoryBuffer, RetrievalConfig, Sample};
pub use numeric::RngStream;
