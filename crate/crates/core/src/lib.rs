//! Federated intrusion detection over network-flow datasets.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! - [`dataio`]: CSV ingestion, cleaning, stratified partitioning and splits.
//! - [`preprocess`]: SMOTE oversampling and isolation-forest outlier pruning.
//! - [`gbdt`]: a multiclass gradient-boosted tree classifier with grid search.
//! - [`federation`]: the binary model-exchange protocol, bagging aggregation
//!   and the round-based edge/server simulation.
//! - [`metrics`]: confusion matrices, accuracy, macro precision/recall and
//!   Cohen's kappa.
//!
//! Only trained models ever cross the wire; raw flow records stay on the
//! node that owns them.

pub mod dataio;
pub mod error;
pub mod federation;
pub mod gbdt;
pub mod metrics;
pub mod preprocess;
pub mod rng;
pub mod synth;

pub use dataio::{ColumnSchema, Dataset, LabelMap, LoadReport, SplitPair};
pub use error::{Error, ErrorKind, Result, WireError};
pub use federation::{EnsembleModel, ModelEnvelope, MsgType, RoundConfig, RoundReport};
pub use gbdt::{GbdtModel, GbdtParams, GridSpec};
pub use metrics::{ConfusionMatrix, MetricSummary};
pub use preprocess::{IsolationForest, SmoteConfig};
