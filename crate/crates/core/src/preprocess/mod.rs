//! Class rebalancing and outlier pruning, applied in that order: SMOTE first,
//! then a per-class isolation forest removes the most anomalous rows, which
//! includes implausible synthetic points.

mod iforest;
mod smote;

pub use iforest::{
    anomaly_score, average_path_length, fit_isolation_forest, remove_outliers, score_from_mean_depth,
    IsolationForest, IsolationTree, RemovalReport, DEFAULT_CONTAMINATION, DEFAULT_N_TREES,
    DEFAULT_SUBSAMPLE_SIZE,
};
pub use smote::{k_nearest_in_class, smote_resample, SmoteConfig, DEFAULT_K_NEIGHBORS};
