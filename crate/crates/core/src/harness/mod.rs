//! Training, evaluation, attention and graph exports, experiments and checks.

pub mod attention;
pub mod bench;
pub mod experiment;
pub mod gradcheck;
pub mod graphs;
pub mod metrics;
pub mod train;

pub use metrics::{auc, compute_metrics, ClassMetrics, MetricsReport};
pub use train::{predict, train, Checkpoint, CheckpointMeta, EpochLog, Trained};
pub use experiment::{shortcut_experiment, ExperimentSpec, ShortcutReport};
pub use graphs::{compare_graphs, sample_graphs, GraphReport, GraphSet};
