//! Label hierarchies built from semantic context.
//!
//! Two constructions share the common/rare split: pairing common classes with
//! image scene names, and clustering label-histogram descriptors of each
//! common class's patches. Rare classes always keep a single identity
//! subclass.

mod aggregation;
mod cluster;
pub mod file;
mod histogram;
mod infill;
mod kmeans;
mod partition;
mod scene;

pub use aggregation::build_aggregation_matrix;
pub use cluster::{build_labelmap_hierarchy, choose_cluster_count, LabelmapBuild, KMEANS_MAX_ITER, MAX_CLUSTER_COUNT};
pub use histogram::{compute_label_histogram, window_label_counts, HistogramDescriptor};
pub use infill::{infill_unlabeled, DensePredictor, InfillOutcome, DEFAULT_LABELED_THRESHOLD};
pub use kmeans::{count_distinct, kmeans, nearest_center, objective, KMeansResult};
pub use partition::{largest_rare_count, partition_classes, Partition};
pub use scene::build_scene_name_hierarchy;
