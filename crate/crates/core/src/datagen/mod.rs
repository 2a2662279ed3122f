//! Synthetic heterogeneous sources and non-IID partitioning.

mod dataset;
mod partition;
mod shift;
mod theory;

pub use dataset::LocalDataset;
pub use partition::{
    dirichlet_proportions, heterogeneity_emd, kmeans, label_histogram, largest_remainder, partition_dirichlet,
    partition_feature_clusters, partition_skewness, pca_project, support, PartitionScheme, PartitionSpec,
};
pub use shift::{apply_input_shift, input_shift_matrix};
pub use theory::{default_mu, default_tau, generate_theory_dataset, TheoryGenConfig};
