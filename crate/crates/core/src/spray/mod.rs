//! Spectral relevance analysis over a dataset of relevance maps.

mod affinity;
mod eigen;
mod kmeans;
mod laplacian;
mod pipeline;
mod preprocess;
mod report;
mod tsne;

pub use affinity::{
    affinity_to_distance, default_k, knn_affinity, squared_distances, AffinityGraph, AffinityMode,
    DISTANCE_EPSILON,
};
pub use eigen::{eigendecompose, eigengap, laplacian_spectrum, Spectrum};
pub use kmeans::{canonicalize, kmeans, spectral_cluster, KMeans, KMeansConfig};
pub use laplacian::{build_laplacian, degrees, laplacian, normalized_laplacian, LaplacianKind};
pub use pipeline::{
    run_spray, ClusterReport, EmbeddingSource, SprayConfig, DEFAULT_GRID, DEFAULT_PREFIX,
    MIN_SAMPLES,
};
pub use preprocess::{
    downsize_sum_pool, normalize_row, preprocess_dataset, HeatmapMatrix, Normalization, ShapePolicy,
};
pub use report::{
    cluster_region_stats, encode_report, read_report, write_report, ClusterRegionStat,
    EmbeddingSummary, ReportFile, ReportManifest, ReportSample, EMBEDDING_CSV, REPORT_BLOB,
    REPORT_MANIFEST,
};
pub use tsne::{tsne_embed, Embedding, TsneConfig};
