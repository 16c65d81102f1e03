use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::affinity::{
    affinity_to_distance, default_k, knn_affinity, squared_distances, AffinityMode,
    DISTANCE_EPSILON,
};
use super::eigen::{eigengap, laplacian_spectrum};
use super::kmeans::{spectral_cluster, KMeansConfig};
use super::laplacian::LaplacianKind;
use super::preprocess::{preprocess_dataset, Normalization, ShapePolicy};
use super::tsne::{tsne_embed, Embedding, TsneConfig};
use crate::error::{Error, Result, StageContext};
use crate::rng::SeedTree;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MIN_SAMPLES: usize = 4;
pub const DEFAULT_PREFIX: usize = 20;
pub const DEFAULT_GRID: (usize, usize) = (20, 20);

/// Distances the embedding is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// `1 / (W + eps)` from the affinity graph.
    #[default]
    Affinity,
    /// Euclidean distances between preprocessed rows.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprayConfig {
    pub grid: (usize, usize),
    pub normalization: Normalization,
    pub shape_policy: ShapePolicy,
    /// `None` uses `ceil(ln N)`.
    pub neighbors: Option<usize>,
    pub affinity: AffinityMode,
    pub laplacian: LaplacianKind,
    /// Eigenvalues inspected for the eigengap.
    pub prefix: usize,
    /// Overrides the eigengap suggestion.
    pub clusters: Option<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    /// `None` skips the embedding.
    pub embedding: Option<TsneConfig>,
    pub embedding_source: EmbeddingSource,
    pub seed: u64,
}

impl Default for SprayConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            normalization: Normalization::L1,
            shape_policy: ShapePolicy::RequireUniform,
            neighbors: None,
            affinity: AffinityMode::Binary,
            laplacian: LaplacianKind::Symmetric,
            prefix: DEFAULT_PREFIX,
            clusters: None,
            restarts: 10,
            max_iter: 300,
            embedding: Some(TsneConfig::default()),
            embedding_source: EmbeddingSource::Affinity,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport<T: Scalar = f32> {
    pub ids: Vec<String>,
    pub grid: (usize, usize),
    pub neighbors: usize,
    /// First `m` eigenvalues.
    pub eigenvalues: Vec<T>,
    pub gaps: Vec<T>,
    /// 1-based index of the largest gap; equals the suggested count.
    pub eigengap: usize,
    pub suggested_clusters: usize,
    pub clusters: usize,
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Mean source map per cluster; at source resolution when shapes are
    /// uniform, otherwise at grid resolution.
    pub mean_heatmaps: Vec<Tensor<T>>,
    pub embedding: Option<Embedding<T>>,
    /// Perplexity actually used by the embedding.
    pub perplexity: Option<f64>,
}

impl<T: Scalar> ClusterReport<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == cluster)
            .collect()
    }
}

fn mean_maps<T: Scalar>(maps: &[Tensor<T>], labels: &[usize], k: usize) -> Result<Vec<Tensor<T>>> {
    let shape = maps[0].shape().to_vec();
    let mut sums = vec![Tensor::zeros(&shape)?; k];
    let mut counts = vec![0usize; k];
    for (m, &l) in maps.iter().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums[l].data_mut().iter_mut().zip(m.data()) {
            *s += v;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| {
            let inv = T::one() / T::from_count(c.max(1));
            s.map(|v| v * inv)
        })
        .collect())
}

/// Preprocess, affinity, Laplacian spectrum, eigengap, clustering and
/// (optionally) embedding over a set of `H × W` relevance maps.
pub fn run_spray<T: Scalar>(
    maps: &[Tensor<T>],
    ids: Option<&[String]>,
    cfg: &SprayConfig,
) -> Result<ClusterReport<T>> {
    let n = maps.len();
    if n < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "need ≥ {MIN_SAMPLES} samples, got {n}"
        )));
    }
    let hm = preprocess_dataset(maps, ids, cfg.grid, cfg.normalization, cfg.shape_policy)
        .stage("preprocess")?;
    let k_nn = cfg.neighbors.unwrap_or_else(|| default_k(n));
    let graph = knn_affinity(&hm, k_nn, cfg.affinity).stage("affinity")?;
    let spectrum = laplacian_spectrum(&graph.weights, cfg.laplacian).stage("eigendecompose")?;
    let m = cfg.prefix.min(n);
    let (g, gaps) = eigengap(&spectrum.values, m).stage("eigengap")?;
    let k = cfg.clusters.unwrap_or(g);
    let seeds = SeedTree::new(cfg.seed);
    let km = KMeansConfig {
        restarts: cfg.restarts,
        max_iter: cfg.max_iter,
        seed: seeds.child("cluster").seed(),
    };
    let labels = spectral_cluster(&spectrum, k, cfg.laplacian == LaplacianKind::Symmetric, &km)
        .stage("cluster")?;
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);

    let uniform = maps.iter().all(|m| m.shape() == maps[0].shape());
    let mean_heatmaps = if uniform {
        mean_maps(maps, &labels, k)
    } else {
        let pooled: Vec<Tensor<T>> = hm
            .rows
            .rows()
            .into_iter()
            .map(|r| Tensor::new(vec![cfg.grid.0, cfg.grid.1], r.to_vec()))
            .collect::<Result<_>>()?;
        mean_maps(&pooled, &labels, k)
    }
    .stage("mean-heatmaps")?;

    let (embedding, perplexity) = match &cfg.embedding {
        None => (None, None),
        Some(t) => {
            let dist: Array2<T> = match cfg.embedding_source {
                EmbeddingSource::Affinity => {
                    affinity_to_distance(&graph.weights, T::from_f64_lossy(DISTANCE_EPSILON))
                        .stage("embedding")?
                }
                EmbeddingSource::Euclidean => squared_distances(&hm.rows).mapv(|v| v.sqrt()),
            };
            // small sets get the largest perplexity the embedding accepts
            let max_perp = (n as f64 - 1.0) / 3.0;
            let tcfg = TsneConfig {
                perplexity: t.perplexity.min(max_perp),
                seed: seeds.child("embedding").seed(),
                ..*t
            };
            let e = tsne_embed(&dist, &tcfg).stage("embedding")?;
            (Some(e), Some(tcfg.perplexity))
        }
    };

    Ok(ClusterReport {
        ids: hm.ids,
        grid: cfg.grid,
        neighbors: k_nn,
        eigenvalues: spectrum.values[..m].to_vec(),
        gaps,
        eigengap: g,
        suggested_clusters: g,
        clusters: k,
        labels,
        sizes,
        mean_heatmaps,
        embedding,
        perplexity,
    })
}
