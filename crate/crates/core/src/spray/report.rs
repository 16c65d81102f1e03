//! On-disk cluster report: `report.json` (spectrum, gaps, labels, sizes),
//! `report.bin` (embedding coordinates then per-cluster mean heatmaps,
//! little-endian `f32`), `cluster_{c}.pgm` renders and `embedding.csv`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::{ClusterReport, EmbeddingSource, SprayConfig};
use crate::error::{Error, Result};
use crate::lrp::render_pgm;
use crate::metrics::{cluster_means, positive_share, relative_relevance, Region};
use crate::netcore::TensorEntry;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const REPORT_MANIFEST: &str = "report.json";
pub const REPORT_BLOB: &str = "report.bin";
pub const EMBEDDING_CSV: &str = "embedding.csv";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSample {
    pub id: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSummary {
    pub source: EmbeddingSource,
    pub perplexity: f64,
    pub initial_kl: f64,
    pub final_kl: f64,
}

/// Per-cluster statistic of a named region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRegionStat {
    pub region: String,
    pub cluster: usize,
    /// Share of the cluster mean heatmap's positive relevance inside the
    /// region.
    pub positive_share: Option<f64>,
    /// Mean over members of the per-sample relative relevance `r`.
    pub mean_relative_relevance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub format_version: u32,
    pub count: usize,
    pub grid: [usize; 2],
    pub normalization: String,
    pub affinity: String,
    pub laplacian: String,
    pub neighbors: usize,
    pub prefix: usize,
    pub seed: u64,
    pub eigenvalues: Vec<f64>,
    pub gaps: Vec<f64>,
    pub eigengap: usize,
    pub suggested_clusters: usize,
    pub clusters: usize,
    pub sizes: Vec<usize>,
    pub samples: Vec<ReportSample>,
    pub embedding: Option<EmbeddingSummary>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<ClusterRegionStat>,
}

impl ReportManifest {
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// A report read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFile {
    pub manifest: ReportManifest,
    /// `N × 2` row-major.
    pub embedding: Option<Vec<[f32; 2]>>,
    pub mean_heatmaps: Vec<Tensor<f32>>,
}

fn f64s<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossless()).collect()
}

/// Serializes a report to its manifest text and blob.
pub fn encode_report<T: Scalar>(
    report: &ClusterReport<T>,
    cfg: &SprayConfig,
    regions: &[ClusterRegionStat],
) -> Result<(String, Vec<u8>)> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String,
                    shape: Vec<usize>,
                    values: &mut dyn Iterator<Item = T>,
                    blob: &mut Vec<u8>| {
        tensors.push(TensorEntry {
            name,
            shape,
            offset: blob.len(),
        });
        for v in values {
            blob.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    };
    if let Some(e) = &report.embedding {
        push(
            "embedding".into(),
            vec![report.len(), 2],
            &mut e.coords.iter().copied(),
            &mut blob,
        );
    }
    for (c, m) in report.mean_heatmaps.iter().enumerate() {
        push(
            format!("cluster{c}.mean"),
            m.shape().to_vec(),
            &mut m.data().iter().copied(),
            &mut blob,
        );
    }
    let manifest = ReportManifest {
        format_version: REPORT_VERSION,
        count: report.len(),
        grid: [report.grid.0, report.grid.1],
        normalization: cfg.normalization.to_string(),
        affinity: cfg.affinity.to_string(),
        laplacian: cfg.laplacian.to_string(),
        neighbors: report.neighbors,
        prefix: report.eigenvalues.len(),
        seed: cfg.seed,
        eigenvalues: f64s(&report.eigenvalues),
        gaps: f64s(&report.gaps),
        eigengap: report.eigengap,
        suggested_clusters: report.suggested_clusters,
        clusters: report.clusters,
        sizes: report.sizes.clone(),
        samples: report
            .ids
            .iter()
            .zip(&report.labels)
            .map(|(id, &label)| ReportSample {
                id: id.clone(),
                label,
            })
            .collect(),
        embedding: report.embedding.as_ref().map(|e| EmbeddingSummary {
            source: cfg.embedding_source,
            perplexity: report.perplexity.unwrap_or(f64::NAN),
            initial_kl: e.initial_kl.to_f64_lossless(),
            final_kl: e.final_kl.to_f64_lossless(),
        }),
        tensors,
        regions: regions.to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    Ok((text, blob))
}

/// Per cluster and region: the positive share of the cluster mean heatmap
/// and the mean per-sample `r` over the members. The share is `None` when
/// mean heatmaps are not at source resolution.
pub fn cluster_region_stats<T: Scalar>(
    report: &ClusterReport<T>,
    maps: &[Tensor<T>],
    regions: &[Region],
) -> Result<Vec<ClusterRegionStat>> {
    if maps.len() != report.len() {
        return Err(Error::invalid(format!(
            "{} maps for a report over {} samples",
            maps.len(),
            report.len()
        )));
    }
    let f = |v: Option<T>| v.map(|v| v.to_f64_lossless());
    let mut out = Vec::new();
    for region in regions {
        let r: Vec<Option<f64>> = maps
            .iter()
            .map(|m| Ok(f(relative_relevance(m, region)?)))
            .collect::<Result<_>>()?;
        let means = cluster_means(&r, &report.labels, report.clusters);
        for (c, mean) in report.mean_heatmaps.iter().enumerate() {
            let share = if mean.shape() == maps[0].shape() {
                f(positive_share(mean, region)?)
            } else {
                None
            };
            out.push(ClusterRegionStat {
                region: region.name.clone(),
                cluster: c,
                positive_share: share,
                mean_relative_relevance: means[c],
            });
        }
    }
    Ok(out)
}

pub fn write_report<T: Scalar>(
    dir: &Path,
    report: &ClusterReport<T>,
    cfg: &SprayConfig,
    regions: &[ClusterRegionStat],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (text, blob) = encode_report(report, cfg, regions)?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write(REPORT_MANIFEST, text.as_bytes())?;
    write(REPORT_BLOB, &blob)?;
    for (c, m) in report.mean_heatmaps.iter().enumerate() {
        render_pgm(m)?.write(&dir.join(format!("cluster_{c}.pgm")))?;
    }
    let p = dir.join(EMBEDDING_CSV);
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["id", "x", "y", "label"])?;
    for (i, (id, label)) in report.ids.iter().zip(&report.labels).enumerate() {
        let (x, y) = match &report.embedding {
            Some(e) => (e.coords[(i, 0)].to_string(), e.coords[(i, 1)].to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([id.as_str(), &x, &y, &label.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))
}

pub fn read_report(dir: &Path) -> Result<ReportFile> {
    let m = dir.join(REPORT_MANIFEST);
    let text = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
    let manifest: ReportManifest = serde_json::from_str(&text)?;
    if manifest.format_version != REPORT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            expected: REPORT_VERSION,
        });
    }
    let b = dir.join(REPORT_BLOB);
    let blob = fs::read(&b).map_err(|e| Error::io(&b, e))?;
    let tensor = |t: &TensorEntry| -> Result<Vec<f32>> {
        let len: usize = t.shape.iter().product();
        let end = t.offset + 4 * len;
        let bytes = blob.get(t.offset..end).ok_or(Error::TruncatedBlob {
            expected: end,
            actual: blob.len(),
        })?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };
    let find = |name: &str| manifest.tensors.iter().find(|t| t.name == name);
    let embedding = match find("embedding") {
        Some(t) => Some(tensor(t)?.chunks_exact(2).map(|p| [p[0], p[1]]).collect()),
        None => None,
    };
    let mut mean_heatmaps = Vec::with_capacity(manifest.clusters);
    for c in 0..manifest.clusters {
        let name = format!("cluster{c}.mean");
        let t = find(&name).ok_or(Error::MissingTensor(name))?;
        mean_heatmaps.push(Tensor::new(t.shape.clone(), tensor(t)?)?);
    }
    Ok(ReportFile {
        manifest,
        embedding,
        mean_heatmaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spray::run_spray;
    use crate::spray::TsneConfig;

    #[test]
    fn round_trip() {
        let maps: Vec<Tensor<f32>> = (0..16)
            .map(|i| {
                let data = (0..64)
                    .map(|p| {
                        if (p % 8 < 4) == (i % 2 == 0) {
                            1.0
                        } else {
                            0.05 * (p % 3) as f32
                        }
                    })
                    .collect();
                Tensor::new(vec![8, 8], data).unwrap()
            })
            .collect();
        let cfg = SprayConfig {
            grid: (4, 4),
            embedding: Some(TsneConfig {
                iterations: 50,
                ..TsneConfig::default()
            }),
            ..SprayConfig::default()
        };
        let report = run_spray(&maps, None, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &report, &cfg, &[]).unwrap();
        let back = read_report(dir.path()).unwrap();
        assert_eq!(back.manifest.labels(), report.labels);
        assert_eq!(back.mean_heatmaps, report.mean_heatmaps);
        assert_eq!(back.embedding.as_ref().unwrap().len(), 16);
        assert!(dir.path().join("cluster_0.pgm").exists());
        let csv = std::fs::read_to_string(dir.path().join(EMBEDDING_CSV)).unwrap();
        assert_eq!(csv.lines().count(), 17);
        assert!(csv.starts_with("id,x,y,label\n"));
    }
}
