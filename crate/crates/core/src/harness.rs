//! Synthetic "Clever Hans" experiment: a two-class bar dataset where some
//! positive images carry a bright watermark patch, a toy classifier trained
//! on it, LRP maps of the positive test images and a SpRAy report that
//! should isolate the watermark strategy.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageContext};
use crate::lrp::{explain_samples, HeatmapStore, RuleChoice};
use crate::metrics::{
    relative_relevance, write_metrics_csv, BoxRegion, MetricRecord, Region, METRICS_CSV,
};
use crate::netcore::{
    accuracy, load_dataset, train_toy, write_index, write_network, Architecture, DatasetSample,
    IndexRow, LabeledSample, TrainConfig,
};
use crate::pgm::GrayImage;
use crate::rng::SeedTree;
use crate::scalar::Scalar;
use crate::spray::{
    cluster_region_stats, run_spray, write_report, ClusterRegionStat, ClusterReport, SprayConfig,
};

pub const EXPERIMENT_MANIFEST: &str = "experiment.json";
pub const EXPERIMENT_VERSION: u32 = 1;
pub const DATASET_DIR: &str = "dataset";
pub const MODEL_DIR: &str = "model";
pub const HEATMAP_DIR: &str = "heatmaps";
pub const REPORT_DIR: &str = "report";
pub const WATERMARK_REGION: &str = "watermark";
/// A cluster whose mean heatmap puts more than this share of its positive
/// relevance in the watermark box is an artifact cluster.
pub const ARTIFACT_SHARE: f64 = 0.5;
/// Largest watermark share tolerated on artifact-free data.
pub const CLEAN_SHARE_LIMIT: f64 = 0.2;

/// Dataset generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub per_class: usize,
    /// Fraction of class-1 images stamped with the watermark.
    pub artifact_probability: f64,
    pub watermark: BoxRegion,
    /// Upper bound of the uniform background texture.
    pub noise: f64,
    /// Brightness added by the class shape.
    pub contrast: f64,
    /// Maximum offset of the shape centre along each axis, in pixels.
    pub jitter: usize,
    /// Fraction of each class used for training.
    pub split: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Defaults for a `size × size` image; the watermark sits in the
    /// bottom-right corner.
    pub fn square(size: usize) -> Self {
        let side = (size * 3 / 16).max(1);
        let margin = size / 16;
        let at = size.saturating_sub(side + margin);
        Self {
            height: size,
            width: size,
            per_class: 500,
            artifact_probability: 0.2,
            watermark: BoxRegion::new(at, at, side, side),
            noise: 0.05,
            contrast: 0.1,
            jitter: 0,
            split: 0.8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::invalid("images must be at least 8×8"));
        }
        if self.per_class == 0 {
            return Err(Error::invalid("per-class count must be >= 1"));
        }
        if 2 * self.jitter >= self.height.min(self.width) / 2 {
            return Err(Error::invalid(
                "jitter must be below a quarter of the image side",
            ));
        }
        if !(0.0..=1.0).contains(&self.artifact_probability) {
            return Err(Error::invalid("artifact probability must be in [0, 1]"));
        }
        if !self.watermark.fits(self.height, self.width) {
            return Err(Error::invalid(format!(
                "watermark {:?} does not fit a {}×{} image",
                self.watermark, self.height, self.width
            )));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::invalid("split must be in (0, 1)"));
        }
        if !(self.noise >= 0.0 && self.contrast > 0.0 && self.noise + self.contrast < 1.0) {
            return Err(Error::invalid(
                "need noise >= 0, contrast > 0 and noise + contrast < 1",
            ));
        }
        Ok(())
    }

    pub fn region(&self) -> Region {
        Region::boxes(WATERMARK_REGION, vec![self.watermark])
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::square(32)
    }
}

/// One generated image.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub image: GrayImage,
    pub label: usize,
    pub artifact: bool,
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn render(cfg: &SynthConfig, label: usize, seed: SeedTree) -> (GrayImage, bool) {
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = seed.rng();
    let mut px: Vec<f64> = (0..h * w)
        .map(|_| rng.random::<f64>() * cfg.noise)
        .collect();
    let long = (h.min(w) * 7 / 16).max(2);
    let thick = (h.min(w) / 8).max(1);
    let (bh, bw) = if label == 0 {
        (thick, long)
    } else {
        (long, thick)
    };
    let jitter = cfg.jitter as i64;
    let cy = (h as i64 - cfg.watermark.height as i64) / 2 + rng.random_range(-jitter..=jitter);
    let cx = (w as i64 - cfg.watermark.width as i64) / 2 + rng.random_range(-jitter..=jitter);
    let y0 = (cy - bh as i64 / 2).clamp(0, (h - bh) as i64) as usize;
    let x0 = (cx - bw as i64 / 2).clamp(0, (w - bw) as i64) as usize;
    for y in y0..y0 + bh {
        for x in x0..x0 + bw {
            px[y * w + x] += cfg.contrast;
        }
    }
    let stamped = label == 1 && rng.random::<f64>() < cfg.artifact_probability;
    let b = cfg.watermark;
    for y in b.y..b.y + b.height {
        for x in b.x..b.x + b.width {
            if stamped {
                px[y * w + x] = 1.0;
            } else {
                px[y * w + x] = px[y * w + x].min(cfg.noise);
            }
        }
    }
    let image =
        GrayImage::new(w, h, px.into_iter().map(quantize).collect()).expect("valid dimensions");
    (image, stamped)
}

/// Generates every image in memory. Class 0 carries a horizontal bar,
/// class 1 a vertical one; each image depends only on `cfg.seed` and its
/// index.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let images = SeedTree::new(cfg.seed).child("images");
    Ok((0..2 * cfg.per_class)
        .into_par_iter()
        .map(|i| {
            let label = i / cfg.per_class;
            let j = i % cfg.per_class;
            let (image, artifact) = render(cfg, label, images.index(i as u64));
            SynthSample {
                id: format!("c{label}_{j:04}.pgm"),
                image,
                label,
                artifact,
            }
        })
        .collect())
}

/// Writes the images and an `index.csv` with artifact flags into `dir`.
pub fn generate_dataset(cfg: &SynthConfig, dir: &Path) -> Result<Vec<IndexRow>> {
    let samples = synthesize(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    samples
        .par_iter()
        .try_for_each(|s| s.image.write(&dir.join(&s.id)))?;
    let rows: Vec<IndexRow> = samples
        .iter()
        .map(|s| IndexRow {
            path: s.id.clone(),
            label: s.label,
            artifact: Some(s.artifact),
        })
        .collect();
    write_index(dir, &rows)?;
    Ok(rows)
}

/// Stratified train/test split. Returns sorted train and test indices.
pub fn split_indices(labels: &[usize], fraction: f64, seed: SeedTree) -> (Vec<usize>, Vec<usize>) {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut seed.index(c as u64).rng());
        let cut = ((idx.len() as f64) * fraction).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Everything `run_experiment` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub hidden: usize,
    pub train: TrainConfig,
    pub rules: RuleChoice,
    /// Class whose test images are explained, at the same output.
    pub explain_class: usize,
    pub spray: SprayConfig,
    /// Drives every other seed.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            hidden: 64,
            train: TrainConfig {
                learning_rate: 0.02,
                epochs: 15,
                batch_size: 16,
                ..TrainConfig::default()
            },
            rules: RuleChoice::default(),
            explain_class: 1,
            spray: SprayConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn with_size(size: usize) -> Self {
        Self {
            synth: SynthConfig::square(size),
            ..Self::default()
        }
    }

    /// The configuration with every component seed derived from `seed`.
    pub fn seeded(&self) -> (Self, BTreeMap<String, u64>) {
        let root = SeedTree::new(self.seed);
        let seeds: BTreeMap<String, u64> = ["data", "split", "train", "spray"]
            .iter()
            .map(|n| (n.to_string(), root.child(n).seed()))
            .collect();
        let mut cfg = self.clone();
        cfg.synth.seed = seeds["data"];
        cfg.train.seed = seeds["train"];
        cfg.spray.seed = seeds["spray"];
        if let Some(t) = cfg.spray.embedding.as_mut() {
            t.seed = seeds["spray"];
        }
        (cfg, seeds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    /// Watermark share of the cluster mean heatmap's positive relevance.
    pub watermark_share: Option<f64>,
    pub mean_relative_relevance: Option<f64>,
    /// Fraction of members whose image carries the watermark.
    pub artifact_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub explained: usize,
    pub explained_with_artifact: usize,
    pub max_relative_residual: Option<f64>,
    pub suggested_clusters: usize,
    pub clusters: usize,
    pub cluster_stats: Vec<ClusterSummary>,
    /// The unique cluster above `ARTIFACT_SHARE`, if exactly one exists.
    pub artifact_cluster: Option<usize>,
    pub max_watermark_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub dataset: String,
    pub model: String,
    pub heatmaps: String,
    pub report: String,
    pub metrics: String,
    pub summary: ExperimentSummary,
}

impl ExperimentManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// The unique cluster whose watermark share exceeds `ARTIFACT_SHARE`.
pub fn artifact_cluster(stats: &[ClusterSummary]) -> Option<usize> {
    let mut hits = stats
        .iter()
        .filter(|s| s.watermark_share.is_some_and(|v| v > ARTIFACT_SHARE));
    match (hits.next(), hits.next()) {
        (Some(s), None) => Some(s.cluster),
        _ => None,
    }
}

fn to_labeled<T: Scalar>(samples: &[DatasetSample<T>], idx: &[usize]) -> Vec<LabeledSample<T>> {
    idx.iter().map(|&i| samples[i].labeled()).collect()
}

/// Generates, trains, explains, clusters and writes everything under
/// `out`. On failure the outputs created so far are removed.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentManifest> {
    let result = run_inner::<T>(cfg, out);
    if result.is_err() {
        for name in [DATASET_DIR, MODEL_DIR, HEATMAP_DIR, REPORT_DIR] {
            let _ = fs::remove_dir_all(out.join(name));
        }
        for name in [METRICS_CSV, EXPERIMENT_MANIFEST] {
            let _ = fs::remove_file(out.join(name));
        }
    }
    result
}

fn run_inner<T: Scalar>(base: &ExperimentConfig, out: &Path) -> Result<ExperimentManifest> {
    let (cfg, seeds) = base.seeded();
    cfg.synth.validate().stage("configure")?;
    if cfg.explain_class > 1 {
        return Err(Error::invalid("explain class must be 0 or 1")).stage("configure");
    }
    let dir = |name: &str| -> PathBuf { out.join(name) };

    generate_dataset(&cfg.synth, &dir(DATASET_DIR)).stage("generate")?;
    let samples: Vec<DatasetSample<T>> = load_dataset(&dir(DATASET_DIR)).stage("generate")?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let (train_idx, test_idx) =
        split_indices(&labels, cfg.synth.split, SeedTree::new(seeds["split"]));

    let arch = Architecture::mlp(vec![1, cfg.synth.height, cfg.synth.width], &[cfg.hidden], 2)
        .without_bias();
    let train_set = to_labeled(&samples, &train_idx);
    let test_set = to_labeled(&samples, &test_idx);
    let trained = train_toy(&train_set, &arch, &cfg.train).stage("train")?;
    let net = trained.network;
    let train_accuracy = accuracy(&net, &train_set).stage("train")?;
    let test_accuracy = accuracy(&net, &test_set).stage("train")?;
    write_network(&dir(MODEL_DIR), &net).stage("train")?;

    let explained: Vec<DatasetSample<T>> = test_idx
        .iter()
        .filter(|&&i| samples[i].label == cfg.explain_class)
        .map(|&i| samples[i].clone())
        .collect();
    let rules = cfg.rules.assignment::<T>().stage("explain")?;
    let store = explain_samples(&net, &explained, cfg.explain_class, &rules).stage("explain")?;
    store.write(&dir(HEATMAP_DIR)).stage("explain")?;

    let (stats, regions, report) = spray_store(&store, &cfg.spray, &cfg.synth.region())?;
    write_report(&dir(REPORT_DIR), &report, &cfg.spray, &regions).stage("report")?;

    let region = cfg.synth.region();
    let records: Vec<MetricRecord> = store
        .manifest
        .samples
        .iter()
        .zip(&store.maps)
        .map(|(s, m)| {
            let r = relative_relevance(&m.cast::<f64>(), &region)?;
            Ok(MetricRecord::new(
                s.id.clone(),
                format!("r:{WATERMARK_REGION}"),
                r,
            ))
        })
        .collect::<Result<_>>()
        .stage("metrics")?;
    write_metrics_csv(&out.join(METRICS_CSV), &records).stage("metrics")?;

    let summary = ExperimentSummary {
        train_accuracy,
        test_accuracy,
        explained: explained.len(),
        explained_with_artifact: explained
            .iter()
            .filter(|s| s.artifact == Some(true))
            .count(),
        max_relative_residual: store.max_relative_residual(),
        suggested_clusters: report.suggested_clusters,
        clusters: report.clusters,
        artifact_cluster: artifact_cluster(&stats),
        max_watermark_share: stats
            .iter()
            .filter_map(|s| s.watermark_share)
            .reduce(f64::max),
        cluster_stats: stats,
    };
    let manifest = ExperimentManifest {
        format_version: EXPERIMENT_VERSION,
        config: base.clone(),
        seeds,
        dataset: DATASET_DIR.into(),
        model: MODEL_DIR.into(),
        heatmaps: HEATMAP_DIR.into(),
        report: REPORT_DIR.into(),
        metrics: METRICS_CSV.into(),
        summary,
    };
    let path = out.join(EXPERIMENT_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n")
        .map_err(|e| Error::io(&path, e))
        .stage("report")?;
    Ok(manifest)
}

/// Runs SpRAy on a heatmap store and summarizes `region` per cluster.
pub fn spray_store(
    store: &HeatmapStore,
    cfg: &SprayConfig,
    region: &Region,
) -> Result<(
    Vec<ClusterSummary>,
    Vec<ClusterRegionStat>,
    ClusterReport<f64>,
)> {
    let maps = store.maps_as::<f64>();
    let report = run_spray(&maps, Some(&store.ids()), cfg).stage("spray")?;
    let regions =
        cluster_region_stats(&report, &maps, std::slice::from_ref(region)).stage("metrics")?;
    let artifacts: Vec<bool> = store
        .manifest
        .samples
        .iter()
        .map(|s| s.artifact == Some(true))
        .collect();
    let stats = regions
        .iter()
        .map(|r| {
            let c = r.cluster;
            let members: Vec<usize> = (0..report.len())
                .filter(|&i| report.labels[i] == c)
                .collect();
            let flagged = members.iter().filter(|&&i| artifacts[i]).count();
            ClusterSummary {
                cluster: c,
                size: members.len(),
                watermark_share: r.positive_share,
                mean_relative_relevance: r.mean_relative_relevance,
                artifact_fraction: if members.is_empty() {
                    0.0
                } else {
                    flagged as f64 / members.len() as f64
                },
            }
        })
        .collect();
    Ok((stats, regions, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(p: f64) -> SynthConfig {
        SynthConfig {
            per_class: 40,
            artifact_probability: p,
            ..SynthConfig::square(16)
        }
    }

    fn box_full(cfg: &SynthConfig, img: &GrayImage) -> bool {
        let b = cfg.watermark;
        (b.y..b.y + b.height)
            .all(|y| (b.x..b.x + b.width).all(|x| img.pixels[y * img.width + x] == 255))
    }

    #[test]
    fn default_watermark_geometry() {
        assert_eq!(
            SynthConfig::square(32).watermark,
            BoxRegion::new(24, 24, 6, 6)
        );
        assert_eq!(
            SynthConfig::square(64).watermark,
            BoxRegion::new(48, 48, 12, 12)
        );
    }

    #[test]
    fn flags_match_pixels() {
        for p in [0.0, 0.5, 1.0] {
            let cfg = small(p);
            for s in synthesize(&cfg).unwrap() {
                assert_eq!(s.artifact, box_full(&cfg, &s.image), "{}", s.id);
                if s.label == 0 || p == 0.0 {
                    assert!(!s.artifact);
                }
                if s.label == 1 && p == 1.0 {
                    assert!(s.artifact);
                }
            }
        }
    }

    #[test]
    fn artifact_count_within_binomial_interval() {
        let cfg = SynthConfig {
            per_class: 500,
            seed: 11,
            ..SynthConfig::square(16)
        };
        let n = synthesize(&cfg)
            .unwrap()
            .iter()
            .filter(|s| s.artifact)
            .count();
        assert!((69..=131).contains(&n), "{n}");
    }

    #[test]
    fn generation_is_pure() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = small(0.3);
        generate_dataset(&cfg, a.path()).unwrap();
        generate_dataset(&cfg, b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 81);
        for n in names {
            assert_eq!(
                fs::read(a.path().join(&n)).unwrap(),
                fs::read(b.path().join(&n)).unwrap()
            );
        }
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| i / 50).collect();
        let (train, test) = split_indices(&labels, 0.8, SeedTree::new(1));
        assert_eq!(train.len(), 80);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 1).count(), 10);
        let mut all = [train, test].concat();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small(0.2);
        cfg.artifact_probability = 1.5;
        assert!(synthesize(&cfg).is_err());
        let mut cfg = small(0.2);
        cfg.watermark = BoxRegion::new(12, 12, 6, 6);
        assert!(synthesize(&cfg).is_err());
        let mut cfg = small(0.2);
        cfg.split = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn failed_run_leaves_no_outputs() {
        let out = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::with_size(16);
        cfg.synth.per_class = 20;
        cfg.train.epochs = 1;
        cfg.spray.grid = (40, 40);
        let err = run_experiment::<f32>(&cfg, out.path()).unwrap_err();
        assert!(err.to_string().starts_with("spray:"), "{err}");
        assert_eq!(fs::read_dir(out.path()).unwrap().count(), 0);
    }

    #[test]
    fn small_run_is_complete_and_reproducible() {
        let mut cfg = ExperimentConfig::with_size(16);
        cfg.synth.per_class = 60;
        cfg.train.epochs = 5;
        cfg.spray.grid = (8, 8);
        cfg.spray.embedding = None;
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = run_experiment::<f32>(&cfg, a.path()).unwrap();
        run_experiment::<f32>(&cfg, b.path()).unwrap();
        for p in [&m.dataset, &m.model, &m.heatmaps, &m.report, &m.metrics] {
            assert!(a.path().join(p).exists(), "{p}");
        }
        assert_eq!(m.summary.explained, 12);
        for f in [
            EXPERIMENT_MANIFEST,
            METRICS_CSV,
            "report/report.json",
            "heatmaps/heatmaps.bin",
            "model/model.bin",
        ] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let back = ExperimentManifest::read(&a.path().join(EXPERIMENT_MANIFEST)).unwrap();
        assert_eq!(back, m);
    }
}
