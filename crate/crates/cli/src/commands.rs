use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;

use anyhow::anyhow;
use relspray::harness::{generate_dataset, run_experiment, ExperimentConfig, SynthConfig};
use relspray::lrp::{explain_samples, render_pgm, HeatmapStore, RuleChoice};
use relspray::metrics::{
    cluster_means, read_scores_csv, sample_metrics, write_metrics_csv, MetricRecord, RegionFile,
};
use relspray::netcore::{
    accuracy, load_dataset, read_network, train_toy, write_network, Architecture, DatasetSample,
    LabeledSample, TrainConfig,
};
use relspray::spray::{
    cluster_region_stats, read_report, run_spray, write_report, ClusterReport, SprayConfig,
    TsneConfig,
};

use crate::{
    ExperimentArgs, ExplainArgs, Failure, GenerateArgs, MetricsArgs, SprayArgs, SprayOptions,
    SynthArgs, TrainArgs,
};

type Outcome = Result<String, Failure>;

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {{
        let _ = writeln!($out, $($arg)*);
    }};
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn synth_config(a: &SynthArgs, seed: u64) -> Result<SynthConfig, Failure> {
    let cfg = SynthConfig {
        per_class: a.per_class,
        artifact_probability: a.artifact_p,
        seed,
        ..SynthConfig::square(a.size)
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn generate(a: GenerateArgs) -> Outcome {
    let mut out = String::new();
    let cfg = synth_config(&a.synth, a.seed)?;
    let rows = generate_dataset(&cfg, &a.out)?;
    let flagged = rows.iter().filter(|r| r.artifact == Some(true)).count();
    say!(
        out,
        "wrote {} images ({} with watermark) to {}",
        rows.len(),
        flagged,
        a.out.display()
    );
    Ok(out)
}

pub fn train(a: TrainArgs) -> Outcome {
    let mut out = String::new();
    if a.hidden.contains(&0) {
        return Err(usage("hidden widths must be >= 1"));
    }
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be >= 1"));
    }
    if !(a.lr.is_finite() && a.lr > 0.0) {
        return Err(usage("--lr must be positive"));
    }
    let samples: Vec<DatasetSample<f32>> = load_dataset(&a.data)?;
    let first = samples
        .first()
        .ok_or_else(|| anyhow!("{}: dataset is empty", a.data.display()))?;
    let classes = samples.iter().map(|s| s.label).max().unwrap_or(0).max(1) + 1;
    let mut arch = Architecture::mlp(first.input.shape().to_vec(), &a.hidden, classes);
    if a.no_bias {
        arch = arch.without_bias();
    }
    let data: Vec<LabeledSample<f32>> = samples.iter().map(|s| s.labeled()).collect();
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        freeze_bias: false,
    };
    let trained = train_toy(&data, &arch, &cfg)?;
    write_network(&a.out, &trained.network)?;
    say!(
        out,
        "loss {:.6} -> {:.6}, training accuracy {:.4}",
        trained.initial_loss(),
        trained.final_loss(),
        accuracy(&trained.network, &data)?
    );
    Ok(out)
}

fn file_stem(id: &str) -> String {
    let id = id.strip_suffix(".pgm").unwrap_or(id);
    id.replace(['/', '\\'], "_")
}

pub fn explain(a: ExplainArgs) -> Outcome {
    let mut out = String::new();
    if !(a.epsilon.is_finite() && a.epsilon > 0.0) {
        return Err(usage("--epsilon must be positive"));
    }
    let choice = RuleChoice {
        rule: a.rule,
        bottom: a.bottom_rule,
        epsilon: a.epsilon,
    };
    let rules = choice
        .assignment::<f64>()
        .map_err(|e| usage(e.to_string()))?;
    let net = read_network::<f64>(&a.model)?;
    let mut samples: Vec<DatasetSample<f64>> = load_dataset(&a.data)?;
    if let Some(l) = a.label {
        samples.retain(|s| s.label == l);
    }
    if samples.is_empty() {
        return Err(anyhow!("no samples selected from {}", a.data.display()).into());
    }
    let output = a.output.or(a.label).unwrap_or(0);
    let store = explain_samples(&net, &samples, output, &rules)?;
    store.write(&a.out)?;
    if a.render {
        let dir = a.out.join("maps");
        fs::create_dir_all(&dir).map_err(|e| anyhow!("{}: {e}", dir.display()))?;
        for (s, m) in store.manifest.samples.iter().zip(&store.maps) {
            render_pgm(m)?.write(&dir.join(format!("{}.pgm", file_stem(&s.id))))?;
        }
    }
    let residual = store
        .max_relative_residual()
        .map_or_else(|| "n/a".to_string(), |r| format!("{r:.3e}"));
    say!(
        out,
        "explained {} samples at output {} ({}); max relative residual {}",
        store.len(),
        output,
        store.manifest.rule,
        residual
    );
    Ok(out)
}

fn spray_config(o: &SprayOptions, seed: u64) -> Result<SprayConfig, Failure> {
    if o.prefix < 2 {
        return Err(usage("--prefix must be >= 2"));
    }
    if o.clusters == Some(0) {
        return Err(usage("--clusters must be >= 1"));
    }
    if o.neighbors == Some(0) {
        return Err(usage("-k must be >= 1"));
    }
    if o.restarts == 0 {
        return Err(usage("--restarts must be >= 1"));
    }
    if o.perplexity.is_some_and(|p| !(p.is_finite() && p > 0.0)) {
        return Err(usage("--perplexity must be positive"));
    }
    let defaults = SprayConfig::default();
    let embedding = (!o.no_embedding).then(|| TsneConfig {
        perplexity: o.perplexity.unwrap_or(TsneConfig::default().perplexity),
        seed,
        ..TsneConfig::default()
    });
    Ok(SprayConfig {
        grid: o.grid,
        normalization: o.normalization,
        neighbors: o.neighbors,
        affinity: o.affinity,
        laplacian: o.laplacian,
        prefix: o.prefix,
        clusters: o.clusters,
        restarts: o.restarts,
        embedding,
        embedding_source: o.embedding_source.unwrap_or(defaults.embedding_source),
        seed,
        ..defaults
    })
}

fn print_spectrum(out: &mut String, r: &ClusterReport<f64>) {
    say!(out, "{:>4}  {:>14}  {:>14}", "i", "eigenvalue", "gap");
    for (i, v) in r.eigenvalues.iter().enumerate() {
        let gap = r
            .gaps
            .get(i)
            .map_or_else(String::new, |g| format!("{g:14.6e}"));
        let mark = if i + 1 == r.eigengap { "  <" } else { "" };
        say!(out, "{:>4}  {:14.6e}  {}{}", i + 1, v, gap, mark);
    }
    say!(
        out,
        "eigengap at {}: {} suggested clusters",
        r.eigengap,
        r.suggested_clusters
    );
    let sizes: Vec<String> = r.sizes.iter().map(|s| s.to_string()).collect();
    say!(out, "{} clusters, sizes {}", r.clusters, sizes.join(" "));
}

pub fn spray(a: SprayArgs) -> Outcome {
    let mut out = String::new();
    let cfg = spray_config(&a.spray, a.seed)?;
    let regions = a.regions.as_deref().map(RegionFile::read).transpose()?;
    let store = HeatmapStore::read(&a.heatmaps)?;
    let maps = store.maps_as::<f64>();
    let report = run_spray(&maps, Some(&store.ids()), &cfg)?;
    let stats = match &regions {
        Some(r) => cluster_region_stats(&report, &maps, &r.global)?,
        None => Vec::new(),
    };
    write_report(&a.out, &report, &cfg, &stats)?;
    print_spectrum(&mut out, &report);
    for s in &stats {
        say!(
            out,
            "cluster {} region {}: positive share {}, mean r {}",
            s.cluster,
            s.region,
            relspray::metrics::format_value(s.positive_share),
            relspray::metrics::format_value(s.mean_relative_relevance)
        );
    }
    Ok(out)
}

pub fn metrics(a: MetricsArgs) -> Outcome {
    let mut out = String::new();
    if a.regions.is_none() && a.scores.is_none() {
        return Err(usage("nothing to compute: pass --regions and/or --scores"));
    }
    let regions = a
        .regions
        .as_deref()
        .map(RegionFile::read)
        .transpose()?
        .unwrap_or_default();
    let scores: HashMap<String, Vec<f64>> = match &a.scores {
        Some(p) => read_scores_csv(p)?.into_iter().collect(),
        None => HashMap::new(),
    };
    let store = HeatmapStore::read(&a.heatmaps)?;
    let maps = store.maps_as::<f64>();
    let mut records = Vec::new();
    for (s, m) in store.manifest.samples.iter().zip(&maps) {
        let q = scores.get(&s.id).map(Vec::as_slice);
        records.extend(sample_metrics(&s.id, m, &regions.regions_for(&s.id), q)?);
    }
    if let Some(dir) = &a.report {
        let report = read_report(dir)?.manifest;
        let ids: Vec<&str> = report.samples.iter().map(|s| s.id.as_str()).collect();
        if ids != store.ids() {
            return Err(anyhow!(
                "{}: report samples do not match the heatmap store",
                dir.display()
            )
            .into());
        }
        let labels = report.labels();
        for name in regions.names() {
            let metric = format!("r:{name}");
            let values: Vec<Option<f64>> = store
                .manifest
                .samples
                .iter()
                .map(|s| {
                    records
                        .iter()
                        .find(|r| r.sample_id == s.id && r.metric == metric)
                        .and_then(|r| r.value)
                })
                .collect();
            for (c, v) in cluster_means(&values, &labels, report.clusters)
                .into_iter()
                .enumerate()
            {
                records.push(MetricRecord::new(format!("cluster:{c}"), metric.clone(), v));
            }
        }
    }
    write_metrics_csv(&a.out, &records)?;
    say!(out, "wrote {} rows to {}", records.len(), a.out.display());
    Ok(out)
}

pub fn experiment(a: ExperimentArgs) -> Outcome {
    let mut out = String::new();
    let mut cfg = ExperimentConfig::with_size(a.synth.size);
    cfg.synth = synth_config(&a.synth, 0)?;
    cfg.train.epochs = a.epochs;
    cfg.rules.rule = a.rule;
    cfg.spray.grid = a.grid;
    if a.no_embedding {
        cfg.spray.embedding = None;
    }
    cfg.seed = a.seed;
    let m = run_experiment::<f64>(&cfg, &a.out)?;
    let s = &m.summary;
    say!(
        out,
        "accuracy: train {:.4}, test {:.4}",
        s.train_accuracy,
        s.test_accuracy
    );
    say!(
        out,
        "explained {} positive test samples ({} with watermark)",
        s.explained,
        s.explained_with_artifact
    );
    say!(
        out,
        "suggested clusters {}, used {}",
        s.suggested_clusters,
        s.clusters
    );
    for c in &s.cluster_stats {
        say!(
            out,
            "cluster {}: {} members, watermark share {}, watermark fraction {:.3}",
            c.cluster,
            c.size,
            relspray::metrics::format_value(c.watermark_share),
            c.artifact_fraction
        );
    }
    match s.artifact_cluster {
        Some(c) => say!(out, "artifact cluster: {c}"),
        None => say!(out, "artifact cluster: none"),
    }
    Ok(out)
}
