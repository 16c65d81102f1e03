//! Scalar summaries of relevance maps and score vectors. Undefined values
//! are `None` and serialize as `null`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_AVERAGE_GRID: (usize, usize) = (64, 64);
pub const METRICS_CSV: &str = "metrics.csv";

/// Axis-aligned box, half-open: rows `y..y+height`, columns `x..x+width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl BoxRegion {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn fits(&self, h: usize, w: usize) -> bool {
        self.width > 0 && self.height > 0 && self.x + self.width <= w && self.y + self.height <= h
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionShape {
    /// Union of boxes.
    Boxes(Vec<BoxRegion>),
    /// Flat row-major pixel indices.
    Pixels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    #[serde(flatten)]
    pub shape: RegionShape,
}

impl Region {
    pub fn boxes(name: impl Into<String>, boxes: Vec<BoxRegion>) -> Self {
        Self {
            name: name.into(),
            shape: RegionShape::Boxes(boxes),
        }
    }

    pub fn pixels(name: impl Into<String>, pixels: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape: RegionShape::Pixels(pixels),
        }
    }

    /// Membership mask over an `h × w` grid.
    pub fn mask(&self, h: usize, w: usize) -> Result<Vec<bool>> {
        let mut mask = vec![false; h * w];
        match &self.shape {
            RegionShape::Boxes(boxes) => {
                for b in boxes {
                    if !b.fits(h, w) {
                        return Err(Error::invalid(format!(
                            "region `{}`: box {b:?} is empty or outside a {h}×{w} map",
                            self.name
                        )));
                    }
                    for y in b.y..b.y + b.height {
                        mask[y * w + b.x..y * w + b.x + b.width].fill(true);
                    }
                }
            }
            RegionShape::Pixels(px) => {
                for &p in px {
                    *mask.get_mut(p).ok_or(Error::OutOfBounds {
                        index: p,
                        len: h * w,
                    })? = true;
                }
            }
        }
        Ok(mask)
    }
}

fn grid_dims<T: Scalar>(map: &Tensor<T>) -> Result<(usize, usize)> {
    match map.shape() {
        [h, w] => Ok((*h, *w)),
        s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected an H×W map".into(),
        }),
    }
}

/// `r = (R_region / R_total) · (area_total / area_region)`; `None` when
/// the total relevance is zero.
pub fn relative_relevance<T: Scalar>(map: &Tensor<T>, region: &Region) -> Result<Option<T>> {
    let (h, w) = grid_dims(map)?;
    let mask = region.mask(h, w)?;
    let area = mask.iter().filter(|&&m| m).count();
    if area == 0 {
        return Err(Error::invalid(format!("region `{}` is empty", region.name)));
    }
    let total = map.sum();
    if total == T::zero() {
        return Ok(None);
    }
    let inside: T = map
        .data()
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .sum();
    Ok(Some(
        inside / total * T::from_count(h * w) / T::from_count(area),
    ))
}

/// Mean positive relevance outside the boxes over mean positive relevance
/// inside them. Only pixels with positive relevance enter either mean; an
/// empty outside set counts as mean 0; no positive pixel inside gives
/// `None`.
pub fn context_ratio_mu<T: Scalar>(map: &Tensor<T>, boxes: &[BoxRegion]) -> Result<Option<T>> {
    let (h, w) = grid_dims(map)?;
    let mask = Region::boxes("boxes", boxes.to_vec()).mask(h, w)?;
    let (mut sin, mut nin, mut sout, mut nout) = (T::zero(), 0usize, T::zero(), 0usize);
    for (&v, &m) in map.data().iter().zip(&mask) {
        if v > T::zero() {
            if m {
                sin += v;
                nin += 1;
            } else {
                sout += v;
                nout += 1;
            }
        }
    }
    if nin == 0 {
        return Ok(None);
    }
    let mean_in = sin / T::from_count(nin);
    let mean_out = if nout == 0 {
        T::zero()
    } else {
        sout / T::from_count(nout)
    };
    Ok(Some(mean_out / mean_in))
}

/// `(q_max - q_min) / q_max`; `None` when `q_max == 0`.
pub fn delta_q<T: Scalar>(q: &[T]) -> Result<Option<T>> {
    if q.is_empty() {
        return Err(Error::invalid("score vector is empty"));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score vector".into()));
    }
    let max = q.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let min = q.iter().fold(T::infinity(), |m, &v| m.min(v));
    if max == T::zero() {
        return Ok(None);
    }
    Ok(Some((max - min) / max))
}

/// Share of the map's positive relevance that falls inside `region`;
/// `None` when the map has no positive relevance.
pub fn positive_share<T: Scalar>(map: &Tensor<T>, region: &Region) -> Result<Option<T>> {
    let (h, w) = grid_dims(map)?;
    let mask = region.mask(h, w)?;
    let (mut inside, mut total) = (T::zero(), T::zero());
    for (&v, &m) in map.data().iter().zip(&mask) {
        if v > T::zero() {
            total += v;
            if m {
                inside += v;
            }
        }
    }
    Ok((total > T::zero()).then(|| inside / total))
}

/// Nearest-neighbour resample of an `H × W` map to `target`.
pub fn resample_nearest<T: Scalar>(map: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let (h, w) = grid_dims(map)?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::invalid("resample target must be non-empty"));
    }
    let src = map.data();
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let sy = ((2 * y + 1) * h / (2 * th)).min(h - 1);
        for x in 0..tw {
            let sx = ((2 * x + 1) * w / (2 * tw)).min(w - 1);
            out.push(src[sy * w + sx]);
        }
    }
    Tensor::new(vec![th, tw], out)
}

/// Resamples every map to `target` and averages them.
pub fn average_heatmap<T: Scalar>(maps: &[Tensor<T>], target: (usize, usize)) -> Result<Tensor<T>> {
    if maps.is_empty() {
        return Err(Error::invalid("cannot average an empty set of maps"));
    }
    let mut acc = Tensor::zeros(&[target.0, target.1])?;
    for m in maps {
        let r = if m.shape() == [target.0, target.1] {
            m.clone()
        } else {
            resample_nearest(m, target)?
        };
        for (a, &v) in acc.data_mut().iter_mut().zip(r.data()) {
            *a += v;
        }
    }
    let inv = T::one() / T::from_count(maps.len());
    Ok(acc.map(|v| v * inv))
}

/// Sums each `H × W` frame over the horizontal axis: output `[T, H]` with
/// `out[t][y] = Σ_x frame_t[y][x]`.
pub fn temporal_pool<T: Scalar>(frames: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("no frames to pool"))?;
    let (h, w) = grid_dims(first)?;
    let mut out = Vec::with_capacity(frames.len() * h);
    for f in frames {
        if f.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                expected: first.shape().to_vec(),
                actual: f.shape().to_vec(),
            });
        }
        out.extend(
            f.data()
                .chunks_exact(w)
                .map(|row| row.iter().copied().sum::<T>()),
        );
    }
    Tensor::new(vec![frames.len(), h], out)
}

/// `[T, H]` strip matrix transposed to an `H × T` image with time on the
/// horizontal axis.
pub fn strip_image<T: Scalar>(strip: &Tensor<T>) -> Result<Tensor<T>> {
    let (t, h) = grid_dims(strip)?;
    let d = strip.data();
    Tensor::new(
        vec![h, t],
        (0..h * t).map(|i| d[(i % t) * h + i / t]).collect(),
    )
}

/// Arithmetic mean of the defined values per cluster.
pub fn cluster_means(
    values: &[Option<f64>],
    labels: &[usize],
    clusters: usize,
) -> Vec<Option<f64>> {
    (0..clusters)
        .map(|c| {
            let v: Vec<f64> = values
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .filter_map(|(v, _)| *v)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// One `metrics.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sample_id: String,
    pub metric: String,
    pub value: Option<f64>,
}

impl MetricRecord {
    pub fn new(
        sample_id: impl Into<String>,
        metric: impl Into<String>,
        value: Option<f64>,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            metric: metric.into(),
            value,
        }
    }
}

pub fn format_value(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |v| v.to_string())
}

pub fn write_metrics_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "metric", "value"])?;
    for r in records {
        w.write_record([
            r.sample_id.as_str(),
            r.metric.as_str(),
            &format_value(r.value),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let value = match &row[2] {
            "null" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| Error::Malformed(format!("bad metric value `{s}`")))?,
            ),
        };
        out.push(MetricRecord::new(&row[0], &row[1], value));
    }
    Ok(out)
}

/// Reads score vectors from a CSV whose first column is the sample id and
/// whose remaining columns are the scores. The header row is skipped.
pub fn read_scores_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let id = row.get(0).unwrap_or_default().to_string();
        let scores = row
            .iter()
            .skip(1)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Malformed(format!("bad score `{s}` for `{id}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((id, scores));
    }
    Ok(out)
}

/// Metric rows for one sample: `r:<name>` for every region, `mu:<name>`
/// for box regions and `dq` when a score vector is given.
pub fn sample_metrics<T: Scalar>(
    id: &str,
    map: &Tensor<T>,
    regions: &[&Region],
    scores: Option<&[f64]>,
) -> Result<Vec<MetricRecord>> {
    let f = |v: Option<T>| v.map(|v| v.to_f64_lossless());
    let mut out = Vec::new();
    for region in regions {
        out.push(MetricRecord::new(
            id,
            format!("r:{}", region.name),
            f(relative_relevance(map, region)?),
        ));
        if let RegionShape::Boxes(b) = &region.shape {
            out.push(MetricRecord::new(
                id,
                format!("mu:{}", region.name),
                f(context_ratio_mu(map, b)?),
            ));
        }
    }
    if let Some(q) = scores {
        out.push(MetricRecord::new(id, "dq", delta_q(q)?));
    }
    Ok(out)
}

/// Region definitions: regions applied to every sample plus per-sample
/// additions keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionFile {
    #[serde(default)]
    pub global: Vec<Region>,
    #[serde(default)]
    pub samples: std::collections::BTreeMap<String, Vec<Region>>,
}

impl RegionFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Regions for `id`, global ones first.
    pub fn regions_for(&self, id: &str) -> Vec<&Region> {
        self.global
            .iter()
            .chain(self.samples.get(id).into_iter().flatten())
            .collect()
    }

    /// Distinct region names in first-seen order.
    pub fn names(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.global
            .iter()
            .chain(self.samples.values().flatten())
            .filter(|r| seen.insert(r.name.clone()))
            .map(|r| r.name.clone())
            .collect()
    }
}
