//! Heatmap store: `heatmaps.bin` holds `N × H × W` little-endian `f32`
//! values, `heatmaps.json` lists the samples in blob order together with
//! the explained output, the rule configuration and the conservation
//! residual of every map.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const STORE_MANIFEST: &str = "heatmaps.json";
pub const STORE_BLOB: &str = "heatmaps.bin";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<bool>,
    pub score: f64,
    /// `sum(map) - score`; null for maps that do not decompose the score.
    pub residual: Option<f64>,
    pub relative_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub output_index: usize,
    pub rule: String,
    pub samples: Vec<StoredSample>,
}

/// In-memory heatmap store.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStore {
    pub manifest: StoreManifest,
    pub maps: Vec<Tensor<f32>>,
}

impl HeatmapStore {
    pub fn new(height: usize, width: usize, output_index: usize, rule: impl Into<String>) -> Self {
        Self {
            manifest: StoreManifest {
                format_version: STORE_VERSION,
                count: 0,
                height,
                width,
                output_index,
                rule: rule.into(),
                samples: Vec::new(),
            },
            maps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.manifest.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// Appends an `H × W` map.
    pub fn push<T: Scalar>(&mut self, sample: StoredSample, map: &Tensor<T>) -> Result<()> {
        let expected = [self.manifest.height, self.manifest.width];
        if map.shape() != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_vec(),
                actual: map.shape().to_vec(),
            });
        }
        self.maps.push(map.cast());
        self.manifest.samples.push(sample);
        self.manifest.count = self.maps.len();
        Ok(())
    }

    pub fn maps_as<T: Scalar>(&self) -> Vec<Tensor<T>> {
        self.maps.iter().map(|m| m.cast()).collect()
    }

    pub fn max_relative_residual(&self) -> Option<f64> {
        self.manifest
            .samples
            .iter()
            .filter_map(|s| s.relative_residual)
            .fold(None, |m, r| Some(m.map_or(r, |m: f64| m.max(r))))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob =
            Vec::with_capacity(self.maps.len() * self.manifest.height * self.manifest.width * 4);
        for m in &self.maps {
            for v in m.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let b = dir.join(STORE_BLOB);
        fs::write(&b, blob).map_err(|e| Error::io(&b, e))?;
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        let m = dir.join(STORE_MANIFEST);
        fs::write(&m, text).map_err(|e| Error::io(&m, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let m = dir.join(STORE_MANIFEST);
        let text = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
        let manifest: StoreManifest = serde_json::from_str(&text)?;
        if manifest.format_version != STORE_VERSION {
            return Err(Error::VersionMismatch {
                found: manifest.format_version,
                expected: STORE_VERSION,
            });
        }
        if manifest.count != manifest.samples.len() {
            return Err(Error::Malformed(format!(
                "store declares {} maps but lists {} samples",
                manifest.count,
                manifest.samples.len()
            )));
        }
        let b = dir.join(STORE_BLOB);
        let blob = fs::read(&b).map_err(|e| Error::io(&b, e))?;
        let plane = manifest.height * manifest.width;
        let expected = manifest.count * plane * 4;
        if blob.len() != expected {
            return Err(Error::TruncatedBlob {
                expected,
                actual: blob.len(),
            });
        }
        let values: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let maps = if plane == 0 {
            Vec::new()
        } else {
            values
                .chunks_exact(plane)
                .map(|c| Tensor::new(vec![manifest.height, manifest.width], c.to_vec()))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self { manifest, maps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = HeatmapStore::new(2, 3, 1, "flat");
        let sample = StoredSample {
            id: "a".into(),
            label: Some(1),
            artifact: None,
            score: 2.5,
            residual: Some(0.0),
            relative_residual: Some(0.0),
        };
        store
            .push(
                sample,
                &Tensor::<f64>::from_f64(vec![2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap(),
            )
            .unwrap();
        assert!(store
            .push(
                store.manifest.samples[0].clone(),
                &Tensor::<f32>::zeros(&[3, 2]).unwrap()
            )
            .is_err());
        store.write(dir.path()).unwrap();
        assert_eq!(HeatmapStore::read(dir.path()).unwrap(), store);

        std::fs::write(dir.path().join(STORE_BLOB), [0u8; 5]).unwrap();
        assert!(matches!(
            HeatmapStore::read(dir.path()),
            Err(Error::TruncatedBlob { .. })
        ));
    }
}
