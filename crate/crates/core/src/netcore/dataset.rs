//! Dataset container: a directory of 8-bit grayscale PGM images and an
//! `index.csv` with columns `path,label` (paths relative to the
//! directory). An optional `artifact` column records synthetic watermark
//! flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::LabeledSample;
use crate::error::{Error, Result};
use crate::pgm::GrayImage;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub path: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<bool>,
}

/// A loaded dataset sample.
#[derive(Debug, Clone)]
pub struct DatasetSample<T: Scalar = f32> {
    pub id: String,
    pub input: Tensor<T>,
    pub label: usize,
    pub artifact: Option<bool>,
}

impl<T: Scalar> DatasetSample<T> {
    pub fn labeled(&self) -> LabeledSample<T> {
        LabeledSample {
            input: self.input.clone(),
            label: self.label,
        }
    }
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexRow>> {
    let path = dir.join(INDEX_FILE);
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<IndexRow>, _>>()
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    Ok(rows)
}

pub fn write_index(dir: &Path, rows: &[IndexRow]) -> Result<()> {
    let path = dir.join(INDEX_FILE);
    let mut writer = csv::Writer::from_path(&path)?;
    let with_flags = rows.iter().any(|r| r.artifact.is_some());
    if with_flags {
        writer.write_record(["path", "label", "artifact"])?;
    } else {
        writer.write_record(["path", "label"])?;
    }
    for r in rows {
        let label = r.label.to_string();
        if with_flags {
            let flag = r.artifact.map(|a| a.to_string()).unwrap_or_default();
            writer.write_record([r.path.as_str(), &label, &flag])?;
        } else {
            writer.write_record([r.path.as_str(), &label])?;
        }
    }
    writer.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Converts a grayscale image to a `1 × H × W` tensor scaled to [0, 1].
pub fn image_to_tensor<T: Scalar>(img: &GrayImage) -> Result<Tensor<T>> {
    let scale = T::from_f64_lossy(1.0 / 255.0);
    Tensor::new(
        vec![1, img.height, img.width],
        img.pixels
            .iter()
            .map(|&p| T::from_f64_lossy(p as f64) * scale)
            .collect(),
    )
}

/// Loads every sample listed in `dir/index.csv`. Sample ids are the index
/// paths.
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Vec<DatasetSample<T>>> {
    let rows = read_index(dir)?;
    let mut out = Vec::with_capacity(rows.len());
    let mut shape: Option<Vec<usize>> = None;
    for row in rows {
        let path: PathBuf = dir.join(&row.path);
        let input = image_to_tensor(&GrayImage::read(&path)?)?;
        match &shape {
            Some(s) if s.as_slice() != input.shape() => {
                return Err(Error::Dataset(format!(
                    "{} has shape {:?}, expected {:?}",
                    row.path,
                    input.shape(),
                    s
                )))
            }
            None => shape = Some(input.shape().to_vec()),
            _ => {}
        }
        out.push(DatasetSample {
            id: row.path,
            input,
            label: row.label,
            artifact: row.artifact,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip_and_load() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::new(2, 2, vec![0, 255, 51, 102])
            .unwrap()
            .write(&dir.path().join("a.pgm"))
            .unwrap();
        let rows = vec![IndexRow {
            path: "a.pgm".into(),
            label: 1,
            artifact: Some(false),
        }];
        write_index(dir.path(), &rows).unwrap();
        assert_eq!(read_index(dir.path()).unwrap(), rows);
        let ds: Vec<DatasetSample<f32>> = load_dataset(dir.path()).unwrap();
        assert_eq!(ds[0].input.shape(), &[1, 2, 2]);
        assert!((ds[0].input.data()[2] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn plain_two_column_index() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(INDEX_FILE), "path,label\nx.pgm,0\n").unwrap();
        let rows = read_index(dir.path()).unwrap();
        assert_eq!(rows[0].artifact, None);
    }

    #[test]
    fn missing_index_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_index(dir.path()), Err(Error::Io { .. })));
    }
}
