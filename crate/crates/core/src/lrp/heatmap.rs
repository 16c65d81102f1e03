//! Operations on relevance maps: channel pooling, region sums,
//! normalization and PGM rendering.

use crate::error::{Error, Result};
use crate::pgm::GrayImage;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::explain::RelevanceMap;

/// Sums a `C × H × W` map over channels into `H × W`.
pub fn channel_pool<T: Scalar>(map: &RelevanceMap<T>) -> Result<RelevanceMap<T>> {
    Ok(RelevanceMap {
        values: pool_channels(&map.values)?,
        ..map.clone()
    })
}

pub fn pool_channels<T: Scalar>(values: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = values.shape() else {
        return Err(Error::InvalidShape {
            shape: values.shape().to_vec(),
            reason: "channel pooling needs a C×H×W map".into(),
        });
    };
    let plane = h * w;
    let mut out = vec![T::zero(); plane];
    for ch in 0..*c {
        for (o, &v) in out
            .iter_mut()
            .zip(&values.data()[ch * plane..(ch + 1) * plane])
        {
            *o += v;
        }
    }
    Tensor::new(vec![*h, *w], out)
}

/// Reduces any map to a 2-D pixel grid: `C×H×W` is channel-pooled,
/// `H×W` is kept, a vector becomes a single row.
pub fn pixel_grid<T: Scalar>(values: &Tensor<T>) -> Result<Tensor<T>> {
    match values.rank() {
        3 => pool_channels(values),
        2 => Ok(values.clone()),
        1 => values.clone().reshape(vec![1, values.len()]),
        _ => Err(Error::InvalidShape {
            shape: values.shape().to_vec(),
            reason: "expected a rank 1-3 map".into(),
        }),
    }
}

/// Total relevance over the flat indices in `region`.
pub fn region_relevance<T: Scalar>(values: &Tensor<T>, region: &[usize]) -> Result<T> {
    let data = values.data();
    region.iter().try_fold(T::zero(), |acc, &i| {
        data.get(i).map(|&v| acc + v).ok_or(Error::OutOfBounds {
            index: i,
            len: data.len(),
        })
    })
}

/// Divides by the largest absolute value so the map lies in [-1, 1].
/// All-zero maps are returned unchanged.
pub fn normalize_heatmap<T: Scalar>(values: &Tensor<T>) -> Tensor<T> {
    let m = values.max_abs();
    if m.is_zero() {
        return values.clone();
    }
    values.map(|v| v / m)
}

/// Renders a signed 2-D map to 8-bit gray: 128 is zero relevance, the
/// largest magnitude maps to 0 or 255.
pub fn render_pgm<T: Scalar>(values: &Tensor<T>) -> Result<GrayImage> {
    let grid = pixel_grid(values)?;
    let (h, w) = (grid.shape()[0], grid.shape()[1]);
    let m = grid.max_abs().to_f64_lossless();
    let pixels = grid
        .data()
        .iter()
        .map(|v| {
            let u = if m > 0.0 {
                v.to_f64_lossless() / m
            } else {
                0.0
            };
            (128.0 + 127.0 * u).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn map(shape: Vec<usize>, data: &[f64]) -> RelevanceMap<f64> {
        RelevanceMap {
            values: Tensor::from_f64(shape, data).unwrap(),
            output_index: 0,
            score: 0.0,
            residual: None,
            sample_id: None,
        }
    }

    #[test]
    fn two_channels_sum_per_pixel() {
        let pooled = channel_pool(&map(vec![2, 1, 1], &[1.0, 2.0])).unwrap();
        assert_eq!(pooled.values.shape(), &[1, 1]);
        assert_eq!(pooled.values.data(), &[3.0]);
        let zeros = channel_pool(&map(vec![3, 2, 2], &[0.0; 12])).unwrap();
        assert!(zeros.values.data().iter().all(|v| *v == 0.0));
        assert!(channel_pool(&map(vec![4], &[0.0; 4])).is_err());
    }

    #[test]
    fn channel_pool_preserves_total() {
        let mut rng = crate::SeedTree::new(3).rng();
        let data: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = map(vec![3, 4, 4], &data);
        let naive: f64 = data.iter().sum();
        assert!((channel_pool(&m).unwrap().total() - naive).abs() < 1e-6);
    }

    #[test]
    fn region_sums() {
        let mut rng = crate::SeedTree::new(4).rng();
        let data: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = Tensor::<f64>::from_f64(vec![4, 4], &data).unwrap();
        let all: Vec<usize> = (0..16).collect();
        let total: f64 = data.iter().sum();
        assert!((region_relevance(&t, &all).unwrap() - total).abs() < 1e-12);
        assert_eq!(region_relevance(&t, &[]).unwrap(), 0.0);
        let (a, b): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| i % 3 == 0);
        let parts = region_relevance(&t, &a).unwrap() + region_relevance(&t, &b).unwrap();
        assert!((parts - total).abs() < 1e-6);
        assert!(region_relevance(&t, &[16]).is_err());
    }

    #[test]
    fn normalize_cases() {
        let t = Tensor::<f64>::from_f64(vec![2], &[2.0, -4.0]).unwrap();
        let n = normalize_heatmap(&t);
        assert_eq!(n.data(), &[0.5, -1.0]);
        assert_eq!(normalize_heatmap(&n), n);
        let z = Tensor::<f64>::zeros(&[3]).unwrap();
        assert_eq!(normalize_heatmap(&z), z);
    }

    #[test]
    fn render_centres_zero_at_128() {
        let t = Tensor::<f64>::from_f64(vec![1, 3], &[-2.0, 0.0, 2.0]).unwrap();
        assert_eq!(render_pgm(&t).unwrap().pixels, vec![1, 128, 255]);
    }
}
