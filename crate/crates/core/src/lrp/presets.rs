use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::explain::lrp_explain;
use super::heatmap::pixel_grid;
use super::rules::{Rule, RuleAssignment, DEFAULT_EPSILON};
use super::store::{HeatmapStore, StoredSample};
use crate::error::{Error, Result};
use crate::netcore::{DatasetSample, Network};
use crate::scalar::Scalar;

/// Named rule for the upper layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RulePreset {
    /// αβ with α=1, β=0.
    #[default]
    Ab1,
    /// αβ with α=2, β=-1.
    Ab2,
    Eps,
    Flat,
}

/// Named rule for the first weighted layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BottomPreset {
    W2,
    Flat,
}

impl FromStr for RulePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ab1" => Ok(RulePreset::Ab1),
            "ab2" => Ok(RulePreset::Ab2),
            "eps" => Ok(RulePreset::Eps),
            "flat" => Ok(RulePreset::Flat),
            _ => Err(Error::RuleConfig(format!(
                "unknown rule `{s}` (ab1, ab2, eps, flat)"
            ))),
        }
    }
}

impl FromStr for BottomPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w2" => Ok(BottomPreset::W2),
            "flat" => Ok(BottomPreset::Flat),
            _ => Err(Error::RuleConfig(format!(
                "unknown bottom rule `{s}` (w2, flat)"
            ))),
        }
    }
}

impl fmt::Display for RulePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RulePreset::Ab1 => "ab1",
            RulePreset::Ab2 => "ab2",
            RulePreset::Eps => "eps",
            RulePreset::Flat => "flat",
        })
    }
}

impl fmt::Display for BottomPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BottomPreset::W2 => "w2",
            BottomPreset::Flat => "flat",
        })
    }
}

/// Serializable rule configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleChoice {
    pub rule: RulePreset,
    #[serde(default)]
    pub bottom: Option<BottomPreset>,
    pub epsilon: f64,
}

impl Default for RuleChoice {
    fn default() -> Self {
        Self {
            rule: RulePreset::Ab1,
            bottom: None,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl RuleChoice {
    pub fn assignment<T: Scalar>(&self) -> Result<RuleAssignment<T>> {
        let rule = match self.rule {
            RulePreset::Ab1 => Rule::alpha1_beta0(),
            RulePreset::Ab2 => Rule::alpha2_beta1(),
            RulePreset::Eps => Rule::epsilon(T::from_f64_lossy(self.epsilon))?,
            RulePreset::Flat => Rule::Flat,
        };
        let mut a = RuleAssignment::uniform(rule);
        if let Some(b) = self.bottom {
            a = a.with_bottom(match b {
                BottomPreset::W2 => Rule::WSquare,
                BottomPreset::Flat => Rule::Flat,
            });
        }
        Ok(a)
    }
}

/// Explains output `output_index` for every sample and collects the
/// channel-pooled maps into a store. Samples are processed in parallel;
/// the store keeps input order.
pub fn explain_samples<T: Scalar>(
    net: &Network<T>,
    samples: &[DatasetSample<T>],
    output_index: usize,
    rules: &RuleAssignment<T>,
) -> Result<HeatmapStore> {
    if output_index >= net.output_size() {
        return Err(Error::OutOfBounds {
            index: output_index,
            len: net.output_size(),
        });
    }
    rules.validate(net)?;
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("no samples to explain"))?;
    let grid_shape = pixel_grid(&first.input)?.shape().to_vec();
    let maps: Vec<_> = samples
        .par_iter()
        .map(|s| -> Result<_> {
            let trace = net.forward(&s.input)?;
            let r = lrp_explain(net, &trace, output_index, rules)?;
            let grid = pixel_grid(&r.values)?;
            let meta = StoredSample {
                id: s.id.clone(),
                label: Some(s.label),
                artifact: s.artifact,
                score: r.score.to_f64_lossless(),
                residual: r.residual.map(|v| v.to_f64_lossless()),
                relative_residual: r.relative_residual().map(|v| v.to_f64_lossless()),
            };
            Ok((meta, grid))
        })
        .collect::<Result<_>>()?;
    let mut store = HeatmapStore::new(grid_shape[0], grid_shape[1], output_index, rules.describe());
    for (meta, grid) in maps {
        store.push(meta, &grid)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Architecture;
    use crate::tensor::Tensor;
    use crate::SeedTree;

    #[test]
    fn presets_parse() {
        assert_eq!("ab2".parse::<RulePreset>().unwrap(), RulePreset::Ab2);
        assert!("ab3".parse::<RulePreset>().is_err());
        assert_eq!("w2".parse::<BottomPreset>().unwrap(), BottomPreset::W2);
        let a: RuleAssignment<f64> = RuleChoice {
            bottom: Some(BottomPreset::Flat),
            ..Default::default()
        }
        .assignment()
        .unwrap();
        assert!(a.describe().contains("bottom: flat"));
    }

    #[test]
    fn store_keeps_order_and_conserves() {
        let arch = Architecture::mlp(vec![1, 4, 4], &[8], 2).without_bias();
        let net: Network<f64> = arch.initialize(SeedTree::new(3)).unwrap();
        let samples: Vec<DatasetSample<f64>> = (0..6)
            .map(|i| DatasetSample {
                id: format!("s{i}"),
                input: Tensor::new(
                    vec![1, 4, 4],
                    (0..16)
                        .map(|p| ((p * 7 + i * 3) % 11) as f64 / 10.0)
                        .collect(),
                )
                .unwrap(),
                label: i % 2,
                artifact: None,
            })
            .collect();
        let store = explain_samples(
            &net,
            &samples,
            1,
            &RuleChoice::default().assignment().unwrap(),
        )
        .unwrap();
        assert_eq!(
            store.ids(),
            (0..6).map(|i| format!("s{i}")).collect::<Vec<_>>()
        );
        assert_eq!(store.manifest.height, 4);
        for s in &store.manifest.samples {
            if s.score > 0.0 {
                assert!(s.relative_residual.unwrap() < 1e-6);
            }
        }
        assert!(explain_samples(
            &net,
            &samples,
            2,
            &RuleChoice::default().assignment().unwrap()
        )
        .is_err());
    }
}
