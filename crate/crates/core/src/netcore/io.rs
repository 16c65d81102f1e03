//! Network container: a JSON manifest (`model.json`) describing the layer
//! chain and naming each parameter tensor, plus a blob (`model.bin`) of
//! little-endian `f32` values laid out in manifest order.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "input_shape": [4, 84, 84],
//!   "output_size": 6,
//!   "layers": [
//!     {"kind": "conv2d", "weight": "l0.weight", "bias": "l0.bias", "stride": [4, 4]},
//!     {"kind": "relu"},
//!     {"kind": "flatten"},
//!     {"kind": "dense", "weight": "l3.weight", "bias": "l3.bias"}
//!   ],
//!   "tensors": [
//!     {"name": "l0.weight", "shape": [32, 4, 8, 8], "offset": 0},
//!     ...
//!   ]
//! }
//! ```
//!
//! `offset` is in bytes from the start of the blob.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{Conv2d, Dense, Layer, MaxPool2d};
use super::network::Network;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "model.json";
pub const BLOB_FILE: &str = "model.bin";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkManifest {
    pub format_version: u32,
    pub input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_size: Option<usize>,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerEntry {
    Dense {
        weight: String,
        bias: String,
    },
    Conv2d {
        weight: String,
        bias: String,
        stride: [usize; 2],
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        window: [usize; 2],
        stride: [usize; 2],
    },
    Flatten,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Serializes `net` into a manifest document and a parameter blob.
/// Parameters are stored as `f32`.
pub fn save_network<T: Scalar>(net: &Network<T>) -> Result<(String, Vec<u8>)> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, t: &Tensor<T>, blob: &mut Vec<u8>| {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
        name
    };
    let mut layers = Vec::with_capacity(net.len());
    for (k, layer) in net.layers().iter().enumerate() {
        let entry = match layer {
            Layer::Dense(d) => LayerEntry::Dense {
                weight: push(format!("l{k}.weight"), &d.weights, &mut blob),
                bias: push(format!("l{k}.bias"), &d.bias, &mut blob),
            },
            Layer::Conv2d(c) => LayerEntry::Conv2d {
                weight: push(format!("l{k}.weight"), &c.kernel, &mut blob),
                bias: push(format!("l{k}.bias"), &c.bias, &mut blob),
                stride: [c.stride.0, c.stride.1],
            },
            Layer::Relu => LayerEntry::Relu,
            Layer::MaxPool2d(p) => LayerEntry::MaxPool2d {
                window: [p.window.0, p.window.1],
                stride: [p.stride.0, p.stride.1],
            },
            Layer::Flatten => LayerEntry::Flatten,
        };
        layers.push(entry);
    }
    let manifest = NetworkManifest {
        format_version: FORMAT_VERSION,
        input_shape: net.input_shape().to_vec(),
        output_size: Some(net.output_size()),
        layers,
        tensors,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    Ok((text, blob))
}

/// Parses a manifest document and its parameter blob into a validated
/// network.
pub fn parse_network_spec<T: Scalar>(manifest: &str, blob: &[u8]) -> Result<Network<T>> {
    let manifest: NetworkManifest =
        serde_json::from_str(manifest).map_err(|e| Error::Malformed(e.to_string()))?;
    load_network(&manifest, blob)
}

pub fn load_network<T: Scalar>(manifest: &NetworkManifest, blob: &[u8]) -> Result<Network<T>> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if manifest.layers.is_empty() {
        return Err(Error::NoLayers);
    }

    let mut expected_bytes = 0usize;
    let mut by_name = HashMap::new();
    for t in &manifest.tensors {
        let n: usize = t.shape.iter().product();
        expected_bytes = expected_bytes.max(t.offset + 4 * n);
        if by_name.insert(t.name.as_str(), t).is_some() {
            return Err(Error::Malformed(format!("duplicate tensor `{}`", t.name)));
        }
    }
    if blob.len() != expected_bytes {
        return Err(Error::TruncatedBlob {
            expected: expected_bytes,
            actual: blob.len(),
        });
    }
    let tensor = |name: &str, layer: usize| -> Result<Tensor<T>> {
        let entry = by_name
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        let n: usize = entry.shape.iter().product();
        let bytes = &blob[entry.offset..entry.offset + 4 * n];
        let data: Vec<T> = bytes
            .chunks_exact(4)
            .map(|c| T::from_f32_exact(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidLayer {
                layer,
                reason: format!("non-finite parameter in `{name}`"),
            });
        }
        Tensor::new(entry.shape.clone(), data).map_err(|e| Error::InvalidLayer {
            layer,
            reason: e.to_string(),
        })
    };
    let invalid = |layer: usize| {
        move |e: Error| Error::InvalidLayer {
            layer,
            reason: e.to_string(),
        }
    };

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (k, entry) in manifest.layers.iter().enumerate() {
        let layer = match entry {
            LayerEntry::Dense { weight, bias } => {
                Layer::Dense(Dense::new(tensor(weight, k)?, tensor(bias, k)?).map_err(invalid(k))?)
            }
            LayerEntry::Conv2d {
                weight,
                bias,
                stride,
            } => Layer::Conv2d(
                Conv2d::new(tensor(weight, k)?, tensor(bias, k)?, (stride[0], stride[1]))
                    .map_err(invalid(k))?,
            ),
            LayerEntry::Relu => Layer::Relu,
            LayerEntry::MaxPool2d { window, stride } => Layer::MaxPool2d(
                MaxPool2d::new((window[0], window[1]), (stride[0], stride[1]))
                    .map_err(invalid(k))?,
            ),
            LayerEntry::Flatten => Layer::Flatten,
        };
        layers.push(layer);
    }
    let net = Network::new(manifest.input_shape.clone(), layers)?;
    if let Some(out) = manifest.output_size {
        if out != net.output_size() {
            return Err(Error::ShapeChain {
                layer: net.len() - 1,
                reason: format!(
                    "manifest declares {out} outputs, network produces {}",
                    net.output_size()
                ),
            });
        }
    }
    Ok(net)
}

/// Writes `model.json` and `model.bin` into `dir`, creating it if needed.
pub fn write_network<T: Scalar>(dir: &Path, net: &Network<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest, blob) = save_network(net)?;
    let m = dir.join(MANIFEST_FILE);
    fs::write(&m, manifest).map_err(|e| Error::io(&m, e))?;
    let b = dir.join(BLOB_FILE);
    fs::write(&b, blob).map_err(|e| Error::io(&b, e))?;
    Ok(())
}

pub fn read_network<T: Scalar>(dir: &Path) -> Result<Network<T>> {
    let m = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
    let b = dir.join(BLOB_FILE);
    let blob = fs::read(&b).map_err(|e| Error::io(&b, e))?;
    parse_network_spec(&text, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Architecture;
    use crate::rng::SeedTree;
    use rand::Rng;

    fn conv_manifest() -> (String, Vec<u8>) {
        let doc = r#"{
            "format_version": 1,
            "input_shape": [4, 84, 84],
            "layers": [
                {"kind": "conv2d", "weight": "c1.w", "bias": "c1.b", "stride": [4, 4]},
                {"kind": "relu"},
                {"kind": "flatten"},
                {"kind": "dense", "weight": "fc.w", "bias": "fc.b"}
            ],
            "tensors": [
                {"name": "c1.w", "shape": [32, 4, 8, 8], "offset": 0},
                {"name": "c1.b", "shape": [32], "offset": 32768},
                {"name": "fc.w", "shape": [2, 12800], "offset": 32896},
                {"name": "fc.b", "shape": [2], "offset": 135296}
            ]
        }"#;
        (doc.to_string(), vec![0u8; 135304])
    }

    #[test]
    fn parses_strided_conv_layer() {
        let (doc, blob) = conv_manifest();
        let net: Network<f32> = parse_network_spec(&doc, &blob).unwrap();
        match &net.layers()[0] {
            Layer::Conv2d(c) => {
                assert_eq!(c.kernel.shape(), &[32, 4, 8, 8]);
                assert_eq!(c.stride, (4, 4));
            }
            l => panic!("expected conv2d, got {:?}", l.kind()),
        }
        assert_eq!(net.shape_at(1), &[32, 20, 20]);
        assert_eq!(net.output_size(), 2);
    }

    #[test]
    fn wrong_byte_count_is_truncation() {
        let (doc, mut blob) = conv_manifest();
        blob.pop();
        assert!(matches!(
            parse_network_spec::<f32>(&doc, &blob),
            Err(Error::TruncatedBlob { .. })
        ));
    }

    #[test]
    fn missing_tensor_is_named() {
        let (doc, blob) = conv_manifest();
        let doc = doc.replace("\"weight\": \"fc.w\"", "\"weight\": \"fc.missing\"");
        let err = parse_network_spec::<f32>(&doc, &blob).unwrap_err();
        assert!(err.to_string().contains("fc.missing"), "{err}");
    }

    #[test]
    fn version_mismatch() {
        let (doc, blob) = conv_manifest();
        let doc = doc.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(
            parse_network_spec::<f32>(&doc, &blob),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn empty_layers() {
        let doc = r#"{"format_version": 1, "input_shape": [3], "layers": []}"#;
        assert!(matches!(
            parse_network_spec::<f32>(doc, &[]),
            Err(Error::NoLayers)
        ));
    }

    #[test]
    fn non_finite_parameter() {
        let doc = r#"{"format_version": 1, "input_shape": [1],
            "layers": [{"kind": "dense", "weight": "w", "bias": "b"}],
            "tensors": [{"name": "w", "shape": [1, 1], "offset": 0},
                        {"name": "b", "shape": [1], "offset": 4}]}"#;
        let mut blob = f32::NAN.to_le_bytes().to_vec();
        blob.extend_from_slice(&0f32.to_le_bytes());
        assert!(matches!(
            parse_network_spec::<f32>(doc, &blob),
            Err(Error::InvalidLayer { layer: 0, .. })
        ));
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(
            parse_network_spec::<f32>("{not json", &[]),
            Err(Error::Malformed(_))
        ));
    }

    #[test]
    fn round_trip_three_layer_net() {
        let arch = Architecture::mlp(vec![1, 3, 3], &[7], 4);
        let net: Network<f32> = arch.initialize(SeedTree::new(9)).unwrap();
        let (doc, blob) = save_network(&net).unwrap();
        let back: Network<f32> = parse_network_spec(&doc, &blob).unwrap();
        assert_eq!(back, net);
        let mut rng = SeedTree::new(1).rng();
        for _ in 0..10 {
            let x =
                Tensor::new(vec![1, 3, 3], (0..9).map(|_| rng.random::<f32>()).collect()).unwrap();
            assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap());
        }
    }
}
