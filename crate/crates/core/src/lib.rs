//! Relevance propagation and spectral relevance analysis for small
//! sequential neural networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod lrp;
pub mod metrics;
pub mod netcore;
pub mod pgm;
pub mod rng;
pub mod scalar;
pub mod spray;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeedTree;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = netcore::Network<f32>;
pub type Network64 = netcore::Network<f64>;
pub type RelevanceMap32 = lrp::RelevanceMap<f32>;
pub type RelevanceMap64 = lrp::RelevanceMap<f64>;
pub type ClusterReport32 = spray::ClusterReport<f32>;
pub type ClusterReport64 = spray::ClusterReport<f64>;
