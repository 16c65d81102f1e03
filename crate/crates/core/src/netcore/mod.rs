//! Deterministic inference core: layers, forward traces, a small SGD
//! trainer and the on-disk network and dataset containers.

mod dataset;
mod grad;
mod io;
mod layer;
mod network;
mod train;

pub use dataset::{
    image_to_tensor, load_dataset, read_index, write_index, DatasetSample, IndexRow, INDEX_FILE,
};
pub use grad::input_gradient;
pub use io::{
    load_network, parse_network_spec, read_network, save_network, write_network, LayerEntry,
    NetworkManifest, TensorEntry, BLOB_FILE, FORMAT_VERSION, MANIFEST_FILE,
};
pub use layer::{Conv2d, Dense, Layer, LayerKind, MaxPool2d};
pub use network::{Architecture, ForwardTrace, LayerTemplate, Network};
pub use train::{
    accuracy, mean_loss, train_network, train_toy, LabeledSample, TrainConfig, Trained,
};

pub(crate) use layer::{argmax_first, for_each_neuron, for_each_window};
