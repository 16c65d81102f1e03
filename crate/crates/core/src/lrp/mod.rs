//! Layer-wise relevance propagation: per-neuron redistribution rules, the
//! backward pass over a forward trace, heatmap utilities and the gradient
//! sensitivity baseline.

mod explain;
mod heatmap;
mod presets;
mod rules;
mod sensitivity;
mod store;

pub use explain::{lrp_explain, lrp_explain_audited, LayerAudit, RelevanceMap};
pub use heatmap::{
    channel_pool, normalize_heatmap, pixel_grid, pool_channels, region_relevance, render_pgm,
};
pub use presets::{explain_samples, BottomPreset, RuleChoice, RulePreset};
pub use rules::{
    alpha_beta_messages, epsilon_messages, flat_messages, maxpool_redistribute, w_square_messages,
    Rule, RuleAssignment, DEFAULT_EPSILON,
};
pub use sensitivity::sensitivity_map;
pub use store::{HeatmapStore, StoreManifest, StoredSample, STORE_BLOB, STORE_MANIFEST};
