//! Shared fixtures for the benchmarks.

use milkit::data::{generate_synthetic, SynthConfig, SyntheticData};
use milkit::moae::MoaeConfig;
use milkit::ModelConfig;

pub const D_IN: usize = 64;
pub const D_PROMPT: usize = 128;

/// A 6-class synthetic set with bags of exactly `bag_size` instances.
pub fn dataset(bag_size: usize) -> SyntheticData {
    generate_synthetic(&SynthConfig {
        d_in: D_IN,
        d_prompt: D_PROMPT,
        cases_per_class: 2,
        bag_size: (bag_size, bag_size),
        seed: 7,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config")
}

pub fn model_config(d_model: usize) -> ModelConfig {
    ModelConfig {
        d_in: D_IN,
        d_model,
        d_prompt: D_PROMPT,
        ffn_hidden: 2 * d_model,
        moae: MoaeConfig {
            d_model,
            heads: 8,
            shared_heads: 2,
            top_k: 2,
            ..MoaeConfig::default()
        },
        ..ModelConfig::default()
    }
}
