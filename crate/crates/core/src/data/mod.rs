//! Bag datasets, prompt banks, case-level splitting and synthetic data.

pub mod blob;
mod dataset;
mod prompts;
mod split;
mod synth;

pub use dataset::{BagDataset, CaseRecord, DatasetHeader, EMBEDDINGS_FILE, HEADER_FILE, MANIFEST_FILE, MASKS_FILE};
pub use prompts::{load_prompt_bank, save_prompt_bank, PROMPTS_FILE, PROMPT_EMBEDDINGS_FILE};
pub use split::{stratified_split, Split};
pub use synth::{generate_synthetic, SynthConfig, SyntheticData};
