pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod mfs;
pub mod model;
pub mod moae;
pub mod numerics;
pub mod report;
pub mod training;

pub use checkpoint::{Checkpoint, TrainingMeta};
pub use data::{BagDataset, SynthConfig};
pub use error::{MilError, Result};
pub use metrics::{ConfusionMatrix, EvalReport};
pub use mfs::{MfsConfig, PromptBank};
pub use model::{Aggregator, Bag, CasePrediction, MilModel, ModelConfig};
pub use moae::MoaeConfig;
pub use numerics::{ParamStore, Tape, Tensor, Var};
pub use training::{TrainConfig, TrainOutcome};
