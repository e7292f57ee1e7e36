//! Joint adversarial training of generator, discriminator and recognizer,
//! and the generator/discriminator fine-tuning protocol.

mod config;
mod optim;
mod trainer;

pub use config::{ArchitectureConfig, RecognizerLayout, Scenario, SelectionMetric, TrainingConfig};
pub use optim::{AdamConfig, Optimizer, RmsPropConfig};
pub use trainer::{
    fine_tune, load_pairs, train, validate, CheckpointRecord, FineTuneReport, IterationReport,
    NetworkHashes, ParameterTrace, RecognizerSource, TrainOptions, TrainOutcome, TrainPair, Trainer,
    ValidationResult, BEST_MODEL_FILE, REPORTS_FILE,
};
