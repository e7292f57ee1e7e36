use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, RmsPropConfig};
use crate::error::{Error, Result};
use crate::losses::{AdversarialForm, LossWeights};
use crate::models::{Charset, DiscriminatorSpec, GeneratorSpec, ModelSpecs, RecognizerSpec};

/// What the recognizer is trained on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Ground-truth clean images.
    #[default]
    S1,
    /// The generator's current outputs.
    S2,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            other => Err(Error::Config(format!("unknown scenario {other:?}, expected S1 or S2"))),
        }
    }
}

/// Criterion used to pick the returned checkpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// Lowest validation character error rate of the recognizer applied to
    /// enhanced images.
    #[default]
    Cer,
    /// Highest validation PSNR of enhanced images.
    Psnr,
}

/// Recognizer layout; the class count comes from the charset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognizerLayout {
    pub channels: [usize; 5],
    pub gru_hidden: usize,
    pub dropout: f64,
}

impl Default for RecognizerLayout {
    fn default() -> Self {
        let s = RecognizerSpec::new(2);
        RecognizerLayout { channels: s.channels, gru_hidden: s.gru_hidden, dropout: s.dropout }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureConfig {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub recognizer: RecognizerLayout,
}

impl ArchitectureConfig {
    pub fn specs(&self, charset: &Charset) -> ModelSpecs {
        ModelSpecs {
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            recognizer: RecognizerSpec {
                channels: self.recognizer.channels,
                gru_hidden: self.recognizer.gru_hidden,
                dropout: self.recognizer.dropout,
                class_count: charset.class_count(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub scenario: Scenario,
    pub weights: LossWeights,
    pub adversarial_form: AdversarialForm,
    pub optimizer_g: AdamConfig,
    pub optimizer_d: AdamConfig,
    pub optimizer_r: RmsPropConfig,
    pub batch_size: usize,
    pub max_iterations: u64,
    pub seed: u64,
    /// Validate and checkpoint every this many iterations; 0 validates only
    /// at the end.
    pub checkpoint_every: u64,
    /// Recognizer-only iterations on ground-truth images before joint
    /// training starts.
    pub recognizer_pretrain_iterations: Option<u64>,
    pub selection: SelectionMetric,
    /// Model input size; lines are normalized to it.
    pub image_height: usize,
    pub image_width: usize,
    /// Evaluate at most this many validation lines.
    pub validation_limit: Option<usize>,
    /// Record parameter hashes around every update stage (slow).
    pub trace_parameters: bool,
    pub architecture: ArchitectureConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            scenario: Scenario::S1,
            weights: LossWeights::default(),
            adversarial_form: AdversarialForm::NonSaturating,
            optimizer_g: AdamConfig::default(),
            optimizer_d: AdamConfig::default(),
            optimizer_r: RmsPropConfig::default(),
            batch_size: 8,
            max_iterations: 10_000,
            seed: 0,
            checkpoint_every: 500,
            recognizer_pretrain_iterations: None,
            selection: SelectionMetric::Cer,
            image_height: crate::MODEL_HEIGHT,
            image_width: crate::MODEL_WIDTH,
            validation_limit: None,
            trace_parameters: false,
            architecture: ArchitectureConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optimizer_g.validate("optimizer_g")?;
        self.optimizer_d.validate("optimizer_d")?;
        self.optimizer_r.validate("optimizer_r")?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.architecture.generator.validate()?;
        self.architecture.discriminator.validate()?;
        let gf = self.architecture.generator.downsample_factor();
        let f = gf.max(DiscriminatorSpec::DOWNSAMPLE_FACTOR).max(RecognizerSpec::downsample_factor());
        if self.image_height == 0 || self.image_width == 0 || self.image_height % f != 0 || self.image_width % f != 0 {
            return Err(Error::Config(format!(
                "image size {}×{} must be a positive multiple of {f}",
                self.image_height, self.image_width
            )));
        }
        Ok(())
    }

    /// Frames the recognizer emits per line.
    pub fn frame_count(&self) -> usize {
        RecognizerSpec::frame_count(self.image_width)
    }

    pub fn hash(&self) -> String {
        crate::util::config_hash(self)
    }
}
