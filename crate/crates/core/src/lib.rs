//! Enhancement of degraded handwritten line and page images.
//!
//! The crate covers the whole loop: synthesizing degraded corpora from clean
//! line images, training a generator / discriminator / recognizer triple
//! whose combined objective keeps the text readable while the background is
//! cleaned, enhancing full pages patch by patch, and scoring the results with
//! both binarization metrics (PSNR, F-measure, pseudo F-measure, DRD) and
//! recognition metrics (CER, WER).

pub mod corpus;
pub mod error;
pub mod image;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod training;
pub mod util;

pub use crate::error::{Error, Result};
pub use crate::image::{BinaryImage, LineImage};
pub use crate::models::{Charset, ModelBundle};
pub use crate::training::{Scenario, TrainingConfig};

/// Canonical model input height.
pub const MODEL_HEIGHT: usize = 128;
/// Canonical model input width.
pub const MODEL_WIDTH: usize = 1024;
