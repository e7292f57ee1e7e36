#![allow(dead_code)]

use std::path::Path;

use inkrestore::corpus::synth::{write_backgrounds, write_line_corpus, RenderOptions};
use inkrestore::corpus::{
    build_corpus, BackgroundLibrary, BuildOptions, CorpusBuildConfig, CorpusManifest, DegradationConfig, Range,
    Split,
};
use inkrestore::models::{DiscriminatorSpec, GeneratorSpec};
use inkrestore::training::{AdamConfig, ArchitectureConfig, RecognizerLayout, RmsPropConfig, TrainingConfig};

pub const TOY_WORDS: [&str; 8] = ["ink", "quill", "paper", "scribe", "letter", "codex", "page", "word"];

/// Glyphs drawn at 3 px per font cell give lines exactly 32 px tall.
pub fn toy_render() -> RenderOptions {
    RenderOptions { scale: 3, spacing: 1, margin: 5, ink: 0.0, jitter: 1, seed: 11 }
}

/// Milder than the defaults so that 3 px strokes survive at this size.
pub fn toy_degradation() -> DegradationConfig {
    DegradationConfig {
        dilation_choices: vec![0, 2],
        erosion_choices: vec![0],
        blur: Range { min: 1, max: 3 },
        line_count: Range { min: 0, max: 2 },
        line_width: Range { min: 1, max: 2 },
        ..DegradationConfig::default()
    }
}

/// Eight training lines plus two validation lines, degraded by the corpus
/// builder. Returns the built manifest.
pub fn toy_corpus(dir: &Path, seed: u64) -> CorpusManifest {
    let mut lines: Vec<(String, String, Split)> =
        TOY_WORDS.iter().enumerate().map(|(i, w)| (format!("t{i}"), w.to_string(), Split::Train)).collect();
    lines.push(("v0".into(), "paper".into(), Split::Valid));
    lines.push(("v1".into(), "ink".into(), Split::Valid));
    let clean = write_line_corpus(&dir.join("src"), &lines, &toy_render()).unwrap();
    write_backgrounds(&dir.join("bg"), 3, 48, 160, seed).unwrap();
    let assets = BackgroundLibrary::load_dir(dir.join("bg")).unwrap();
    let config = CorpusBuildConfig { degradation: toy_degradation(), ..Default::default() };
    build_corpus(&clean, &assets, &config, seed, &dir.join("corpus"), &BuildOptions::default())
        .unwrap()
        .manifest
}

pub fn toy_architecture() -> ArchitectureConfig {
    ArchitectureConfig {
        generator: GeneratorSpec { depth: 4, base_channels: 8, batch_norm: true, dropout: 0.1 },
        discriminator: DiscriminatorSpec { base_channels: 8 },
        recognizer: RecognizerLayout { channels: [8, 16, 16, 24, 32], gru_hidden: 32, dropout: 0.0 },
    }
}

pub fn toy_config() -> TrainingConfig {
    TrainingConfig {
        batch_size: 8,
        max_iterations: 2000,
        checkpoint_every: 0,
        image_height: 32,
        image_width: 128,
        optimizer_g: AdamConfig { lr: 2e-3, ..Default::default() },
        optimizer_d: AdamConfig { lr: 2e-4, ..Default::default() },
        optimizer_r: RmsPropConfig { lr: 1e-3, ..Default::default() },
        architecture: toy_architecture(),
        ..Default::default()
    }
}
