//! Synthetic degradation of clean line images and corpus manifests.

mod build;
mod manifest;
mod ops;
mod recipe;
pub mod synth;

pub use build::{
    backgrounds_by_split, build_corpus, BackgroundPools, BuildOptions, CorpusBuild,
    CorpusBuildConfig, RecipeRecord, MANIFEST_FILE, RECIPES_FILE,
};
pub use manifest::{CorpusManifest, ManifestRecord, Sample, Split};
pub use ops::{
    apply_background, apply_blur, apply_morphology, degrade, dilate_ink, erode_ink,
    insert_vertical_lines, BackgroundAsset, BackgroundLibrary,
};
pub use recipe::{sample_recipe, BlurMode, DegradationConfig, DegradationRecipe, Range};
