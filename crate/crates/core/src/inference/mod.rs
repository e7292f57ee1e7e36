//! Full-page enhancement: tiling, dual-orientation generation, flip-vote
//! fusion and stitching, plus the classic binarization baselines.

mod baselines;
mod tiling;

pub use baselines::{
    histogram, intensity_bin, otsu_binarize, otsu_threshold, sauvola_binarize, SAUVOLA_DEFAULT_K,
    SAUVOLA_DEFAULT_WINDOW, SAUVOLA_R,
};
pub use tiling::{
    blend_overlapping, overlapping_origins, stitch, stitch_binary, tile_page, tile_page_with, PatchGrid,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{flip_vertical, threshold, BinaryImage, LineImage};
use crate::models::ModelBundle;

/// Anything that maps fixed-size grayscale patches to enhanced patches of
/// the same size.
pub trait PatchEnhancer {
    fn patch_size(&self) -> (usize, usize);
    fn enhance_patches(&self, patches: &[LineImage]) -> Result<Vec<LineImage>>;
}

/// Returns patches unchanged; useful for exercising the pipeline.
#[derive(Debug, Clone, Copy)]
pub struct IdentityEnhancer {
    pub patch_h: usize,
    pub patch_w: usize,
}

impl Default for IdentityEnhancer {
    fn default() -> Self {
        IdentityEnhancer { patch_h: crate::MODEL_HEIGHT, patch_w: crate::MODEL_WIDTH }
    }
}

impl PatchEnhancer for IdentityEnhancer {
    fn patch_size(&self) -> (usize, usize) {
        (self.patch_h, self.patch_w)
    }

    fn enhance_patches(&self, patches: &[LineImage]) -> Result<Vec<LineImage>> {
        Ok(patches.to_vec())
    }
}

/// The generator of a bundle applied in evaluation mode at a fixed patch
/// size, a few patches at a time.
pub struct GeneratorEnhancer<'a> {
    pub bundle: &'a ModelBundle,
    pub patch_h: usize,
    pub patch_w: usize,
    pub batch_size: usize,
}

impl<'a> GeneratorEnhancer<'a> {
    pub fn new(bundle: &'a ModelBundle) -> Self {
        GeneratorEnhancer { bundle, patch_h: crate::MODEL_HEIGHT, patch_w: crate::MODEL_WIDTH, batch_size: 4 }
    }
}

impl PatchEnhancer for GeneratorEnhancer<'_> {
    fn patch_size(&self) -> (usize, usize) {
        (self.patch_h, self.patch_w)
    }

    fn enhance_patches(&self, patches: &[LineImage]) -> Result<Vec<LineImage>> {
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(self.batch_size.max(1)) {
            out.extend(self.bundle.enhance(chunk)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceOptions {
    /// Also run the vertically flipped page and fuse with [`flip_vote`].
    pub flip: bool,
    pub threshold: f32,
    /// Pixels shared by neighbouring patches; 0 tiles without overlap.
    pub overlap: usize,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        EnhanceOptions { flip: true, threshold: 0.5, overlap: 0 }
    }
}

/// Ink where both inputs have ink, background elsewhere.
pub fn flip_vote(a: &BinaryImage, b: &BinaryImage) -> Result<BinaryImage> {
    if a.dims() != b.dims() {
        return Err(Error::Contract(format!("flip_vote on {:?} and {:?}", a.dims(), b.dims())));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x | y).collect();
    BinaryImage::from_vec(a.height(), a.width(), data)
}

/// Grayscale enhancement of a whole page by tiling.
pub fn enhance_gray(enhancer: &dyn PatchEnhancer, page: &LineImage, overlap: usize) -> Result<LineImage> {
    let (ph, pw) = enhancer.patch_size();
    if overlap == 0 {
        let (grid, patches) = tile_page_with(page, ph, pw)?;
        let out = enhancer.enhance_patches(&patches)?;
        return stitch(&grid, &out);
    }
    let origins = overlapping_origins(page.height(), page.width(), ph, pw, overlap)?;
    let patches: Vec<LineImage> = origins.iter().map(|&(r, c)| page.crop_padded(r, c, ph, pw)).collect();
    let out = enhancer.enhance_patches(&patches)?;
    blend_overlapping(page.height(), page.width(), &origins, &out)
}

/// Binarized page: the normal pass, optionally fused with the flipped pass.
pub fn enhance_page(enhancer: &dyn PatchEnhancer, page: &LineImage, opts: &EnhanceOptions) -> Result<BinaryImage> {
    let normal = threshold(&enhance_gray(enhancer, page, opts.overlap)?, opts.threshold);
    if !opts.flip {
        return Ok(normal);
    }
    let flipped = enhance_gray(enhancer, &flip_vertical(page), opts.overlap)?;
    let flipped = threshold(&flip_vertical(&flipped), opts.threshold);
    flip_vote(&normal, &flipped)
}
