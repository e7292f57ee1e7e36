//! Individual distortion stages. Every stage preserves image dimensions.

use std::collections::BTreeMap;
use std::path::Path;

use super::recipe::{BlurMode, DegradationRecipe};
use crate::error::{Error, Result};
use crate::image::LineImage;

/// Background texture patch, tiled by repetition to any size.
#[derive(Clone, Debug)]
pub struct BackgroundAsset {
    pub id: String,
    pub image: LineImage,
}

/// Background textures keyed by id (the PNG file stem when loaded from a
/// directory).
#[derive(Clone, Debug, Default)]
pub struct BackgroundLibrary {
    assets: BTreeMap<String, BackgroundAsset>,
}

impl BackgroundLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, asset: BackgroundAsset) {
        self.assets.insert(asset.id.clone(), asset);
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut lib = Self::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let is_png = path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if !is_png {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config(format!("unusable file name {}", path.display())))?
                .to_string();
            let image = LineImage::load_png(&path)?;
            lib.insert(BackgroundAsset { id, image });
        }
        Ok(lib)
    }

    pub fn get(&self, id: &str) -> Option<&BackgroundAsset> {
        self.assets.get(id)
    }

    /// Asset ids in sorted order.
    pub fn ids(&self) -> Vec<String> {
        self.assets.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }
}

/// Composites a tiled background under the image:
/// `out = min(img, (1 - alpha) + alpha * bg)`.
pub fn apply_background(img: &LineImage, bg: &BackgroundAsset, alpha: f32) -> LineImage {
    let alpha = alpha.clamp(0.0, 1.0);
    let (bh, bw) = bg.image.dims();
    LineImage::from_fn(img.height(), img.width(), |r, c| {
        let texture = (1.0 - alpha) + alpha * bg.image.get(r % bh, c % bw);
        img.get(r, c).min(texture)
    })
}

/// Window offsets covered by a `k`-wide kernel anchored at its center
/// (even sizes extend one more pixel towards the bottom/right).
fn window(k: usize) -> (isize, isize) {
    let before = (k as isize - 1) / 2;
    let after = k as isize / 2;
    (-before, after)
}

/// Separable rank filter over the in-bounds part of a `k × k` window.
fn rank_filter(img: &LineImage, k: usize, pick: fn(f32, f32) -> f32, init: f32) -> LineImage {
    let (h, w) = img.dims();
    let (lo, hi) = window(k);
    let mut tmp = vec![0f32; h * w];
    for r in 0..h {
        let row = img.row(r);
        for c in 0..w {
            let mut acc = init;
            for d in lo..=hi {
                let cc = c as isize + d;
                if cc >= 0 && (cc as usize) < w {
                    acc = pick(acc, row[cc as usize]);
                }
            }
            tmp[r * w + c] = acc;
        }
    }
    LineImage::from_fn(h, w, |r, c| {
        let mut acc = init;
        for d in lo..=hi {
            let rr = r as isize + d;
            if rr >= 0 && (rr as usize) < h {
                acc = pick(acc, tmp[rr as usize * w + c]);
            }
        }
        acc
    })
}

/// Ink thickening: local minimum over a `k × k` window.
pub fn dilate_ink(img: &LineImage, k: usize) -> LineImage {
    rank_filter(img, k, f32::min, f32::INFINITY)
}

/// Ink thinning: local maximum over a `k × k` window.
pub fn erode_ink(img: &LineImage, k: usize) -> LineImage {
    rank_filter(img, k, f32::max, f32::NEG_INFINITY)
}

/// Dilation followed by erosion; `None` skips a stage.
pub fn apply_morphology(img: &LineImage, dilation: Option<u8>, erosion: Option<u8>) -> LineImage {
    let mut out = match dilation {
        Some(k) => dilate_ink(img, k as usize),
        None => img.clone(),
    };
    if let Some(k) = erosion {
        out = erode_ink(&out, k as usize);
    }
    out
}

/// `k × k` smoothing with edge replication. `k = 1` is the identity.
pub fn apply_blur(img: &LineImage, k: usize, mode: BlurMode) -> LineImage {
    if k <= 1 {
        return img.clone();
    }
    let weights = match mode {
        BlurMode::Box => vec![1.0 / k as f64; k],
        BlurMode::Gaussian => gaussian_weights(k),
    };
    separable_filter(img, &weights)
}

/// Normalized Gaussian taps; sigma follows the common `0.3((k-1)/2 - 1) + 0.8` rule.
fn gaussian_weights(k: usize) -> Vec<f64> {
    let sigma = 0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let half = (k / 2) as f64;
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn separable_filter(img: &LineImage, weights: &[f64]) -> LineImage {
    let (h, w) = img.dims();
    let half = (weights.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0f64; h * w];
    for r in 0..h {
        let row = img.row(r);
        for c in 0..w {
            tmp[r * w + c] = weights
                .iter()
                .enumerate()
                .map(|(i, wt)| wt * row[clamp(c as isize + i as isize - half, w)] as f64)
                .sum();
        }
    }
    LineImage::from_fn(h, w, |r, c| {
        weights
            .iter()
            .enumerate()
            .map(|(i, wt)| wt * tmp[clamp(r as isize + i as isize - half, h) * w + c])
            .sum::<f64>() as f32
    })
}

/// Darkens full-height column bands: columns `p .. p + w` take
/// `min(existing, intensity)`.
pub fn insert_vertical_lines(
    img: &LineImage,
    positions: &[usize],
    widths: &[usize],
    intensity: f32,
) -> Result<LineImage> {
    if positions.len() != widths.len() {
        return Err(Error::Argument(format!(
            "{} line positions but {} widths",
            positions.len(),
            widths.len()
        )));
    }
    let mut out = img.clone();
    for (&p, &w) in positions.iter().zip(widths) {
        if p + w > img.width() {
            return Err(Error::Argument(format!(
                "vertical line at column {p} with width {w} exceeds image width {}",
                img.width()
            )));
        }
        for r in 0..img.height() {
            for c in p..p + w {
                let v = out.get(r, c).min(intensity);
                out.set(r, c, v);
            }
        }
    }
    Ok(out)
}

/// Full pipeline: background, morphology, blur, vertical lines.
pub fn degrade(
    image: &LineImage,
    recipe: &DegradationRecipe,
    assets: &BackgroundLibrary,
) -> Result<LineImage> {
    recipe.validate(image.width())?;
    let mut out = match &recipe.background_id {
        Some(id) => {
            let bg = assets
                .get(id)
                .ok_or_else(|| Error::MissingAsset(id.clone()))?;
            apply_background(image, bg, recipe.blend_alpha)
        }
        None => image.clone(),
    };
    out = apply_morphology(&out, recipe.dilation, recipe.erosion);
    out = apply_blur(&out, recipe.blur_kernel as usize, recipe.blur_mode);
    insert_vertical_lines(
        &out,
        &recipe.line_positions,
        &recipe.line_widths,
        recipe.line_intensity,
    )
}
