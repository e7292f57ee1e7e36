use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryImage, LineImage};

/// Layout of a page split into fixed-size, non-overlapping patches after
/// white padding on the bottom and right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub page_h: usize,
    pub page_w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub rows: usize,
    pub cols: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
}

impl PatchGrid {
    pub fn new(page_h: usize, page_w: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        if page_h == 0 || page_w == 0 {
            return Err(Error::Argument("cannot tile an empty page".into()));
        }
        if patch_h == 0 || patch_w == 0 {
            return Err(Error::Argument("patch size must be positive".into()));
        }
        let rows = page_h.div_ceil(patch_h);
        let cols = page_w.div_ceil(patch_w);
        Ok(PatchGrid {
            page_h,
            page_w,
            patch_h,
            patch_w,
            rows,
            cols,
            pad_bottom: rows * patch_h - page_h,
            pad_right: cols * patch_w - page_w,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Top-left corner of patch `i` in row-major order.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        ((i / self.cols) * self.patch_h, (i % self.cols) * self.patch_w)
    }

    fn check(&self, n: usize, dims: impl Iterator<Item = (usize, usize)>) -> Result<()> {
        if n != self.len() {
            return Err(Error::Contract(format!("{n} patches for a grid of {}", self.len())));
        }
        for d in dims {
            if d != (self.patch_h, self.patch_w) {
                return Err(Error::Contract(format!(
                    "patch of size {d:?}, grid expects {:?}",
                    (self.patch_h, self.patch_w)
                )));
            }
        }
        Ok(())
    }
}

/// Splits `page` into row-major patches of `patch_h × patch_w`, padding with
/// white.
pub fn tile_page_with(page: &LineImage, patch_h: usize, patch_w: usize) -> Result<(PatchGrid, Vec<LineImage>)> {
    let grid = PatchGrid::new(page.height(), page.width(), patch_h, patch_w)?;
    let patches = (0..grid.len())
        .map(|i| {
            let (r, c) = grid.origin(i);
            page.crop_padded(r, c, patch_h, patch_w)
        })
        .collect();
    Ok((grid, patches))
}

/// [`tile_page_with`] at the model input size.
pub fn tile_page(page: &LineImage) -> Result<(PatchGrid, Vec<LineImage>)> {
    tile_page_with(page, crate::MODEL_HEIGHT, crate::MODEL_WIDTH)
}

/// Reassembles patches and crops the padding away.
pub fn stitch(grid: &PatchGrid, patches: &[LineImage]) -> Result<LineImage> {
    grid.check(patches.len(), patches.iter().map(LineImage::dims))?;
    Ok(LineImage::from_fn(grid.page_h, grid.page_w, |r, c| {
        let i = (r / grid.patch_h) * grid.cols + c / grid.patch_w;
        patches[i].get(r % grid.patch_h, c % grid.patch_w)
    }))
}

pub fn stitch_binary(grid: &PatchGrid, patches: &[BinaryImage]) -> Result<BinaryImage> {
    grid.check(patches.len(), patches.iter().map(BinaryImage::dims))?;
    Ok(BinaryImage::from_fn(grid.page_h, grid.page_w, |r, c| {
        let i = (r / grid.patch_h) * grid.cols + c / grid.patch_w;
        patches[i].is_ink(r % grid.patch_h, c % grid.patch_w)
    }))
}

/// Patch origins along one axis for windows of `patch` advancing by
/// `patch - overlap`, the last one flush with the padded extent.
fn overlapping_starts(len: usize, patch: usize, overlap: usize) -> Vec<usize> {
    if len <= patch {
        return vec![0];
    }
    let step = patch - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + patch < len).collect();
    starts.push(len - patch);
    starts.dedup();
    starts
}

/// Origins of overlapping windows covering a `page_h × page_w` page.
pub fn overlapping_origins(
    page_h: usize,
    page_w: usize,
    patch_h: usize,
    patch_w: usize,
    overlap: usize,
) -> Result<Vec<(usize, usize)>> {
    if overlap >= patch_h.min(patch_w) {
        return Err(Error::Argument(format!(
            "overlap {overlap} must be smaller than the patch size {patch_h}×{patch_w}"
        )));
    }
    let rows = overlapping_starts(page_h, patch_h, overlap);
    let cols = overlapping_starts(page_w, patch_w, overlap);
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}

/// Averages overlapping patch outputs back into a page.
pub fn blend_overlapping(
    page_h: usize,
    page_w: usize,
    origins: &[(usize, usize)],
    patches: &[LineImage],
) -> Result<LineImage> {
    if origins.len() != patches.len() {
        return Err(Error::Contract(format!("{} origins for {} patches", origins.len(), patches.len())));
    }
    let mut sum = vec![0f64; page_h * page_w];
    let mut count = vec![0u32; page_h * page_w];
    for (&(r0, c0), p) in origins.iter().zip(patches) {
        for r in 0..p.height() {
            let y = r0 + r;
            if y >= page_h {
                break;
            }
            for c in 0..p.width() {
                let x = c0 + c;
                if x >= page_w {
                    break;
                }
                sum[y * page_w + x] += p.get(r, c) as f64;
                count[y * page_w + x] += 1;
            }
        }
    }
    if count.contains(&0) {
        return Err(Error::Contract("overlapping patches leave pixels uncovered".into()));
    }
    let data = sum.iter().zip(&count).map(|(&s, &n)| (s / n as f64) as f32).collect();
    LineImage::from_vec(page_h, page_w, data)
}
