//! Grayscale and binary image carriers plus the geometry used everywhere else.
//!
//! Intensities live in `[0, 1]` with `1.0` meaning white background and
//! `0.0` meaning black ink. Binary images use `0` for ink and `1` for
//! background.

use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel intensity image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LineImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LineImage {
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Like [`LineImage::from_vec`] but clamps every value into `[0, 1]`
    /// (NaN becomes background).
    pub fn from_vec_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        for v in &mut data {
            *v = if v.is_nan() { 1.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Uniform image. Panics on zero dimensions or a value outside `[0, 1]`.
    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(height >= 1 && width >= 1, "image dimensions must be >= 1");
        assert!((0.0..=1.0).contains(&value));
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Builds an image from a per-pixel function; results are clamped.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(height >= 1 && width >= 1, "image dimensions must be >= 1");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c).clamp(0.0, 1.0));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Sets a pixel, clamping the value into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value.clamp(0.0, 1.0);
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    /// Copies the `h × w` window at `(top, left)`; pixels outside the image
    /// read as white.
    pub fn crop_padded(&self, top: usize, left: usize, h: usize, w: usize) -> LineImage {
        LineImage::from_fn(h, w, |r, c| {
            let (rr, cc) = (top + r, left + c);
            if rr < self.height && cc < self.width {
                self.get(rr, cc)
            } else {
                1.0
            }
        })
    }

    /// Bilinear resampling with pixel-center alignment. Same-size resampling
    /// is an exact copy.
    pub fn resize_bilinear(&self, new_h: usize, new_w: usize) -> LineImage {
        assert!(new_h >= 1 && new_w >= 1);
        if (new_h, new_w) == self.dims() {
            return self.clone();
        }
        let sy = self.height as f64 / new_h as f64;
        let sx = self.width as f64 / new_w as f64;
        let max_r = (self.height - 1) as f64;
        let max_c = (self.width - 1) as f64;
        // Precompute horizontal taps once per column.
        let taps: Vec<(usize, usize, f32)> = (0..new_w)
            .map(|c| {
                let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, max_c);
                let x0 = x.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                (x0, x1, (x - x0 as f64) as f32)
            })
            .collect();
        let mut data = Vec::with_capacity(new_h * new_w);
        for r in 0..new_h {
            let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, max_r);
            let y0 = y.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = (y - y0 as f64) as f32;
            let (row0, row1) = (self.row(y0), self.row(y1));
            for &(x0, x1, fx) in &taps {
                let top = row0[x0] + (row0[x1] - row0[x0]) * fx;
                let bottom = row1[x0] + (row1[x1] - row1[x0]) * fx;
                data.push((top + (bottom - top) * fy).clamp(0.0, 1.0));
            }
        }
        LineImage {
            height: new_h,
            width: new_w,
            data,
        }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
        Self::from_vec(h as usize, w as usize, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Writes an 8-bit grayscale PNG; intensity `i` becomes `round(255 i)`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_gray(path.as_ref(), self.width, self.height, self.to_bytes())
    }
}

/// Two-level image: `0` is ink, `1` is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Argument("binary pixel values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        assert!(height >= 1 && width >= 1 && value <= 1);
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(height >= 1 && width >= 1);
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                // `true` marks ink.
                data.push(if f(r, c) { 0 } else { 1 });
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn is_ink(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        debug_assert!(value <= 1);
        self.data[row * self.width + col] = value;
    }

    pub fn ink_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0).count()
    }

    pub fn to_line_image(&self) -> LineImage {
        LineImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> BinaryImage {
        assert!(top + h <= self.height && left + w <= self.width);
        BinaryImage::from_fn(h, w, |r, c| self.is_ink(top + r, left + c))
    }

    /// Reads a PNG and binarizes it at mid-gray.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        Ok(threshold(&LineImage::load_png(path)?, 0.5))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.data.iter().map(|&v| v * 255).collect();
        save_gray(path.as_ref(), self.width, self.height, bytes)
    }
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Argument(format!(
            "image dimensions must be >= 1, got {height}x{width}"
        )));
    }
    if height * width != len {
        return Err(Error::Argument(format!(
            "{height}x{width} image needs {} values, got {len}",
            height * width
        )));
    }
    Ok(())
}

fn save_gray(path: &Path, width: usize, height: usize, bytes: Vec<u8>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let buf = image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Scales `img` to `target_h` rows keeping its aspect ratio and right-pads
/// with white up to `target_w`. Content wider than `target_w` after scaling
/// is squeezed horizontally to exactly `target_w`.
pub fn normalize_to_model_size(img: &LineImage, target_h: usize, target_w: usize) -> LineImage {
    assert!(target_h > 0 && target_w > 0);
    if img.dims() == (target_h, target_w) {
        return img.clone();
    }
    let scaled_w = ((img.width as f64 * target_h as f64 / img.height as f64).round() as usize).max(1);
    if scaled_w >= target_w {
        return img.resize_bilinear(target_h, target_w);
    }
    let scaled = img.resize_bilinear(target_h, scaled_w);
    LineImage::from_fn(target_h, target_w, |r, c| {
        if c < scaled_w {
            scaled.get(r, c)
        } else {
            1.0
        }
    })
}

/// Mirrors the image top-to-bottom.
pub fn flip_vertical(img: &LineImage) -> LineImage {
    let mut data = Vec::with_capacity(img.data.len());
    for r in (0..img.height).rev() {
        data.extend_from_slice(img.row(r));
    }
    LineImage {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Pixels strictly darker than `t` become ink.
pub fn threshold(img: &LineImage, t: f32) -> BinaryImage {
    BinaryImage {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| u8::from(v >= t)).collect(),
    }
}
