//! Classic global (Otsu) and local (Sauvola) binarization.

use crate::error::{Error, Result};
use crate::image::{BinaryImage, LineImage};

/// Histogram bin of an intensity in `[0, 1]`.
#[inline]
pub fn intensity_bin(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

pub fn histogram(img: &LineImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in img.data() {
        h[intensity_bin(v)] += 1;
    }
    h
}

/// Otsu threshold bin: pixels with bin `≤ t` form the dark class. `None`
/// when no split separates anything (constant image). Ties keep the lowest
/// threshold.
pub fn otsu_threshold(img: &LineImage) -> Option<usize> {
    let hist = histogram(img);
    let total: u64 = hist.iter().sum();
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0f64;
    let mut best: Option<(usize, f64)> = None;
    for (t, &n) in hist.iter().enumerate().take(255) {
        w0 += n;
        sum0 += t as f64 * n as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (total_sum - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        if best.is_none_or(|(_, b)| var > b) {
            best = Some((t, var));
        }
    }
    best.filter(|&(_, v)| v > 0.0).map(|(t, _)| t)
}

/// Global binarization at the Otsu threshold. A constant image is all
/// background.
pub fn otsu_binarize(img: &LineImage) -> BinaryImage {
    match otsu_threshold(img) {
        Some(t) => BinaryImage::from_fn(img.height(), img.width(), |r, c| intensity_bin(img.get(r, c)) <= t),
        None => BinaryImage::filled(img.height(), img.width(), 1),
    }
}

/// Dynamic range of the standard deviation for intensities in `[0, 1]`.
pub const SAUVOLA_R: f64 = 0.5;
pub const SAUVOLA_DEFAULT_WINDOW: usize = 25;
pub const SAUVOLA_DEFAULT_K: f64 = 0.2;

/// Local binarization with threshold `m · (1 + k · (s / R − 1))` over a
/// `window × window` neighbourhood clipped at the borders.
pub fn sauvola_binarize(img: &LineImage, window: usize, k: f64) -> Result<BinaryImage> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Argument(format!("sauvola window must be odd and ≥ 3, got {window}")));
    }
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::Argument(format!("sauvola k must be in (0, 1), got {k}")));
    }
    let (h, w) = img.dims();
    // Integral images with a zero first row and column.
    let stride = w + 1;
    let mut s1 = vec![0f64; (h + 1) * stride];
    let mut s2 = vec![0f64; (h + 1) * stride];
    for r in 0..h {
        let mut row1 = 0f64;
        let mut row2 = 0f64;
        for c in 0..w {
            let v = img.get(r, c) as f64;
            row1 += v;
            row2 += v * v;
            s1[(r + 1) * stride + c + 1] = s1[r * stride + c + 1] + row1;
            s2[(r + 1) * stride + c + 1] = s2[r * stride + c + 1] + row2;
        }
    }
    let half = window / 2;
    let rect = |s: &[f64], r0: usize, c0: usize, r1: usize, c1: usize| {
        s[r1 * stride + c1] - s[r0 * stride + c1] - s[r1 * stride + c0] + s[r0 * stride + c0]
    };
    Ok(BinaryImage::from_fn(h, w, |r, c| {
        let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(h));
        let (c0, c1) = (c.saturating_sub(half), (c + half + 1).min(w));
        let n = ((r1 - r0) * (c1 - c0)) as f64;
        let m = rect(&s1, r0, c0, r1, c1) / n;
        let var = (rect(&s2, r0, c0, r1, c1) / n - m * m).max(0.0);
        let t = m * (1.0 + k * (var.sqrt() / SAUVOLA_R - 1.0));
        (img.get(r, c) as f64) < t
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn otsu_splits_two_levels() {
        let img = LineImage::from_fn(4, 8, |_, c| if c < 4 { 0.1 } else { 0.9 });
        let b = otsu_binarize(&img);
        for r in 0..4 {
            for c in 0..8 {
                assert_eq!(b.is_ink(r, c), c < 4);
            }
        }
        assert_eq!(otsu_binarize(&LineImage::filled(3, 3, 0.4)).ink_count(), 0);
    }

    #[test]
    fn sauvola_examples() {
        assert_eq!(sauvola_binarize(&LineImage::filled(9, 9, 0.6), 3, 0.2).unwrap().ink_count(), 0);
        let img = LineImage::from_fn(9, 9, |_, c| if c == 4 { 0.05 } else { 1.0 });
        let b = sauvola_binarize(&img, 25, 0.2).unwrap();
        for r in 0..9 {
            for c in 0..9 {
                assert_eq!(b.is_ink(r, c), c == 4, "({r},{c})");
            }
        }
        assert!(sauvola_binarize(&img, 4, 0.2).is_err());
        assert!(sauvola_binarize(&img, 5, 1.0).is_err());
    }
}
