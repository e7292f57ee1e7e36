//! Pixel-level binarization quality measures. Ink is the foreground class.

use crate::error::{Error, Result};
use crate::image::{BinaryImage, LineImage};

/// PSNR value reported for identical images.
pub const PSNR_IDENTICAL: f64 = 99.99;

/// Anything with per-pixel intensities in `[0, 1]`.
pub trait Intensities {
    fn dims(&self) -> (usize, usize);
    fn intensity(&self, index: usize) -> f64;
}

impl Intensities for LineImage {
    fn dims(&self) -> (usize, usize) {
        LineImage::dims(self)
    }

    fn intensity(&self, index: usize) -> f64 {
        self.data()[index] as f64
    }
}

impl Intensities for BinaryImage {
    fn dims(&self) -> (usize, usize) {
        BinaryImage::dims(self)
    }

    fn intensity(&self, index: usize) -> f64 {
        self.data()[index] as f64
    }
}

fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` on the unit intensity range.
pub fn psnr<I: Intensities>(pred: &I, gt: &I) -> Result<f64> {
    same_dims(pred.dims(), gt.dims())?;
    let (h, w) = pred.dims();
    let n = h * w;
    let sse: f64 = (0..n)
        .map(|i| {
            let d = pred.intensity(i) - gt.intensity(i);
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (n as f64 / sse).log10())
}

/// Combines precision and recall (fractions) into a percent F-score.
fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * precision * recall / (precision + recall)
    }
}

/// Precision/recall style score with the empty-set conventions shared by
/// FM and Fps: both empty is a perfect score, exactly one empty scores 0.
fn f_from_counts(hits_p: usize, pred_n: usize, hits_r: usize, ref_n: usize) -> f64 {
    match (pred_n, ref_n) {
        (0, 0) => 100.0,
        (0, _) | (_, 0) => 0.0,
        _ => f_score(hits_p as f64 / pred_n as f64, hits_r as f64 / ref_n as f64),
    }
}

/// Foreground F-measure in percent.
pub fn f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    same_dims(pred.dims(), gt.dims())?;
    let mut tp = 0;
    let mut pred_n = 0;
    let mut gt_n = 0;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p == 0, g == 0);
        pred_n += p as usize;
        gt_n += g as usize;
        tp += (p && g) as usize;
    }
    Ok(f_from_counts(tp, pred_n, tp, gt_n))
}

/// Zhang–Suen thinning of the ink pixels. Returns an ink mask
/// (`true` = skeleton pixel). Pixels outside the image count as background.
pub fn skeletonize(img: &BinaryImage) -> Vec<bool> {
    let (h, w) = img.dims();
    let mut ink: Vec<bool> = img.data().iter().map(|&v| v == 0).collect();
    let at = |m: &Vec<bool>, r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && m[r as usize * w + c as usize]
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for r in 0..h as isize {
                for c in 0..w as isize {
                    if !at(&ink, r, c) {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&ink, r - 1, c),
                        at(&ink, r - 1, c + 1),
                        at(&ink, r, c + 1),
                        at(&ink, r + 1, c + 1),
                        at(&ink, r + 1, c),
                        at(&ink, r + 1, c - 1),
                        at(&ink, r, c - 1),
                        at(&ink, r - 1, c - 1),
                    ];
                    let b = p.iter().filter(|&&x| x).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        remove.push(r as usize * w + c as usize);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                ink[i] = false;
            }
        }
        if !changed {
            return ink;
        }
    }
}

/// Pseudo F-measure in percent: recall is measured against the skeleton
/// of the ground-truth ink, precision is the ordinary pixel precision.
pub fn pseudo_f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    same_dims(pred.dims(), gt.dims())?;
    let skeleton = skeletonize(gt);
    let mut tp = 0;
    let mut pred_n = 0;
    let mut skel_n = 0;
    let mut skel_hits = 0;
    for ((&p, &g), &s) in pred.data().iter().zip(gt.data()).zip(&skeleton) {
        let p = p == 0;
        pred_n += p as usize;
        tp += (p && g == 0) as usize;
        skel_n += s as usize;
        skel_hits += (p && s) as usize;
    }
    Ok(f_from_counts(tp, pred_n, skel_hits, skel_n))
}

/// Normalized 5×5 reciprocal-distance weight matrix (center weight 0).
pub fn drd_weights() -> [[f64; 5]; 5] {
    let mut w = [[0.0; 5]; 5];
    let mut sum = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 2.0, j as f64 - 2.0);
            if di != 0.0 || dj != 0.0 {
                *v = 1.0 / (di * di + dj * dj).sqrt();
                sum += *v;
            }
        }
    }
    for row in &mut w {
        for v in row {
            *v /= sum;
        }
    }
    w
}

/// Number of 8×8 ground-truth blocks holding both ink and background.
/// Partial blocks at the right and bottom edges are counted as blocks.
pub fn non_uniform_blocks(gt: &BinaryImage) -> usize {
    let (h, w) = gt.dims();
    let mut count = 0;
    for br in (0..h).step_by(8) {
        for bc in (0..w).step_by(8) {
            let first = gt.get(br, bc);
            let mixed = (br..(br + 8).min(h))
                .any(|r| (bc..(bc + 8).min(w)).any(|c| gt.get(r, c) != first));
            count += mixed as usize;
        }
    }
    count
}

/// Distance reciprocal distortion. Each flipped pixel contributes the
/// weighted disagreement of its 5×5 ground-truth neighborhood with the
/// predicted value; near borders the weights are renormalized over the
/// in-image part of the window. The sum is divided by the number of
/// non-uniform 8×8 ground-truth blocks.
pub fn drd(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    same_dims(pred.dims(), gt.dims())?;
    let (h, w) = gt.dims();
    let weights = drd_weights();
    let mut total = 0.0;
    let mut flips = 0usize;
    for r in 0..h {
        for c in 0..w {
            let p = pred.get(r, c);
            if p == gt.get(r, c) {
                continue;
            }
            flips += 1;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (i, row) in weights.iter().enumerate() {
                let rr = r as isize + i as isize - 2;
                if rr < 0 || rr as usize >= h {
                    continue;
                }
                for (j, &wt) in row.iter().enumerate() {
                    let cc = c as isize + j as isize - 2;
                    if cc < 0 || cc as usize >= w {
                        continue;
                    }
                    wsum += wt;
                    acc += wt * (gt.get(rr as usize, cc as usize) != p) as u8 as f64;
                }
            }
            if wsum > 0.0 {
                total += acc / wsum;
            }
        }
    }
    if flips == 0 {
        return Ok(0.0);
    }
    let nubn = non_uniform_blocks(gt);
    if nubn == 0 {
        return Err(Error::Contract(
            "DRD undefined: ground truth has no non-uniform 8x8 block but prediction differs"
                .into(),
        ));
    }
    Ok(total / nubn as f64)
}

/// Composite score `(PSNR + FM + Fps + (100 - DRD)) / 4`.
pub fn avg_score(psnr: f64, fm: f64, fps: f64, drd: f64) -> f64 {
    (psnr + fm + fps + (100.0 - drd)) / 4.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin(rows: &[&str]) -> BinaryImage {
        let h = rows.len();
        let w = rows[0].len();
        BinaryImage::from_fn(h, w, |r, c| rows[r].as_bytes()[c] == b'#')
    }

    #[test]
    fn psnr_examples() {
        let gt = LineImage::filled(4, 4, 0.0);
        assert_eq!(psnr(&gt, &gt).unwrap(), PSNR_IDENTICAL);
        let half = LineImage::filled(4, 4, 0.5);
        assert!((psnr(&half, &gt).unwrap() - 6.020599913279624).abs() < 1e-9);
        let white = LineImage::filled(4, 4, 1.0);
        assert_eq!(psnr(&white, &gt).unwrap(), 0.0);
        assert!(psnr(&LineImage::filled(2, 2, 0.0), &gt).is_err());
    }

    #[test]
    fn f_measure_examples() {
        let gt = bin(&["##..", "##..", "....", "...."]);
        assert_eq!(f_measure(&gt, &gt).unwrap(), 100.0);
        let two = bin(&["##..", "....", "....", "...."]);
        let fm = f_measure(&two, &gt).unwrap();
        assert!((fm - 200.0 / 3.0).abs() < 1e-9);
        let empty = BinaryImage::filled(4, 4, 1);
        assert_eq!(f_measure(&empty, &gt).unwrap(), 0.0);
        assert_eq!(f_measure(&empty, &empty).unwrap(), 100.0);
    }

    #[test]
    fn skeleton_of_bar_is_thin_line() {
        let gt = bin(&[
            "..........",
            ".########.",
            ".########.",
            ".########.",
            "..........",
        ]);
        let skel = skeletonize(&gt);
        let n = skel.iter().filter(|&&s| s).count();
        assert!(n > 0 && n <= 8, "{n}");
        for (i, &s) in skel.iter().enumerate() {
            if s {
                assert_eq!(gt.data()[i], 0, "skeleton must lie inside the ink");
            }
        }
    }

    #[test]
    fn pseudo_f_examples() {
        let gt = bin(&[
            "............",
            ".###....###.",
            ".###....###.",
            ".###....###.",
            ".###....###.",
            ".###....###.",
            "............",
        ]);
        assert_eq!(pseudo_f_measure(&gt, &gt).unwrap(), 100.0);
        let skel = skeletonize(&gt);
        let skel_img = BinaryImage::from_fn(7, 12, |r, c| skel[r * 12 + c]);
        assert_eq!(pseudo_f_measure(&skel_img, &gt).unwrap(), 100.0);

        // Only the left stroke predicted: recall drops by the right stroke's skeleton share.
        let left = BinaryImage::from_fn(7, 12, |r, c| c < 6 && gt.is_ink(r, c));
        let left_skel = (0..7 * 12).filter(|&i| skel[i] && i % 12 < 6).count() as f64;
        let total_skel = skel.iter().filter(|&&s| s).count() as f64;
        let recall = left_skel / total_skel;
        let expected = 100.0 * 2.0 * recall / (1.0 + recall);
        assert!((pseudo_f_measure(&left, &gt).unwrap() - expected).abs() < 1e-9);
        assert!(recall < 1.0);
    }

    #[test]
    fn drd_weights_sum_to_one() {
        let w = drd_weights();
        let s: f64 = w.iter().flatten().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(w[2][2], 0.0);
    }

    #[test]
    fn drd_examples() {
        let mut gt = BinaryImage::filled(8, 8, 1);
        gt.set(0, 0, 0);
        assert_eq!(non_uniform_blocks(&gt), 1);
        assert_eq!(drd(&gt, &gt).unwrap(), 0.0);

        let mut one = gt.clone();
        one.set(4, 4, 0);
        assert!((drd(&one, &gt).unwrap() - 1.0).abs() < 1e-12);

        let mut big = BinaryImage::filled(8, 16, 1);
        big.set(0, 0, 0);
        let mut two = big.clone();
        two.set(4, 4, 0);
        two.set(4, 11, 0);
        assert_eq!(non_uniform_blocks(&big), 1);
        assert!((drd(&two, &big).unwrap() - 2.0).abs() < 1e-12);

        let blank = BinaryImage::filled(8, 8, 1);
        assert_eq!(drd(&blank, &blank).unwrap(), 0.0);
        assert!(drd(&one, &blank).is_err());
    }

    #[test]
    fn avg_score_examples() {
        assert!((avg_score(15.03, 80.18, 82.65, 26.46) - 62.85).abs() <= 0.01);
        assert!((avg_score(9.74, 51.45, 53.05, 59.07) - 38.79).abs() <= 0.01);
        assert_eq!(avg_score(0.0, 0.0, 0.0, 100.0), 0.0);
    }
}
