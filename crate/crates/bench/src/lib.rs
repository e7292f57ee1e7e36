//! Deterministic inputs for the benchmarks in `benches/`.

use inkrestore::corpus::synth::procedural_background;
use inkrestore::corpus::{BackgroundAsset, BackgroundLibrary};
use inkrestore::{BinaryImage, LineImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major `frames × classes` log-probabilities, softmax-normalized per frame.
pub fn log_probs(frames: usize, classes: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(frames * classes);
    for _ in 0..frames {
        let logits: Vec<f64> = (0..classes).map(|_| r.random_range(-3.0..3.0)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        out.extend(logits.iter().map(|l| l - lse));
    }
    out
}

/// Labels in `1..classes` (0 is the blank).
pub fn labels(len: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(1..classes)).collect()
}

/// Text-like page: horizontal bands of strokes on white.
pub fn page(height: usize, width: usize, seed: u64) -> LineImage {
    let mut r = rng(seed);
    let mut img = LineImage::filled(height, width, 0.9);
    for _ in 0..(height * width / 400) {
        let (row, col) = (r.random_range(0..height), r.random_range(0..width));
        let len = r.random_range(3..20);
        let v = r.random_range(0.0..0.4);
        for c in col..(col + len).min(width) {
            img.set(row, c, v);
        }
    }
    img
}

/// Ground truth plus a prediction with about `flip_rate` of pixels flipped.
pub fn binary_pair(height: usize, width: usize, flip_rate: f64, seed: u64) -> (BinaryImage, BinaryImage) {
    let gray = page(height, width, seed);
    let gt = inkrestore::image::threshold(&gray, 0.5);
    let mut r = rng(seed ^ 0x5eed);
    let mut pred = gt.clone();
    for row in 0..height {
        for col in 0..width {
            if r.random_bool(flip_rate) {
                pred.set(row, col, 1 - pred.get(row, col));
            }
        }
    }
    (pred, gt)
}

pub fn backgrounds(count: usize, seed: u64) -> BackgroundLibrary {
    let mut lib = BackgroundLibrary::new();
    for i in 0..count {
        let image = procedural_background(seed + i as u64, 64, 256);
        lib.insert(BackgroundAsset { id: format!("bg{i}"), image });
    }
    lib
}
