//! Synthetic clean line images and background textures.
//!
//! Handy for smoke tests and demos when no handwriting corpus is at hand:
//! text is drawn with a 5×7 bitmap font, slightly jittered per glyph.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusManifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::image::LineImage;
use crate::util::derive_seed;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

#[rustfmt::skip]
const FONT: &[(char, [&str; GLYPH_H])] = &[
    ('a', [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"]),
    ('b', ["#....", "#....", "####.", "#...#", "#...#", "#...#", "####."]),
    ('c', [".....", ".....", ".###.", "#....", "#....", "#...#", ".###."]),
    ('d', ["....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"]),
    ('e', [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."]),
    ('f', ["..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."]),
    ('g', [".....", ".####", "#...#", "#...#", ".####", "....#", ".###."]),
    ('h', ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"]),
    ('i', ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."]),
    ('j', ["...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."]),
    ('k', ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."]),
    ('l', [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('m', [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"]),
    ('n', [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"]),
    ('o', [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."]),
    ('p', [".....", ".....", "####.", "#...#", "####.", "#....", "#...."]),
    ('q', [".....", ".....", ".##.#", "#..##", ".####", "....#", "....#"]),
    ('r', [".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."]),
    ('s', [".....", ".....", ".###.", "#....", ".###.", "....#", "####."]),
    ('t', [".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."]),
    ('u', [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"]),
    ('v', [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('w', [".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."]),
    ('x', [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"]),
    ('y', [".....", ".....", "#...#", "#...#", ".####", "....#", ".###."]),
    ('z', [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"]),
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."]),
    ('.', [".....", ".....", ".....", ".....", ".....", ".##..", ".##.."]),
    (',', [".....", ".....", ".....", ".....", ".##..", "..#..", ".#..."]),
    ('-', [".....", ".....", ".....", "#####", ".....", ".....", "....."]),
    ('\'', ["..#..", "..#..", ".#...", ".....", ".....", ".....", "....."]),
    (' ', [".....", ".....", ".....", ".....", ".....", ".....", "....."]),
];

/// Characters [`render_line`] can draw.
pub fn supported_chars() -> Vec<char> {
    FONT.iter().map(|(c, _)| *c).collect()
}

fn glyph(ch: char) -> Option<&'static [&'static str; GLYPH_H]> {
    FONT.iter().find(|(c, _)| *c == ch).map(|(_, g)| g)
}

#[derive(Clone, Debug)]
pub struct RenderOptions {
    /// Pixel size of one font cell.
    pub scale: usize,
    /// Blank cells between glyphs.
    pub spacing: usize,
    pub margin: usize,
    /// Ink intensity (0 is black).
    pub ink: f32,
    /// Maximum vertical offset per glyph, in pixels.
    pub jitter: usize,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            scale: 3,
            spacing: 1,
            margin: 4,
            ink: 0.05,
            jitter: 2,
            seed: 0,
        }
    }
}

/// Draws `text` on a white line. Unsupported characters render as blanks.
pub fn render_line(text: &str, opts: &RenderOptions) -> LineImage {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let s = opts.scale.max(1);
    let n = text.chars().count().max(1);
    let cell_w = (GLYPH_W + opts.spacing) * s;
    let width = 2 * opts.margin + n * cell_w;
    let height = 2 * opts.margin + GLYPH_H * s + opts.jitter;
    let mut img = LineImage::filled(height, width, 1.0);
    for (i, ch) in text.chars().enumerate() {
        let Some(g) = glyph(ch) else { continue };
        let dy = if opts.jitter > 0 {
            rng.random_range(0..=opts.jitter)
        } else {
            0
        };
        let x0 = opts.margin + i * cell_w;
        let y0 = opts.margin + dy;
        for (gr, row) in g.iter().enumerate() {
            for (gc, cell) in row.bytes().enumerate() {
                if cell != b'#' {
                    continue;
                }
                for yy in 0..s {
                    for xx in 0..s {
                        img.set(y0 + gr * s + yy, x0 + gc * s + xx, opts.ink);
                    }
                }
            }
        }
    }
    img
}

/// Procedural paper texture: smooth stains plus speckle noise, values in
/// roughly `[0.35, 1.0]`.
pub fn procedural_background(seed: u64, height: usize, width: usize) -> LineImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: f32 = rng.random_range(0.75..0.95);
    let stains: Vec<(f32, f32, f32, f32)> = (0..rng.random_range(2..6))
        .map(|_| {
            (
                rng.random_range(0.0..height as f32),
                rng.random_range(0.0..width as f32),
                rng.random_range(3.0..(height.max(width) as f32 / 2.0).max(4.0)),
                rng.random_range(0.1..0.4),
            )
        })
        .collect();
    let speckle: Vec<f32> = (0..height * width)
        .map(|_| rng.random_range(-0.06..0.06))
        .collect();
    LineImage::from_fn(height, width, |r, c| {
        let mut v = base;
        for &(sr, sc, rad, depth) in &stains {
            let d2 = ((r as f32 - sr).powi(2) + (c as f32 - sc).powi(2)) / (rad * rad);
            v -= depth * (-d2).exp();
        }
        v + speckle[r * width + c]
    })
}

/// Renders `(id, text, split)` lines into `dir/clean/<id>.png` and writes
/// a clean-only manifest at `dir/manifest.jsonl`. Per-line jitter seeds are
/// derived from `opts.seed` and the id.
pub fn write_line_corpus(dir: &Path, lines: &[(String, String, Split)], opts: &RenderOptions) -> Result<CorpusManifest> {
    let clean = dir.join("clean");
    fs::create_dir_all(&clean).map_err(|e| Error::io(&clean, e))?;
    let mut records = Vec::with_capacity(lines.len());
    for (id, text, split) in lines {
        if let Some(ch) = text.chars().find(|&c| glyph(c).is_none()) {
            return Err(Error::Vocabulary { ch });
        }
        let line_opts = RenderOptions { seed: derive_seed(opts.seed, id), ..opts.clone() };
        let rel = format!("clean/{id}.png");
        render_line(text, &line_opts).save_png(dir.join(&rel))?;
        records.push(ManifestRecord {
            id: id.clone(),
            clean_path: rel,
            degraded_path: None,
            text: text.clone(),
            split: *split,
        });
    }
    let manifest = CorpusManifest::new(dir, records)?;
    manifest.write_jsonl(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Writes `count` procedural backgrounds as `dir/bg<i>.png`.
pub fn write_backgrounds(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..count {
        procedural_background(derive_seed(seed, &format!("bg{i}")), height, width)
            .save_png(dir.join(format!("bg{i}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_glyph_is_well_formed() {
        for (ch, rows) in FONT {
            for row in rows {
                assert_eq!(row.len(), GLYPH_W, "glyph {ch:?}");
            }
        }
    }

    #[test]
    fn rendering_is_deterministic_and_inked() {
        let opts = RenderOptions::default();
        let a = render_line("abc 123", &opts);
        assert_eq!(a, render_line("abc 123", &opts));
        assert!(a.data().iter().any(|&v| v < 0.5));
        let blank = render_line("   ", &opts);
        assert!(blank.data().iter().all(|&v| v == 1.0));
    }
}
