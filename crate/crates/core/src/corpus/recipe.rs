use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothing filter used for the blur stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurMode {
    #[default]
    Box,
    Gaussian,
}

pub const DILATION_SIZES: [u8; 2] = [2, 3];
pub const EROSION_SIZES: [u8; 3] = [2, 3, 4];
pub const MAX_BLUR: u8 = 15;

/// Closed numeric range `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T> Range<T> {
    pub const fn new(min: T, max: T) -> Self {
        Self { min, max }
    }
}

/// Sampling ranges for [`sample_recipe`]. Kernel choice lists use `0` for
/// "stage disabled".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    /// Chance that a background texture is composited at all.
    pub background_probability: f64,
    pub blend_alpha: Range<f64>,
    pub dilation_choices: Vec<u8>,
    pub erosion_choices: Vec<u8>,
    /// Odd kernel sizes are drawn uniformly from this range.
    pub blur: Range<u8>,
    pub blur_mode: BlurMode,
    pub line_count: Range<usize>,
    pub line_width: Range<usize>,
    pub line_intensity: Range<f64>,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            background_probability: 1.0,
            blend_alpha: Range::new(0.5, 0.95),
            dilation_choices: vec![0, 2, 3],
            erosion_choices: vec![0, 2, 3, 4],
            blur: Range::new(1, MAX_BLUR),
            blur_mode: BlurMode::Box,
            line_count: Range::new(0, 4),
            line_width: Range::new(1, 5),
            line_intensity: Range::new(0.0, 0.3),
        }
    }
}

impl DegradationConfig {
    /// Every stage switched off; recipes drawn from it are identities.
    pub fn disabled() -> Self {
        Self {
            background_probability: 0.0,
            blend_alpha: Range::new(0.0, 0.0),
            dilation_choices: vec![0],
            erosion_choices: vec![0],
            blur: Range::new(1, 1),
            blur_mode: BlurMode::Box,
            line_count: Range::new(0, 0),
            line_width: Range::new(1, 1),
            line_intensity: Range::new(0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.background_probability) {
            return bad(format!(
                "background_probability {} outside [0, 1]",
                self.background_probability
            ));
        }
        check_unit_range("blend_alpha", self.blend_alpha)?;
        check_unit_range("line_intensity", self.line_intensity)?;
        if self.dilation_choices.is_empty()
            || self
                .dilation_choices
                .iter()
                .any(|&k| k != 0 && !DILATION_SIZES.contains(&k))
        {
            return bad(format!(
                "dilation_choices {:?} must be drawn from {{0, 2, 3}}",
                self.dilation_choices
            ));
        }
        if self.erosion_choices.is_empty()
            || self
                .erosion_choices
                .iter()
                .any(|&k| k != 0 && !EROSION_SIZES.contains(&k))
        {
            return bad(format!(
                "erosion_choices {:?} must be drawn from {{0, 2, 3, 4}}",
                self.erosion_choices
            ));
        }
        let Range { min, max } = self.blur;
        if min > max || min < 1 || max > MAX_BLUR || min % 2 == 0 || max % 2 == 0 {
            return bad(format!(
                "blur range [{min}, {max}] must hold odd sizes within [1, {MAX_BLUR}]"
            ));
        }
        if self.line_count.min > self.line_count.max {
            return bad("line_count min exceeds max".into());
        }
        if self.line_width.min < 1 || self.line_width.min > self.line_width.max {
            return bad("line_width must satisfy 1 <= min <= max".into());
        }
        Ok(())
    }
}

fn check_unit_range(name: &str, r: Range<f64>) -> Result<()> {
    if !(0.0..=1.0).contains(&r.min) || !(0.0..=1.0).contains(&r.max) || r.min > r.max {
        return Err(Error::Config(format!(
            "{name} range [{}, {}] must lie in [0, 1] with min <= max",
            r.min, r.max
        )));
    }
    Ok(())
}

/// A fully specified degradation for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub background_id: Option<String>,
    pub blend_alpha: f32,
    pub dilation: Option<u8>,
    pub erosion: Option<u8>,
    pub blur_kernel: u8,
    #[serde(default)]
    pub blur_mode: BlurMode,
    pub line_positions: Vec<usize>,
    pub line_widths: Vec<usize>,
    pub line_intensity: f32,
    pub seed: u64,
}

impl DegradationRecipe {
    pub fn identity() -> Self {
        Self {
            background_id: None,
            blend_alpha: 0.0,
            dilation: None,
            erosion: None,
            blur_kernel: 1,
            blur_mode: BlurMode::Box,
            line_positions: Vec::new(),
            line_widths: Vec::new(),
            line_intensity: 0.0,
            seed: 0,
        }
    }

    pub fn n_vertical_lines(&self) -> usize {
        self.line_positions.len()
    }

    /// Checks kernel sets, blur parity and line geometry against an image
    /// of the given width.
    pub fn validate(&self, image_width: usize) -> Result<()> {
        if let Some(k) = self.dilation {
            if !DILATION_SIZES.contains(&k) {
                return Err(Error::Argument(format!("dilation kernel {k} not in {{2, 3}}")));
            }
        }
        if let Some(k) = self.erosion {
            if !EROSION_SIZES.contains(&k) {
                return Err(Error::Argument(format!(
                    "erosion kernel {k} not in {{2, 3, 4}}"
                )));
            }
        }
        if self.blur_kernel % 2 == 0 || !(1..=MAX_BLUR).contains(&self.blur_kernel) {
            return Err(Error::Argument(format!(
                "blur kernel {} must be odd and within 1..=15",
                self.blur_kernel
            )));
        }
        if !(0.0..=1.0).contains(&self.blend_alpha) || !(0.0..=1.0).contains(&self.line_intensity)
        {
            return Err(Error::Argument("alpha and line intensity must lie in [0, 1]".into()));
        }
        if self.line_positions.len() != self.line_widths.len() {
            return Err(Error::Argument(
                "line_positions and line_widths differ in length".into(),
            ));
        }
        for (&p, &w) in self.line_positions.iter().zip(&self.line_widths) {
            if p + w > image_width {
                return Err(Error::Argument(format!(
                    "vertical line at column {p} with width {w} exceeds image width {image_width}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws a recipe from `config` with a generator seeded by `seed`.
///
/// `image_width` bounds the vertical line placement and `backgrounds` is the
/// pool of asset ids this sample may use.
pub fn sample_recipe(
    seed: u64,
    config: &DegradationConfig,
    image_width: usize,
    backgrounds: &[String],
) -> Result<DegradationRecipe> {
    config.validate()?;
    if image_width == 0 {
        return Err(Error::Argument("image width must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let use_background =
        !backgrounds.is_empty() && rng.random_bool(config.background_probability);
    let background_id = use_background.then(|| backgrounds[rng.random_range(0..backgrounds.len())].clone());
    let blend_alpha = if use_background {
        uniform(&mut rng, config.blend_alpha) as f32
    } else {
        0.0
    };

    let dilation = pick(&mut rng, &config.dilation_choices);
    let erosion = pick(&mut rng, &config.erosion_choices);

    let lo = config.blur.min / 2;
    let hi = config.blur.max / 2;
    let blur_kernel = 2 * rng.random_range(lo..=hi) + 1;

    let n_lines = rng.random_range(config.line_count.min..=config.line_count.max);
    let mut line_positions = Vec::with_capacity(n_lines);
    let mut line_widths = Vec::with_capacity(n_lines);
    for _ in 0..n_lines {
        let w = rng
            .random_range(config.line_width.min..=config.line_width.max)
            .min(image_width);
        let p = rng.random_range(0..=image_width - w);
        line_widths.push(w);
        line_positions.push(p);
    }
    let line_intensity = if n_lines > 0 {
        uniform(&mut rng, config.line_intensity) as f32
    } else {
        0.0
    };

    Ok(DegradationRecipe {
        background_id,
        blend_alpha,
        dilation,
        erosion,
        blur_kernel,
        blur_mode: config.blur_mode,
        line_positions,
        line_widths,
        line_intensity,
        seed,
    })
}

fn uniform(rng: &mut ChaCha8Rng, r: Range<f64>) -> f64 {
    if r.max > r.min {
        rng.random_range(r.min..=r.max)
    } else {
        r.min
    }
}

fn pick(rng: &mut ChaCha8Rng, choices: &[u8]) -> Option<u8> {
    match choices[rng.random_range(0..choices.len())] {
        0 => None,
        k => Some(k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> Vec<String> {
        vec!["bg_a".into(), "bg_b".into()]
    }

    #[test]
    fn same_seed_same_recipe() {
        let cfg = DegradationConfig::default();
        let a = sample_recipe(7, &cfg, 300, &pool()).unwrap();
        let b = sample_recipe(7, &cfg, 300, &pool()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disabled_config_gives_identity() {
        let r = sample_recipe(3, &DegradationConfig::disabled(), 50, &pool()).unwrap();
        assert_eq!(r.background_id, None);
        assert_eq!(r.dilation, None);
        assert_eq!(r.erosion, None);
        assert_eq!(r.blur_kernel, 1);
        assert_eq!(r.n_vertical_lines(), 0);
    }

    #[test]
    fn default_ranges_respect_kernel_sets() {
        let cfg = DegradationConfig::default();
        let mut seen_blur = std::collections::BTreeSet::new();
        for seed in 0..500 {
            let r = sample_recipe(seed, &cfg, 64, &pool()).unwrap();
            assert!(r.dilation.is_none_or(|k| k == 2 || k == 3));
            assert!(r.erosion.is_none_or(|k| (2..=4).contains(&k)));
            assert!(r.blur_kernel <= 15 && r.blur_kernel % 2 == 1);
            r.validate(64).unwrap();
            seen_blur.insert(r.blur_kernel);
        }
        assert_eq!(seen_blur.len(), 8);
    }

    #[test]
    fn invalid_ranges_are_configuration_errors() {
        let mut cfg = DegradationConfig::default();
        cfg.dilation_choices = vec![4];
        assert!(matches!(sample_recipe(1, &cfg, 10, &[]), Err(Error::Config(_))));
        let mut cfg = DegradationConfig::default();
        cfg.blur = Range::new(2, 15);
        assert!(matches!(sample_recipe(1, &cfg, 10, &[]), Err(Error::Config(_))));
        let mut cfg = DegradationConfig::default();
        cfg.blend_alpha = Range::new(0.9, 0.1);
        assert!(cfg.validate().is_err());
    }
}
