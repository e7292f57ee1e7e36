//! Training objective terms. The scalar functions operate on plain slices
//! and come with closed-form gradients; [`graph`] holds the equivalent
//! differentiable tensor versions used during training.

mod ctc;
pub mod graph;

pub use ctc::{ctc_loss, ctc_nll, ctc_nll_and_grad, min_frames};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to every argument of a logarithm.
pub const LOG_EPS: f64 = 1e-7;

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Derivative of `clamp_prob`: 1 inside the open interval, 0 where clamped.
#[inline]
fn clamp_slope(p: f64) -> f64 {
    if (LOG_EPS..=1.0 - LOG_EPS).contains(&p) {
        1.0
    } else {
        0.0
    }
}

/// Weights of the recognition (`lambda`) and pixel (`beta`) terms in the
/// generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 1.0, beta: 10.0 }
    }
}

impl LossWeights {
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        let w = LossWeights { lambda, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got lambda={} beta={}",
                self.lambda, self.beta
            )));
        }
        Ok(())
    }
}

/// Which generator adversarial term to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// `-log D(fake)`
    #[default]
    NonSaturating,
    /// `log(1 - D(fake))`, the literal minimax term.
    Saturating,
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("{what}: lengths {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Contract(format!("{what}: empty input")));
    }
    Ok(())
}

/// Mean of `-log D(real) - log(1 - D(fake))`.
pub fn discriminator_loss(score_real: &[f64], score_fake: &[f64]) -> Result<f64> {
    same_len(score_real, score_fake, "discriminator_loss")?;
    let n = score_real.len() as f64;
    let s: f64 = score_real
        .iter()
        .zip(score_fake)
        .map(|(&r, &f)| -clamp_prob(r).ln() - (1.0 - clamp_prob(f)).ln())
        .sum();
    Ok(s / n)
}

/// Gradients of [`discriminator_loss`] with respect to both score maps.
pub fn discriminator_loss_grad(score_real: &[f64], score_fake: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    same_len(score_real, score_fake, "discriminator_loss")?;
    let n = score_real.len() as f64;
    let gr = score_real.iter().map(|&r| -clamp_slope(r) / (clamp_prob(r) * n)).collect();
    let gf = score_fake.iter().map(|&f| clamp_slope(f) / ((1.0 - clamp_prob(f)) * n)).collect();
    Ok((gr, gf))
}

/// Generator adversarial loss over the discriminator's scores on fakes.
pub fn generator_adversarial_loss(score_fake: &[f64], form: AdversarialForm) -> Result<f64> {
    if score_fake.is_empty() {
        return Err(Error::Contract("generator_adversarial_loss: empty input".into()));
    }
    let n = score_fake.len() as f64;
    let s: f64 = match form {
        AdversarialForm::NonSaturating => score_fake.iter().map(|&f| -clamp_prob(f).ln()).sum(),
        AdversarialForm::Saturating => score_fake.iter().map(|&f| (1.0 - clamp_prob(f)).ln()).sum(),
    };
    Ok(s / n)
}

pub fn generator_adversarial_loss_grad(score_fake: &[f64], form: AdversarialForm) -> Result<Vec<f64>> {
    if score_fake.is_empty() {
        return Err(Error::Contract("generator_adversarial_loss: empty input".into()));
    }
    let n = score_fake.len() as f64;
    Ok(score_fake
        .iter()
        .map(|&f| {
            let c = clamp_prob(f);
            let g = match form {
                AdversarialForm::NonSaturating => -1.0 / c,
                AdversarialForm::Saturating => -1.0 / (1.0 - c),
            };
            clamp_slope(f) * g / n
        })
        .collect())
}

/// Mean binary cross-entropy between generated intensities and targets.
pub fn pixel_bce(generated: &[f64], gt: &[f64]) -> Result<f64> {
    same_len(generated, gt, "pixel_bce")?;
    let n = generated.len() as f64;
    let s: f64 = generated
        .iter()
        .zip(gt)
        .map(|(&g, &t)| {
            let g = clamp_prob(g);
            -(t * g.ln() + (1.0 - t) * (1.0 - g).ln())
        })
        .sum();
    Ok(s / n)
}

pub fn pixel_bce_grad(generated: &[f64], gt: &[f64]) -> Result<Vec<f64>> {
    same_len(generated, gt, "pixel_bce")?;
    let n = generated.len() as f64;
    Ok(generated
        .iter()
        .zip(gt)
        .map(|(&g, &t)| {
            let c = clamp_prob(g);
            clamp_slope(g) * (-(t / c) + (1.0 - t) / (1.0 - c)) / n
        })
        .collect())
}

/// `adv + lambda * ctc + beta * bce`. A zero `lambda` drops the CTC term
/// entirely, so an infeasible (`+∞`) CTC value does not poison the result.
pub fn total_generator_loss(adv: f64, ctc: f64, bce: f64, w: LossWeights) -> Result<f64> {
    w.validate()?;
    if !adv.is_finite() || !bce.is_finite() {
        return Err(Error::Contract(format!("non-finite loss term: adv={adv} bce={bce}")));
    }
    if ctc.is_nan() {
        return Err(Error::Contract("ctc loss is NaN".into()));
    }
    let ctc_term = if w.lambda == 0.0 { 0.0 } else { w.lambda * ctc };
    Ok(adv + ctc_term + w.beta * bce)
}
