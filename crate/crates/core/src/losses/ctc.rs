//! Connectionist temporal classification loss on explicit frame
//! distributions, with the exact gradient from the forward and backward
//! recursions over the blank-interleaved label sequence.

use crate::error::{Error, Result};

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Fewest frames that can emit `labels`: one per label plus one separating
/// blank between each adjacent repeat.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check(log_probs: &[f64], classes: usize, labels: &[usize], blank: usize) -> Result<usize> {
    if classes == 0 || log_probs.len() % classes != 0 {
        return Err(Error::Argument(format!(
            "{} values do not form rows of {classes} classes",
            log_probs.len()
        )));
    }
    if blank >= classes {
        return Err(Error::Argument(format!("blank {blank} outside {classes} classes")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l == blank || l >= classes) {
        return Err(Error::Argument(format!("label {l} is the blank or out of range")));
    }
    Ok(log_probs.len() / classes)
}

/// Blank-interleaved label sequence `[b, l1, b, l2, ..., b]`.
fn expand(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

/// Forward variables `alpha[t * S + s]` in log space.
fn forward(lp: &[f64], classes: usize, frames: usize, ext: &[usize], blank: usize) -> Vec<f64> {
    let s_len = ext.len();
    let mut alpha = vec![f64::NEG_INFINITY; frames * s_len];
    alpha[0] = lp[ext[0]];
    if s_len > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..frames {
        let row = &lp[t * classes..(t + 1) * classes];
        for s in 0..s_len {
            let prev = (t - 1) * s_len;
            let mut a = alpha[prev + s];
            if s >= 1 {
                a = log_add(a, alpha[prev + s - 1]);
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                a = log_add(a, alpha[prev + s - 2]);
            }
            alpha[t * s_len + s] = a + row[ext[s]];
        }
    }
    alpha
}

/// Backward variables `beta[t * S + s]` in log space; like the forward
/// variables they include the emission at frame `t`.
fn backward(lp: &[f64], classes: usize, frames: usize, ext: &[usize], blank: usize) -> Vec<f64> {
    let s_len = ext.len();
    let mut beta = vec![f64::NEG_INFINITY; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = lp[(frames - 1) * classes + ext[s_len - 1]];
    if s_len > 1 {
        beta[last + s_len - 2] = lp[(frames - 1) * classes + ext[s_len - 2]];
    }
    for t in (0..frames - 1).rev() {
        let row = &lp[t * classes..(t + 1) * classes];
        let next = (t + 1) * s_len;
        for s in 0..s_len {
            let mut b = beta[next + s];
            if s + 1 < s_len {
                b = log_add(b, beta[next + s + 1]);
            }
            if s + 2 < s_len && ext[s] != blank && ext[s + 2] != ext[s] {
                b = log_add(b, beta[next + s + 2]);
            }
            beta[t * s_len + s] = b + row[ext[s]];
        }
    }
    beta
}

fn total_log_prob(alpha: &[f64], frames: usize, s_len: usize) -> f64 {
    let last = (frames - 1) * s_len;
    let mut lp = alpha[last + s_len - 1];
    if s_len > 1 {
        lp = log_add(lp, alpha[last + s_len - 2]);
    }
    lp
}

/// Negative log-likelihood of `labels` given row-major per-frame log
/// probabilities (`frames × classes`). Returns `+∞` when the labels cannot
/// fit in the available frames.
pub fn ctc_nll(log_probs: &[f64], classes: usize, labels: &[usize], blank: usize) -> Result<f64> {
    let frames = check(log_probs, classes, labels, blank)?;
    if frames == 0 || min_frames(labels) > frames {
        return Ok(f64::INFINITY);
    }
    let ext = expand(labels, blank);
    let alpha = forward(log_probs, classes, frames, &ext, blank);
    Ok(-total_log_prob(&alpha, frames, ext.len()))
}

/// CTC loss on probability rows (`frames × classes`, row-major).
pub fn ctc_loss(probs: &[f64], classes: usize, labels: &[usize], blank: usize) -> Result<f64> {
    let lp: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    ctc_nll(&lp, classes, labels, blank)
}

/// Loss together with its gradient with respect to every log-probability
/// entry. Infeasible inputs give `+∞` and a zero gradient.
pub fn ctc_nll_and_grad(
    log_probs: &[f64],
    classes: usize,
    labels: &[usize],
    blank: usize,
) -> Result<(f64, Vec<f64>)> {
    let frames = check(log_probs, classes, labels, blank)?;
    let mut grad = vec![0.0; log_probs.len()];
    if frames == 0 || min_frames(labels) > frames {
        return Ok((f64::INFINITY, grad));
    }
    let ext = expand(labels, blank);
    let s_len = ext.len();
    let alpha = forward(log_probs, classes, frames, &ext, blank);
    let beta = backward(log_probs, classes, frames, &ext, blank);
    let log_p = total_log_prob(&alpha, frames, s_len);
    if log_p == f64::NEG_INFINITY {
        return Ok((f64::INFINITY, grad));
    }
    for t in 0..frames {
        for (s, &k) in ext.iter().enumerate() {
            let i = t * s_len + s;
            let occ = alpha[i] + beta[i] - log_probs[t * classes + k] - log_p;
            if occ > f64::NEG_INFINITY {
                grad[t * classes + k] -= occ.exp();
            }
        }
    }
    Ok((-log_p, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_alignment_is_free() {
        // T=1, labels=[a], p(a)=1
        assert_eq!(ctc_loss(&[1.0, 0.0], 2, &[0], 1).unwrap(), 0.0);
    }

    #[test]
    fn two_frame_enumeration() {
        // paths aa, a-, -a each 0.25
        let loss = ctc_loss(&[0.5, 0.5, 0.5, 0.5], 2, &[0], 1).unwrap();
        assert!((loss - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((loss - 0.2876820724517809).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_separator() {
        assert_eq!(min_frames(&[0, 0]), 3);
        assert_eq!(ctc_loss(&[0.5; 4], 2, &[0, 0], 1).unwrap(), f64::INFINITY);
        assert!(ctc_loss(&[0.5; 6], 2, &[0, 0], 1).unwrap().is_finite());
    }

    #[test]
    fn empty_label_is_all_blank() {
        let probs = [0.3, 0.7, 0.4, 0.6];
        let loss = ctc_loss(&probs, 2, &[], 1).unwrap();
        assert!((loss + (0.7f64 * 0.6).ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_blank_in_labels() {
        assert!(ctc_loss(&[0.5; 4], 2, &[1], 1).is_err());
        assert!(ctc_loss(&[0.5; 3], 2, &[0], 1).is_err());
    }

    #[test]
    fn gradient_columns_sum_to_minus_one() {
        // Each frame's occupation probabilities sum to 1.
        let probs = [0.2, 0.5, 0.3, 0.6, 0.1, 0.3, 0.25, 0.25, 0.5];
        let lp: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
        let (_, g) = ctc_nll_and_grad(&lp, 3, &[0, 1], 2).unwrap();
        for t in 0..3 {
            let s: f64 = g[t * 3..t * 3 + 3].iter().sum();
            assert!((s + 1.0).abs() < 1e-12);
        }
    }
}
