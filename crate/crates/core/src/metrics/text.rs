//! Edit-distance based recognition metrics.

use crate::error::{Error, Result};

/// Unit-cost edit distance (insertions, deletions, substitutions).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Whitespace tokenization used for WER; punctuation tokens are kept.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Character edits and ground-truth length.
pub fn char_edits(gt: &str, hyp: &str) -> (usize, usize) {
    let g: Vec<char> = gt.chars().collect();
    let h: Vec<char> = hyp.chars().collect();
    (levenshtein(&g, &h), g.len())
}

/// Word edits and ground-truth token count.
pub fn word_edits(gt: &str, hyp: &str) -> (usize, usize) {
    let g = tokenize(gt);
    let h = tokenize(hyp);
    (levenshtein(&g, &h), g.len())
}

/// Character error rate in percent.
pub fn cer(gt: &str, hyp: &str) -> Result<f64> {
    let (edits, n) = char_edits(gt, hyp);
    if n == 0 {
        return Err(Error::Argument("CER needs a non-empty ground truth".into()));
    }
    Ok(100.0 * edits as f64 / n as f64)
}

/// Word error rate in percent.
pub fn wer(gt: &str, hyp: &str) -> Result<f64> {
    let (edits, n) = word_edits(gt, hyp);
    if n == 0 {
        return Err(Error::Argument(
            "WER needs a ground truth with at least one token".into(),
        ));
    }
    Ok(100.0 * edits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein(b"abc", b"abc"), 0);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein(b"", b"abcd"), 4);
        assert_eq!(levenshtein(b"abcd", b""), 4);
    }

    #[test]
    fn cer_wer_examples() {
        assert_eq!(cer("kitten", "kitten").unwrap(), 0.0);
        assert_eq!(cer("kitten", "sitting").unwrap(), 50.0);
        assert_eq!(cer("kitten", "").unwrap(), 100.0);
        assert!(cer("", "x").is_err());
        assert_eq!(wer("a b c", "a b c").unwrap(), 0.0);
        assert!((wer("a b c", "a x c").unwrap() - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(wer("a b c", "").unwrap(), 100.0);
        assert_eq!(wer("of the  minds ,", "of the minds ,").unwrap(), 0.0);
        assert!(wer("   ", "x").is_err());
    }

    proptest! {
        #[test]
        fn cer_bounds(gt in "[a-c]{1,8}", hyp in "[a-d]{0,10}") {
            let c = cer(&gt, &hyp).unwrap();
            prop_assert!(c >= 0.0);
            let bound = 100.0 * (gt.len() + hyp.len()) as f64 / gt.len() as f64;
            prop_assert!(c <= bound + 1e-9);
            prop_assert_eq!(cer(&gt, &gt).unwrap(), 0.0);
        }
    }
}
