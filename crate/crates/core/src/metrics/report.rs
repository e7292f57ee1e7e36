use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binarization::{avg_score, drd, f_measure, psnr, pseudo_f_measure};
use super::text::{char_edits, word_edits};
use crate::error::{Error, Result};
use crate::image::BinaryImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluationMode {
    Binarization,
    Recognition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarizationItem {
    pub id: String,
    pub psnr: f64,
    pub fm: f64,
    pub fps: f64,
    pub drd: f64,
    pub avg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinarizationSummary {
    pub count: usize,
    pub psnr: f64,
    pub fm: f64,
    pub fps: f64,
    pub drd: f64,
    pub avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarizationReport {
    pub items: Vec<BinarizationItem>,
    pub summary: BinarizationSummary,
    /// Ids present on only one side of the pairing.
    pub unmatched: Vec<String>,
    /// `(id, error)` for items whose metrics could not be computed.
    pub failed: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionItem {
    pub id: String,
    pub ground_truth: String,
    pub hypothesis: String,
    pub char_edits: usize,
    pub gt_chars: usize,
    pub word_edits: usize,
    pub gt_words: usize,
    pub cer: f64,
    pub wer: f64,
}

/// Macro rates average per-line rates; micro rates divide total edits by
/// total ground-truth length.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecognitionSummary {
    pub count: usize,
    pub cer: f64,
    pub wer: f64,
    pub cer_micro: f64,
    pub wer_micro: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub items: Vec<RecognitionItem>,
    pub summary: RecognitionSummary,
    pub unmatched: Vec<String>,
    pub failed: Vec<(String, String)>,
}

/// Either kind of report, as produced by [`evaluate_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DatasetReport {
    Binarization(BinarizationReport),
    Recognition(RecognitionReport),
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores one prediction against its ground truth.
pub fn binarization_item(id: &str, pred: &BinaryImage, gt: &BinaryImage) -> Result<BinarizationItem> {
    let p = psnr(pred, gt)?;
    let fm = f_measure(pred, gt)?;
    let fps = pseudo_f_measure(pred, gt)?;
    let d = drd(pred, gt)?;
    Ok(BinarizationItem {
        id: id.to_string(),
        psnr: p,
        fm,
        fps,
        drd: d,
        avg: avg_score(p, fm, fps, d),
    })
}

/// Scores `(id, prediction, ground truth)` triples; items are evaluated in
/// parallel and reported in input order.
pub fn evaluate_binarization(pairs: &[(String, BinaryImage, BinaryImage)]) -> BinarizationReport {
    let outcomes: Vec<Result<BinarizationItem>> = pairs
        .par_iter()
        .map(|(id, pred, gt)| binarization_item(id, pred, gt))
        .collect();
    let mut items = Vec::new();
    let mut failed = Vec::new();
    for ((id, _, _), outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            Ok(item) => items.push(item),
            Err(e) => failed.push((id.clone(), e.to_string())),
        }
    }
    let summary = BinarizationSummary {
        count: items.len(),
        psnr: mean(items.iter().map(|i| i.psnr)),
        fm: mean(items.iter().map(|i| i.fm)),
        fps: mean(items.iter().map(|i| i.fps)),
        drd: mean(items.iter().map(|i| i.drd)),
        avg: mean(items.iter().map(|i| i.avg)),
    };
    BinarizationReport {
        items,
        summary,
        unmatched: Vec::new(),
        failed,
    }
}

/// Scores `(id, ground truth, hypothesis)` transcriptions.
pub fn evaluate_recognition(pairs: &[(String, String, String)]) -> RecognitionReport {
    let mut items = Vec::new();
    let mut failed = Vec::new();
    for (id, gt, hyp) in pairs {
        let (ce, nc) = char_edits(gt, hyp);
        let (we, nw) = word_edits(gt, hyp);
        if nc == 0 || nw == 0 {
            failed.push((id.clone(), "empty ground-truth transcription".to_string()));
            continue;
        }
        items.push(RecognitionItem {
            id: id.clone(),
            ground_truth: gt.clone(),
            hypothesis: hyp.clone(),
            char_edits: ce,
            gt_chars: nc,
            word_edits: we,
            gt_words: nw,
            cer: 100.0 * ce as f64 / nc as f64,
            wer: 100.0 * we as f64 / nw as f64,
        });
    }
    let total = |f: fn(&RecognitionItem) -> usize| items.iter().map(f).sum::<usize>() as f64;
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { 100.0 * num / den };
    let summary = RecognitionSummary {
        count: items.len(),
        cer: mean(items.iter().map(|i| i.cer)),
        wer: mean(items.iter().map(|i| i.wer)),
        cer_micro: ratio(total(|i| i.char_edits), total(|i| i.gt_chars)),
        wer_micro: ratio(total(|i| i.word_edits), total(|i| i.gt_words)),
    };
    RecognitionReport {
        items,
        summary,
        unmatched: Vec::new(),
        failed,
    }
}

/// Files in `dir` with extension `ext`, keyed by stem.
fn files_by_stem(dir: &Path, ext: &str) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Pairs files by stem across the two directories (PNG images for
/// binarization, UTF-8 `.txt` transcriptions for recognition) and scores
/// the intersection. Ids present on one side only are listed in the
/// report; an empty intersection is an error.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path, mode: EvaluationMode) -> Result<DatasetReport> {
    let ext = match mode {
        EvaluationMode::Binarization => "png",
        EvaluationMode::Recognition => "txt",
    };
    let preds = files_by_stem(pred_dir, ext)?;
    let gts = files_by_stem(gt_dir, ext)?;
    let mut unmatched: Vec<String> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .chain(gts.keys().filter(|k| !preds.contains_key(*k)))
        .cloned()
        .collect();
    unmatched.sort();
    let common: Vec<&String> = preds.keys().filter(|k| gts.contains_key(*k)).collect();
    if common.is_empty() {
        return Err(Error::Config(format!(
            "no matching .{ext} ids between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    if !unmatched.is_empty() {
        log::warn!("{} unmatched ids skipped", unmatched.len());
    }
    match mode {
        EvaluationMode::Binarization => {
            let mut pairs = Vec::with_capacity(common.len());
            for id in common {
                pairs.push((
                    id.clone(),
                    BinaryImage::load_png(&preds[id])?,
                    BinaryImage::load_png(&gts[id])?,
                ));
            }
            let mut report = evaluate_binarization(&pairs);
            report.unmatched = unmatched;
            Ok(DatasetReport::Binarization(report))
        }
        EvaluationMode::Recognition => {
            let read = |p: &Path| {
                std::fs::read_to_string(p)
                    .map(|s| s.trim_end_matches(['\n', '\r']).to_string())
                    .map_err(|e| Error::io(p, e))
            };
            let mut pairs = Vec::with_capacity(common.len());
            for id in common {
                pairs.push((id.clone(), read(&gts[id])?, read(&preds[id])?));
            }
            let mut report = evaluate_recognition(&pairs);
            report.unmatched = unmatched;
            Ok(DatasetReport::Recognition(report))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stroke_image(offset: usize) -> BinaryImage {
        BinaryImage::from_fn(16, 16, |r, c| (4..12).contains(&r) && (offset..offset + 3).contains(&c))
    }

    #[test]
    fn perfect_predictions_hit_maxima() {
        let gt = stroke_image(5);
        let report = evaluate_binarization(&[("a".into(), gt.clone(), gt.clone())]);
        let s = &report.summary;
        assert_eq!((s.psnr, s.fm, s.fps, s.drd), (99.99, 100.0, 100.0, 0.0));
        let rec = evaluate_recognition(&[("a".into(), "one two".into(), "one two".into())]);
        assert_eq!((rec.summary.cer, rec.summary.wer), (0.0, 0.0));
    }

    #[test]
    fn means_match_hand_average() {
        let gt = stroke_image(5);
        let pairs = vec![
            ("a".to_string(), stroke_image(5), gt.clone()),
            ("b".to_string(), stroke_image(6), gt.clone()),
            ("c".to_string(), stroke_image(8), gt.clone()),
        ];
        let r = evaluate_binarization(&pairs);
        let hand = |f: fn(&BinarizationItem) -> f64| r.items.iter().map(f).sum::<f64>() / 3.0;
        assert!((r.summary.psnr - hand(|i| i.psnr)).abs() < 1e-12);
        assert!((r.summary.drd - hand(|i| i.drd)).abs() < 1e-12);
        assert!((r.summary.avg - hand(|i| i.avg)).abs() < 1e-12);

        let t = evaluate_recognition(&[
            ("a".into(), "abcd".into(), "abce".into()),
            ("b".into(), "ab".into(), "".into()),
        ]);
        assert!((t.summary.cer - (25.0 + 100.0) / 2.0).abs() < 1e-12);
        assert!((t.summary.cer_micro - 100.0 * 3.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_pairing_from_directories() {
        let pred = tempfile::tempdir().unwrap();
        let gt = tempfile::tempdir().unwrap();
        let img = stroke_image(4);
        img.save_png(pred.path().join("p1.png")).unwrap();
        img.save_png(gt.path().join("p1.png")).unwrap();
        img.save_png(gt.path().join("p2.png")).unwrap();
        let report = evaluate_dataset(pred.path(), gt.path(), EvaluationMode::Binarization).unwrap();
        let DatasetReport::Binarization(r) = report else { panic!() };
        assert_eq!(r.items.len(), 1);
        assert_eq!(r.unmatched, vec!["p2".to_string()]);
        assert_eq!(r.summary.fm, 100.0);

        let empty = tempfile::tempdir().unwrap();
        assert!(evaluate_dataset(empty.path(), gt.path(), EvaluationMode::Binarization).is_err());

        std::fs::write(pred.path().join("l1.txt"), "a b c\n").unwrap();
        std::fs::write(gt.path().join("l1.txt"), "a x c\n").unwrap();
        let DatasetReport::Recognition(t) =
            evaluate_dataset(pred.path(), gt.path(), EvaluationMode::Recognition).unwrap()
        else {
            panic!()
        };
        assert!((t.summary.wer - 100.0 / 3.0).abs() < 1e-9);
    }
}
