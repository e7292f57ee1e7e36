//! Binarization quality (PSNR, FM, Fps, DRD, Avg) and recognition quality
//! (CER, WER) measures plus dataset-level reports.

mod binarization;
mod report;
mod text;

pub use binarization::{
    avg_score, drd, drd_weights, f_measure, non_uniform_blocks, psnr, pseudo_f_measure,
    skeletonize, Intensities, PSNR_IDENTICAL,
};
pub use report::{
    binarization_item, evaluate_binarization, evaluate_dataset, evaluate_recognition,
    BinarizationItem, BinarizationReport, BinarizationSummary, DatasetReport, EvaluationMode,
    RecognitionItem, RecognitionReport, RecognitionSummary,
};
pub use text::{cer, char_edits, levenshtein, tokenize, wer, word_edits};
