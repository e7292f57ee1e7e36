use std::path::{Path, PathBuf};

use inkrestore::corpus::synth::{write_backgrounds, write_line_corpus, RenderOptions};
use inkrestore::corpus::{build_corpus, BackgroundLibrary, BuildOptions, CorpusBuildConfig, CorpusManifest, Split};
use inkrestore::image::{normalize_to_model_size, threshold};
use inkrestore::inference::{enhance_page, otsu_binarize, sauvola_binarize, EnhanceOptions, GeneratorEnhancer};
use inkrestore::metrics::{
    evaluate_binarization, evaluate_dataset, evaluate_recognition, BinarizationReport, DatasetReport, EvaluationMode,
    RecognitionReport,
};
use inkrestore::models::{DiscriminatorSpec, RecognizerSpec};
use inkrestore::training::{fine_tune, train, IterationReport, TrainOptions, BEST_MODEL_FILE};
use inkrestore::util::derive_seed;
use inkrestore::{BinaryImage, LineImage, ModelBundle, TrainingConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::*;
use crate::support::*;

pub fn run(cli: &Cli) -> CliResult {
    let inputs = Inputs { root: cli.data_root.clone() };
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::BuildCorpus(a) => build(a, &inputs),
        Command::Train(a) => train_cmd(a, &inputs),
        Command::FineTune(a) => fine_tune_cmd(a, &inputs),
        Command::Enhance(a) => enhance(a, &inputs),
        Command::EvaluateBinarization(a) => evaluate_bin(a, &inputs),
        Command::EvaluateHtr(a) => evaluate_htr(a, &inputs),
    }
}

const WORDS: [&str; 24] = [
    "the", "ink", "quill", "paper", "scribe", "letter", "codex", "page", "word", "river", "north", "house", "field",
    "march", "stone", "ledger", "copy", "seal", "anno", "1791", "folio", "vellum", "abbey", "deed",
];

fn synth(a: &SynthArgs) -> CliResult {
    let mut lines = Vec::new();
    for (split, count) in [(Split::Train, a.train), (Split::Valid, a.valid), (Split::Test, a.test)] {
        for i in 0..count {
            let id = format!("{split}{i:04}");
            let pick = |key: String| derive_seed(a.seed, &key) as usize;
            let n = 1 + pick(format!("{id}/n")) % 3;
            let text: Vec<&str> = (0..n).map(|j| WORDS[pick(format!("{id}/{j}")) % WORDS.len()]).collect();
            lines.push((id, text.join(" "), split));
        }
    }
    if lines.is_empty() {
        return Err(Failure::Config("nothing to render: all split counts are 0".into()));
    }
    let opts = RenderOptions { seed: a.seed, ..RenderOptions::default() };
    let manifest = write_line_corpus(&a.out.join("lines"), &lines, &opts)?;
    write_backgrounds(&a.out.join("backgrounds"), a.backgrounds, 64, 512, a.seed)?;
    println!(
        "wrote {} clean lines ({} train, {} valid, {} test) and {} backgrounds under {}",
        manifest.records.len(),
        a.train,
        a.valid,
        a.test,
        a.backgrounds,
        a.out.display()
    );
    Ok(())
}

fn load_manifest(inputs: &Inputs, path: &Path) -> CliResult<CorpusManifest> {
    let path = inputs.file(path, "manifest")?;
    let manifest = CorpusManifest::read_jsonl(&path)?;
    manifest.validate()?;
    Ok(manifest)
}

#[derive(Serialize)]
struct CorpusRun {
    seed: u64,
    corpus: CorpusBuildConfig,
}

fn build(a: &BuildCorpusArgs, inputs: &Inputs) -> CliResult {
    let manifest = load_manifest(inputs, &a.manifest)?;
    let bg_dir = inputs.dir(&a.backgrounds, "background")?;
    let config_file = a.config.as_deref().map(|p| inputs.file(p, "config file")).transpose()?;
    let mut corpus: CorpusBuildConfig = load_config(config_file.as_deref())?;
    if let Some(f) = a.test_background_fraction {
        corpus.test_background_fraction = f;
    }
    corpus.degradation.validate()?;
    let run = CorpusRun { seed: a.seed.unwrap_or(0), corpus };
    if a.dry_run {
        println!("{}", run_record_json("build-corpus", &run));
        println!("dry run: configuration valid, {} clean samples", manifest.records.len());
        return Ok(());
    }
    let assets = BackgroundLibrary::load_dir(&bg_dir)?;
    if assets.is_empty() && run.corpus.degradation.background_probability > 0.0 {
        return Err(Failure::Config(format!("no background images in {}", bg_dir.display())));
    }
    let built = build_corpus(&manifest, &assets, &run.corpus, run.seed, &a.out, &BuildOptions { resume: a.resume })?;
    let hash = write_run_record(&a.out, "build-corpus", &run)?;
    for (id, e) in &built.failures {
        log::error!("{id}: {e}");
    }
    if built.manifest.records.is_empty() {
        return Err(Failure::Runtime(format!("all {} samples failed", built.failures.len())));
    }
    let m = &built.manifest;
    println!(
        "corpus {} (config {hash}): train {}, valid {}, test {}, failed {}",
        a.out.display(),
        m.count(Split::Train),
        m.count(Split::Valid),
        m.count(Split::Test),
        built.failures.len()
    );
    Ok(())
}

fn training_config(o: &TrainingOverrides, inputs: &Inputs) -> CliResult<TrainingConfig> {
    let file = o.config.as_deref().map(|p| inputs.file(p, "config file")).transpose()?;
    let mut c: TrainingConfig = load_config(file.as_deref())?;
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = o.height {
        c.image_height = v;
    }
    if let Some(v) = o.width {
        c.image_width = v;
    }
    Ok(c)
}

fn train_cmd(a: &TrainArgs, inputs: &Inputs) -> CliResult {
    let mut config = training_config(&a.overrides, inputs)?;
    if let Some(s) = a.scenario {
        config.scenario = s;
    }
    if let Some(v) = a.lambda {
        config.weights.lambda = v;
    }
    if let Some(v) = a.beta {
        config.weights.beta = v;
    }
    if let Some(v) = a.iterations {
        config.max_iterations = v;
    }
    if let Some(v) = a.checkpoint_every {
        config.checkpoint_every = v;
    }
    config.validate()?;
    let manifest = load_manifest(inputs, &a.manifest)?;
    for split in [Split::Train, Split::Valid] {
        if manifest.count(split) == 0 {
            return Err(Failure::Config(format!("manifest has no {split} samples")));
        }
    }
    if a.dry_run {
        println!("{}", run_record_json("train", &config));
        println!("dry run: configuration valid");
        return Ok(());
    }
    let hash = write_run_record(&a.out, "train", &config)?;
    let mut progress = |r: &IterationReport| {
        if r.iteration % 50 == 0 {
            log::info!("iter {}: loss_d {:.4} loss_g {:.4} bce {:.4}", r.iteration, r.loss_d, r.loss_g_total, r.loss_bce);
        }
    };
    let outcome = train(
        &manifest,
        &config,
        TrainOptions { out_dir: Some(a.out.clone()), resume: a.resume, on_report: Some(&mut progress) },
    )?;
    let mut table = Table::new(&["iteration", "CER", "PSNR"]);
    for c in &outcome.checkpoints {
        table.row(&c.iteration.to_string(), &[c.validation.cer, c.validation.psnr]);
    }
    print!("{}", table.render());
    let best = &outcome.best;
    println!(
        "best: iteration {} (CER {:.2}, PSNR {:.2}) saved to {}; config {hash}",
        best.iteration,
        best.validation.cer,
        best.validation.psnr,
        a.out.join(BEST_MODEL_FILE).display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FineTuneRun<'a> {
    checkpoint_config_hash: &'a str,
    manifests: Vec<String>,
    training: &'a TrainingConfig,
}

pub const FINE_TUNED_FILE: &str = "fine-tuned.safetensors";

fn fine_tune_cmd(a: &FineTuneArgs, inputs: &Inputs) -> CliResult {
    if let Some(s) = &a.scenario {
        return Err(Failure::Config(format!(
            "fine-tune does not take --scenario (got {s}): the recognizer is not part of fine-tuning"
        )));
    }
    let config = training_config(&a.overrides, inputs)?;
    config.validate()?;
    let checkpoint = inputs.file(&a.checkpoint, "checkpoint")?;
    let manifests = a.manifests.iter().map(|m| load_manifest(inputs, m)).collect::<CliResult<Vec<_>>>()?;
    for (path, m) in a.manifests.iter().zip(&manifests) {
        if let Some(r) = m.records.iter().find(|r| r.degraded_path.is_none()) {
            return Err(Failure::Config(format!("{}: record `{}` has no degraded image", path.display(), r.id)));
        }
    }
    let bundle = ModelBundle::load(&checkpoint)?;
    let run = FineTuneRun {
        checkpoint_config_hash: &bundle.provenance.config_hash,
        manifests: a.manifests.iter().map(|p| p.display().to_string()).collect(),
        training: &config,
    };
    if a.dry_run {
        println!("{}", run_record_json("fine-tune", &run));
        println!("dry run: configuration valid");
        return Ok(());
    }
    let hash = write_run_record(&a.out, "fine-tune", &run)?;
    let (bundle, report) = fine_tune(bundle, &manifests, &config)?;
    let path = a.out.join(FINE_TUNED_FILE);
    bundle.save(&path)?;
    write_report(&a.out.join("fine-tune-report.json"), "fine-tune", &hash, &report)?;
    println!(
        "fine-tuned on {} patches in {} iterations ({} epoch); saved {}",
        report.patches,
        report.iterations,
        report.epochs,
        path.display()
    );
    Ok(())
}

/// Rejects patch sizes the networks cannot take.
fn check_model_size(bundle: &ModelBundle, h: usize, w: usize, recognizer: bool) -> CliResult {
    let mut f = bundle.specs.generator.downsample_factor().max(DiscriminatorSpec::DOWNSAMPLE_FACTOR);
    if recognizer {
        f = f.max(RecognizerSpec::downsample_factor());
    }
    if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
        return Err(Failure::Config(format!("model input size {h}×{w} must be a positive multiple of {f}")));
    }
    Ok(())
}

fn enhance_options(p: &PatchArgs, bundle: &ModelBundle) -> CliResult<EnhanceOptions> {
    check_model_size(bundle, p.patch_height, p.patch_width, false)?;
    if !(0.0..=1.0).contains(&p.threshold) {
        return Err(Failure::Config(format!("threshold {} outside [0, 1]", p.threshold)));
    }
    if p.overlap >= p.patch_height.min(p.patch_width) {
        return Err(Failure::Config(format!("overlap {} must be smaller than the patch", p.overlap)));
    }
    Ok(EnhanceOptions { flip: !p.no_flip, threshold: p.threshold, overlap: p.overlap })
}

fn enhancer<'a>(bundle: &'a ModelBundle, p: &PatchArgs) -> GeneratorEnhancer<'a> {
    GeneratorEnhancer { bundle, patch_h: p.patch_height, patch_w: p.patch_width, batch_size: p.batch_size.max(1) }
}

#[derive(Serialize)]
struct EnhanceRun<'a> {
    checkpoint_config_hash: &'a str,
    patch_height: usize,
    patch_width: usize,
    options: &'a EnhanceOptions,
}

/// Input on the left, result on the right, with a grey gap.
fn side_by_side(left: &LineImage, right: &LineImage) -> LineImage {
    const GAP: usize = 8;
    let (h, w) = (left.height().max(right.height()), left.width());
    LineImage::from_fn(h, w + GAP + right.width(), |r, c| {
        let pick = |img: &LineImage, c: usize| if r < img.height() { img.get(r, c) } else { 1.0 };
        if c < w {
            pick(left, c)
        } else if c < w + GAP {
            0.5
        } else {
            pick(right, c - w - GAP)
        }
    })
}

fn enhance(a: &EnhanceArgs, inputs: &Inputs) -> CliResult {
    let checkpoint = inputs.file(&a.checkpoint, "checkpoint")?;
    let input = inputs.existing(&a.input, "input")?;
    let pages = png_inputs(&input)?;
    let bundle = ModelBundle::load(&checkpoint)?;
    let opts = enhance_options(&a.patches, &bundle)?;
    let run = EnhanceRun {
        checkpoint_config_hash: &bundle.provenance.config_hash,
        patch_height: a.patches.patch_height,
        patch_width: a.patches.patch_width,
        options: &opts,
    };
    write_run_record(&a.out, "enhance", &run)?;
    let enhancer = enhancer(&bundle, &a.patches);
    let mut done = 0;
    for (id, path) in &pages {
        let result = (|| -> inkrestore::Result<()> {
            let page = LineImage::load_png(path)?;
            let binary = enhance_page(&enhancer, &page, &opts)?;
            binary.save_png(a.out.join(format!("{id}.png")))?;
            if a.compare {
                side_by_side(&page, &binary.to_line_image()).save_png(a.out.join(format!("{id}.compare.png")))?;
            }
            Ok(())
        })();
        match result {
            Ok(()) => {
                done += 1;
                log::info!("{id}: done");
            }
            Err(e) => log::error!("{id}: {e}"),
        }
    }
    if done == 0 {
        return Err(Failure::Runtime(format!("all {} pages failed", pages.len())));
    }
    println!("enhanced {done}/{} pages into {}", pages.len(), a.out.display());
    Ok(())
}

enum Binarizer<'a> {
    Otsu,
    Sauvola { window: usize, k: f64 },
    Model { enhancer: GeneratorEnhancer<'a>, options: EnhanceOptions },
}

impl Binarizer<'_> {
    fn apply(&self, img: &LineImage) -> inkrestore::Result<BinaryImage> {
        match self {
            Binarizer::Otsu => Ok(otsu_binarize(img)),
            Binarizer::Sauvola { window, k } => sauvola_binarize(img, *window, *k),
            Binarizer::Model { enhancer, options } => enhance_page(enhancer, img, options),
        }
    }

    fn parallel(&self) -> bool {
        !matches!(self, Binarizer::Model { .. })
    }
}

#[derive(Serialize)]
struct BinarizationRun {
    method: String,
    sauvola_window: Option<usize>,
    sauvola_k: Option<f64>,
    checkpoint_config_hash: Option<String>,
    enhance: Option<EnhanceOptions>,
    split: Option<Split>,
}

/// `(id, prediction, ground truth)` or `(id, error)`.
type Scored = Result<(String, BinaryImage, BinaryImage), (String, String)>;

fn evaluate_bin(a: &EvaluateBinarizationArgs, inputs: &Inputs) -> CliResult {
    if let Some(pred) = &a.pred {
        if a.baseline.is_some() || a.checkpoint.is_some() {
            return Err(Failure::Config("--pred is already binarized; drop --baseline / --checkpoint".into()));
        }
        let pred = inputs.dir(pred, "prediction")?;
        let gt = inputs.dir(a.gt.as_ref().expect("clap requires --gt"), "ground-truth")?;
        let DatasetReport::Binarization(report) = evaluate_dataset(&pred, &gt, EvaluationMode::Binarization)? else {
            unreachable!("binarization mode")
        };
        let run = BinarizationRun {
            method: "precomputed".into(),
            sauvola_window: None,
            sauvola_k: None,
            checkpoint_config_hash: None,
            enhance: None,
            split: None,
        };
        return finish_binarization(a, &run, report);
    }

    let bundle = a.checkpoint.as_deref().map(|p| inputs.file(p, "checkpoint")).transpose()?.map(ModelBundle::load);
    let bundle = bundle.transpose()?;
    let (binarizer, run) = match (a.baseline, &bundle) {
        (Some(Baseline::Otsu), _) => (Binarizer::Otsu, "otsu"),
        (Some(Baseline::Sauvola), _) => (Binarizer::Sauvola { window: a.sauvola_window, k: a.sauvola_k }, "sauvola"),
        (None, Some(b)) => {
            let options = enhance_options(&a.patches, b)?;
            (Binarizer::Model { enhancer: enhancer(b, &a.patches), options }, "model")
        }
        (None, None) => return Err(Failure::Config("give --pred, or --baseline / --checkpoint to binarize inputs".into())),
    };
    if let Binarizer::Sauvola { window, k } = binarizer {
        if window == 0 || !k.is_finite() {
            return Err(Failure::Config(format!("invalid Sauvola parameters window={window} k={k}")));
        }
    }
    let run = BinarizationRun {
        method: run.into(),
        sauvola_window: matches!(binarizer, Binarizer::Sauvola { .. }).then_some(a.sauvola_window),
        sauvola_k: matches!(binarizer, Binarizer::Sauvola { .. }).then_some(a.sauvola_k),
        checkpoint_config_hash: bundle.as_ref().map(|b| b.provenance.config_hash.clone()),
        enhance: match &binarizer {
            Binarizer::Model { options, .. } => Some(options.clone()),
            _ => None,
        },
        split: a.split,
    };

    let (jobs, unmatched) = if let Some(m) = &a.manifest {
        (manifest_jobs(&load_manifest(inputs, m)?, a.split)?, Vec::new())
    } else {
        let input = inputs.dir(a.input.as_ref().ok_or_else(|| Failure::Config("give --input or --manifest".into()))?, "input")?;
        let gt = inputs.dir(a.gt.as_ref().expect("clap requires --gt"), "ground-truth")?;
        directory_jobs(&input, &gt)?
    };
    let total = jobs.len();
    let score = |job: &Job| -> Scored {
        let fail = |e: inkrestore::Error| (job.id().to_string(), e.to_string());
        let (input, gt) = job.load().map_err(fail)?;
        let pred = binarizer.apply(&input).map_err(fail)?;
        Ok((job.id().to_string(), pred, gt))
    };
    // Items keep their input order either way.
    let outcomes: Vec<Scored> =
        if binarizer.parallel() { jobs.par_iter().map(score).collect() } else { jobs.iter().map(score).collect() };
    let mut triples = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o {
            Ok(t) => triples.push(t),
            Err(f) => {
                log::error!("{}: {}", f.0, f.1);
                failed.push(f);
            }
        }
    }
    let mut report = evaluate_binarization(&triples);
    report.failed.splice(0..0, failed);
    report.unmatched = unmatched;
    if report.items.is_empty() {
        return Err(Failure::Runtime(format!("all {total} items failed")));
    }
    finish_binarization(a, &run, report)
}

enum Job {
    Files { id: String, input: PathBuf, gt: PathBuf },
    Record { manifest: std::sync::Arc<CorpusManifest>, index: usize },
}

impl Job {
    fn id(&self) -> &str {
        match self {
            Job::Files { id, .. } => id,
            Job::Record { manifest, index } => &manifest.records[*index].id,
        }
    }

    fn load(&self) -> inkrestore::Result<(LineImage, BinaryImage)> {
        match self {
            Job::Files { input, gt, .. } => Ok((LineImage::load_png(input)?, BinaryImage::load_png(gt)?)),
            Job::Record { manifest, index } => {
                let rec = &manifest.records[*index];
                let degraded = manifest.load_degraded(rec)?;
                let clean = manifest.load_sample(rec)?.image;
                Ok((degraded, threshold(&clean, 0.5)))
            }
        }
    }
}

fn manifest_jobs(manifest: &CorpusManifest, split: Option<Split>) -> CliResult<Vec<Job>> {
    let manifest = std::sync::Arc::new(manifest.clone());
    let jobs: Vec<Job> = (0..manifest.records.len())
        .filter(|&i| split.is_none_or(|s| manifest.records[i].split == s))
        .filter(|&i| manifest.records[i].degraded_path.is_some())
        .map(|index| Job::Record { manifest: manifest.clone(), index })
        .collect();
    if jobs.is_empty() {
        return Err(Failure::Config("manifest has no degraded records to evaluate".into()));
    }
    Ok(jobs)
}

fn directory_jobs(input: &Path, gt: &Path) -> CliResult<(Vec<Job>, Vec<String>)> {
    let inputs = png_inputs(input)?;
    let gts: std::collections::BTreeMap<String, PathBuf> = png_inputs(gt)?.into_iter().collect();
    let mut unmatched: Vec<String> = inputs.iter().map(|(id, _)| id).filter(|id| !gts.contains_key(*id)).cloned().collect();
    unmatched.extend(gts.keys().filter(|id| !inputs.iter().any(|(i, _)| i == *id)).cloned());
    unmatched.sort();
    let jobs: Vec<Job> = inputs
        .into_iter()
        .filter_map(|(id, path)| gts.get(&id).map(|g| Job::Files { gt: g.clone(), input: path, id }))
        .collect();
    if jobs.is_empty() {
        return Err(Failure::Config(format!("no matching ids between {} and {}", input.display(), gt.display())));
    }
    if !unmatched.is_empty() {
        log::warn!("{} unmatched ids skipped", unmatched.len());
    }
    Ok((jobs, unmatched))
}

fn finish_binarization(a: &EvaluateBinarizationArgs, run: &BinarizationRun, report: BinarizationReport) -> CliResult {
    let hash = hash_of(run);
    let mut table = Table::new(&["", "PSNR", "FM", "Fps", "DRD", "Avg"]);
    if a.per_item {
        for i in &report.items {
            table.row(&i.id, &[i.psnr, i.fm, i.fps, i.drd, i.avg]);
        }
    }
    let s = &report.summary;
    table.row("mean", &[s.psnr, s.fm, s.fps, s.drd, s.avg]);
    print!("{}", table.render());
    println!(
        "{} items ({}), {} failed, {} unmatched; config {hash}",
        s.count,
        run.method,
        report.failed.len(),
        report.unmatched.len()
    );
    if let Some(path) = &a.report {
        write_report(path, "evaluate-binarization", &hash, &serde_json::json!({ "run": run, "result": report }))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RecognitionRun {
    source: String,
    checkpoint_config_hash: Option<String>,
    split: Option<Split>,
    height: Option<usize>,
    width: Option<usize>,
}

fn evaluate_htr(a: &EvaluateHtrArgs, inputs: &Inputs) -> CliResult {
    let (report, run) = if let Some(pred) = &a.pred {
        let pred = inputs.dir(pred, "prediction")?;
        let gt = inputs.dir(a.gt.as_ref().expect("clap requires --gt"), "ground-truth")?;
        let DatasetReport::Recognition(report) = evaluate_dataset(&pred, &gt, EvaluationMode::Recognition)? else {
            unreachable!("recognition mode")
        };
        let run = RecognitionRun { source: "precomputed".into(), checkpoint_config_hash: None, split: None, height: None, width: None };
        (report, run)
    } else {
        let manifest = load_manifest(inputs, a.manifest.as_ref().expect("clap requires --manifest"))?;
        let checkpoint = inputs.file(a.checkpoint.as_ref().expect("clap requires --checkpoint"), "checkpoint")?;
        let bundle = ModelBundle::load(&checkpoint)?;
        check_model_size(&bundle, a.height, a.width, true)?;
        let run = RecognitionRun {
            source: format!("{:?}", a.source).to_lowercase(),
            checkpoint_config_hash: Some(bundle.provenance.config_hash.clone()),
            split: Some(a.split),
            height: Some(a.height),
            width: Some(a.width),
        };
        (transcribe_manifest(a, &manifest, &bundle)?, run)
    };
    let hash = hash_of(&run);
    let mut table = Table::new(&["", "CER", "WER"]);
    if a.per_item {
        for i in &report.items {
            table.row(&i.id, &[i.cer, i.wer]);
        }
    }
    let s = &report.summary;
    table.row("mean", &[s.cer, s.wer]);
    table.row("micro", &[s.cer_micro, s.wer_micro]);
    print!("{}", table.render());
    println!("{} lines ({}), {} failed; config {hash}", s.count, run.source, report.failed.len());
    if let Some(path) = &a.report {
        write_report(path, "evaluate-htr", &hash, &serde_json::json!({ "run": run, "result": report }))?;
    }
    Ok(())
}

fn transcribe_manifest(a: &EvaluateHtrArgs, manifest: &CorpusManifest, bundle: &ModelBundle) -> CliResult<RecognitionReport> {
    let records: Vec<_> = manifest.split(a.split).collect();
    if records.is_empty() {
        return Err(Failure::Config(format!("manifest has no {} records", a.split)));
    }
    let mut failed = Vec::new();
    let mut loaded = Vec::new();
    for rec in &records {
        let img = match a.source {
            HtrSource::Clean => manifest.load_sample(rec).map(|s| s.image),
            HtrSource::Degraded | HtrSource::Enhanced => manifest.load_degraded(rec),
        };
        match img {
            Ok(img) => loaded.push((rec.id.clone(), rec.text.clone(), normalize_to_model_size(&img, a.height, a.width))),
            Err(e) => {
                log::error!("{}: {e}", rec.id);
                failed.push((rec.id.clone(), e.to_string()));
            }
        }
    }
    let mut triples = Vec::new();
    for chunk in loaded.chunks(a.batch_size.max(1)) {
        let mut images: Vec<LineImage> = chunk.iter().map(|(_, _, img)| img.clone()).collect();
        if a.source == HtrSource::Enhanced {
            images = bundle.enhance(&images)?;
        }
        let hyps = bundle.transcribe(&images)?;
        triples.extend(chunk.iter().zip(hyps).map(|((id, text, _), hyp)| (id.clone(), text.clone(), hyp)));
    }
    let mut report = evaluate_recognition(&triples);
    report.failed.splice(0..0, failed);
    if report.items.is_empty() {
        return Err(Failure::Runtime(format!("all {} lines failed", records.len())));
    }
    Ok(report)
}
