use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Scenario, SelectionMetric, TrainingConfig};
use super::optim::Optimizer;
use crate::corpus::{CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::image::{normalize_to_model_size, LineImage};
use crate::inference::tile_page_with;
use crate::losses::{self, graph, min_frames};
use crate::metrics::{cer, psnr};
use crate::models::{
    encode_transcription, greedy_ctc_decode, images_to_tensor, Charset, Ctx,
    ModelBundle, Network, ParamKind,
};
use crate::util::{derive_seed, hash_f32};

/// One aligned training example at model input size.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub id: String,
    pub degraded: LineImage,
    pub clean: LineImage,
    pub text: String,
    pub labels: Vec<usize>,
}

/// Loads every record of `split` as a degraded / clean pair normalized to
/// `height × width`.
pub fn load_pairs(
    manifest: &CorpusManifest,
    split: Split,
    height: usize,
    width: usize,
    charset: &Charset,
) -> Result<Vec<TrainPair>> {
    manifest
        .split(split)
        .map(|rec| {
            let clean = manifest.load_sample(rec)?.image;
            let degraded = manifest.load_degraded(rec)?;
            Ok(TrainPair {
                id: rec.id.clone(),
                degraded: normalize_to_model_size(&degraded, height, width),
                clean: normalize_to_model_size(&clean, height, width),
                labels: encode_transcription(&rec.text, charset)?,
                text: rec.text.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecognizerSource {
    GroundTruth,
    Generated,
}

/// Hash of every parameter (buffers included) of each network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkHashes {
    pub generator: String,
    pub discriminator: String,
    pub recognizer: String,
}

impl NetworkHashes {
    pub fn of(bundle: &ModelBundle) -> Result<Self> {
        let h = |n: Network| -> Result<String> {
            let mut all = Vec::new();
            for p in bundle.parameters(n) {
                all.extend(p.var.as_tensor().flatten_all()?.to_vec1::<f32>()?);
            }
            Ok(hash_f32(&all))
        };
        Ok(NetworkHashes {
            generator: h(Network::Generator)?,
            discriminator: h(Network::Discriminator)?,
            recognizer: h(Network::Recognizer)?,
        })
    }
}

/// Parameter hashes after each stage of one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterTrace {
    /// After the training-mode generator forward pass.
    pub after_generate: NetworkHashes,
    pub after_discriminator: NetworkHashes,
    pub after_recognizer: NetworkHashes,
    pub after_generator: NetworkHashes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u64,
    pub loss_d: f64,
    pub loss_g_total: f64,
    pub loss_g_adv: f64,
    /// Mean CTC loss of the recognizer on the generator output; `None` when
    /// no sample in the batch fits in the recognizer's frames.
    pub loss_ctc: Option<f64>,
    pub loss_bce: f64,
    /// Recognizer training loss; `None` when its update was skipped.
    pub loss_r: Option<f64>,
    pub recognizer_source: RecognizerSource,
    /// Samples left out of the CTC terms because their labels need more
    /// frames than the recognizer emits.
    pub skipped_ctc: usize,
    pub generator_output_hash: String,
    pub recognizer_input_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_trace: Option<ParameterTrace>,
}

impl IterationReport {
    /// The loss values only, for comparing traces.
    pub fn losses(&self) -> [Option<f64>; 6] {
        [
            Some(self.loss_d),
            Some(self.loss_g_total),
            Some(self.loss_g_adv),
            self.loss_ctc,
            Some(self.loss_bce),
            self.loss_r,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub count: usize,
    /// Mean per-line CER of the recognizer on enhanced images.
    pub cer: f64,
    /// Mean PSNR of enhanced images against the clean ones.
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub iteration: u64,
    pub validation: ValidationResult,
    pub path: Option<PathBuf>,
}

fn better(metric: SelectionMetric, a: &ValidationResult, b: &ValidationResult) -> bool {
    match metric {
        SelectionMetric::Cer => a.cer < b.cer,
        SelectionMetric::Psnr => a.psnr > b.psnr,
    }
}

/// Evaluation-mode validation of `R ∘ G` and `G` on `pairs`.
pub fn validate(bundle: &ModelBundle, pairs: &[TrainPair], batch_size: usize) -> Result<ValidationResult> {
    if pairs.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let mut cer_sum = 0.0;
    let mut psnr_sum = 0.0;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let degraded: Vec<LineImage> = chunk.iter().map(|p| p.degraded.clone()).collect();
        let enhanced = bundle.enhance(&degraded)?;
        let frames = bundle.recognize_frames(&enhanced)?;
        for ((pair, out), f) in chunk.iter().zip(&enhanced).zip(&frames) {
            cer_sum += cer(&pair.text, &greedy_ctc_decode(f, &bundle.charset))?;
            psnr_sum += psnr(out, &pair.clean)?;
        }
    }
    let n = pairs.len() as f64;
    Ok(ValidationResult { count: pairs.len(), cer: cer_sum / n, psnr: psnr_sum / n })
}

fn optimizer_params(bundle: &ModelBundle, net: Network, include_norm: bool) -> Vec<crate::models::NamedParam> {
    bundle
        .parameters(net)
        .into_iter()
        .filter(|p| match p.kind {
            ParamKind::Weight => true,
            ParamKind::Norm => include_norm,
            ParamKind::Buffer => false,
        })
        .collect()
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn tensor_hash(t: &Tensor) -> Result<String> {
    Ok(hash_f32(&t.flatten_all()?.to_vec1::<f32>()?))
}

/// Batch split into the samples whose labels fit in `frames`.
struct CtcSelection {
    index: Option<Tensor>,
    labels: Vec<Vec<usize>>,
    skipped: usize,
}

impl CtcSelection {
    fn new(labels: &[Vec<usize>], frames: usize, device: &Device) -> Result<Self> {
        let keep: Vec<u32> = (0..labels.len() as u32).filter(|&i| min_frames(&labels[i as usize]) <= frames).collect();
        let skipped = labels.len() - keep.len();
        let sel_labels = keep.iter().map(|&i| labels[i as usize].clone()).collect();
        let index = if skipped == 0 { None } else { Some(Tensor::new(keep.as_slice(), device)?) };
        Ok(CtcSelection { index, labels: sel_labels, skipped })
    }

    fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn apply(&self, t: &Tensor) -> Result<Tensor> {
        Ok(match &self.index {
            Some(i) => t.index_select(i, 0)?,
            None => t.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    iteration: u64,
    pretrain_done: u64,
    resume_hash: String,
    data_rng_word_pos: String,
    dropout_rng_word_pos: String,
    order: Vec<usize>,
    cursor: usize,
    steps_g: u64,
    steps_d: u64,
    steps_r: u64,
}

const STATE_FILE: &str = "trainer_state.json";
const STATE_MODEL: &str = "model.safetensors";
const STATE_OPTIMIZER: &str = "optimizer.safetensors";

/// Owns the networks, their optimizers and all training randomness.
pub struct Trainer {
    bundle: ModelBundle,
    config: TrainingConfig,
    data: Vec<TrainPair>,
    opt_g: Optimizer,
    opt_d: Optimizer,
    opt_r: Optimizer,
    iteration: u64,
    pretrain_done: u64,
    data_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(bundle: ModelBundle, config: TrainingConfig, data: Vec<TrainPair>) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let (h, w) = (config.image_height, config.image_width);
        if let Some(p) = data.iter().find(|p| p.degraded.dims() != (h, w) || p.clean.dims() != (h, w)) {
            return Err(Error::Contract(format!("sample {} is not at the configured size {h}×{w}", p.id)));
        }
        let opt_g = Optimizer::adam(config.optimizer_g, optimizer_params(&bundle, Network::Generator, true));
        let opt_d = Optimizer::adam(config.optimizer_d, optimizer_params(&bundle, Network::Discriminator, true));
        let opt_r = Optimizer::rmsprop(config.optimizer_r, optimizer_params(&bundle, Network::Recognizer, true));
        let data_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "train/data"));
        let dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "train/dropout"));
        Ok(Trainer {
            bundle,
            config,
            data,
            opt_g,
            opt_d,
            opt_r,
            iteration: 0,
            pretrain_done: 0,
            data_rng,
            dropout_rng,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> ModelBundle {
        self.bundle
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn data(&self) -> &[TrainPair] {
        &self.data
    }

    /// Indices of the next batch; the sample order is reshuffled at every
    /// epoch boundary.
    fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        while batch.len() < self.config.batch_size {
            if self.cursor >= self.order.len() {
                self.order = (0..self.data.len()).collect();
                self.order.shuffle(&mut self.data_rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    fn batch_tensors(&self, idx: &[usize]) -> Result<(Tensor, Tensor, Vec<Vec<usize>>)> {
        let dev = self.bundle.device();
        let deg: Vec<LineImage> = idx.iter().map(|&i| self.data[i].degraded.clone()).collect();
        let gt: Vec<LineImage> = idx.iter().map(|&i| self.data[i].clean.clone()).collect();
        let labels = idx.iter().map(|&i| self.data[i].labels.clone()).collect();
        Ok((images_to_tensor(&deg, dev)?, images_to_tensor(&gt, dev)?, labels))
    }

    /// Draws the next batch and performs one joint iteration.
    pub fn step(&mut self) -> Result<IterationReport> {
        let idx = self.next_batch();
        let (x_d, x_gt, labels) = self.batch_tensors(&idx)?;
        self.step_tensors(&x_d, &x_gt, &labels)
    }

    /// One joint iteration on an explicit batch.
    pub fn train_step(&mut self, batch: &[TrainPair]) -> Result<IterationReport> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let dev = self.bundle.device().clone();
        let deg: Vec<LineImage> = batch.iter().map(|p| p.degraded.clone()).collect();
        let gt: Vec<LineImage> = batch.iter().map(|p| p.clean.clone()).collect();
        let labels: Vec<Vec<usize>> = batch.iter().map(|p| p.labels.clone()).collect();
        self.step_tensors(&images_to_tensor(&deg, &dev)?, &images_to_tensor(&gt, &dev)?, &labels)
    }

    fn trace(&self) -> Result<Option<NetworkHashes>> {
        if self.config.trace_parameters {
            Ok(Some(NetworkHashes::of(&self.bundle)?))
        } else {
            Ok(None)
        }
    }

    fn step_tensors(&mut self, x_d: &Tensor, x_gt: &Tensor, labels: &[Vec<usize>]) -> Result<IterationReport> {
        let cfg = self.config.clone();
        let blank = self.bundle.charset.blank_index();
        let frames = cfg.frame_count();
        let sel = CtcSelection::new(labels, frames, self.bundle.device())?;

        // Generator forward; its graph is reused for the generator update.
        let fake = self.bundle.generator.forward(x_d, &mut Ctx::train(&mut self.dropout_rng))?;
        let fake_const = fake.detach();
        let t_generate = self.trace()?;

        // (1) discriminator: real pairs vs. generated pairs.
        let d = &self.bundle.discriminator;
        let d_real = d.forward(x_d, x_gt, &mut Ctx::train(&mut self.dropout_rng))?;
        let d_fake = d.forward(x_d, &fake_const, &mut Ctx::train(&mut self.dropout_rng))?;
        let loss_d = graph::discriminator_loss(&d_real, &d_fake)?;
        self.opt_d.step(&loss_d.backward()?)?;
        let t_disc = self.trace()?;

        // (2) recognizer on ground truth (S1) or on the constant generator output (S2).
        let (source, r_input) = match cfg.scenario {
            Scenario::S1 => (RecognizerSource::GroundTruth, x_gt.clone()),
            Scenario::S2 => (RecognizerSource::Generated, fake_const.clone()),
        };
        let recognizer_input_hash = tensor_hash(&r_input)?;
        let loss_r = if sel.is_empty() {
            None
        } else {
            let lp = self
                .bundle
                .recognizer
                .forward_log_probs(&sel.apply(&r_input)?, &mut Ctx::train(&mut self.dropout_rng))?;
            let loss = graph::ctc_loss(&lp, &sel.labels, blank)?.mean_all()?;
            self.opt_r.step(&loss.backward()?)?;
            Some(scalar(&loss)?)
        };
        let t_rec = self.trace()?;

        // (3) generator with the discriminator and recognizer held fixed.
        let d_score = self.bundle.discriminator.forward(x_d, &fake, &mut Ctx::probe())?;
        let adv = graph::generator_adversarial_loss(&d_score, cfg.adversarial_form)?;
        let bce = graph::pixel_bce(&fake, x_gt)?;
        let ctc = if sel.is_empty() {
            None
        } else {
            // With a zero weight the term is only reported, so keep it off the graph.
            let src = if cfg.weights.lambda > 0.0 { fake.clone() } else { fake_const.clone() };
            let lp = self.bundle.recognizer.forward_log_probs(&sel.apply(&src)?, &mut Ctx::probe())?;
            Some(graph::ctc_loss(&lp, &sel.labels, blank)?.mean_all()?)
        };
        let mut total = (&adv + (&bce * cfg.weights.beta)?)?;
        if let (Some(c), true) = (&ctc, cfg.weights.lambda > 0.0) {
            total = (total + (c * cfg.weights.lambda)?)?;
        }
        self.opt_g.step(&total.backward()?)?;
        let t_gen = self.trace()?;

        let (adv_v, bce_v) = (scalar(&adv)?, scalar(&bce)?);
        let ctc_v = ctc.as_ref().map(scalar).transpose()?;
        let total_v = losses::total_generator_loss(adv_v, ctc_v.unwrap_or(0.0), bce_v, cfg.weights)?;
        self.iteration += 1;
        let parameter_trace = match (t_generate, t_disc, t_rec, t_gen) {
            (Some(a), Some(b), Some(c), Some(d)) => Some(ParameterTrace {
                after_generate: a,
                after_discriminator: b,
                after_recognizer: c,
                after_generator: d,
            }),
            _ => None,
        };
        Ok(IterationReport {
            iteration: self.iteration,
            loss_d: scalar(&loss_d)?,
            loss_g_total: total_v,
            loss_g_adv: adv_v,
            loss_ctc: ctc_v,
            loss_bce: bce_v,
            loss_r,
            recognizer_source: source,
            skipped_ctc: sel.skipped,
            generator_output_hash: tensor_hash(&fake_const)?,
            recognizer_input_hash,
            parameter_trace,
        })
    }

    /// One recognizer-only update on ground-truth images; returns the CTC
    /// loss, or `None` when no sample of the batch is feasible.
    pub fn pretrain_recognizer_step(&mut self) -> Result<Option<f64>> {
        let idx = self.next_batch();
        let (_, x_gt, labels) = self.batch_tensors(&idx)?;
        let sel = CtcSelection::new(&labels, self.config.frame_count(), self.bundle.device())?;
        self.pretrain_done += 1;
        if sel.is_empty() {
            return Ok(None);
        }
        let lp = self
            .bundle
            .recognizer
            .forward_log_probs(&sel.apply(&x_gt)?, &mut Ctx::train(&mut self.dropout_rng))?;
        let loss = graph::ctc_loss(&lp, &sel.labels, self.bundle.charset.blank_index())?.mean_all()?;
        self.opt_r.step(&loss.backward()?)?;
        Ok(Some(scalar(&loss)?))
    }

    pub fn pretrain_done(&self) -> u64 {
        self.pretrain_done
    }

    fn resume_hash(config: &TrainingConfig) -> String {
        let mut c = config.clone();
        c.max_iterations = 0;
        c.checkpoint_every = 0;
        c.validation_limit = None;
        c.trace_parameters = false;
        crate::util::config_hash(&c)
    }

    /// Writes everything needed to continue training bit-for-bit.
    pub fn save_state(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.bundle.save(dir.join(STATE_MODEL))?;
        let mut tensors: HashMap<String, Tensor> = HashMap::new();
        tensors.extend(self.opt_g.state_tensors("g"));
        tensors.extend(self.opt_d.state_tensors("d"));
        tensors.extend(self.opt_r.state_tensors("r"));
        let opt_path = dir.join(STATE_OPTIMIZER);
        candle_core::safetensors::save(&tensors, &opt_path)?;
        let state = TrainerState {
            iteration: self.iteration,
            pretrain_done: self.pretrain_done,
            resume_hash: Self::resume_hash(&self.config),
            data_rng_word_pos: self.data_rng.get_word_pos().to_string(),
            dropout_rng_word_pos: self.dropout_rng.get_word_pos().to_string(),
            order: self.order.clone(),
            cursor: self.cursor,
            steps_g: self.opt_g.steps(),
            steps_d: self.opt_d.steps(),
            steps_r: self.opt_r.steps(),
        };
        let path = dir.join(STATE_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&state)?).map_err(|e| Error::io(&path, e))
    }

    pub fn has_state(dir: impl AsRef<Path>) -> bool {
        dir.as_ref().join(STATE_FILE).is_file()
    }

    /// Restores a trainer saved with [`Trainer::save_state`]. The
    /// configuration may differ only in run-length settings.
    pub fn load_state(dir: impl AsRef<Path>, config: TrainingConfig, data: Vec<TrainPair>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(STATE_FILE);
        let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let state: TrainerState = serde_json::from_slice(&raw)?;
        if state.resume_hash != Self::resume_hash(&config) {
            return Err(Error::Config(format!(
                "{} was written under a different training configuration",
                dir.display()
            )));
        }
        let bundle = ModelBundle::load(dir.join(STATE_MODEL))?;
        let mut t = Trainer::new(bundle, config, data)?;
        let opt_path = dir.join(STATE_OPTIMIZER);
        let tensors = candle_core::safetensors::load(&opt_path, &Device::Cpu)?;
        t.opt_g.restore("g", state.steps_g, &tensors)?;
        t.opt_d.restore("d", state.steps_d, &tensors)?;
        t.opt_r.restore("r", state.steps_r, &tensors)?;
        let pos = |s: &str| -> Result<u128> {
            s.parse().map_err(|_| Error::Checkpoint(format!("bad generator position {s:?}")))
        };
        t.data_rng.set_word_pos(pos(&state.data_rng_word_pos)?);
        t.dropout_rng.set_word_pos(pos(&state.dropout_rng_word_pos)?);
        if state.order.iter().any(|&i| i >= t.data.len()) {
            return Err(Error::Checkpoint("saved sample order does not match the data".into()));
        }
        t.order = state.order;
        t.cursor = state.cursor;
        t.iteration = state.iteration;
        t.pretrain_done = state.pretrain_done;
        Ok(t)
    }

    fn snapshot_tensors(&self) -> Result<Vec<Tensor>> {
        self.bundle.all_parameters().iter().map(|p| Ok(p.var.as_tensor().copy()?)).collect()
    }

    fn restore_tensors(&self, saved: &[Tensor]) -> Result<()> {
        for (p, t) in self.bundle.all_parameters().iter().zip(saved) {
            p.var.set(t)?;
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Directory for checkpoints, the report log and resumable state.
    pub out_dir: Option<PathBuf>,
    /// Continue from the state in `out_dir` if present.
    pub resume: bool,
    pub on_report: Option<&'a mut dyn FnMut(&IterationReport)>,
}

pub struct TrainOutcome {
    /// The best checkpoint by the configured selection metric.
    pub bundle: ModelBundle,
    pub reports: Vec<IterationReport>,
    pub pretrain_losses: Vec<Option<f64>>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub best: CheckpointRecord,
}

/// Drops log entries written after the state being resumed from, so that a
/// run interrupted between checkpoints does not repeat iterations.
fn trim_report_log(path: &Path, keep_through: u64) -> Result<()> {
    let Ok(raw) = fs::read_to_string(path) else { return Ok(()) };
    let mut kept = String::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<IterationReport>(line) {
            Ok(r) if r.iteration <= keep_through => {
                kept.push_str(line);
                kept.push('\n');
            }
            _ => {}
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

pub const REPORTS_FILE: &str = "reports.jsonl";
pub const BEST_MODEL_FILE: &str = "best.safetensors";

/// Full training run on the train split, validating on the valid split.
pub fn train(manifest: &CorpusManifest, config: &TrainingConfig, mut options: TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    if manifest.count(Split::Train) == 0 {
        return Err(Error::Config("manifest has no train samples".into()));
    }
    if manifest.count(Split::Valid) == 0 {
        return Err(Error::Config("manifest has no valid samples".into()));
    }
    let charset = manifest.charset();
    let (h, w) = (config.image_height, config.image_width);
    let train_pairs = load_pairs(manifest, Split::Train, h, w, &charset)?;
    let mut valid_pairs = load_pairs(manifest, Split::Valid, h, w, &charset)?;
    if let Some(limit) = config.validation_limit {
        valid_pairs.truncate(limit.max(1));
    }
    let state_dir = options.out_dir.as_ref().map(|d| d.join("state"));
    let mut trainer = match &state_dir {
        Some(dir) if options.resume && Trainer::has_state(dir) => {
            log::info!("resuming from {}", dir.display());
            Trainer::load_state(dir, config.clone(), train_pairs)?
        }
        _ => {
            let bundle = ModelBundle::new(config.architecture.specs(&charset), charset, config.seed)?;
            Trainer::new(bundle, config.clone(), train_pairs)?
        }
    };
    let mut report_log = match &options.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(REPORTS_FILE);
            if options.resume {
                trim_report_log(&path, trainer.iteration())?;
            }
            let file = fs::OpenOptions::new()
                .create(true)
                .append(options.resume)
                .write(true)
                .truncate(!options.resume)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, std::io::BufWriter::new(file)))
        }
        None => None,
    };

    let mut pretrain_losses = Vec::new();
    let pretrain = config.recognizer_pretrain_iterations.unwrap_or(0);
    while trainer.pretrain_done() < pretrain {
        pretrain_losses.push(trainer.pretrain_recognizer_step()?);
    }

    let mut reports = Vec::new();
    let mut checkpoints: Vec<CheckpointRecord> = Vec::new();
    let mut best: Option<(CheckpointRecord, Vec<Tensor>)> = None;
    while trainer.iteration() < config.max_iterations {
        let report = trainer.step()?;
        log::debug!(
            "iter {} loss_d {:.4} loss_g {:.4} bce {:.4}",
            report.iteration,
            report.loss_d,
            report.loss_g_total,
            report.loss_bce
        );
        if let Some((path, log)) = report_log.as_mut() {
            serde_json::to_writer(&mut *log, &report)?;
            log.write_all(b"\n").map_err(|e| Error::io(&*path, e))?;
        }
        if let Some(cb) = options.on_report.as_mut() {
            cb(&report);
        }
        reports.push(report);
        let it = trainer.iteration();
        let due = (config.checkpoint_every > 0 && it % config.checkpoint_every == 0) || it == config.max_iterations;
        if !due {
            continue;
        }
        let validation = validate(trainer.bundle(), &valid_pairs, config.batch_size)?;
        log::info!("iter {it}: valid CER {:.4} PSNR {:.2}", validation.cer, validation.psnr);
        let path = match &options.out_dir {
            Some(dir) => {
                let p = dir.join(format!("checkpoint-{it:08}.safetensors"));
                trainer.bundle.provenance.config_hash = config.hash();
                trainer.bundle.provenance.iterations = it;
                trainer.bundle().save(&p)?;
                if let Some(sd) = &state_dir {
                    trainer.save_state(sd)?;
                }
                if let Some((path, log)) = report_log.as_mut() {
                    log.flush().map_err(|e| Error::io(&*path, e))?;
                }
                Some(p)
            }
            None => None,
        };
        let record = CheckpointRecord { iteration: it, validation, path };
        if best.as_ref().is_none_or(|(b, _)| better(config.selection, &record.validation, &b.validation)) {
            best = Some((record.clone(), trainer.snapshot_tensors()?));
        }
        checkpoints.push(record);
    }
    if let Some((path, log)) = report_log.as_mut() {
        log.flush().map_err(|e| Error::io(&*path, e))?;
    }
    let best = match best {
        Some((record, tensors)) => {
            trainer.restore_tensors(&tensors)?;
            record
        }
        None => {
            // Nothing left to run (e.g. resuming a finished run): validate as is.
            let validation = validate(trainer.bundle(), &valid_pairs, config.batch_size)?;
            CheckpointRecord { iteration: trainer.iteration(), validation, path: None }
        }
    };
    let mut bundle = trainer.into_bundle();
    bundle.provenance.config_hash = config.hash();
    bundle.provenance.iterations = best.iteration;
    if let Some(dir) = &options.out_dir {
        bundle.save(dir.join(BEST_MODEL_FILE))?;
    }
    Ok(TrainOutcome { bundle, reports, pretrain_losses, checkpoints, best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    /// Always 1.
    pub epochs: u32,
    pub iterations: u64,
    pub patches: usize,
    /// Patch count contributed by each manifest, in input order.
    pub patches_per_source: Vec<usize>,
    pub loss_d: Vec<f64>,
    pub loss_g: Vec<f64>,
}

/// Paired patches of all records of `manifest`, tiled at `h × w`.
fn fine_tune_patches(manifest: &CorpusManifest, h: usize, w: usize) -> Result<Vec<(LineImage, LineImage)>> {
    if manifest.records.is_empty() {
        return Err(Error::Config(format!("manifest at {} is empty", manifest.root.display())));
    }
    let mut out = Vec::new();
    for rec in &manifest.records {
        if rec.degraded_path.is_none() {
            return Err(Error::Config(format!(
                "fine-tuning needs degraded/ground-truth pairs; `{}` has no degraded image",
                rec.id
            )));
        }
        let degraded = manifest.load_degraded(rec)?;
        let clean = manifest.load_sample(rec)?.image;
        if degraded.dims() != clean.dims() {
            return Err(Error::Contract(format!(
                "`{}`: degraded {:?} and ground truth {:?} differ in size",
                rec.id,
                degraded.dims(),
                clean.dims()
            )));
        }
        let (_, dp) = tile_page_with(&degraded, h, w)?;
        let (_, cp) = tile_page_with(&clean, h, w)?;
        out.extend(dp.into_iter().zip(cp));
    }
    Ok(out)
}

/// One epoch of generator + discriminator training over the shuffled
/// patches of every manifest. The recognizer is left out, the generator's
/// normalization layers are frozen (parameters and running statistics),
/// and `max_iterations` / `scenario` / `lambda` are ignored.
pub fn fine_tune(
    bundle: ModelBundle,
    manifests: &[CorpusManifest],
    config: &TrainingConfig,
) -> Result<(ModelBundle, FineTuneReport)> {
    config.validate()?;
    if manifests.is_empty() {
        return Err(Error::Config("fine-tuning needs at least one manifest".into()));
    }
    let (h, w) = (config.image_height, config.image_width);
    let mut patches = Vec::new();
    let mut per_source = Vec::new();
    for m in manifests {
        let p = fine_tune_patches(m, h, w)?;
        per_source.push(p.len());
        patches.extend(p);
    }
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "finetune/data"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "finetune/dropout"));
    patches.shuffle(&mut data_rng);

    let mut opt_g = Optimizer::adam(config.optimizer_g, optimizer_params(&bundle, Network::Generator, false));
    let mut opt_d = Optimizer::adam(config.optimizer_d, optimizer_params(&bundle, Network::Discriminator, true));
    let dev = bundle.device().clone();
    let mut report = FineTuneReport {
        epochs: 1,
        iterations: 0,
        patches: patches.len(),
        patches_per_source: per_source,
        loss_d: Vec::new(),
        loss_g: Vec::new(),
    };
    for chunk in patches.chunks(config.batch_size) {
        let deg: Vec<LineImage> = chunk.iter().map(|(d, _)| d.clone()).collect();
        let gt: Vec<LineImage> = chunk.iter().map(|(_, c)| c.clone()).collect();
        let x_d = images_to_tensor(&deg, &dev)?;
        let x_gt = images_to_tensor(&gt, &dev)?;
        let fake = bundle.generator.forward(&x_d, &mut Ctx::frozen_norm(&mut dropout_rng))?;
        let fake_const = fake.detach();

        let d = &bundle.discriminator;
        let d_real = d.forward(&x_d, &x_gt, &mut Ctx::train(&mut dropout_rng))?;
        let d_fake = d.forward(&x_d, &fake_const, &mut Ctx::train(&mut dropout_rng))?;
        let loss_d = graph::discriminator_loss(&d_real, &d_fake)?;
        opt_d.step(&loss_d.backward()?)?;

        let score = bundle.discriminator.forward(&x_d, &fake, &mut Ctx::probe())?;
        let adv = graph::generator_adversarial_loss(&score, config.adversarial_form)?;
        let bce = graph::pixel_bce(&fake, &x_gt)?;
        let total = (adv + (bce * config.weights.beta)?)?;
        opt_g.step(&total.backward()?)?;

        report.iterations += 1;
        report.loss_d.push(scalar(&loss_d)?);
        report.loss_g.push(scalar(&total)?);
    }
    let mut bundle = bundle;
    bundle.provenance.fine_tuned = true;
    Ok((bundle, report))
}
