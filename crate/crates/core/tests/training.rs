mod common;

use inkrestore::corpus::{CorpusManifest, ManifestRecord, Split};
use inkrestore::models::{ModelBundle, Network};
use inkrestore::training::{
    fine_tune, load_pairs, train, IterationReport, NetworkHashes, Scenario, TrainOptions, Trainer, TrainingConfig,
    REPORTS_FILE,
};
use inkrestore::Error;

fn trainer(manifest: &CorpusManifest, config: &TrainingConfig, seed: u64) -> Trainer {
    let charset = manifest.charset();
    let pairs = load_pairs(manifest, Split::Train, config.image_height, config.image_width, &charset).unwrap();
    let bundle = ModelBundle::new(config.architecture.specs(&charset), charset, seed).unwrap();
    Trainer::new(bundle, config.clone(), pairs).unwrap()
}

fn losses(reports: &[IterationReport]) -> Vec<[Option<f64>; 6]> {
    reports.iter().map(|r| r.losses()).collect()
}

#[test]
fn resumed_training_continues_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_corpus(dir.path(), 3);
    let mut config = common::toy_config();
    config.batch_size = 3;
    config.max_iterations = 6;

    let mut straight = trainer(&manifest, &config, 0);
    let expected: Vec<_> = (0..6).map(|_| straight.step().unwrap()).collect();

    let mut first = trainer(&manifest, &config, 0);
    let mut got: Vec<_> = (0..4).map(|_| first.step().unwrap()).collect();
    let state = dir.path().join("state");
    first.save_state(&state).unwrap();
    drop(first);
    let pairs = load_pairs(&manifest, Split::Train, 32, 128, &manifest.charset()).unwrap();
    let mut resumed = Trainer::load_state(&state, config.clone(), pairs).unwrap();
    assert_eq!(resumed.iteration(), 4);
    got.extend((0..2).map(|_| resumed.step().unwrap()));

    assert_eq!(losses(&got), losses(&expected));
    assert_eq!(resumed.bundle().snapshot().unwrap(), straight.bundle().snapshot().unwrap());
}

#[test]
fn train_resumes_from_its_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_corpus(dir.path(), 4);
    let mut config = common::toy_config();
    config.batch_size = 4;
    config.checkpoint_every = 2;
    config.max_iterations = 4;

    let full_dir = dir.path().join("full");
    let full = train(&manifest, &config, TrainOptions { out_dir: Some(full_dir.clone()), ..Default::default() }).unwrap();

    let part_dir = dir.path().join("part");
    let mut short = config.clone();
    short.max_iterations = 2;
    train(&manifest, &short, TrainOptions { out_dir: Some(part_dir.clone()), ..Default::default() }).unwrap();
    let rest = train(&manifest, &config, TrainOptions { out_dir: Some(part_dir.clone()), resume: true, ..Default::default() })
        .unwrap();

    assert_eq!(rest.reports.len(), 2);
    assert_eq!(losses(&rest.reports), losses(&full.reports[2..]));
    let log = |d: &std::path::Path| std::fs::read_to_string(d.join(REPORTS_FILE)).unwrap();
    assert_eq!(log(&part_dir), log(&full_dir));
    assert!(full_dir.join("checkpoint-00000002.safetensors").is_file());
    assert!(full_dir.join("best.safetensors").is_file());
}

#[test]
fn a_changed_configuration_cannot_resume() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_corpus(dir.path(), 4);
    let mut config = common::toy_config();
    config.batch_size = 2;
    let mut t = trainer(&manifest, &config, 0);
    t.step().unwrap();
    t.save_state(dir.path().join("s")).unwrap();
    config.weights.lambda = 0.5;
    let pairs = load_pairs(&manifest, Split::Train, 32, 128, &manifest.charset()).unwrap();
    assert!(matches!(Trainer::load_state(dir.path().join("s"), config, pairs), Err(Error::Config(_))));
}

/// Which networks differ between two hash sets.
fn changed(a: &NetworkHashes, b: &NetworkHashes) -> [bool; 3] {
    [a.generator != b.generator, a.discriminator != b.discriminator, a.recognizer != b.recognizer]
}

#[test]
fn each_update_touches_only_its_own_network() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_corpus(dir.path(), 5);
    for scenario in [Scenario::S1, Scenario::S2] {
        let mut config = common::toy_config();
        config.batch_size = 4;
        config.scenario = scenario;
        config.trace_parameters = true;
        let mut t = trainer(&manifest, &config, 0);
        let mut before = NetworkHashes::of(t.bundle()).unwrap();
        for _ in 0..2 {
            let r = t.step().unwrap();
            let trace = r.parameter_trace.expect("tracing enabled");
            // The training-mode generator pass only moves its own running statistics.
            assert_eq!(changed(&before, &trace.after_generate), [true, false, false]);
            assert_eq!(changed(&trace.after_generate, &trace.after_discriminator), [false, true, false]);
            assert_eq!(changed(&trace.after_discriminator, &trace.after_recognizer), [false, false, true]);
            assert_eq!(changed(&trace.after_recognizer, &trace.after_generator), [true, false, false]);
            before = trace.after_generator;
        }
    }
}

#[test]
fn zero_lambda_keeps_the_recognizer_out_of_the_generator_update() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_corpus(dir.path(), 6);
    let generator_after_one_step = |lambda: f64, recognizer_seed: u64| {
        let mut config = common::toy_config();
        config.batch_size = 4;
        config.weights.lambda = lambda;
        let mut t = trainer(&manifest, &config, 0);
        // Swap in a differently initialized recognizer.
        let other = ModelBundle::new(t.bundle().specs.clone(), t.bundle().charset.clone(), recognizer_seed).unwrap();
        for (dst, src) in t.bundle().parameters(Network::Recognizer).iter().zip(other.parameters(Network::Recognizer)) {
            dst.var.set(src.var.as_tensor()).unwrap();
        }
        let report = t.step().unwrap();
        let g: Vec<Vec<f32>> = t
            .bundle()
            .parameters(Network::Generator)
            .iter()
            .map(|p| p.var.as_tensor().flatten_all().unwrap().to_vec1().unwrap())
            .collect();
        (g, report)
    };
    let (a, ra) = generator_after_one_step(0.0, 1);
    let (b, rb) = generator_after_one_step(0.0, 2);
    assert_eq!(a, b, "with λ = 0 the recognizer must not influence the generator");
    // The CTC term is still computed and reported, but not added to the total.
    assert!(ra.loss_ctc.is_some() && rb.loss_ctc.is_some());
    assert_ne!(ra.loss_ctc, rb.loss_ctc);
    assert!((ra.loss_g_total - (ra.loss_g_adv + 10.0 * ra.loss_bce)).abs() < 1e-9);

    let (c, _) = generator_after_one_step(1.0, 1);
    let (d, _) = generator_after_one_step(1.0, 2);
    assert_ne!(c, d, "with λ = 1 the recognizer shapes the generator update");
}

#[test]
fn s2_feeds_the_recognizer_the_generator_output() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_corpus(dir.path(), 7);
    let mut config = common::toy_config();
    config.batch_size = 4;
    config.scenario = Scenario::S2;
    let mut t = trainer(&manifest, &config, 0);
    for _ in 0..3 {
        let r = t.step().unwrap();
        assert_eq!(r.recognizer_input_hash, r.generator_output_hash);
    }
}

#[test]
fn fine_tune_needs_paired_records() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_corpus(dir.path(), 8);
    let mut unpaired = manifest.clone();
    unpaired.records = manifest
        .records
        .iter()
        .map(|r| ManifestRecord { degraded_path: None, ..r.clone() })
        .collect();
    let config = common::toy_config();
    let charset = manifest.charset();
    let bundle = || ModelBundle::new(config.architecture.specs(&charset), charset.clone(), 0).unwrap();
    assert!(matches!(fine_tune(bundle(), &[unpaired], &config), Err(Error::Config(_))));
    assert!(matches!(fine_tune(bundle(), &[], &config), Err(Error::Config(_))));

    // Patches are counted per source manifest.
    let (_, report) = fine_tune(bundle(), &[manifest.clone(), manifest], &config).unwrap();
    assert_eq!(report.patches_per_source.len(), 2);
    assert_eq!(report.patches_per_source[0], report.patches_per_source[1]);
    assert_eq!(report.patches, 2 * report.patches_per_source[0]);
}

#[test]
fn saved_bundles_transcribe_identically() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_corpus(dir.path(), 9);
    let mut config = common::toy_config();
    config.batch_size = 4;
    let mut t = trainer(&manifest, &config, 0);
    for _ in 0..3 {
        t.step().unwrap();
    }
    let path = dir.path().join("m.safetensors");
    t.bundle().save(&path).unwrap();
    let loaded = ModelBundle::load(&path).unwrap();
    let images: Vec<_> = t.data().iter().map(|p| p.degraded.clone()).collect();
    assert_eq!(loaded.enhance(&images).unwrap(), t.bundle().enhance(&images).unwrap());
    assert_eq!(loaded.transcribe(&images).unwrap(), t.bundle().transcribe(&images).unwrap());
    assert_eq!(loaded.snapshot().unwrap(), t.bundle().snapshot().unwrap());
}
