use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use inkrestore::corpus::{degrade, sample_recipe, DegradationConfig};
use inkrestore::inference::{enhance_gray, otsu_binarize, sauvola_binarize, GeneratorEnhancer};
use inkrestore::losses::ctc_nll;
use inkrestore::metrics::{drd, pseudo_f_measure};
use inkrestore::models::{Charset, DiscriminatorSpec, GeneratorSpec, ModelSpecs, RecognizerSpec};
use inkrestore::ModelBundle;
use inkrestore_bench::*;

fn ctc(c: &mut Criterion) {
    let mut g = c.benchmark_group("ctc_nll");
    for (frames, label_len) in [(32, 8), (128, 30)] {
        let lp = log_probs(frames, 80, 1);
        let y = labels(label_len, 80, 2);
        g.bench_with_input(BenchmarkId::from_parameter(format!("T{frames}_L{label_len}")), &(), |b, _| {
            b.iter(|| ctc_nll(black_box(&lp), 80, black_box(&y), 0).unwrap())
        });
    }
    g.finish();
}

fn binarization_metrics(c: &mut Criterion) {
    let (pred, gt) = binary_pair(512, 512, 0.02, 3);
    c.bench_function("drd_512", |b| b.iter(|| drd(black_box(&pred), black_box(&gt)).unwrap()));
    c.bench_function("pseudo_f_measure_512", |b| b.iter(|| pseudo_f_measure(black_box(&pred), black_box(&gt)).unwrap()));
}

fn baselines(c: &mut Criterion) {
    let img = page(512, 512, 4);
    c.bench_function("otsu_512", |b| b.iter(|| otsu_binarize(black_box(&img))));
    c.bench_function("sauvola_512_w25", |b| b.iter(|| sauvola_binarize(black_box(&img), 25, 0.2).unwrap()));
}

fn degradation(c: &mut Criterion) {
    let line = page(128, 1024, 5);
    let assets = backgrounds(4, 6);
    let config = DegradationConfig::default();
    let ids = assets.ids();
    let recipes: Vec<_> = (0..16).map(|s| sample_recipe(s, &config, line.width(), &ids).unwrap()).collect();
    let mut i = 0;
    c.bench_function("degrade_128x1024", |b| {
        b.iter(|| {
            i = (i + 1) % recipes.len();
            degrade(black_box(&line), &recipes[i], &assets).unwrap()
        })
    });
}

fn generator(c: &mut Criterion) {
    let charset = Charset::from_texts(["abc"]);
    let specs = ModelSpecs {
        generator: GeneratorSpec { depth: 4, base_channels: 8, batch_norm: true, dropout: 0.0 },
        discriminator: DiscriminatorSpec { base_channels: 8 },
        recognizer: RecognizerSpec { channels: [8, 8, 8, 8, 8], gru_hidden: 8, dropout: 0.0, class_count: charset.class_count() },
    };
    let bundle = ModelBundle::new(specs, charset, 0).unwrap();
    let enhancer = GeneratorEnhancer { bundle: &bundle, patch_h: 32, patch_w: 128, batch_size: 4 };
    let img = page(64, 256, 7);
    let mut g = c.benchmark_group("generator");
    g.sample_size(10);
    g.bench_function("enhance_page_64x256_small_net", |b| b.iter(|| enhance_gray(&enhancer, black_box(&img), 0).unwrap()));
    g.finish();
}

criterion_group!(benches, ctc, binarization_metrics, baselines, degradation, generator);
criterion_main!(benches);
