use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use inkrestore::{BinaryImage, LineImage};

fn inkrestore(args: &[&str]) -> Output {
    inkrestore_in(None, args)
}

fn inkrestore_in(data_root: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_inkrestore"));
    cmd.args(args).arg("--log-level").arg("warn").env_remove("INKRESTORE_DATA_ROOT");
    if let Some(root) = data_root {
        cmd.env("INKRESTORE_DATA_ROOT", root);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn assert_exit(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stdout:\n{}\nstderr:\n{}", stdout(o), stderr(o));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// All files under `dir` with their bytes, keyed by relative path.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const TOY_CONFIG: &str = r#"{
    "batch_size": 4,
    "max_iterations": 2,
    "checkpoint_every": 0,
    "image_height": 32,
    "image_width": 128,
    "architecture": {
        "generator": { "depth": 4, "base_channels": 8, "batch_norm": true, "dropout": 0.1 },
        "discriminator": { "base_channels": 8 },
        "recognizer": { "channels": [8, 16, 16, 24, 32], "gru_hidden": 32, "dropout": 0.0 }
    }
}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// Synthetic clean lines plus backgrounds, degraded into `corpus/`.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let o = inkrestore(&["synth", "--out", s(&root.join("synth")), "--train", "6", "--valid", "2", "--test", "2", "--backgrounds", "3", "--seed", "4"]);
        assert_exit(&o, 0);
        fs::write(root.join("toy.json"), TOY_CONFIG).unwrap();
        let f = Fixture { _dir: dir, root };
        assert_exit(&f.build_corpus("corpus", "9"), 0);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn build_corpus(&self, out: &str, seed: &str) -> Output {
        inkrestore(&[
            "build-corpus",
            "--manifest",
            s(&self.path("synth/lines/manifest.jsonl")),
            "--backgrounds",
            s(&self.path("synth/backgrounds")),
            "--out",
            s(&self.path(out)),
            "--seed",
            seed,
        ])
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (manifest, config, out) = (self.path("corpus/manifest.jsonl"), self.path("toy.json"), self.path(out));
        let mut args = vec!["train", "--manifest", s(&manifest), "--config", s(&config), "--out"];
        args.push(s(&out));
        args.extend_from_slice(extra);
        inkrestore(&args)
    }
}

#[test]
fn build_corpus_is_reproducible_and_names_missing_inputs() {
    let f = Fixture::new();
    assert_exit(&f.build_corpus("again", "9"), 0);
    assert_eq!(tree(&f.path("corpus")), tree(&f.path("again")));
    assert!(f.path("corpus/effective-config.json").is_file());

    assert_exit(&f.build_corpus("other", "10"), 0);
    assert_ne!(tree(&f.path("corpus")), tree(&f.path("other")));

    let missing = f.path("nowhere");
    let o = inkrestore(&[
        "build-corpus",
        "--manifest",
        s(&f.path("synth/lines/manifest.jsonl")),
        "--backgrounds",
        s(&missing),
        "--out",
        s(&f.path("x")),
    ]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
    assert!(!f.path("x").exists());
}

#[test]
fn train_validates_and_honours_flag_precedence() {
    let f = Fixture::new();
    let o = f.train("dry", &["--dry-run", "--scenario", "S2", "--lambda", "0.5"]);
    assert_exit(&o, 0);
    let out = stdout(&o);
    assert!(out.contains("\"scenario\": \"S2\"") && out.contains("\"lambda\": 0.5"), "{out}");
    assert!(out.contains("\"batch_size\": 4"), "file values survive: {out}");
    assert!(out.contains("config_hash"));
    assert!(!f.path("dry").exists(), "dry run writes nothing");

    assert_exit(&f.train("bad", &["--batch-size", "0"]), 2);
    assert_exit(&f.train("bad", &["--lambda", "-1"]), 2);
    assert_exit(&f.train("bad", &["--width", "100"]), 2);
    assert_exit(&f.train("bad", &["--scenario", "S3"]), 2);
    fs::write(f.path("typo.json"), r#"{ "batch_sise": 2 }"#).unwrap();
    let o = inkrestore(&[
        "train",
        "--manifest",
        s(&f.path("corpus/manifest.jsonl")),
        "--config",
        s(&f.path("typo.json")),
        "--out",
        s(&f.path("bad")),
    ]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("batch_sise"));
    let o = inkrestore(&["train", "--manifest", s(&f.path("missing.jsonl")), "--out", s(&f.path("bad"))]);
    assert_exit(&o, 2);
}

#[test]
fn fine_tune_refuses_a_scenario() {
    let f = Fixture::new();
    let o = inkrestore(&[
        "fine-tune",
        "--checkpoint",
        s(&f.path("none.safetensors")),
        "--manifest",
        s(&f.path("corpus/manifest.jsonl")),
        "--out",
        s(&f.path("ft")),
        "--scenario",
        "S1",
    ]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("scenario"));
}

#[test]
fn full_pipeline_from_corpus_to_reports() {
    let f = Fixture::new();
    let o = f.train("run", &["--scenario", "S2"]);
    assert_exit(&o, 0);
    assert!(stdout(&o).contains("best: iteration 2"), "{}", stdout(&o));
    let model = f.path("run/best.safetensors");
    assert!(model.is_file());
    let reports = fs::read_to_string(f.path("run/reports.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), 2);
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("run/effective-config.json")).unwrap()).unwrap();
    assert_eq!(record["command"], "train");
    assert_eq!(record["config"]["scenario"], "S2");
    let hash = record["config_hash"].as_str().unwrap().to_string();
    assert!(stdout(&o).contains(&hash));

    // Enhancement: one PNG per page, byte-identical on rerun.
    let pages = f.path("corpus/degraded");
    let n_pages = fs::read_dir(&pages).unwrap().count();
    let enhance = |out: &str, extra: &[&str]| {
        let mut args = vec!["enhance", "--checkpoint", s(&model), "--input", s(&pages), "--patch-height", "32", "--patch-width", "128", "--out"];
        let out = f.path(out);
        args.push(s(&out));
        args.extend_from_slice(extra);
        inkrestore(&args)
    };
    assert_exit(&enhance("enh", &["--compare"]), 0);
    assert_exit(&enhance("enh2", &["--compare"]), 0);
    assert_eq!(tree(&f.path("enh")), tree(&f.path("enh2")));
    let outputs = tree(&f.path("enh"));
    assert_eq!(outputs.iter().filter(|(p, _)| !s(p).contains(".compare") && s(p).ends_with(".png")).count(), n_pages);
    assert_eq!(outputs.iter().filter(|(p, _)| s(p).ends_with(".compare.png")).count(), n_pages);
    let first = fs::read_dir(&pages).unwrap().next().unwrap().unwrap().path();
    let page = LineImage::load_png(&first).unwrap();
    let out = BinaryImage::load_png(f.path("enh").join(first.file_name().unwrap())).unwrap();
    assert_eq!(out.dims(), page.dims());
    assert_exit(&enhance("bad", &["--patch-height", "30"]), 2);

    // Identical prediction and ground truth give perfect scores.
    let o = inkrestore(&["evaluate-binarization", "--pred", s(&f.path("enh")), "--gt", s(&f.path("enh2")), "--report", s(&f.path("eval/same.json"))]);
    assert_exit(&o, 0);
    let table = stdout(&o);
    let mean = table.lines().find(|l| l.starts_with("mean")).unwrap();
    let cols: Vec<&str> = mean.split_whitespace().collect();
    assert_eq!(cols, ["mean", "99.99", "100.00", "100.00", "0.00", "100.00"], "{table}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("eval/same.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["result"]["summary"]["fm"], 100.0);
    // The side-by-side images are paired too.
    assert_eq!(report["report"]["result"]["items"].as_array().unwrap().len(), 2 * n_pages);

    // Baselines and the model scored straight from the manifest.
    let corpus_manifest = f.path("corpus/manifest.jsonl");
    for method in [&["--baseline", "otsu"][..], &["--baseline", "sauvola"], &["--checkpoint", s(&model), "--patch-height", "32", "--patch-width", "128"]] {
        let mut args = vec!["evaluate-binarization", "--manifest", s(&corpus_manifest), "--per-item"];
        args.extend_from_slice(method);
        let o = inkrestore(&args);
        assert_exit(&o, 0);
        // Header, ten records, mean, summary line.
        assert_eq!(stdout(&o).lines().count(), 1 + 10 + 1 + 1, "{}", stdout(&o));
    }

    // Otsu over an input directory in one pass matches Otsu outputs scored separately.
    let gt_dir = f.path("gt");
    let otsu_dir = f.path("otsu");
    fs::create_dir_all(&gt_dir).unwrap();
    fs::create_dir_all(&otsu_dir).unwrap();
    for entry in fs::read_dir(&pages).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap();
        let clean = LineImage::load_png(f.path("corpus/clean").join(name)).unwrap();
        inkrestore::image::threshold(&clean, 0.5).save_png(gt_dir.join(name)).unwrap();
        inkrestore::inference::otsu_binarize(&LineImage::load_png(&p).unwrap()).save_png(otsu_dir.join(name)).unwrap();
    }
    let one_pass = inkrestore(&["evaluate-binarization", "--input", s(&pages), "--gt", s(&gt_dir), "--baseline", "otsu"]);
    let two_pass = inkrestore(&["evaluate-binarization", "--pred", s(&otsu_dir), "--gt", s(&gt_dir)]);
    assert_exit(&one_pass, 0);
    assert_exit(&two_pass, 0);
    let mean_row = |o: &Output| stdout(o).lines().find(|l| l.starts_with("mean")).unwrap().to_string();
    assert_eq!(mean_row(&one_pass), mean_row(&two_pass));
    let mean_line = mean_row(&one_pass);
    let manifest_pass = inkrestore(&["evaluate-binarization", "--manifest", s(&corpus_manifest), "--baseline", "otsu"]);
    assert_eq!(mean_row(&manifest_pass), mean_line);

    // Recognition on the test split, from the manifest and from text files.
    for source in ["degraded", "enhanced", "clean"] {
        let o = inkrestore(&[
            "evaluate-htr",
            "--manifest",
            s(&corpus_manifest),
            "--checkpoint",
            s(&model),
            "--height",
            "32",
            "--width",
            "128",
            "--source",
            source,
            "--report",
            s(&f.path(&format!("eval/htr-{source}.json"))),
        ]);
        assert_exit(&o, 0);
        assert!(stdout(&o).contains("2 lines"), "{}", stdout(&o));
    }
    let hyp = f.path("hyp");
    let gt = f.path("gt-text");
    fs::create_dir_all(&hyp).unwrap();
    fs::create_dir_all(&gt).unwrap();
    fs::write(gt.join("a.txt"), "kitten\n").unwrap();
    fs::write(hyp.join("a.txt"), "sitting\n").unwrap();
    fs::write(gt.join("b.txt"), "a b c").unwrap();
    fs::write(hyp.join("b.txt"), "a x c").unwrap();
    let o = inkrestore(&["evaluate-htr", "--pred", s(&hyp), "--gt", s(&gt), "--per-item"]);
    assert_exit(&o, 0);
    let out = stdout(&o);
    let row = |name: &str| out.lines().find(|l| l.starts_with(name)).unwrap().split_whitespace().skip(1).collect::<Vec<_>>().join(" ");
    assert_eq!(row("a "), "50.00 100.00");
    assert_eq!(row("b "), "20.00 33.33");
    assert_eq!(row("mean"), "35.00 66.67");

    // Fine-tuning on the paired corpus.
    let o = inkrestore(&[
        "fine-tune",
        "--checkpoint",
        s(&model),
        "--manifest",
        s(&corpus_manifest),
        "--config",
        s(&f.root.join("toy.json")),
        "--out",
        s(&f.path("ft")),
    ]);
    assert_exit(&o, 0);
    assert!(stdout(&o).contains("(1 epoch)"), "{}", stdout(&o));
    assert!(f.path("ft/fine-tuned.safetensors").is_file());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("ft/fine-tune-report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["epochs"], 1);
    let clean_only = f.path("synth/lines/manifest.jsonl");
    let o = inkrestore(&["fine-tune", "--checkpoint", s(&model), "--manifest", s(&clean_only), "--out", s(&f.path("ft2"))]);
    assert_exit(&o, 2);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let f = Fixture::new();
    assert_exit(&f.train("full", &["--iterations", "4", "--checkpoint-every", "2"]), 0);
    assert_exit(&f.train("part", &["--iterations", "2", "--checkpoint-every", "2"]), 0);
    assert_exit(&f.train("part", &["--iterations", "4", "--checkpoint-every", "2", "--resume"]), 0);
    let read = |p: &str| fs::read(f.path(p)).unwrap();
    assert_eq!(read("full/reports.jsonl"), read("part/reports.jsonl"));
    assert_eq!(read("full/checkpoint-00000004.safetensors"), read("part/checkpoint-00000004.safetensors"));
}

#[test]
fn enhance_fails_only_when_every_page_fails() {
    let f = Fixture::new();
    assert_exit(&f.train("run", &[]), 0);
    let model = f.path("run/best.safetensors");
    let pages = f.path("pages");
    fs::create_dir_all(&pages).unwrap();
    fs::write(pages.join("broken.png"), b"not a png").unwrap();
    let enhance = |out: &str| {
        inkrestore(&[
            "enhance",
            "--checkpoint",
            s(&model),
            "--input",
            s(&pages),
            "--out",
            s(&f.path(out)),
            "--patch-height",
            "32",
            "--patch-width",
            "128",
        ])
    };
    let o = enhance("all-bad");
    assert_exit(&o, 1);
    assert!(stderr(&o).contains("broken"));

    fs::copy(f.path("corpus/degraded/train0000.png"), pages.join("good.png")).unwrap();
    let o = enhance("some-bad");
    assert_exit(&o, 0);
    assert!(stdout(&o).contains("enhanced 1/2 pages"));
    assert!(stderr(&o).contains("broken"));
    assert!(f.path("some-bad/good.png").is_file());
    assert!(!f.path("some-bad/broken.png").exists());
}

#[test]
fn relative_inputs_resolve_against_the_data_root() {
    let f = Fixture::new();
    let args = ["evaluate-binarization", "--input", "corpus/degraded", "--gt", "corpus/degraded", "--baseline", "otsu"];
    assert_exit(&inkrestore_in(Some(&f.root), &args), 0);
    let o = inkrestore_in(Some(&f.path("synth")), &args);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("corpus/degraded"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_exit(&inkrestore(&["no-such-command"]), 2);
    assert_exit(&inkrestore(&["enhance", "--input", "x"]), 2);
    assert_exit(&inkrestore(&["evaluate-binarization", "--gt", "x"]), 2);
    assert_exit(&inkrestore(&["--jobs", "0", "synth", "--out", "/nonexistent-dir/never"]), 2);
}
