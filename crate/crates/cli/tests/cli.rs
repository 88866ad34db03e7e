use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nusr::commands::{self, sha256_hex, MANIFEST};
use nusr::config::RunConfig;
use nusr::image_io::{decode_fgrd, encode_fgrd, encode_png16, read_image};
use nusr::phantom::{generate, PhantomSpec};
use nusr_core::metrics::{ssim, MetricConfig};
use nusr_core::training::{encode_checkpoint, save_checkpoint, TrainConfig, TrainState};
use nusr_core::unetpp::{UNetPPConfig, UNetPPModel};
use nusr_core::Tensor;
use proptest::prelude::*;
use tempfile::TempDir;

fn nusr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nusr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn write_fgrd(path: &Path, img: &Tensor<f32>) {
    std::fs::write(path, encode_fgrd(img).unwrap()).unwrap();
}

#[test]
fn phantom_writes_two_files_per_image_deterministically() {
    let tmp = TempDir::new().unwrap();
    let run = |out: &str| nusr(&["phantom", "--count", "1", "--seed", "7", "--size", "64", "--out", out], tmp.path());
    assert_eq!(run("a").status.code(), Some(0));
    assert_eq!(run("b").status.code(), Some(0));
    let (a, b) = (files_in(&tmp.path().join("a")), files_in(&tmp.path().join("b")));
    assert_eq!(a.len(), 2);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let zero = nusr(&["phantom", "--count", "0", "--out", "z"], tmp.path());
    assert_eq!(zero.status.code(), Some(0));
    assert!(files_in(&tmp.path().join("z")).is_empty());
}

#[test]
fn phantoms_are_normalizable() {
    let spec = PhantomSpec {
        size: 32,
        seed: 3,
        ..PhantomSpec::default()
    };
    for i in 0..40 {
        let img = generate(&spec, i);
        let mut values: Vec<u32> = img.data().iter().map(|v| v.to_bits()).collect();
        values.sort_unstable();
        values.dedup();
        assert!(values.len() >= 2, "phantom {i} is constant");
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn degrade_reports_reference_dims_and_exact_triples() {
    let tmp = TempDir::new().unwrap();
    let out = nusr(&["phantom", "--count", "2", "--size", "256", "--out", "ph"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let out = nusr(&["degrade", "ph", "--out", "pairs"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("phantom_0000: intermediate 172x52, output 256x256"));
    let pairs = tmp.path().join("pairs");
    for name in ["phantom_0000", "phantom_0001"] {
        let load = |s: &str| read_image(&pairs.join(format!("{name}.{s}.fgrd"))).unwrap();
        let (hf, lf, res) = (load("hf"), load("lf"), load("res"));
        assert_eq!(lf.image_dims().unwrap(), (256, 256));
        for ((h, l), r) in hf.data().iter().zip(lf.data()).zip(res.data()) {
            assert_eq!(h.to_bits(), (l + r).to_bits());
        }
    }
    let manifest = std::fs::read_to_string(pairs.join(MANIFEST)).unwrap();
    assert!(manifest.lines().nth(1).unwrap().starts_with("phantom_0000,ok,256,256,172,52,"));
}

#[test]
fn degrade_handles_constant_and_misfit_inputs() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    std::fs::create_dir(&input).unwrap();
    write_fgrd(&input.join("flat.fgrd"), &Tensor::full(&[1, 1, 16, 16], 0.3));
    write_fgrd(&input.join("wrong.fgrd"), &Tensor::full(&[1, 1, 16, 24], 0.3));
    let out = nusr(&["degrade", "in", "--output-dims", "16x16", "--out", "p"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let res = read_image(&tmp.path().join("p/flat.res.fgrd")).unwrap();
    assert!(res.data().iter().all(|&v| v == 0.0));
    let manifest = std::fs::read_to_string(tmp.path().join("p").join(MANIFEST)).unwrap();
    assert!(manifest.contains("wrong,error,"));

    std::fs::remove_file(input.join("flat.fgrd")).unwrap();
    let out = nusr(&["degrade", "in", "--output-dims", "16x16", "--out", "q"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

fn small_dataset(tmp: &Path, count: &str) {
    let out = nusr(&["phantom", "--count", count, "--size", "16", "--seed", "4", "--out", "ph"], tmp);
    assert_eq!(out.status.code(), Some(0));
    let out = nusr(&["degrade", "ph", "--output-dims", "16x16", "--out", "pairs"], tmp);
    assert_eq!(out.status.code(), Some(0));
}

const SMALL_CONFIG: &str = "\
degrade.output_dims = 16x16
model.channels = 4,8,16
metrics.ssim_window = 7
train.val_every = 5
train.checkpoint_every = 5
seed = 11
";

#[test]
fn zero_step_training_saves_the_initial_model() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path(), "8");
    std::fs::write(tmp.path().join("run.cfg"), format!("{SMALL_CONFIG}train.steps = 0\n")).unwrap();
    let out = nusr(&["train", "--config", "run.cfg", "--data", "pairs", "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let log = std::fs::read_to_string(tmp.path().join("run/train_log.csv")).unwrap();
    assert_eq!(log, "step,loss,lr\n");

    let cfg = RunConfig::parse(&format!("{SMALL_CONFIG}train.steps = 0\n")).unwrap();
    let model = UNetPPModel::<f32>::new(cfg.model.clone(), 11).unwrap();
    let state = TrainState::new(&model, 11);
    let expected = encode_checkpoint(&model, &state, &cfg.train);
    assert_eq!(std::fs::read(tmp.path().join("run/model.nusr")).unwrap(), expected);
    let report = std::fs::read_to_string(tmp.path().join("run/report.csv")).unwrap();
    assert!(report.contains("\nLF baseline,2,"));
    assert!(report.contains("\nSR U-Net++,2,"));
}

#[test]
fn seeded_training_is_replayable() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path(), "8");
    std::fs::write(tmp.path().join("run.cfg"), format!("{SMALL_CONFIG}train.steps = 12\n")).unwrap();
    let hash = |out: &str| {
        let o = nusr(&["train", "--config", "run.cfg", "--data", "pairs", "--out", out], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let stdout = String::from_utf8(o.stdout).unwrap();
        let bytes = std::fs::read(tmp.path().join(out).join("model.nusr")).unwrap();
        assert!(stdout.contains(&sha256_hex(&bytes)));
        bytes
    };
    assert_eq!(hash("r1"), hash("r2"));
    let val = std::fs::read_to_string(tmp.path().join("r1/val_log.csv")).unwrap();
    assert_eq!(val.lines().count(), 3);
}

#[test]
fn training_rejects_bad_configs_with_line_numbers() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("bad.cfg"), "seed = 1\ntrain.learning_rat = 1\n").unwrap();
    let out = nusr(&["train", "--config", "bad.cfg", "--data", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"));
    std::fs::write(tmp.path().join("bad.cfg"), "train.learning_rate = 0\n").unwrap();
    let out = nusr(&["train", "--config", "bad.cfg", "--data", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

fn zero_head_checkpoint(dir: &Path) -> PathBuf {
    let mut model = UNetPPModel::<f32>::new(UNetPPConfig::new(&[4, 8, 16], true), 2).unwrap();
    model.zero_head();
    let path = dir.join("zero.nusr");
    save_checkpoint(&path, &model, &TrainState::new(&model, 0), &TrainConfig::default()).unwrap();
    path
}

#[test]
fn zero_head_inference_returns_its_input() {
    let tmp = TempDir::new().unwrap();
    let ck = zero_head_checkpoint(tmp.path());
    let spec = PhantomSpec {
        size: 32,
        ..PhantomSpec::default()
    };
    let input = generate(&spec, 0);
    write_fgrd(&tmp.path().join("in.fgrd"), &input);
    let out_path = tmp.path().join("out.fgrd");
    let cfg = RunConfig::default();
    let result = commands::infer(&cfg, &ck, &tmp.path().join("in.fgrd"), &out_path, None).unwrap();
    for (a, b) in input.data().iter().zip(result.data()) {
        assert!((a - b).abs() <= 1e-6);
    }
    let reread = read_image(&out_path).unwrap();
    assert!(reread.data().iter().zip(result.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    // a smaller input is resized first; the output is the bilinear upsampling
    let small = generate(&PhantomSpec { size: 16, ..spec }, 1);
    write_fgrd(&tmp.path().join("small.fgrd"), &small);
    let up = commands::infer(&cfg, &ck, &tmp.path().join("small.fgrd"), &out_path, Some((32, 32))).unwrap();
    let expected = nusr_core::degrade::bilinear_resize(&small, (32, 32)).unwrap();
    for (a, b) in expected.data().iter().zip(up.data()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn inference_errors_map_to_data_exit_codes() {
    let tmp = TempDir::new().unwrap();
    zero_head_checkpoint(tmp.path());
    write_fgrd(&tmp.path().join("odd.fgrd"), &generate(&PhantomSpec { size: 18, ..PhantomSpec::default() }, 0));
    let out = nusr(&["infer", "zero.nusr", "odd.fgrd", "o.fgrd"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("divisible by 4"), "{}", stderr(&out));

    let mut bytes = std::fs::read(tmp.path().join("zero.nusr")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(tmp.path().join("broken.nusr"), bytes).unwrap();
    let out = nusr(&["infer", "broken.nusr", "odd.fgrd", "o.fgrd"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("format error"), "{}", stderr(&out));
}

#[test]
fn eval_of_identical_directories_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let out = nusr(&["phantom", "--count", "3", "--size", "16", "--out", "ph"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let out = nusr(&["eval", "ph", "ph", "--out", "ev"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = std::fs::read_to_string(tmp.path().join("ev/report.csv")).unwrap();
    assert!(report.contains("prediction,3,inf,0.000000,1.000000,0.000000\n"));
}

#[test]
fn eval_of_a_constant_offset_matches_the_metric_definitions() {
    let tmp = TempDir::new().unwrap();
    for d in ["gt", "pred"] {
        std::fs::create_dir(tmp.path().join(d)).unwrap();
    }
    let gt = generate(&PhantomSpec { size: 16, ..PhantomSpec::default() }, 5);
    let pred = gt.map(|v| v + 0.125);
    write_fgrd(&tmp.path().join("gt/a.fgrd"), &gt);
    write_fgrd(&tmp.path().join("pred/a.fgrd"), &pred);
    let out = nusr(&["eval", "pred", "gt", "--label", "offset", "--out", "ev"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let per = std::fs::read_to_string(tmp.path().join("ev/per_image.csv")).unwrap();
    let row: Vec<f64> = per.lines().nth(1).unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();

    let (lo, hi) = gt.min_max();
    let mse = gt
        .data()
        .iter()
        .zip(pred.data())
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / gt.len() as f64;
    let psnr = 10.0 * (((hi - lo) as f64).powi(2) / mse).log10();
    assert!((row[0] - psnr).abs() < 1e-6);
    let s = ssim(&pred, &gt, &MetricConfig::default()).unwrap();
    assert!((row[1] - s).abs() < 1e-6);
}

#[test]
fn eval_pairing_failures() {
    let tmp = TempDir::new().unwrap();
    for d in ["a", "b"] {
        std::fs::create_dir(tmp.path().join(d)).unwrap();
    }
    let img = generate(&PhantomSpec { size: 16, ..PhantomSpec::default() }, 0);
    write_fgrd(&tmp.path().join("a/x.fgrd"), &img);
    write_fgrd(&tmp.path().join("b/y.fgrd"), &img);
    let out = nusr(&["eval", "a", "b", "--out", "ev"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    write_fgrd(&tmp.path().join("b/x.fgrd"), &img);
    let out = nusr(&["eval", "a", "b", "--out", "ev"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unmatched: y"));
    assert!(tmp.path().join("ev/report.csv").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(nusr(&["bogus"], tmp.path()).status.code(), Some(1));
    assert_eq!(nusr(&["--help"], tmp.path()).status.code(), Some(0));
    assert_eq!(nusr(&["train"], tmp.path()).status.code(), Some(1));
    assert_eq!(nusr(&["phantom", "--size", "4"], tmp.path()).status.code(), Some(1));
}

#[test]
fn png_inputs_are_accepted() {
    let tmp = TempDir::new().unwrap();
    let img = Tensor::<f32>::image(8, 8, (0..64).map(|v| v as f32 / 63.0).collect()).unwrap();
    std::fs::write(tmp.path().join("x.png"), encode_png16(&img).unwrap()).unwrap();
    let back = read_image(&tmp.path().join("x.png")).unwrap();
    for (a, b) in img.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 1.0 / 65535.0);
    }
}

proptest! {
    #[test]
    fn fgrd_round_trip_is_lossless(
        (w, h, data) in (8usize..20, 8usize..20).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), w * h))
        })
    ) {
        let img = Tensor::image(h, w, data).unwrap();
        let back = decode_fgrd(&encode_fgrd(&img).unwrap(), "t").unwrap();
        prop_assert!(img.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back.image_dims().unwrap(), (h, w));
    }
}
