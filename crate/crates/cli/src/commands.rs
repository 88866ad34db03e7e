use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use nusr_core::degrade::{bilinear_resize, denormalize, make_pair, normalize, sample_rng, NormParams, PairedSample};
use nusr_core::metrics::{evaluate, psnr, ssim, EvalReport, EvalRow, Method};
use nusr_core::training::{
    load_checkpoint, save_checkpoint, split_dataset, train, Checkpoint, RunLogger, TrainState,
    Validation,
};
use nusr_core::unetpp::UNetPPModel;
use nusr_core::Tensor;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::image_io::{encode_fgrd, encode_preview, extension, is_image, read_image, write_image};
use crate::phantom::generate;

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str =
    "name,status,width,height,intermediate_width,intermediate_height,norm_min,norm_max,message";
pub const FINAL_CHECKPOINT: &str = "model.nusr";
pub const REPORT: &str = "report.csv";
pub const PER_IMAGE: &str = "per_image.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// Image files in `dir`, one per stem (`.fgrd` preferred over a `.png`
/// preview of the same name), sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut by_stem: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        let fgrd = extension(&path).as_deref() == Some("fgrd");
        match by_stem.get(&stem(&path)) {
            Some(_) if !fgrd => {}
            _ => {
                by_stem.insert(stem(&path), path);
            }
        }
    }
    Ok(by_stem.into_values().collect())
}

fn checkpoint(path: &Path) -> Result<Checkpoint<f32>, CliError> {
    load_checkpoint(path).map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

/// File name without its final extension.
fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn phantom(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    for i in 0..cfg.phantom.count {
        let img = generate(&cfg.phantom, i);
        let name = format!("phantom_{i:04}");
        write(&out.join(format!("{name}.fgrd")), encode_fgrd(&img)?)?;
        write(&out.join(format!("{name}.png")), encode_preview(&img)?)?;
    }
    println!(
        "wrote {} phantom(s) of {}x{} to {}",
        cfg.phantom.count,
        cfg.phantom.size,
        cfg.phantom.size,
        out.display()
    );
    Ok(())
}

pub fn degrade(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    let files = list_images(input)?;
    if files.is_empty() {
        return Err(CliError::data(format!("no .fgrd or .png images in {}", input.display())));
    }
    create_dir(out)?;
    let spec = &cfg.degrade;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut ok = 0;
    for (i, path) in files.iter().enumerate() {
        let name = stem(path);
        let result = read_image(path).and_then(|hf| {
            let pair = make_pair(&hf, spec, &mut sample_rng(spec.seed, i as u64))?;
            for (suffix, t) in [("hf", &pair.hf), ("lf", &pair.lf_bilinear), ("res", &pair.residual_target)] {
                write(&out.join(format!("{name}.{suffix}.fgrd")), encode_fgrd(t)?)?;
            }
            Ok(pair)
        });
        match result {
            Ok(pair) => {
                let (w, h) = pair.dims();
                let (iw, ih) = pair.intermediate_dims;
                eprintln!("{name}: intermediate {iw}x{ih}, output {w}x{h}");
                let _ = writeln!(
                    manifest,
                    "{name},ok,{w},{h},{iw},{ih},{},{},",
                    pair.norm.min, pair.norm.max
                );
                ok += 1;
            }
            Err(e) => {
                eprintln!("{name}: {e}");
                let msg = e.message.replace(',', ";");
                let _ = writeln!(manifest, "{name},error,,,,,,,{msg}");
            }
        }
    }
    write(&out.join(MANIFEST), manifest)?;
    println!("degraded {ok}/{} image(s) into {}", files.len(), out.display());
    if ok == 0 {
        return Err(CliError::data("every input failed to degrade"));
    }
    Ok(())
}

/// Paired samples listed as `ok` in a degrade manifest.
pub fn load_pairs(cfg: &RunConfig, dir: &Path) -> Result<Vec<PairedSample<f32>>, CliError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let (lo, hi) = cfg.degrade.normalize_range;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(CliError::data(format!("{} line {}: expected 9 fields", path.display(), n + 1)));
        }
        if f[1] != "ok" {
            continue;
        }
        let bad = || CliError::data(format!("{} line {}: malformed number", path.display(), n + 1));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let norm = NormParams {
            min: num(f[6])?,
            max: num(f[7])?,
            lo,
            hi,
        };
        let dim = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let load = |suffix: &str| read_image(&dir.join(format!("{}.{suffix}.fgrd", f[0])));
        let pair = PairedSample {
            hf: load("hf")?,
            lf_bilinear: load("lf")?,
            residual_target: load("res")?,
            norm,
            intermediate_dims: (dim(f[4])?, dim(f[5])?),
        };
        if pair.hf.shape() != pair.lf_bilinear.shape() || pair.hf.shape() != pair.residual_target.shape() {
            return Err(CliError::data(format!("{}: hf/lf/res shapes differ", f[0])));
        }
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(CliError::data(format!("{} lists no usable pairs", path.display())));
    }
    Ok(pairs)
}

pub fn method_label(nested: bool) -> &'static str {
    if nested {
        "SR U-Net++"
    } else {
        "SR U-Net"
    }
}

/// Report comparing the model's super-resolution with the LF baseline.
pub fn sr_report(
    model: &UNetPPModel<f32>,
    val: &[PairedSample<f32>],
    cfg: &RunConfig,
) -> Result<EvalReport, CliError> {
    let range = cfg.degrade.normalize_range;
    let methods = [Method::new(method_label(model.config.nested), |s: &PairedSample<f32>| {
        model.super_resolve(&s.lf_bilinear, range)
    })];
    Ok(evaluate(&methods, val, &cfg.metrics)?)
}

pub fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    let pairs = load_pairs(cfg, data)?;
    let (train_set, val_set) = split_dataset(&pairs, cfg.train.split_ratio, cfg.train.seed)?;
    eprintln!("{} training / {} validation pair(s)", train_set.len(), val_set.len());
    let (mut model, mut state) = match resume {
        Some(path) => {
            let ck = checkpoint(path)?;
            if ck.model.config != cfg.model {
                return Err(CliError::usage(format!(
                    "{} holds a {:?} model but the config describes {:?}",
                    path.display(),
                    ck.model.config,
                    cfg.model
                )));
            }
            (ck.model, ck.state)
        }
        None => {
            let model = UNetPPModel::new(cfg.model.clone(), cfg.train.seed)?;
            let state = TrainState::new(&model, cfg.train.seed);
            (model, state)
        }
    };
    model.check_input(pairs[0].lf_bilinear.shape())?;

    let mut logger = RunLogger::new(out, &cfg.train)?;
    let val = Validation {
        samples: &val_set,
        metrics: &cfg.metrics,
        range: cfg.degrade.normalize_range,
    };
    let started = std::time::Instant::now();
    let result = train(&mut model, &mut state, &train_set, Some(&val), &cfg.train, &mut logger);
    logger.flush()?;
    result?;
    eprintln!("trained to step {} in {:.1?}", state.step, started.elapsed());

    let final_path = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_path, &model, &state, &cfg.train)?;
    let bytes = std::fs::read(&final_path)?;
    println!("checkpoint {} sha256 {}", final_path.display(), sha256_hex(&bytes));

    let report = sr_report(&model, &val_set, cfg)?;
    write(&out.join(REPORT), report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn infer(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    input: &Path,
    output: &Path,
    resize: Option<(usize, usize)>,
) -> Result<Tensor<f32>, CliError> {
    let ck = self::checkpoint(checkpoint_path)?;
    let mut image = read_image(input)?;
    if let Some(dims) = resize {
        image = bilinear_resize(&image, dims)?;
    }
    ck.model.check_input(image.shape())?;
    let (lo, hi) = cfg.degrade.normalize_range;
    let (normalized, params) = normalize(&image, lo, hi)?;
    let sr = ck.model.super_resolve(&normalized, (lo, hi))?;
    let result = denormalize(&sr, &params);
    write_image(output, &result)?;
    let (h, w) = result.image_dims()?;
    println!("wrote {w}x{h} super-resolved image to {}", output.display());
    Ok(result)
}

fn keyed(files: Vec<PathBuf>, suffix: &str) -> BTreeMap<String, PathBuf> {
    files
        .into_iter()
        .filter_map(|p| {
            let s = stem(&p);
            let key = s.strip_suffix(suffix)?.to_string();
            Some((key, p))
        })
        .collect()
}

pub struct EvalArgs<'a> {
    pub pred_dir: &'a Path,
    pub gt_dir: &'a Path,
    pub pred_suffix: &'a str,
    pub gt_suffix: &'a str,
    pub label: &'a str,
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs<'_>, out: &Path) -> Result<EvalReport, CliError> {
    let preds = keyed(list_images(args.pred_dir)?, args.pred_suffix);
    let gts = keyed(list_images(args.gt_dir)?, args.gt_suffix);
    let unmatched: Vec<&String> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .chain(gts.keys().filter(|k| !preds.contains_key(*k)))
        .collect();
    let matched: Vec<(&String, &PathBuf, &PathBuf)> = preds
        .iter()
        .filter_map(|(k, p)| gts.get(k).map(|g| (k, p, g)))
        .collect();
    if matched.is_empty() {
        return Err(CliError::data(format!(
            "no matching file names between {} and {}",
            args.pred_dir.display(),
            args.gt_dir.display()
        )));
    }
    let mut per_image = String::from("name,psnr,ssim\n");
    let mut scores = Vec::with_capacity(matched.len());
    for (key, p, g) in matched {
        let (pred, gt) = (read_image(p)?, read_image(g)?);
        let score = (psnr(&pred, &gt, &cfg.metrics)?, ssim(&pred, &gt, &cfg.metrics)?);
        let _ = writeln!(per_image, "{key},{:.6},{:.6}", score.0, score.1);
        scores.push(score);
    }
    let report = EvalReport::new(vec![EvalRow::summarize(args.label, &scores)?]);
    create_dir(out)?;
    write(&out.join(PER_IMAGE), per_image)?;
    write(&out.join(REPORT), report.to_csv())?;
    print!("{}", report.to_csv());
    if !unmatched.is_empty() {
        for k in &unmatched {
            eprintln!("unmatched: {k}");
        }
        return Err(CliError::data(format!("{} file(s) had no counterpart", unmatched.len())));
    }
    Ok(report)
}
