//! `key = value` run configuration.
//!
//! Keys are grouped by prefix: `degrade.*`, `degrade.augment.*`, `model.*`,
//! `train.*`, `metrics.*`, `phantom.*`, `paths.*`, plus a top-level `seed`
//! that seeds degradation, phantoms and training together. Text after `#`
//! is a comment.

use std::path::{Path, PathBuf};

use nusr_core::degrade::{AugmentSpec, DegradeSpec};
use nusr_core::metrics::{MetricConfig, PsnrPeak};
use nusr_core::training::TrainConfig;
use nusr_core::unetpp::UNetPPConfig;

use crate::error::CliError;
use crate::phantom::PhantomSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub degrade: DegradeSpec,
    pub augment_spec: AugmentSpec,
    pub model: UNetPPConfig,
    pub train: TrainConfig,
    pub metrics: MetricConfig,
    pub phantom: PhantomSpec,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            degrade: DegradeSpec::default(),
            augment_spec: AugmentSpec::default(),
            model: UNetPPConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricConfig::default(),
            phantom: PhantomSpec::default(),
            data_dir: None,
            out_dir: None,
        }
    }
}

type Parsed<T> = Result<T, String>;

fn num<T: std::str::FromStr>(value: &str) -> Parsed<T> {
    value.parse().map_err(|_| format!("invalid value {value:?}"))
}

fn pair<T: std::str::FromStr>(value: &str, seps: &[char]) -> Parsed<(T, T)> {
    let (a, b) = value
        .split_once(seps)
        .ok_or_else(|| format!("expected two values separated by one of {seps:?}, got {value:?}"))?;
    Ok((num(a.trim())?, num(b.trim())?))
}

/// `WIDTHxHEIGHT`.
pub fn parse_dims(value: &str) -> Parsed<(usize, usize)> {
    pair(value, &['x', 'X'])
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    /// Parses and validates. Errors name the offending line.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        let mut augment = false;
        let mut dynamic_range = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = n + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {lineno}: expected `key = value`, got {line:?}"))?;
            let (key, value) = (key.trim(), value.trim());
            let known = cfg
                .set(key, value, &mut augment, &mut dynamic_range)
                .map_err(|e| format!("line {lineno}: {key}: {e}"))?;
            if !known {
                return Err(format!("line {lineno}: unknown key {key:?}"));
            }
        }
        cfg.degrade.augment = augment.then(|| cfg.augment_spec.clone());
        let (lo, hi) = cfg.degrade.normalize_range;
        cfg.metrics.ssim_dynamic_range = dynamic_range.unwrap_or(hi - lo);
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(
        &mut self,
        key: &str,
        value: &str,
        augment: &mut bool,
        dynamic_range: &mut Option<f64>,
    ) -> Parsed<bool> {
        if key == "seed" {
            self.set_seed(num(value)?);
            return Ok(true);
        }
        if let Some(k) = key.strip_prefix("degrade.augment.") {
            let a = &mut self.augment_spec;
            match k {
                "rotation_max_deg" => a.rotation_max_deg = num(value)?,
                "translate_frac" => a.translate_frac = num(value)?,
                "scale_range" => a.scale_range = pair(value, &[','])?,
                "blur_sigma_max" => a.blur_sigma_max = num(value)?,
                "crop_frac" => a.crop_frac = num(value)?,
                "rotate" => a.rotate = num(value)?,
                "affine" => a.affine = num(value)?,
                "blur" => a.blur = num(value)?,
                "crop" => a.crop = num(value)?,
                _ => return Ok(false),
            }
            return Ok(true);
        }
        if let Some(k) = key.strip_prefix("degrade.") {
            let d = &mut self.degrade;
            match k {
                "factor_horizontal" => d.factor_horizontal = num(value)?,
                "factor_vertical" => d.factor_vertical = num(value)?,
                "intermediate_dims" => {
                    d.intermediate_dims = if value == "auto" { None } else { Some(parse_dims(value)?) }
                }
                "output_dims" => d.output_dims = parse_dims(value)?,
                "normalize_range" => d.normalize_range = pair(value, &[','])?,
                "augment" => *augment = num(value)?,
                _ => return Ok(false),
            }
            return Ok(true);
        }
        if let Some(k) = key.strip_prefix("model.") {
            return self.model.set(k, value);
        }
        if let Some(k) = key.strip_prefix("train.") {
            return self.train.set(k, value);
        }
        if let Some(k) = key.strip_prefix("metrics.") {
            let m = &mut self.metrics;
            match k {
                "psnr_peak" => {
                    m.psnr_peak = if value == "data_range" {
                        PsnrPeak::DataRangeOfGt
                    } else {
                        PsnrPeak::Explicit(num(value)?)
                    }
                }
                "ssim_window" => m.ssim_window = num(value)?,
                "ssim_sigma" => m.ssim_sigma = num(value)?,
                "ssim_k1" => m.ssim_k1 = num(value)?,
                "ssim_k2" => m.ssim_k2 = num(value)?,
                "ssim_dynamic_range" => *dynamic_range = Some(num(value)?),
                _ => return Ok(false),
            }
            return Ok(true);
        }
        if let Some(k) = key.strip_prefix("phantom.") {
            let p = &mut self.phantom;
            match k {
                "count" => p.count = num(value)?,
                "size" => p.size = num(value)?,
                "ellipses" => p.ellipses = pair(value, &[',', '-'])?,
                "intensity" => p.intensity = pair(value, &[','])?,
                "texture" => p.texture = num(value)?,
                _ => return Ok(false),
            }
            return Ok(true);
        }
        match key {
            "paths.data" => self.data_dir = Some(PathBuf::from(value)),
            "paths.out" => self.out_dir = Some(PathBuf::from(value)),
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.degrade.seed = seed;
        self.train.seed = seed;
        self.phantom.seed = seed;
    }

    pub fn validate(&self) -> Result<(), String> {
        self.degrade.validate().map_err(|e| e.to_string())?;
        self.augment_spec.validate()?;
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.metrics.validate().map_err(|e| e.to_string())?;
        self.phantom.validate()?;
        let d = self.model.divisor();
        let (w, h) = self.degrade.output_dims;
        if w % d != 0 || h % d != 0 {
            return Err(format!(
                "degrade.output_dims {w}x{h} must be divisible by {d} for a {}-level model",
                self.model.levels
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_section() {
        let cfg = RunConfig::parse(
            "# desk run\n\
             seed = 5\n\
             degrade.output_dims = 64x64   # small\n\
             degrade.normalize_range = 0, 2\n\
             degrade.augment = true\n\
             degrade.augment.crop = false\n\
             model.channels = 8,16,32\n\
             model.nested = false\n\
             train.steps = 10\n\
             train.loss = mse\n\
             metrics.psnr_peak = 1.5\n\
             phantom.ellipses = 2-4\n\
             paths.data = /tmp/d\n",
        )
        .unwrap();
        assert_eq!(cfg.train.seed, 5);
        assert_eq!(cfg.degrade.seed, 5);
        assert_eq!(cfg.degrade.output_dims, (64, 64));
        assert!(!cfg.degrade.augment.as_ref().unwrap().crop);
        assert_eq!(cfg.model.levels, 3);
        assert!(!cfg.model.nested);
        assert_eq!(cfg.metrics.ssim_dynamic_range, 2.0);
        assert_eq!(cfg.metrics.psnr_peak, PsnrPeak::Explicit(1.5));
        assert_eq!(cfg.phantom.ellipses, (2, 4));
        assert_eq!(cfg.data_dir, Some(PathBuf::from("/tmp/d")));
    }

    #[test]
    fn unknown_keys_name_their_line() {
        let err = RunConfig::parse("seed = 1\n\ntrain.stepz = 4\n").unwrap_err();
        assert!(err.starts_with("line 3:"), "{err}");
        let err = RunConfig::parse("just words\n").unwrap_err();
        assert!(err.starts_with("line 1:"), "{err}");
    }

    #[test]
    fn invariants_are_checked_at_load() {
        assert!(RunConfig::parse("train.learning_rate = -1\n").is_err());
        assert!(RunConfig::parse("metrics.ssim_window = 4\n").is_err());
        assert!(RunConfig::parse("degrade.output_dims = 60x60\n").is_err());
        assert!(RunConfig::parse("model.channels = 8,4\n").is_err());
        assert!(RunConfig::parse("degrade.normalize_range = 1,0\n").is_err());
        assert!(RunConfig::parse("train.steps = 0\n").is_ok());
    }
}
