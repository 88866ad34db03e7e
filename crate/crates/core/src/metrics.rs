//! PSNR, Gaussian-window SSIM and the per-method summary table.

use std::fmt::Write as _;

use crate::degrade::PairedSample;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PsnrPeak {
    /// `max(gt) − min(gt)` of each ground-truth image.
    DataRangeOfGt,
    Explicit(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricConfig {
    pub psnr_peak: PsnrPeak,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    /// `L` in `C1 = (k1·L)²`, `C2 = (k2·L)²`; the width of the
    /// normalization range.
    pub ssim_dynamic_range: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            psnr_peak: PsnrPeak::DataRangeOfGt,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            ssim_dynamic_range: 1.0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::usage(format!(
                "ssim window must be odd and >= 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_k1 > 0.0 && self.ssim_k2 > 0.0) {
            return Err(Error::usage("ssim k1 and k2 must be positive"));
        }
        if !(self.ssim_sigma > 0.0) || !(self.ssim_dynamic_range > 0.0) {
            return Err(Error::usage("ssim sigma and dynamic range must be positive"));
        }
        if let PsnrPeak::Explicit(p) = self.psnr_peak {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::usage(format!("psnr peak must be positive, got {p}")));
            }
        }
        Ok(())
    }
}

fn same_shape<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `10·log10(peak² / MSE)` in dB; identical images give `+∞`.
pub fn psnr<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>, cfg: &MetricConfig) -> Result<f64> {
    same_shape(pred, gt)?;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let d = p.as_f64() - g.as_f64();
            d * d
        })
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = match cfg.psnr_peak {
        PsnrPeak::Explicit(p) => p,
        PsnrPeak::DataRangeOfGt => {
            let (lo, hi) = gt.min_max();
            hi.as_f64() - lo.as_f64()
        }
    };
    if !(peak > 0.0) {
        return Err(Error::Domain(format!(
            "psnr peak {peak} is not positive (constant ground truth?)"
        )));
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_1d(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering of an `h × w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(t, kv)| kv * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(t, kv)| kv * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every window position fully inside the image, with a
/// normalized Gaussian window.
pub fn ssim<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>, cfg: &MetricConfig) -> Result<f64> {
    same_shape(pred, gt)?;
    cfg.validate()?;
    let (h, w) = pred.image_dims()?;
    let win = cfg.ssim_window;
    if h < win || w < win {
        return Err(Error::dim(format!(
            "ssim: image {w}x{h} is smaller than the {win}x{win} window"
        )));
    }
    let x: Vec<f64> = pred.data().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = gt.data().iter().map(|v| v.as_f64()).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let k = gaussian_1d(win, cfg.ssim_sigma);
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &k));
    let c1 = (cfg.ssim_k1 * cfg.ssim_dynamic_range).powi(2);
    let c2 = (cfg.ssim_k2 * cfg.ssim_dynamic_range).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Aggregate PSNR/SSIM for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub n: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    /// Images whose PSNR was infinite and left out of the PSNR statistics.
    pub psnr_infinite: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalRow {
    /// Summarizes per-image `(psnr, ssim)` pairs; standard deviations are
    /// population (ddof = 0).
    pub fn summarize(method: &str, per_image: &[(f64, f64)]) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::usage(format!("no images to summarize for {method}")));
        }
        let finite: Vec<f64> = per_image.iter().map(|p| p.0).filter(|v| v.is_finite()).collect();
        let (psnr_mean, psnr_std) = if finite.is_empty() {
            (f64::INFINITY, 0.0)
        } else {
            mean_std(&finite)
        };
        let ssims: Vec<f64> = per_image.iter().map(|p| p.1).collect();
        let (ssim_mean, ssim_std) = mean_std(&ssims);
        Ok(Self {
            method: method.to_string(),
            n: per_image.len(),
            psnr_mean,
            psnr_std,
            ssim_mean,
            ssim_std,
            psnr_infinite: per_image.len() - finite.len(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const REPORT_HEADER: &str = "method,n,psnr_mean,psnr_std,ssim_mean,ssim_std";

impl EvalReport {
    pub fn new(mut rows: Vec<EvalRow>) -> Self {
        rows.sort_by(|a, b| a.method.cmp(&b.method));
        Self { rows }
    }

    pub fn row(&self, method: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Fixed six-decimal CSV, rows sorted by method. Rows that dropped
    /// infinite PSNR values get a trailing `#` note.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                r.method, r.n, r.psnr_mean, r.psnr_std, r.ssim_mean, r.ssim_std
            );
        }
        for r in self.rows.iter().filter(|r| r.psnr_infinite > 0) {
            let _ = writeln!(
                out,
                "# {}: {} infinite PSNR value(s) excluded from psnr_mean/psnr_std",
                r.method, r.psnr_infinite
            );
        }
        out
    }
}

pub const LF_BASELINE: &str = "LF baseline";

/// A labelled way of producing a super-resolved image from a sample.
pub struct Method<'a, E: Element> {
    pub label: String,
    pub predict: Box<dyn Fn(&PairedSample<E>) -> Result<Tensor<E>> + 'a>,
}

impl<'a, E: Element> Method<'a, E> {
    pub fn new(label: &str, predict: impl Fn(&PairedSample<E>) -> Result<Tensor<E>> + 'a) -> Self {
        Self {
            label: label.to_string(),
            predict: Box::new(predict),
        }
    }
}

/// Per-image PSNR/SSIM of each method's output against `hf`, plus the
/// "LF baseline" row scoring `lf_bilinear` itself.
pub fn evaluate<E: Element>(
    methods: &[Method<'_, E>],
    val_set: &[PairedSample<E>],
    cfg: &MetricConfig,
) -> Result<EvalReport> {
    if val_set.is_empty() {
        return Err(Error::usage("evaluation set is empty"));
    }
    cfg.validate()?;
    let score = |pred: &Tensor<E>, s: &PairedSample<E>| -> Result<(f64, f64)> {
        Ok((psnr(pred, &s.hf, cfg)?, ssim(pred, &s.hf, cfg)?))
    };
    let mut rows = Vec::new();
    let baseline = val_set
        .iter()
        .map(|s| score(&s.lf_bilinear, s))
        .collect::<Result<Vec<_>>>()?;
    rows.push(EvalRow::summarize(LF_BASELINE, &baseline)?);
    for m in methods {
        let per = val_set
            .iter()
            .map(|s| score(&(m.predict)(s)?, s))
            .collect::<Result<Vec<_>>>()?;
        rows.push(EvalRow::summarize(&m.label, &per)?);
    }
    Ok(EvalReport::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_window_is_normalized_and_symmetric() {
        let k = gaussian_1d(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn config_rejects_even_window() {
        let cfg = MetricConfig {
            ssim_window: 10,
            ..MetricConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_formatting() {
        let report = EvalReport::new(vec![
            EvalRow::summarize("b", &[(30.0, 0.9), (32.0, 0.8)]).unwrap(),
            EvalRow::summarize("a", &[(f64::INFINITY, 1.0)]).unwrap(),
        ]);
        assert_eq!(
            report.to_csv(),
            "method,n,psnr_mean,psnr_std,ssim_mean,ssim_std\n\
             a,1,inf,0.000000,1.000000,0.000000\n\
             b,2,31.000000,1.000000,0.850000,0.050000\n\
             # a: 1 infinite PSNR value(s) excluded from psnr_mean/psnr_std\n"
        );
    }
}
