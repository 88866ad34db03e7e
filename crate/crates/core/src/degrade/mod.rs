//! High-field to synthetic low-field degradation.
//!
//! A high-field image is normalized to a fixed range, optionally augmented,
//! decimated anisotropically (1.5× horizontally, 5× vertically by default)
//! and brought back to full size with bilinear interpolation. The network
//! learns the residual `hf − lf_bilinear`.

mod augment;
mod resample;

pub use augment::{apply_draw, augment, gaussian_blur, warp_affine, AugmentDraw, AugmentSpec};
pub use resample::bilinear_resize;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use resample::Plane;

#[derive(Clone, Debug, PartialEq)]
pub struct DegradeSpec {
    /// Decimation factor applied to the width.
    pub factor_horizontal: f64,
    /// Decimation factor applied to the height.
    pub factor_vertical: f64,
    /// Explicit `(width, height)` of the decimated image.
    pub intermediate_dims: Option<(usize, usize)>,
    /// `(width, height)` of the high-field input and of the degraded output.
    pub output_dims: (usize, usize),
    pub normalize_range: (f64, f64),
    pub augment: Option<AugmentSpec>,
    pub seed: u64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        Self {
            factor_horizontal: 1.5,
            factor_vertical: 5.0,
            intermediate_dims: None,
            output_dims: (256, 256),
            normalize_range: (-0.5, 0.5),
            augment: None,
            seed: 0,
        }
    }
}

/// `round(n / factor)`, then up to the next even integer (minimum 2).
pub fn decimated_len(n: usize, factor: f64) -> usize {
    let r = (n as f64 / factor).round() as usize;
    (r + r % 2).max(2)
}

impl DegradeSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("factor_horizontal", self.factor_horizontal),
            ("factor_vertical", self.factor_vertical),
        ] {
            if !(f >= 1.0) || !f.is_finite() {
                return Err(Error::usage(format!("{name} must be a finite value >= 1, got {f}")));
            }
        }
        let (lo, hi) = self.normalize_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::usage(format!("normalize range ({lo}, {hi}) needs lo < hi")));
        }
        if self.output_dims.0 == 0 || self.output_dims.1 == 0 {
            return Err(Error::usage("output dims must be non-zero"));
        }
        if let Some((w, h)) = self.intermediate_dims {
            if w == 0 || h == 0 {
                return Err(Error::usage("intermediate dims must be non-zero"));
            }
        }
        if let Some(a) = &self.augment {
            a.validate().map_err(Error::Usage)?;
        }
        Ok(())
    }

    /// `(width, height)` of the decimated image for an input of the given
    /// size.
    pub fn intermediate_for(&self, (width, height): (usize, usize)) -> (usize, usize) {
        self.intermediate_dims.unwrap_or_else(|| {
            (
                decimated_len(width, self.factor_horizontal),
                decimated_len(height, self.factor_vertical),
            )
        })
    }
}

/// Min/max recorded by [`normalize`], enough to invert it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormParams {
    pub min: f64,
    pub max: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Affinely maps the image's `[min, max]` onto `[lo, hi]`.
pub fn normalize<E: Element>(image: &Tensor<E>, lo: f64, hi: f64) -> Result<(Tensor<E>, NormParams)> {
    let (min, max) = image.min_max();
    let (min, max) = (min.as_f64(), max.as_f64());
    if !(lo < hi) {
        return Err(Error::usage(format!("normalize range ({lo}, {hi}) needs lo < hi")));
    }
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::Domain("normalize: image contains non-finite values".into()));
    }
    if min == max {
        return Err(Error::DegenerateRange(min));
    }
    let params = NormParams { min, max, lo, hi };
    let scale = (hi - lo) / (max - min);
    Ok((image.map(|v| E::from_f64_lossy(lo + (v.as_f64() - min) * scale)), params))
}

pub fn denormalize<E: Element>(image: &Tensor<E>, params: &NormParams) -> Tensor<E> {
    let scale = (params.max - params.min) / (params.hi - params.lo);
    image.map(|v| E::from_f64_lossy(params.min + (v.as_f64() - params.lo) * scale))
}

/// Decimates to the intermediate dimensions by bilinear sampling.
pub fn downsample<E: Element>(image: &Tensor<E>, spec: &DegradeSpec) -> Result<Tensor<E>> {
    let (h, w) = image.image_dims()?;
    let (iw, ih) = spec.intermediate_for((w, h));
    if iw > w || ih > h {
        return Err(Error::dim(format!(
            "downsample: intermediate {iw}x{ih} is larger than the {w}x{h} input"
        )));
    }
    let plane = Plane::from_image(image)?;
    Ok(plane
        .resample_window((0.0, 0.0), (w as f64, h as f64), (iw, ih))
        .into_image())
}

/// A ground-truth / degraded-input / residual-target triple.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample<E: Element> {
    pub hf: Tensor<E>,
    pub lf_bilinear: Tensor<E>,
    pub residual_target: Tensor<E>,
    pub norm: NormParams,
    /// `(width, height)` of the decimated intermediate image.
    pub intermediate_dims: (usize, usize),
}

impl<E: Element> PairedSample<E> {
    /// Builds the triple from a high-field image and its degraded version.
    ///
    /// The stored `hf` is recomputed as `lf + (hf − lf)` so the sum of the
    /// stored input and residual reproduces it bit-exactly; this moves `hf`
    /// by at most one rounding step.
    pub fn assemble(
        hf: &Tensor<E>,
        lf_bilinear: Tensor<E>,
        norm: NormParams,
        intermediate_dims: (usize, usize),
    ) -> Result<Self> {
        let residual_target = hf.zip_map(&lf_bilinear, |h, l| h - l)?;
        let hf = lf_bilinear.zip_map(&residual_target, |l, r| l + r)?;
        Ok(Self {
            hf,
            lf_bilinear,
            residual_target,
            norm,
            intermediate_dims,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.hf.image_dims().expect("paired sample holds image tensors")
    }
}

/// RNG stream for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// normalize → augment → downsample → bilinear resize → residual.
///
/// A constant image cannot be min/max normalized; it is mapped to the
/// midpoint of the normalization range instead, so its residual is zero.
pub fn make_pair<E: Element, R: rand::Rng + ?Sized>(
    hf_raw: &Tensor<E>,
    spec: &DegradeSpec,
    rng: &mut R,
) -> Result<PairedSample<E>> {
    spec.validate()?;
    let (h, w) = hf_raw.image_dims()?;
    if (w, h) != spec.output_dims {
        return Err(Error::dim(format!(
            "make_pair: input is {w}x{h} but the spec expects {}x{}",
            spec.output_dims.0, spec.output_dims.1
        )));
    }
    let (lo, hi) = spec.normalize_range;
    let (hf, norm) = match normalize(hf_raw, lo, hi) {
        Ok(v) => v,
        Err(Error::DegenerateRange(c)) => {
            let mid = 0.5 * (lo + hi);
            (
                hf_raw.map(|_| E::from_f64_lossy(mid)),
                NormParams { min: c, max: c, lo, hi },
            )
        }
        Err(e) => return Err(e),
    };
    let hf = match &spec.augment {
        Some(a) => augment(&hf, a, rng)?,
        None => hf,
    };
    let small = downsample(&hf, spec)?;
    let intermediate = small.image_dims().map(|(ih, iw)| (iw, ih))?;
    let lf = bilinear_resize(&small, spec.output_dims)?;
    PairedSample::assemble(&hf, lf, norm, intermediate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_rule_reproduces_reference_dims() {
        assert_eq!(decimated_len(256, 1.5), 172);
        assert_eq!(decimated_len(256, 5.0), 52);
        assert_eq!(decimated_len(64, 2.0), 32);
        assert_eq!(decimated_len(3, 5.0), 2);
    }

    #[test]
    fn spec_validation() {
        let mut s = DegradeSpec::default();
        assert!(s.validate().is_ok());
        s.factor_vertical = 0.5;
        assert!(s.validate().is_err());
        let s = DegradeSpec {
            normalize_range: (0.5, -0.5),
            ..DegradeSpec::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn constant_image_is_a_degenerate_range() {
        let img = Tensor::<f32>::full(&[1, 1, 4, 4], 3.0);
        assert!(matches!(normalize(&img, -0.5, 0.5), Err(Error::DegenerateRange(_))));
    }

    #[test]
    fn downsample_rejects_growth() {
        let spec = DegradeSpec {
            intermediate_dims: Some((40, 8)),
            output_dims: (32, 32),
            ..DegradeSpec::default()
        };
        let img = Tensor::<f32>::zeros(&[1, 1, 32, 32]);
        assert!(matches!(downsample(&img, &spec), Err(Error::Dimension(_))));
    }
}
