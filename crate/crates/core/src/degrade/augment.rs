//! Random geometric and blur augmentation, applied to the high-field image
//! before degradation so both halves of a pair stay aligned.

use rand::Rng;

use super::resample::Plane;
use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Augmentation magnitudes. A zero magnitude (or a `(1, 1)` scale range)
/// makes the corresponding transform the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub rotation_max_deg: f64,
    /// Maximum translation as a fraction of the image side.
    pub translate_frac: f64,
    pub scale_range: (f64, f64),
    pub blur_sigma_max: f64,
    /// Maximum fraction of the image area removed by the crop.
    pub crop_frac: f64,
    pub rotate: bool,
    pub affine: bool,
    pub blur: bool,
    pub crop: bool,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rotation_max_deg: 10.0,
            translate_frac: 0.05,
            scale_range: (0.95, 1.05),
            blur_sigma_max: 1.0,
            crop_frac: 0.1,
            rotate: true,
            affine: true,
            blur: true,
            crop: true,
        }
    }
}

impl AugmentSpec {
    /// A spec whose every transform is the identity.
    pub fn identity() -> Self {
        Self {
            rotation_max_deg: 0.0,
            translate_frac: 0.0,
            scale_range: (1.0, 1.0),
            blur_sigma_max: 0.0,
            crop_frac: 0.0,
            ..Self::default()
        }
    }

    /// Copy with every magnitude forced into its valid range.
    pub fn clamped(&self) -> Self {
        let finite_abs = |v: f64| if v.is_finite() { v.abs() } else { 0.0 };
        let lo = if self.scale_range.0 > 0.0 { self.scale_range.0 } else { 1.0 };
        let hi = if self.scale_range.1.is_finite() { self.scale_range.1.max(lo) } else { lo };
        Self {
            rotation_max_deg: finite_abs(self.rotation_max_deg),
            translate_frac: finite_abs(self.translate_frac).min(0.5),
            scale_range: (lo, hi),
            blur_sigma_max: finite_abs(self.blur_sigma_max),
            crop_frac: finite_abs(self.crop_frac).min(0.99),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let mags = [
            ("rotation_max_deg", self.rotation_max_deg),
            ("translate_frac", self.translate_frac),
            ("blur_sigma_max", self.blur_sigma_max),
            ("crop_frac", self.crop_frac),
        ];
        for (name, v) in mags {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("augment {name} must be finite and >= 0, got {v}"));
            }
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(format!("augment scale_range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        if self.crop_frac >= 1.0 {
            return Err(format!("augment crop_frac {} must be below 1", self.crop_frac));
        }
        Ok(())
    }
}

/// Parameters drawn for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub angle_deg: f64,
    pub translate: (f64, f64),
    pub scale: f64,
    pub sigma: f64,
    /// Retained area fraction and the window origin as a fraction of the
    /// free margin.
    pub crop_area: f64,
    pub crop_origin: (f64, f64),
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

impl AugmentDraw {
    /// Draws every parameter in a fixed order, whether or not its transform
    /// is enabled, so toggling one transform does not reshuffle the others.
    pub fn sample<R: Rng + ?Sized>(spec: &AugmentSpec, rng: &mut R) -> Self {
        let spec = &spec.clamped();
        let angle = uniform(rng, -spec.rotation_max_deg, spec.rotation_max_deg);
        let tx = uniform(rng, -spec.translate_frac, spec.translate_frac);
        let ty = uniform(rng, -spec.translate_frac, spec.translate_frac);
        let scale = uniform(rng, spec.scale_range.0, spec.scale_range.1);
        let sigma = uniform(rng, 0.0, spec.blur_sigma_max);
        let area = uniform(rng, 1.0 - spec.crop_frac, 1.0);
        let ox = rng.gen::<f64>();
        let oy = rng.gen::<f64>();
        Self {
            angle_deg: if spec.rotate { angle } else { 0.0 },
            translate: if spec.affine { (tx, ty) } else { (0.0, 0.0) },
            scale: if spec.affine { scale } else { 1.0 },
            sigma: if spec.blur { sigma } else { 0.0 },
            crop_area: if spec.crop { area } else { 1.0 },
            crop_origin: (ox, oy),
        }
    }
}

/// Rotates by `angle_deg`, scales by `scale` about the image centre and
/// translates by `translate` (fractions of width/height). Border pixels are
/// extended.
pub fn warp_affine<E: Element>(
    image: &Tensor<E>,
    angle_deg: f64,
    scale: f64,
    translate: (f64, f64),
) -> Result<Tensor<E>> {
    let src = Plane::from_image(image)?;
    Ok(warp_plane(&src, angle_deg, scale, translate).into_image())
}

fn warp_plane(src: &Plane, angle_deg: f64, scale: f64, translate: (f64, f64)) -> Plane {
    let (cx, cy) = ((src.w - 1) as f64 / 2.0, (src.h - 1) as f64 / 2.0);
    let (tx, ty) = (translate.0 * src.w as f64, translate.1 * src.h as f64);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut data = Vec::with_capacity(src.data.len());
    for y in 0..src.h {
        for x in 0..src.w {
            // inverse map: undo translation, rotation, then scale
            let px = x as f64 - cx - tx;
            let py = y as f64 - cy - ty;
            let rx = (cos * px + sin * py) / scale;
            let ry = (-sin * px + cos * py) / scale;
            data.push(src.sample(rx + cx, ry + cy));
        }
    }
    Plane {
        w: src.w,
        h: src.h,
        data,
    }
}

/// Separable Gaussian blur with radius `ceil(3σ)` and replicated borders.
pub fn gaussian_blur<E: Element>(image: &Tensor<E>, sigma: f64) -> Result<Tensor<E>> {
    let src = Plane::from_image(image)?;
    Ok(blur_plane(src, sigma).into_image())
}

fn blur_plane(src: Plane, sigma: f64) -> Plane {
    if sigma <= 1e-6 {
        return src;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = (src.w as isize, src.h as isize);
    let mut tmp = vec![0.0; src.data.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| {
                    let xx = (x + k as isize - radius).clamp(0, w - 1);
                    wt * src.data[(y * w + xx) as usize]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; src.data.len()];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| {
                    let yy = (y + k as isize - radius).clamp(0, h - 1);
                    wt * tmp[(yy * w + x) as usize]
                })
                .sum();
        }
    }
    Plane {
        w: src.w,
        h: src.h,
        data: out,
    }
}

/// Applies one drawn augmentation: affine warp, blur, then crop-and-resize
/// back to the original dimensions. Identity stages are skipped.
pub fn apply_draw<E: Element>(image: &Tensor<E>, draw: &AugmentDraw) -> Result<Tensor<E>> {
    let mut plane = Plane::from_image(image)?;
    if draw.angle_deg != 0.0 || draw.scale != 1.0 || draw.translate != (0.0, 0.0) {
        plane = warp_plane(&plane, draw.angle_deg, draw.scale, draw.translate);
    }
    plane = blur_plane(plane, draw.sigma);
    if draw.crop_area < 1.0 {
        let side = draw.crop_area.sqrt();
        let (w, h) = (plane.w as f64, plane.h as f64);
        let (cw, ch) = (w * side, h * side);
        let origin = (draw.crop_origin.0 * (w - cw), draw.crop_origin.1 * (h - ch));
        let dims = (plane.w, plane.h);
        plane = plane.resample_window(origin, (cw, ch), dims);
    }
    Ok(plane.into_image())
}

/// Samples and applies an augmentation; deterministic for a given RNG state.
pub fn augment<E: Element, R: Rng + ?Sized>(
    hf: &Tensor<E>,
    spec: &AugmentSpec,
    rng: &mut R,
) -> Result<Tensor<E>> {
    let draw = AugmentDraw::sample(spec, rng);
    apply_draw(hf, &draw)
}
