//! Bilinear resampling with half-pixel centres: destination pixel `d` maps
//! to source coordinate `(d + 0.5) · src/dst − 0.5`, clamped to the border.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// A borrowed single-channel plane in `f64`.
pub(crate) struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn from_image<E: Element>(img: &Tensor<E>) -> Result<Self> {
        let (h, w) = img.image_dims()?;
        Ok(Self {
            w,
            h,
            data: img.data().iter().map(|v| v.as_f64()).collect(),
        })
    }

    pub fn into_image<E: Element>(self) -> Tensor<E> {
        let data = self.data.into_iter().map(E::from_f64_lossy).collect();
        Tensor::image(self.h, self.w, data).expect("plane dims are non-zero")
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres on
    /// integers), clamping to the image border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |xx: usize, yy: usize| self.data[yy * self.w + xx];
        let top = lerp(at(x0, y0), at(x1, y0), fx);
        let bottom = lerp(at(x0, y1), at(x1, y1), fx);
        lerp(top, bottom, fy)
    }

    /// Resamples the axis-aligned source window starting at `(x0, y0)` with
    /// size `win_w × win_h` onto an `out_w × out_h` grid.
    pub fn resample_window(
        &self,
        (x0, y0): (f64, f64),
        (win_w, win_h): (f64, f64),
        (out_w, out_h): (usize, usize),
    ) -> Plane {
        let (sx, sy) = (win_w / out_w as f64, win_h / out_h as f64);
        let mut data = Vec::with_capacity(out_w * out_h);
        for oy in 0..out_h {
            let y = y0 + (oy as f64 + 0.5) * sy - 0.5;
            for ox in 0..out_w {
                let x = x0 + (ox as f64 + 0.5) * sx - 0.5;
                data.push(self.sample(x, y));
            }
        }
        Plane {
            w: out_w,
            h: out_h,
            data,
        }
    }
}

// a + t·(b − a) reproduces constants exactly.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resize of a `[1, 1, h, w]` image to `target = (width, height)`.
pub fn bilinear_resize<E: Element>(image: &Tensor<E>, target: (usize, usize)) -> Result<Tensor<E>> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(Error::dim(format!("bilinear_resize: target {tw}x{th} has a zero side")));
    }
    let plane = Plane::from_image(image)?;
    if plane.w < 2 || plane.h < 2 {
        return Err(Error::dim(format!(
            "bilinear_resize: source {}x{} must be at least 2x2",
            plane.w, plane.h
        )));
    }
    let (w, h) = (plane.w as f64, plane.h as f64);
    Ok(plane.resample_window((0.0, 0.0), (w, h), (tw, th)).into_image())
}
