//! Head-like synthetic phantoms: a bright elliptical "skull" ring around a
//! shaded interior holding a few nested ellipses of distinct intensity.

use rand::Rng;

use nusr_core::degrade::sample_rng;
use nusr_core::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Inclusive range for the number of inner ellipses.
    pub ellipses: (usize, usize),
    /// Intensity band of the inner ellipses.
    pub intensity: (f64, f64),
    /// Adds smooth low-frequency shading.
    pub texture: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            count: 16,
            size: 256,
            seed: 0,
            ellipses: (3, 6),
            intensity: (0.1, 0.85),
            texture: true,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.size < 8 {
            return Err(format!("phantom size must be >= 8, got {}", self.size));
        }
        if self.ellipses.0 > self.ellipses.1 {
            return Err(format!("ellipse range {:?} is empty", self.ellipses));
        }
        let (lo, hi) = self.intensity;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(format!("intensity band {:?} must lie within [0, 1]", self.intensity));
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn new(cx: f64, cy: f64, a: f64, b: f64, angle: f64) -> Self {
        let (sin, cos) = angle.sin_cos();
        Self { cx, cy, a, b, cos, sin }
    }

    /// Squared normalized radius; `< 1` inside.
    fn rho(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }
}

/// Phantom `index` of the set described by `spec`, as a `[1, 1, size, size]`
/// image with values in `[0, 1]`.
pub fn generate(spec: &PhantomSpec, index: usize) -> Tensor<f32> {
    let mut rng = sample_rng(spec.seed, index as u64);
    let n = spec.size as f64;
    // coordinates are in units of the image side, centred on 0
    let angle = rng.gen_range(-0.2..0.2);
    let head = Ellipse::new(
        rng.gen_range(-0.03..0.03),
        rng.gen_range(-0.03..0.03),
        rng.gen_range(0.38..0.46),
        rng.gen_range(0.40..0.47),
        angle,
    );
    let thickness = rng.gen_range(0.12..0.2);
    let brain = Ellipse::new(
        head.cx,
        head.cy,
        head.a * (1.0 - thickness),
        head.b * (1.0 - thickness),
        angle,
    );
    let skull_level = rng.gen_range(0.9..1.0);
    let brain_level = rng.gen_range(0.35..0.6);
    let shade = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(2.0..5.0));

    let k = rng.gen_range(spec.ellipses.0..=spec.ellipses.1);
    let inner: Vec<(Ellipse, f64)> = (0..k)
        .map(|_| {
            let r: f64 = rng.gen_range(0.0..0.6);
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let e = Ellipse::new(
                brain.cx + r * brain.a * t.cos(),
                brain.cy + r * brain.b * t.sin(),
                rng.gen_range(0.03..0.15),
                rng.gen_range(0.03..0.15),
                rng.gen_range(0.0..std::f64::consts::PI),
            );
            (e, rng.gen_range(spec.intensity.0..=spec.intensity.1))
        })
        .collect();

    let mut data = Vec::with_capacity(spec.size * spec.size);
    for py in 0..spec.size {
        for px in 0..spec.size {
            let x = (px as f64 + 0.5) / n - 0.5;
            let y = (py as f64 + 0.5) / n - 0.5;
            let mut v = 0.0;
            if head.rho(x, y) < 1.0 {
                v = skull_level;
                if brain.rho(x, y) < 1.0 {
                    v = brain_level;
                    if spec.texture {
                        v += 0.08 * (shade.2 * (shade.0 * x + shade.1 * y)).sin();
                    }
                    for (e, level) in &inner {
                        if e.rho(x, y) < 1.0 {
                            v = *level;
                        }
                    }
                }
            }
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::image(spec.size, spec.size, data).expect("phantom size is non-zero")
}
