//! Test-only oracles, independent of the engine's kernels: central finite
//! differences, direct loop implementations of the convolutions and
//! definition-level PSNR/SSIM.
#![allow(dead_code)]

use nusr_core::{Graph, Tensor, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor so entries whose true gradient is
/// ~0 are compared at the finite-difference noise level.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Builds `loss = build(graph, leaves)` with every input as a
/// grad-requiring leaf, runs backward and compares each gradient entry with
/// a central difference of step `h`. Returns the worst relative error.
pub fn max_grad_error<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[TensorId]) -> TensorId,
{
    let eval = |inputs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<_> = inputs.iter().map(|t| g.constant(t)).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).item().unwrap()
    };
    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|t| g.param(t)).collect();
    let loss = build(&mut g, &ids);
    g.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (k, id) in ids.iter().enumerate() {
        let analytic = g.grad(*id).expect("every input should receive a gradient").to_vec();
        for j in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Random values whose magnitudes are at least `gap` away from zero.
pub fn random_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng, gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Quadruple-loop cross-correlation over NCHW data.
pub fn direct_conv2d(
    x: &[f64],
    [n, cin, h, w]: [usize; 4],
    wt: &[f64],
    [cout, _, kh, kw]: [usize; 4],
    bias: &[f64],
    pad: usize,
    stride: usize,
) -> (Vec<f64>, [usize; 4]) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * cin + ci) * h + iy as usize) * w + ix as usize]
                                    * wt[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [n, cout, oh, ow])
}

/// Scatter-add transposed convolution with a 2×2 kernel and stride 2.
pub fn direct_conv_transpose2x2(
    x: &[f64],
    [n, cin, h, w]: [usize; 4],
    wt: &[f64],
    cout: usize,
    bias: &[f64],
) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            for v in &mut out[(b * cout + co) * oh * ow..(b * cout + co + 1) * oh * ow] {
                *v = bias[co];
            }
        }
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x[((b * cin + ci) * h + iy) * w + ix];
                    for co in 0..cout {
                        for ky in 0..2 {
                            for kx in 0..2 {
                                out[((b * cout + co) * oh + 2 * iy + ky) * ow + 2 * ix + kx] +=
                                    v * wt[((ci * cout + co) * 2 + ky) * 2 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Bilinear value at destination pixel `(dx, dy)` when resizing a
/// `sw × sh` plane to `dw × dh`, written in explicit four-weight form.
pub fn bilinear_oracle(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize, dx: usize, dy: usize) -> f64 {
    let map = |d: usize, s: usize, dn: usize| -> (usize, usize, f64, f64) {
        let c = ((d as f64 + 0.5) * s as f64 / dn as f64 - 0.5).max(0.0).min((s - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = if i0 + 1 < s { i0 + 1 } else { s - 1 };
        let t = c - i0 as f64;
        (i0, i1, 1.0 - t, t)
    };
    let (x0, x1, wx0, wx1) = map(dx, sw, dw);
    let (y0, y1, wy0, wy1) = map(dy, sh, dh);
    wy0 * (wx0 * src[y0 * sw + x0] + wx1 * src[y0 * sw + x1])
        + wy1 * (wx0 * src[y1 * sw + x0] + wx1 * src[y1 * sw + x1])
}

/// Simple structured test image: a bright ring around a mid-grey disc with a
/// dark inner ellipse, placement jittered by `seed`.
pub fn ellipse_phantom(size: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let c = size as f64 / 2.0;
    let (ox, oy) = (r.gen_range(-0.05..0.05) * c, r.gen_range(-0.05..0.05) * c);
    let (ax, ay) = (r.gen_range(0.7..0.9) * c, r.gen_range(0.75..0.95) * c);
    let (bx, by) = (r.gen_range(0.15..0.35) * c, r.gen_range(0.1..0.3) * c);
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5 - c - ox, y as f64 + 0.5 - c - oy);
            let outer = (px / ax).powi(2) + (py / ay).powi(2);
            let inner = (px / bx).powi(2) + (py / by).powi(2);
            let v = if inner <= 1.0 {
                0.2
            } else if outer <= 0.8 {
                0.55 + 0.1 * (px / c)
            } else if outer <= 1.0 {
                0.95
            } else {
                0.0
            };
            data.push(v);
        }
    }
    Tensor::image(size, size, data).unwrap()
}

pub fn psnr_reference(a: &[f64], b: &[f64], peak: f64) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    10.0 * (peak * peak / mse).log10()
}

/// SSIM straight from the definition: a 2-D Gaussian window evaluated at
/// every fully-contained position, with centred variances.
pub fn ssim_reference(a: &[f64], b: &[f64], h: usize, w: usize, l: f64) -> f64 {
    let (win, sigma) = (11usize, 1.5f64);
    let r = (win / 2) as f64;
    let mut kernel = vec![0.0; win * win];
    for y in 0..win {
        for x in 0..win {
            let d2 = (x as f64 - r).powi(2) + (y as f64 - r).powi(2);
            kernel[y * win + x] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=h - win {
        for ox in 0..=w - win {
            let at = |img: &[f64], x: usize, y: usize| img[(oy + y) * w + ox + x];
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in 0..win {
                for x in 0..win {
                    let k = kernel[y * win + x];
                    ma += k * at(a, x, y);
                    mb += k * at(b, x, y);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..win {
                for x in 0..win {
                    let k = kernel[y * win + x];
                    let (da, db) = (at(a, x, y) - ma, at(b, x, y) - mb);
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}
