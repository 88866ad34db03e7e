//! Slice-level kernels behind the graph operations. Layouts are NCHW,
//! row-major; batch items are processed one after another so results do
//! not depend on scheduling.

use super::Element;

/// Strides of a matrix view, in elements.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides {
    pub row: usize,
    pub col: usize,
}

pub(crate) const fn rm(cols: usize) -> Strides {
    Strides { row: cols, col: 1 }
}

pub(crate) const fn transposed(cols: usize) -> Strides {
    Strides { row: 1, col: cols }
}

fn max_index(rows: usize, cols: usize, s: Strides) -> usize {
    (rows - 1) * s.row + (cols - 1) * s.col
}

/// `c = a · b + beta · c` where `a` is m×k, `b` is k×n and `c` is m×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<E: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[E],
    sa: Strides,
    b: &[E],
    sb: Strides,
    beta: E,
    c: &mut [E],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = i * sc.row + j * sc.col;
                c[idx] = c[idx] * beta;
            }
        }
        return;
    }
    assert!(max_index(m, k, sa) < a.len(), "gemm: lhs view out of bounds");
    assert!(max_index(k, n, sb) < b.len(), "gemm: rhs view out of bounds");
    assert!(max_index(m, n, sc) < c.len(), "gemm: output view out of bounds");
    // SAFETY: every address reachable through the strides was bounds-checked
    // above, and `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        E::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            sa.row as isize,
            sa.col as isize,
            b.as_ptr(),
            sb.row as isize,
            sb.col as isize,
            beta,
            c.as_mut_ptr(),
            sc.row as isize,
            sc.col as isize,
        );
    }
}

/// Geometry of a 2-d convolution over one batch item.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0 && self.stride == 1
    }
}

/// Unfolds one batch item into a `[cin·kh·kw, oh·ow]` patch matrix.
pub(crate) fn im2col<E: Element>(input: &[E], g: &ConvGeom, col: &mut [E]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let src = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(E::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            E::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back into an input
/// gradient.
pub(crate) fn col2im<E: Element>(col: &[E], g: &ConvGeom, dx: &mut [E]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<E: Element>(
    input: &[E],
    weight: &[E],
    bias: &[E],
    batch: usize,
    g: &ConvGeom,
) -> Vec<E> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let mut out = vec![E::zero(); batch * g.cout * plane];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![E::zero(); k * plane]
    };
    for n in 0..batch {
        let x = &input[n * g.in_len()..(n + 1) * g.in_len()];
        let y = &mut out[n * g.cout * plane..(n + 1) * g.cout * plane];
        for (co, chunk) in y.chunks_mut(plane).enumerate() {
            chunk.fill(bias[co]);
        }
        let patches: &[E] = if g.is_pointwise() {
            x
        } else {
            im2col(x, g, &mut col);
            &col
        };
        gemm(g.cout, k, plane, weight, rm(k), patches, rm(plane), E::one(), y, rm(plane));
    }
    out
}

pub(crate) struct ConvGrads<E> {
    pub dx: Option<Vec<E>>,
    pub dw: Option<Vec<E>>,
    pub db: Option<Vec<E>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<E: Element>(
    input: &[E],
    weight: &[E],
    gout: &[E],
    batch: usize,
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<E> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let mut dx = need_dx.then(|| vec![E::zero(); batch * g.in_len()]);
    let mut dw = need_dw.then(|| vec![E::zero(); g.cout * k]);
    let mut db = need_db.then(|| vec![E::zero(); g.cout]);
    let mut col = vec![E::zero(); if need_dw || need_dx { k * plane } else { 0 }];
    for n in 0..batch {
        let x = &input[n * g.in_len()..(n + 1) * g.in_len()];
        let gy = &gout[n * g.cout * plane..(n + 1) * g.cout * plane];
        if let Some(db) = db.as_mut() {
            for (co, chunk) in gy.chunks(plane).enumerate() {
                db[co] = chunk.iter().fold(db[co], |acc, &v| acc + v);
            }
        }
        if let Some(dw) = dw.as_mut() {
            let patches: &[E] = if g.is_pointwise() {
                x
            } else {
                im2col(x, g, &mut col);
                &col
            };
            // dW[cout, k] += dY[cout, P] · colᵀ[P, k]
            gemm(g.cout, plane, k, gy, rm(plane), patches, transposed(plane), E::one(), dw, rm(k));
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * g.in_len()..(n + 1) * g.in_len()];
            if g.is_pointwise() {
                // dX[k, P] = Wᵀ[k, cout] · dY[cout, P]
                gemm(k, g.cout, plane, weight, transposed(k), gy, rm(plane), E::one(), dxn, rm(plane));
            } else {
                gemm(k, g.cout, plane, weight, transposed(k), gy, rm(plane), E::zero(), &mut col, rm(plane));
                col2im(&col, g, dxn);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Geometry of the 2×2, stride-2 transposed convolution over one batch item.
#[derive(Clone, Copy, Debug)]
pub(crate) struct UpGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

impl UpGeom {
    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.cout * 4 * self.h * self.w
    }
}

pub(crate) fn conv_transpose2x2_forward<E: Element>(
    input: &[E],
    weight: &[E],
    bias: &[E],
    batch: usize,
    g: &UpGeom,
) -> Vec<E> {
    let plane = g.h * g.w;
    let rows = g.cout * 4;
    let (ow, oplane) = (2 * g.w, 4 * plane);
    let mut out = vec![E::zero(); batch * g.out_len()];
    let mut cols = vec![E::zero(); rows * plane];
    for n in 0..batch {
        let x = &input[n * g.in_len()..(n + 1) * g.in_len()];
        // cols[cout·4, P] = Wᵀ[cout·4, cin] · X[cin, P]
        gemm(rows, g.cin, plane, weight, transposed(rows), x, rm(plane), E::zero(), &mut cols, rm(plane));
        let y = &mut out[n * g.out_len()..(n + 1) * g.out_len()];
        for co in 0..g.cout {
            let dst = &mut y[co * oplane..(co + 1) * oplane];
            for t in 0..4 {
                let (dy, dx) = (t / 2, t % 2);
                let src = &cols[(co * 4 + t) * plane..(co * 4 + t + 1) * plane];
                for iy in 0..g.h {
                    for ix in 0..g.w {
                        dst[(2 * iy + dy) * ow + 2 * ix + dx] = src[iy * g.w + ix] + bias[co];
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2x2_backward<E: Element>(
    input: &[E],
    weight: &[E],
    gout: &[E],
    batch: usize,
    g: &UpGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<E> {
    let plane = g.h * g.w;
    let rows = g.cout * 4;
    let (ow, oplane) = (2 * g.w, 4 * plane);
    let mut dx = need_dx.then(|| vec![E::zero(); batch * g.in_len()]);
    let mut dw = need_dw.then(|| vec![E::zero(); g.cin * rows]);
    let mut db = need_db.then(|| vec![E::zero(); g.cout]);
    let mut dcols = vec![E::zero(); rows * plane];
    for n in 0..batch {
        let gy = &gout[n * g.out_len()..(n + 1) * g.out_len()];
        if let Some(db) = db.as_mut() {
            for (co, chunk) in gy.chunks(oplane).enumerate() {
                db[co] = chunk.iter().fold(db[co], |acc, &v| acc + v);
            }
        }
        if !(need_dx || need_dw) {
            continue;
        }
        for co in 0..g.cout {
            let src = &gy[co * oplane..(co + 1) * oplane];
            for t in 0..4 {
                let (dy, dxo) = (t / 2, t % 2);
                let dst = &mut dcols[(co * 4 + t) * plane..(co * 4 + t + 1) * plane];
                for iy in 0..g.h {
                    for ix in 0..g.w {
                        dst[iy * g.w + ix] = src[(2 * iy + dy) * ow + 2 * ix + dxo];
                    }
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * g.in_len()..(n + 1) * g.in_len()];
            // dX[cin, P] = W[cin, cout·4] · dcols[cout·4, P]
            gemm(g.cin, rows, plane, weight, rm(rows), &dcols, rm(plane), E::zero(), dxn, rm(plane));
        }
        if let Some(dw) = dw.as_mut() {
            let x = &input[n * g.in_len()..(n + 1) * g.in_len()];
            // dW[cin, cout·4] += X[cin, P] · dcolsᵀ[P, cout·4]
            gemm(g.cin, plane, rows, x, rm(plane), &dcols, transposed(plane), E::one(), dw, rm(rows));
        }
    }
    ConvGrads { dx, dw, db }
}

/// 2×2 stride-2 max pooling over `planes` independent `h×w` planes.
/// Returns the pooled values and, per output, the flat input index of the
/// first maximal element in row-major window order.
pub(crate) fn maxpool2x2_forward<E: Element>(
    input: &[E],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<E>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}
