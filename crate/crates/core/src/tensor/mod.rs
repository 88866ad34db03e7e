//! Dense row-major tensors and a tape-based reverse-mode autodiff engine.
//!
//! Values live in a [`Graph`]; every differentiable operation appends a
//! record to the graph's tape and [`Graph::backward`] replays the tape in
//! reverse. The element type is a type parameter: `f32` for training,
//! `f64` for gradient checks.
//!
//! Convolutions are cross-correlations (the kernel is not flipped).

mod graph;
pub(crate) mod kernels;

pub use graph::{Graph, OpKind, TensorId};

use std::fmt::{self, Debug, Display, Write as _};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar element type of a [`Tensor`].
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Short name used in diagnostics ("f32" / "f64").
    const NAME: &'static str;

    /// `c = a · b + beta · c` for strided row/column-major views.
    ///
    /// Shapes: `a` is m×k, `b` is k×n, `c` is m×n; strides are in elements.
    /// The caller guarantees all indices addressed by the strides are in
    /// bounds; [`kernels::gemm`] checks that before calling this.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every float element type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float element converts to f64")
    }
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// An n-dimensional row-major array with an optional gradient buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    grad: Option<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("shape {shape:?} has a zero dimension")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let len = shape.iter().product();
        Self::from_vec(shape, vec![value; len]).expect("full: non-zero dimensions required")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn scalar(value: E) -> Self {
        Self::from_vec(&[1], vec![value]).unwrap()
    }

    /// Builds a tensor from `f64` values, rounding to the element type.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| E::from_f64_lossy(v)).collect())
    }

    /// A single-channel image tensor `[1, 1, height, width]`.
    pub fn image(height: usize, width: usize, data: Vec<E>) -> Result<Self> {
        Self::from_vec(&[1, 1, height, width], data)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<E>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.data.len() {
                return Err(Error::dim(format!(
                    "gradient of length {} for tensor of shape {:?}",
                    g.len(),
                    self.shape
                )));
            }
        }
        self.grad = grad;
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<E>> {
        self.grad.take()
    }

    pub(crate) fn grad_mut_or_zero(&mut self) -> &mut Vec<E> {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![E::zero(); len])
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(Error::usage(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Interprets the shape as `[N, C, H, W]`.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::dim(format!(
                "expected a 4-d [N,C,H,W] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Height and width of a `[1, 1, H, W]` image tensor.
    pub fn image_dims(&self) -> Result<(usize, usize)> {
        match self.dims4()? {
            [1, 1, h, w] => Ok((h, w)),
            s => Err(Error::dim(format!(
                "expected a single-channel image [1,1,H,W], got {s:?}"
            ))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Elementwise combination of two equally shaped tensors (no autodiff).
    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            requires_grad: false,
            grad: None,
        })
    }

    /// Converts to another element type (values round to the nearest
    /// representable number).
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| F::from_f64_lossy(v.as_f64()))
                .collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn min_max(&self) -> (E, E) {
        self.data.iter().fold(
            (E::infinity(), E::neg_infinity()),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    /// Text dump: one block per `(n, c)` plane, one line per row,
    /// values in `{:.6}` separated by spaces.
    pub fn to_text_grid(&self) -> String {
        let mut out = String::new();
        let (planes, h, w) = match *self.shape.as_slice() {
            [n, c, h, w] => (n * c, h, w),
            [h, w] => (1, h, w),
            _ => (1, 1, self.data.len()),
        };
        for p in 0..planes {
            if planes > 1 {
                let _ = writeln!(out, "# plane {p}");
            }
            for r in 0..h {
                let row = &self.data[(p * h + r) * w..(p * h + r + 1) * w];
                let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }
}

impl<E: Element> Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &E::NAME)
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}
