use super::kernels::{self, ConvGeom, UpGeom};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor stored in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kind of a recorded operation, for introspection of what a forward pass
/// executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    ConvTranspose2d,
    MaxPool2d,
    Relu,
    ConcatChannels,
    Add,
    Sub,
    MulScalar,
    AddScalar,
    Square,
    Sum,
    Mean,
    Log,
}

enum Op<E> {
    Conv2d {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        geom: ConvGeom,
        batch: usize,
    },
    ConvTranspose2d {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        geom: UpGeom,
        batch: usize,
    },
    MaxPool2d {
        input: TensorId,
        argmax: Vec<usize>,
    },
    Relu(TensorId),
    Concat(Vec<TensorId>),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    MulScalar(TensorId, E),
    AddScalar(TensorId),
    Square(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    Log(TensorId),
}

impl<E> Op<E> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::Relu(_) => OpKind::Relu,
            Op::Concat(_) => OpKind::ConcatChannels,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::MulScalar(..) => OpKind::MulScalar,
            Op::AddScalar(_) => OpKind::AddScalar,
            Op::Square(_) => OpKind::Square,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Log(_) => OpKind::Log,
        }
    }

    fn inputs(&self) -> Vec<TensorId> {
        match self {
            Op::Conv2d { input, weight, bias, .. }
            | Op::ConvTranspose2d { input, weight, bias, .. } => vec![*input, *weight, *bias],
            Op::MaxPool2d { input, .. } => vec![*input],
            Op::Concat(ids) => ids.clone(),
            Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
            Op::Relu(x)
            | Op::MulScalar(x, _)
            | Op::AddScalar(x)
            | Op::Square(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Log(x) => vec![*x],
        }
    }
}

struct Record<E> {
    op: Op<E>,
    output: TensorId,
}

/// Arena of tensors plus the tape of operations that produced them.
///
/// Tensors are appended in execution order, so the tape is topologically
/// sorted by construction.
pub struct Graph<E: Element> {
    tensors: Vec<Tensor<E>>,
    is_leaf: Vec<bool>,
    tape: Vec<Record<E>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            is_leaf: Vec::new(),
            tape: Vec::new(),
        }
    }

    /// Adds an input tensor, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor<E>) -> TensorId {
        self.tensors.push(tensor);
        self.is_leaf.push(true);
        TensorId(self.tensors.len() - 1)
    }

    /// Adds a trainable tensor (`requires_grad = true`).
    pub fn param(&mut self, tensor: &Tensor<E>) -> TensorId {
        let mut t = tensor.clone();
        t.requires_grad = true;
        t.grad = None;
        self.leaf(t)
    }

    /// Adds a tensor that never receives a gradient.
    pub fn constant(&mut self, tensor: &Tensor<E>) -> TensorId {
        let mut t = tensor.clone();
        t.requires_grad = false;
        t.grad = None;
        self.leaf(t)
    }

    pub fn value(&self, id: TensorId) -> &Tensor<E> {
        &self.tensors[id.0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[E]> {
        self.tensors[id.0].grad()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.tensors[id.0].shape()
    }

    /// Moves a tensor out of the graph, leaving an empty placeholder.
    pub fn take(&mut self, id: TensorId) -> Tensor<E> {
        let t = &mut self.tensors[id.0];
        std::mem::replace(
            t,
            Tensor {
                shape: Vec::new(),
                data: Vec::new(),
                requires_grad: false,
                grad: None,
            },
        )
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Operation kinds in execution order.
    pub fn executed_ops(&self) -> Vec<OpKind> {
        self.tape.iter().map(|r| r.op.kind()).collect()
    }

    fn check(&self, id: TensorId) -> Result<&Tensor<E>> {
        self.tensors
            .get(id.0)
            .filter(|t| !t.shape.is_empty())
            .ok_or_else(|| Error::usage(format!("tensor {} is not live in this graph", id.0)))
    }

    fn record(&mut self, op: Op<E>, shape: Vec<usize>, data: Vec<E>) -> TensorId {
        let inputs = op.inputs();
        let requires_grad = inputs.iter().any(|i| self.tensors[i.0].requires_grad);
        if cfg!(debug_assertions) && inputs.iter().all(|i| self.tensors[i.0].all_finite()) {
            debug_assert!(
                data.iter().all(|v| v.is_finite()),
                "{:?} produced a non-finite value from finite inputs",
                op.kind()
            );
        }
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
        });
        self.is_leaf.push(false);
        let output = TensorId(self.tensors.len() - 1);
        self.tape.push(Record { op, output });
        output
    }

    /// 2-d cross-correlation. `input` is `[N, Cin, H, W]`, `weight` is
    /// `[Cout, Cin, kH, kW]` with odd kernel sides, `bias` is `[Cout]`.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        padding: usize,
        stride: usize,
    ) -> Result<TensorId> {
        let [n, cin, h, w] = self.check(input)?.dims4()?;
        let [cout, wcin, kh, kw] = self.check(weight)?.dims4()?;
        let bshape = self.check(bias)?.shape();
        if wcin != cin {
            return Err(Error::dim(format!(
                "conv2d: input has {cin} channels but weight expects {wcin}"
            )));
        }
        if bshape != [cout] {
            return Err(Error::dim(format!(
                "conv2d: bias shape {bshape:?} does not match {cout} output channels"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim(format!("conv2d: kernel {kh}x{kw} must have odd sides")));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d: stride must be at least 1"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::dim(format!(
                "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let geom = ConvGeom {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            pad: padding,
            stride,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            &self.tensors[input.0].data,
            &self.tensors[weight.0].data,
            &self.tensors[bias.0].data,
            n,
            &geom,
        );
        Ok(self.record(
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                batch: n,
            },
            vec![n, cout, geom.oh, geom.ow],
            out,
        ))
    }

    /// 2×2, stride-2 transposed convolution; `weight` is `[Cin, Cout, 2, 2]`.
    /// Output spatial dimensions are exactly doubled.
    pub fn conv_transpose2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
    ) -> Result<TensorId> {
        let [n, cin, h, w] = self.check(input)?.dims4()?;
        let [wcin, cout, kh, kw] = self.check(weight)?.dims4()?;
        let bshape = self.check(bias)?.shape();
        if wcin != cin {
            return Err(Error::dim(format!(
                "conv_transpose2d: input has {cin} channels but weight expects {wcin}"
            )));
        }
        if (kh, kw) != (2, 2) {
            return Err(Error::dim(format!(
                "conv_transpose2d: only 2x2 kernels with stride 2 are supported, got {kh}x{kw}"
            )));
        }
        if bshape != [cout] {
            return Err(Error::dim(format!(
                "conv_transpose2d: bias shape {bshape:?} does not match {cout} output channels"
            )));
        }
        let geom = UpGeom { cin, cout, h, w };
        let out = kernels::conv_transpose2x2_forward(
            &self.tensors[input.0].data,
            &self.tensors[weight.0].data,
            &self.tensors[bias.0].data,
            n,
            &geom,
        );
        Ok(self.record(
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
                batch: n,
            },
            vec![n, cout, 2 * h, 2 * w],
            out,
        ))
    }

    /// 2×2 max pooling with stride 2. Ties resolve to the first element of
    /// the window in row-major order.
    pub fn maxpool2d(&mut self, input: TensorId) -> Result<TensorId> {
        let [n, c, h, w] = self.check(input)?.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!(
                "maxpool2d: spatial dims {h}x{w} must both be even"
            )));
        }
        let (out, argmax) = kernels::maxpool2x2_forward(&self.tensors[input.0].data, n * c, h, w);
        Ok(self.record(Op::MaxPool2d { input, argmax }, vec![n, c, h / 2, w / 2], out))
    }

    pub fn relu(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.check(input)?;
        let shape = x.shape.clone();
        let out = x.data.iter().map(|&v| v.max(E::zero())).collect();
        Ok(self.record(Op::Relu(input), shape, out))
    }

    /// Stacks `[N, Ci, H, W]` tensors along the channel axis in argument
    /// order.
    pub fn concat_channels(&mut self, inputs: &[TensorId]) -> Result<TensorId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::dim("concat_channels: no inputs"))?;
        let [n, _, h, w] = self.check(first)?.dims4()?;
        let mut total_c = 0;
        for &id in inputs {
            let [ni, ci, hi, wi] = self.check(id)?.dims4()?;
            if (ni, hi, wi) != (n, h, w) {
                return Err(Error::dim(format!(
                    "concat_channels: [{ni},{ci},{hi},{wi}] does not match batch/spatial dims [{n},_,{h},{w}]"
                )));
            }
            total_c += ci;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &id in inputs {
                let t = &self.tensors[id.0];
                let ci = t.shape[1];
                out.extend_from_slice(&t.data[b * ci * plane..(b + 1) * ci * plane]);
            }
        }
        Ok(self.record(Op::Concat(inputs.to_vec()), vec![n, total_c, h, w], out))
    }

    fn binary(&mut self, a: TensorId, b: TensorId, name: &str) -> Result<(Vec<usize>, &[E], &[E])> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape != tb.shape {
            return Err(Error::dim(format!(
                "{name}: shape mismatch {:?} vs {:?}",
                ta.shape, tb.shape
            )));
        }
        Ok((ta.shape.clone(), &ta.data, &tb.data))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (shape, x, y) = self.binary(a, b, "add")?;
        let out = x.iter().zip(y).map(|(&p, &q)| p + q).collect();
        Ok(self.record(Op::Add(a, b), shape, out))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (shape, x, y) = self.binary(a, b, "sub")?;
        let out = x.iter().zip(y).map(|(&p, &q)| p - q).collect();
        Ok(self.record(Op::Sub(a, b), shape, out))
    }

    pub fn mul_scalar(&mut self, input: TensorId, factor: E) -> Result<TensorId> {
        let x = self.check(input)?;
        let shape = x.shape.clone();
        let out = x.data.iter().map(|&v| v * factor).collect();
        Ok(self.record(Op::MulScalar(input, factor), shape, out))
    }

    pub fn add_scalar(&mut self, input: TensorId, value: E) -> Result<TensorId> {
        let x = self.check(input)?;
        let shape = x.shape.clone();
        let out = x.data.iter().map(|&v| v + value).collect();
        Ok(self.record(Op::AddScalar(input), shape, out))
    }

    pub fn square(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.check(input)?;
        let shape = x.shape.clone();
        let out = x.data.iter().map(|&v| v * v).collect();
        Ok(self.record(Op::Square(input), shape, out))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.check(input)?;
        let total = x.data.iter().fold(E::zero(), |acc, &v| acc + v);
        Ok(self.record(Op::Sum(input), vec![1], vec![total]))
    }

    pub fn mean(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.check(input)?;
        let n = E::from_usize(x.data.len()).unwrap();
        let total = x.data.iter().fold(E::zero(), |acc, &v| acc + v);
        Ok(self.record(Op::Mean(input), vec![1], vec![total / n]))
    }

    /// Natural logarithm; every element must be strictly positive. NaN
    /// passes through.
    pub fn log(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.check(input)?;
        if let Some(bad) = x.data.iter().find(|&&v| v <= E::zero()) {
            return Err(Error::Domain(format!(
                "log of non-positive value {bad}; add an epsilon first"
            )));
        }
        let shape = x.shape.clone();
        let out = x.data.iter().map(|&v| v.ln()).collect();
        Ok(self.record(Op::Log(input), shape, out))
    }

    /// Reverse pass from a one-element `loss`.
    ///
    /// Leaf gradients accumulate across calls; gradients of intermediate
    /// tensors are recomputed from scratch.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let t = self.check(loss)?;
        if !t.is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                t.shape
            )));
        }
        if !t.requires_grad {
            return Err(Error::usage(
                "loss does not depend on any tensor that requires grad",
            ));
        }
        for (t, &leaf) in self.tensors.iter_mut().zip(&self.is_leaf) {
            if !leaf {
                t.grad = None;
            }
        }
        self.tensors[loss.0].grad = Some(vec![E::one()]);

        let Self { tensors, tape, .. } = self;
        for rec in tape.iter().rev() {
            if rec.output.0 > loss.0 || !tensors[rec.output.0].requires_grad {
                continue;
            }
            let Some(gout) = tensors[rec.output.0].grad.take() else {
                continue;
            };
            propagate(tensors, &rec.op, &gout);
            tensors[rec.output.0].grad = Some(gout);
        }
        Ok(())
    }
}

fn accumulate<E: Element>(t: &mut Tensor<E>, delta: impl IntoIterator<Item = E>) {
    if !t.requires_grad {
        return;
    }
    let g = t.grad_mut_or_zero();
    for (gi, d) in g.iter_mut().zip(delta) {
        *gi = *gi + d;
    }
}

fn propagate<E: Element>(tensors: &mut [Tensor<E>], op: &Op<E>, gout: &[E]) {
    match op {
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
            batch,
        } => {
            let grads = kernels::conv2d_backward(
                &tensors[input.0].data,
                &tensors[weight.0].data,
                gout,
                *batch,
                geom,
                tensors[input.0].requires_grad,
                tensors[weight.0].requires_grad,
                tensors[bias.0].requires_grad,
            );
            apply_conv_grads(tensors, *input, *weight, *bias, grads);
        }
        Op::ConvTranspose2d {
            input,
            weight,
            bias,
            geom,
            batch,
        } => {
            let grads = kernels::conv_transpose2x2_backward(
                &tensors[input.0].data,
                &tensors[weight.0].data,
                gout,
                *batch,
                geom,
                tensors[input.0].requires_grad,
                tensors[weight.0].requires_grad,
                tensors[bias.0].requires_grad,
            );
            apply_conv_grads(tensors, *input, *weight, *bias, grads);
        }
        Op::MaxPool2d { input, argmax } => {
            let t = &mut tensors[input.0];
            if t.requires_grad {
                let g = t.grad_mut_or_zero();
                for (&idx, &d) in argmax.iter().zip(gout) {
                    g[idx] = g[idx] + d;
                }
            }
        }
        Op::Relu(x) => {
            let t = &mut tensors[x.0];
            let delta: Vec<E> = t
                .data
                .iter()
                .zip(gout)
                .map(|(&v, &d)| if v > E::zero() { d } else { E::zero() })
                .collect();
            accumulate(t, delta);
        }
        Op::Concat(ids) => {
            let first = &tensors[ids[0].0].shape;
            let (n, plane) = (first[0], first[2] * first[3]);
            let total_c = gout.len() / (n * plane);
            let mut offset = 0;
            for id in ids {
                let ci = tensors[id.0].shape[1];
                let mut delta = Vec::with_capacity(n * ci * plane);
                for b in 0..n {
                    let start = (b * total_c + offset) * plane;
                    delta.extend_from_slice(&gout[start..start + ci * plane]);
                }
                accumulate(&mut tensors[id.0], delta);
                offset += ci;
            }
        }
        Op::Add(a, b) => {
            accumulate(&mut tensors[a.0], gout.iter().copied());
            accumulate(&mut tensors[b.0], gout.iter().copied());
        }
        Op::Sub(a, b) => {
            accumulate(&mut tensors[a.0], gout.iter().copied());
            accumulate(&mut tensors[b.0], gout.iter().map(|&d| -d));
        }
        Op::MulScalar(x, factor) => {
            accumulate(&mut tensors[x.0], gout.iter().map(|&d| d * *factor));
        }
        Op::AddScalar(x) => accumulate(&mut tensors[x.0], gout.iter().copied()),
        Op::Square(x) => {
            let t = &mut tensors[x.0];
            let two = E::one() + E::one();
            let delta: Vec<E> = t.data.iter().zip(gout).map(|(&v, &d)| two * v * d).collect();
            accumulate(t, delta);
        }
        Op::Sum(x) => {
            let t = &mut tensors[x.0];
            let n = t.data.len();
            accumulate(t, std::iter::repeat(gout[0]).take(n));
        }
        Op::Mean(x) => {
            let t = &mut tensors[x.0];
            let n = t.data.len();
            let d = gout[0] / E::from_usize(n).unwrap();
            accumulate(t, std::iter::repeat(d).take(n));
        }
        Op::Log(x) => {
            let t = &mut tensors[x.0];
            let delta: Vec<E> = t.data.iter().zip(gout).map(|(&v, &d)| d / v).collect();
            accumulate(t, delta);
        }
    }
}

fn apply_conv_grads<E: Element>(
    tensors: &mut [Tensor<E>],
    input: TensorId,
    weight: TensorId,
    bias: TensorId,
    grads: kernels::ConvGrads<E>,
) {
    if let Some(dx) = grads.dx {
        accumulate(&mut tensors[input.0], dx);
    }
    if let Some(dw) = grads.dw {
        accumulate(&mut tensors[weight.0], dw);
    }
    if let Some(db) = grads.db {
        accumulate(&mut tensors[bias.0], db);
    }
}
