//! Nested U-Net (U-Net++) predicting a single-channel residual image.
//!
//! Node `(i, j)` sits at encoder depth `i` and position `j` along the skip
//! pathway. Column `j = 0` is the encoder (max-pooled between levels, no
//! pooling after the bottleneck); every node with `j ≥ 1` runs a VGG block
//! over the concatenation of all earlier nodes on its row and the 2×2
//! transposed-convolution upsampling of `(i + 1, j − 1)`. With
//! `nested = false` only the encoder and the nodes `(i, L − 1 − i)` exist,
//! which is the plain U-Net. A 1×1 convolution without activation maps
//! `(0, L − 1)` to the output.
//!
//! VGG blocks are conv3×3 → ReLU → conv3×3 → ReLU with no normalization
//! layers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, TensorId};

pub type NodeIndex = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UNetPPConfig {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub nested: bool,
}

impl Default for UNetPPConfig {
    fn default() -> Self {
        Self {
            levels: 5,
            channels: vec![32, 64, 128, 256, 512],
            in_channels: 1,
            out_channels: 1,
            nested: true,
        }
    }
}

impl UNetPPConfig {
    pub fn new(channels: &[usize], nested: bool) -> Self {
        Self {
            levels: channels.len(),
            channels: channels.to_vec(),
            nested,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::usage(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.channels.len() != self.levels {
            return Err(Error::usage(format!(
                "{} channel widths given for {} levels",
                self.channels.len(),
                self.levels
            )));
        }
        if self.channels[0] == 0 || self.channels.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::usage(format!(
                "channel widths {:?} must be positive and strictly increasing",
                self.channels
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::usage("in/out channel counts must be positive"));
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let widths: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        vec![
            ("channels", widths.join(",")),
            ("nested", self.nested.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("out_channels", self.out_channels.to_string()),
        ]
    }

    /// Sets one field by name; `channels` also sets `levels`. Returns
    /// `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        let bad = || format!("invalid value {value:?} for {key}");
        match key {
            "channels" => {
                self.channels = value
                    .split(',')
                    .map(|c| c.trim().parse().map_err(|_| bad()))
                    .collect::<std::result::Result<_, _>>()?;
                self.levels = self.channels.len();
            }
            "nested" => self.nested = value.trim().parse().map_err(|_| bad())?,
            "in_channels" => self.in_channels = value.trim().parse().map_err(|_| bad())?,
            "out_channels" => self.out_channels = value.trim().parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Spatial dimensions must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn has_node(&self, (i, j): NodeIndex) -> bool {
        let last = self.levels - 1;
        if i + j > last {
            return false;
        }
        self.nested || j == 0 || i + j == last
    }

    /// Nodes in a valid evaluation order (column by column).
    pub fn nodes(&self) -> Vec<NodeIndex> {
        let mut out = Vec::new();
        for j in 0..self.levels {
            for i in 0..self.levels - j {
                if self.has_node((i, j)) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Nodes on row `i` that feed node `(i, j)` through skip connections.
    pub fn skip_sources(&self, (i, j): NodeIndex) -> Vec<NodeIndex> {
        (0..j).map(|k| (i, k)).filter(|&n| self.has_node(n)).collect()
    }

    /// Channel count entering the VGG block of node `(i, j)`.
    pub fn node_input_channels(&self, (i, j): NodeIndex) -> usize {
        match (i, j) {
            (0, 0) => self.in_channels,
            (i, 0) => self.channels[i - 1],
            (i, j) => self.skip_sources((i, j)).len() * self.channels[i] + self.channels[i],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> ConvParams<E> {
    fn uniform(weight_shape: [usize; 4], cout: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let n = weight_shape.iter().product();
        let data = (0..n)
            .map(|_| E::from_f64_lossy(rng.gen_range(-bound..bound)))
            .collect();
        Self {
            weight: Tensor::from_vec(&weight_shape, data).expect("non-zero weight shape"),
            bias: Tensor::zeros(&[cout]),
        }
    }

    fn zero(&mut self) {
        self.weight.data_mut().iter_mut().for_each(|v| *v = E::zero());
        self.bias.data_mut().iter_mut().for_each(|v| *v = E::zero());
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VggBlock<E: Element> {
    pub conv1: ConvParams<E>,
    pub conv2: ConvParams<E>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetPPModel<E: Element> {
    pub config: UNetPPConfig,
    pub blocks: BTreeMap<NodeIndex, VggBlock<E>>,
    /// Keyed by the node the upsampled map feeds.
    pub upsamplers: BTreeMap<NodeIndex, ConvParams<E>>,
    pub head: ConvParams<E>,
}

/// Graph handles for one conv layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct ConvIds {
    pub weight: TensorId,
    pub bias: TensorId,
}

/// A model's parameters inserted into a [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub blocks: BTreeMap<NodeIndex, (ConvIds, ConvIds)>,
    pub upsamplers: BTreeMap<NodeIndex, ConvIds>,
    pub head: ConvIds,
}

impl BoundParams {
    /// Handles in [`UNetPPModel::named_params`] order.
    pub fn ids(&self) -> Vec<TensorId> {
        let mut out = Vec::new();
        for (c1, c2) in self.blocks.values() {
            out.extend([c1.weight, c1.bias, c2.weight, c2.bias]);
        }
        for up in self.upsamplers.values() {
            out.extend([up.weight, up.bias]);
        }
        out.extend([self.head.weight, self.head.bias]);
        out
    }
}

/// Output of a forward pass recorded in a graph.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub output: TensorId,
    pub nodes: BTreeMap<NodeIndex, TensorId>,
    /// Node indices in the order they were evaluated.
    pub order: Vec<NodeIndex>,
}

impl<E: Element> UNetPPModel<E> {
    /// Fresh model: weights uniform in `±sqrt(1 / fan_in)`, biases zero.
    /// Fan-in is `cin · kh · kw` for convolutions and `cin` for the
    /// transposed convolutions (each output pixel sees one tap per input
    /// channel).
    pub fn new(config: UNetPPConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = BTreeMap::new();
        let mut upsamplers = BTreeMap::new();
        for node in config.nodes() {
            let cin = config.node_input_channels(node);
            let cout = config.channels[node.0];
            blocks.insert(node, VggBlock {
                conv1: ConvParams::uniform([cout, cin, 3, 3], cout, cin * 9, &mut rng),
                conv2: ConvParams::uniform([cout, cout, 3, 3], cout, cout * 9, &mut rng),
            });
        }
        for node in config.nodes().into_iter().filter(|n| n.1 >= 1) {
            let (from, to) = (config.channels[node.0 + 1], config.channels[node.0]);
            upsamplers.insert(node, ConvParams::uniform([from, to, 2, 2], to, from, &mut rng));
        }
        let c0 = config.channels[0];
        let head = ConvParams::uniform([config.out_channels, c0, 1, 1], config.out_channels, c0, &mut rng);
        Ok(Self {
            config,
            blocks,
            upsamplers,
            head,
        })
    }

    /// Zeroes the output head so the predicted residual is identically 0.
    pub fn zero_head(&mut self) {
        self.head.zero();
    }

    /// Zeroes every parameter.
    pub fn zero_all(&mut self) {
        for b in self.blocks.values_mut() {
            b.conv1.zero();
            b.conv2.zero();
        }
        for u in self.upsamplers.values_mut() {
            u.zero();
        }
        self.head.zero();
    }

    /// Parameters with stable names, in a fixed order shared by the
    /// optimizer and the checkpoint format.
    pub fn named_params(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = Vec::new();
        for (&(i, j), b) in &self.blocks {
            out.push((format!("block.{i}.{j}.conv1.weight"), &b.conv1.weight));
            out.push((format!("block.{i}.{j}.conv1.bias"), &b.conv1.bias));
            out.push((format!("block.{i}.{j}.conv2.weight"), &b.conv2.weight));
            out.push((format!("block.{i}.{j}.conv2.bias"), &b.conv2.bias));
        }
        for (&(i, j), u) in &self.upsamplers {
            out.push((format!("up.{i}.{j}.weight"), &u.weight));
            out.push((format!("up.{i}.{j}.bias"), &u.bias));
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    /// Mutable parameters in [`named_params`](Self::named_params) order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<E>> {
        let mut out = Vec::new();
        for b in self.blocks.values_mut() {
            out.extend([
                &mut b.conv1.weight,
                &mut b.conv1.bias,
                &mut b.conv2.weight,
                &mut b.conv2.bias,
            ]);
        }
        for u in self.upsamplers.values_mut() {
            out.extend([&mut u.weight, &mut u.bias]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Inserts all parameters into `g`, as trainable leaves when
    /// `trainable` is set and as constants otherwise.
    pub fn bind(&self, g: &mut Graph<E>, trainable: bool) -> BoundParams {
        let mut put = |p: &ConvParams<E>| {
            if trainable {
                ConvIds {
                    weight: g.param(&p.weight),
                    bias: g.param(&p.bias),
                }
            } else {
                ConvIds {
                    weight: g.constant(&p.weight),
                    bias: g.constant(&p.bias),
                }
            }
        };
        let blocks = self
            .blocks
            .iter()
            .map(|(&n, b)| (n, (put(&b.conv1), put(&b.conv2))))
            .collect();
        let upsamplers = self.upsamplers.iter().map(|(&n, u)| (n, put(u))).collect();
        let head = put(&self.head);
        BoundParams {
            blocks,
            upsamplers,
            head,
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [_, c, h, w] = match *shape {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::dim(format!("model input must be [N,C,H,W], got {shape:?}"))),
        };
        if c != self.config.in_channels {
            return Err(Error::dim(format!(
                "model expects {} input channel(s), got {c}",
                self.config.in_channels
            )));
        }
        let d = self.config.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::dim(format!(
                "input {w}x{h} is not divisible by {d} (2^(levels-1) for {} levels)",
                self.config.levels
            )));
        }
        Ok(())
    }

    /// Evaluates node `(i, j)` from already computed nodes.
    pub fn node_forward(
        &self,
        g: &mut Graph<E>,
        bound: &BoundParams,
        input: TensorId,
        cache: &BTreeMap<NodeIndex, TensorId>,
        node: NodeIndex,
    ) -> Result<TensorId> {
        let need = |n: NodeIndex| {
            cache
                .get(&n)
                .copied()
                .ok_or_else(|| Error::Internal(format!("node {node:?} evaluated before {n:?}")))
        };
        let (c1, c2) = *bound
            .blocks
            .get(&node)
            .ok_or_else(|| Error::Internal(format!("node {node:?} is not part of this model")))?;
        let x = match node {
            (0, 0) => input,
            (i, 0) => {
                let above = need((i - 1, 0))?;
                g.maxpool2d(above)?
            }
            (i, j) => {
                let mut parts = self
                    .config
                    .skip_sources(node)
                    .into_iter()
                    .map(need)
                    .collect::<Result<Vec<_>>>()?;
                let below = need((i + 1, j - 1))?;
                let up = bound.upsamplers[&node];
                parts.push(g.conv_transpose2d(below, up.weight, up.bias)?);
                g.concat_channels(&parts)?
            }
        };
        vgg_block(g, x, c1, c2)
    }

    /// Runs all nodes and the head inside `g`.
    pub fn forward_graph(
        &self,
        g: &mut Graph<E>,
        bound: &BoundParams,
        input: TensorId,
    ) -> Result<ForwardTrace> {
        self.check_input(g.shape(input))?;
        let mut nodes = BTreeMap::new();
        let mut order = Vec::new();
        for node in self.config.nodes() {
            let out = self.node_forward(g, bound, input, &nodes, node)?;
            nodes.insert(node, out);
            order.push(node);
        }
        let top = nodes[&(0, self.config.levels - 1)];
        let output = g.conv2d(top, bound.head.weight, bound.head.bias, 0, 1)?;
        Ok(ForwardTrace {
            output,
            nodes,
            order,
        })
    }

    /// Predicted residual for `lf_bilinear` (no gradients recorded for
    /// parameters).
    pub fn forward(&self, lf_bilinear: &Tensor<E>) -> Result<Tensor<E>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(lf_bilinear);
        let trace = self.forward_graph(&mut g, &bound, x)?;
        Ok(g.take(trace.output))
    }

    /// `clamp(lf_bilinear + forward(lf_bilinear), range)`.
    pub fn super_resolve(&self, lf_bilinear: &Tensor<E>, range: (f64, f64)) -> Result<Tensor<E>> {
        let residual = self.forward(lf_bilinear)?;
        compose_sr(lf_bilinear, &residual, range)
    }
}

/// conv3×3 → ReLU → conv3×3 → ReLU, padding 1.
pub fn vgg_block<E: Element>(
    g: &mut Graph<E>,
    x: TensorId,
    conv1: ConvIds,
    conv2: ConvIds,
) -> Result<TensorId> {
    let y = g.conv2d(x, conv1.weight, conv1.bias, 1, 1)?;
    let y = g.relu(y)?;
    let y = g.conv2d(y, conv2.weight, conv2.bias, 1, 1)?;
    g.relu(y)
}

/// Adds a residual to its input image and clamps to `range`.
pub fn compose_sr<E: Element>(
    lf_bilinear: &Tensor<E>,
    residual: &Tensor<E>,
    (lo, hi): (f64, f64),
) -> Result<Tensor<E>> {
    let (lo, hi) = (E::from_f64_lossy(lo), E::from_f64_lossy(hi));
    lf_bilinear.zip_map(residual, |l, r| (l + r).max(lo).min(hi))
}
