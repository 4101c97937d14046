use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Activation, LinearMap, MeanFieldLayer};
use crate::error::{check_finite, check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    MeanField(MeanFieldLayer),
    Linear(LinearMap),
}

impl Block {
    pub fn d_in(&self) -> usize {
        match self {
            Block::MeanField(l) => l.d_in(),
            Block::Linear(l) => l.cols(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Block::MeanField(l) => l.d_out(),
            Block::Linear(l) => l.rows(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Block::MeanField(l) => l.num_params(),
            Block::Linear(l) => l.num_params(),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Block::Linear(_))
    }

    pub fn as_mean_field(&self) -> Option<&MeanFieldLayer> {
        match self {
            Block::MeanField(l) => Some(l),
            Block::Linear(_) => None,
        }
    }

    pub fn as_linear(&self) -> Option<&LinearMap> {
        match self {
            Block::Linear(l) => Some(l),
            Block::MeanField(_) => None,
        }
    }

    pub fn shape(&self) -> BlockShape {
        match self {
            Block::MeanField(l) => BlockShape::MeanField {
                d_in: l.d_in(),
                d_out: l.d_out(),
                width: l.width(),
            },
            Block::Linear(l) => BlockShape::Linear {
                rows: l.rows(),
                cols: l.cols(),
            },
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> + '_ {
        let (first, second): (&[f64], &[f64]) = match self {
            Block::MeanField(l) => (l.theta0_flat(), l.theta1_flat()),
            Block::Linear(l) => (l.entries(), &[]),
        };
        first.iter().chain(second)
    }
}

impl From<MeanFieldLayer> for Block {
    fn from(l: MeanFieldLayer) -> Self {
        Block::MeanField(l)
    }
}

impl From<LinearMap> for Block {
    fn from(l: LinearMap) -> Self {
        Block::Linear(l)
    }
}

/// Shape of one block, without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockShape {
    MeanField { d_in: usize, d_out: usize, width: usize },
    Linear { rows: usize, cols: usize },
}

impl BlockShape {
    pub fn d_in(&self) -> usize {
        match *self {
            BlockShape::MeanField { d_in, .. } => d_in,
            BlockShape::Linear { cols, .. } => cols,
        }
    }

    pub fn d_out(&self) -> usize {
        match *self {
            BlockShape::MeanField { d_out, .. } => d_out,
            BlockShape::Linear { rows, .. } => rows,
        }
    }
}

/// Parameter-free description of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub activation: Activation,
    pub blocks: Vec<BlockShape>,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidConfig("architecture has no blocks".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let zero = match *b {
                BlockShape::MeanField { d_in, d_out, width } => d_in == 0 || d_out == 0 || width == 0,
                BlockShape::Linear { rows, cols } => rows == 0 || cols == 0,
            };
            if zero {
                return Err(Error::InvalidConfig(format!("block {i} has a zero dimension")));
            }
        }
        for (i, w) in self.blocks.windows(2).enumerate() {
            if w[0].d_out() != w[1].d_in() {
                return Err(Error::DimensionChain {
                    block: i + 1,
                    reason: format!("expects input dim {}, previous block emits {}", w[1].d_in(), w[0].d_out()),
                });
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.blocks.first().map_or(0, BlockShape::d_in)
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.last().map_or(0, BlockShape::d_out)
    }
}

/// A feed-forward stack of mean-field layers and linear maps sharing one
/// activation kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    blocks: Vec<Block>,
    activation: Activation,
}

/// Intermediates recorded by [`Network::forward_span`], sufficient for the
/// reverse and forward-derivative passes.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    start: usize,
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn span(&self) -> Range<usize> {
        self.start..self.start + self.inputs.len()
    }

    /// Input fed to the `i`-th cached block.
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Per-block gradient buffers mirroring a network's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockGrad {
    MeanField { theta0: Vec<f64>, theta1: Vec<f64> },
    Linear { a: Vec<f64> },
}

impl BlockGrad {
    fn values(&self) -> impl Iterator<Item = &f64> + '_ {
        let (first, second): (&[f64], &[f64]) = match self {
            BlockGrad::MeanField { theta0, theta1 } => (theta0, theta1),
            BlockGrad::Linear { a } => (a, &[]),
        };
        first.iter().chain(second)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        let (first, second): (&mut [f64], &mut [f64]) = match self {
            BlockGrad::MeanField { theta0, theta1 } => (theta0, theta1),
            BlockGrad::Linear { a } => (a, &mut []),
        };
        first.iter_mut().chain(second.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub blocks: Vec<BlockGrad>,
    /// Gradient with respect to the span's input, when requested.
    pub input: Option<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        let blocks = net
            .blocks
            .iter()
            .map(|b| match b {
                Block::MeanField(l) => BlockGrad::MeanField {
                    theta0: vec![0.0; l.theta0_flat().len()],
                    theta1: vec![0.0; l.theta1_flat().len()],
                },
                Block::Linear(l) => BlockGrad::Linear {
                    a: vec![0.0; l.num_params()],
                },
            })
            .collect();
        Self { blocks, input: None }
    }

    pub fn reset(&mut self) {
        for b in &mut self.blocks {
            b.values_mut().for_each(|v| *v = 0.0);
        }
        self.input = None;
    }

    /// All parameter gradients flattened in [`Network::flat_params`] order.
    pub fn flat(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(BlockGrad::values).copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(BlockGrad::values)
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flat_map(BlockGrad::values).all(|v| v.is_finite())
    }
}

impl Network {
    pub fn new(blocks: Vec<Block>, activation: Activation) -> Result<Self> {
        let net = Self { blocks, activation };
        net.architecture().validate()?;
        Ok(net)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &Block {
        &self.blocks[i]
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    /// Swap in a replacement block with the same shape.
    pub fn replace_block(&mut self, i: usize, block: Block) -> Result<()> {
        if i >= self.blocks.len() || self.blocks[i].shape() != block.shape() {
            return Err(Error::InvalidConfig(format!("replacement for block {i} changes its shape")));
        }
        self.blocks[i] = block;
        Ok(())
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.blocks[self.blocks.len() - 1].d_out()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            activation: self.activation,
            blocks: self.blocks.iter().map(Block::shape).collect(),
        }
    }

    /// Indices of the mean-field blocks, in order.
    pub fn mean_field_positions(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.is_linear())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(Block::num_params).sum()
    }

    /// A standalone copy of the blocks in `range`.
    pub fn slice(&self, range: Range<usize>) -> Result<Network> {
        if range.start >= range.end || range.end > self.blocks.len() {
            return Err(Error::InvalidConfig(format!(
                "block range {range:?} is empty or exceeds {} blocks",
                self.blocks.len()
            )));
        }
        Network::new(self.blocks[range].to_vec(), self.activation)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward_span(x, 0..self.blocks.len())
    }

    /// Output only, without recording a cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval_span(x, 0..self.blocks.len())
    }

    /// Evaluate blocks `range` in sequence starting from `x`.
    pub fn eval_span(&self, x: &[f64], range: Range<usize>) -> Result<Vec<f64>> {
        self.check_span(&range)?;
        if range.is_empty() {
            return Ok(x.to_vec());
        }
        check_len("network input", self.blocks[range.start].d_in(), x.len())?;
        check_finite("network input", x).map_err(|e| e.at(range.start))?;
        let mut z = x.to_vec();
        for i in range {
            z = match &self.blocks[i] {
                Block::MeanField(l) => l.forward_unchecked(&z, self.activation, None),
                Block::Linear(l) => l.apply(&z),
            };
            check_finite("block output", &z).map_err(|e| e.at(i))?;
        }
        Ok(z)
    }

    pub fn forward_span(&self, x: &[f64], range: Range<usize>) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_span(&range)?;
        if range.is_empty() {
            return Err(Error::InvalidConfig("cannot cache an empty block span".into()));
        }
        check_len("network input", self.blocks[range.start].d_in(), x.len())?;
        check_finite("network input", x).map_err(|e| e.at(range.start))?;
        let mut inputs = Vec::with_capacity(range.len());
        let mut preacts = Vec::with_capacity(range.len());
        let mut z = x.to_vec();
        for i in range.clone() {
            let mut pre = Vec::new();
            let out = match &self.blocks[i] {
                Block::MeanField(l) => l.forward_unchecked(&z, self.activation, Some(&mut pre)),
                Block::Linear(l) => l.apply(&z),
            };
            check_finite("block output", &out).map_err(|e| e.at(i))?;
            inputs.push(std::mem::replace(&mut z, out));
            preacts.push(pre);
        }
        let cache = ForwardCache {
            start: range.start,
            inputs,
            preacts,
            output: z.clone(),
        };
        Ok((z, cache))
    }

    fn check_span(&self, range: &Range<usize>) -> Result<()> {
        if range.start > range.end || range.end > self.blocks.len() {
            return Err(Error::InvalidConfig(format!(
                "block range {range:?} exceeds {} blocks",
                self.blocks.len()
            )));
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let span = cache.span();
        if cache.is_empty() || span.end > self.blocks.len() {
            return Err(Error::CacheMismatch(format!(
                "cache covers blocks {span:?}, network has {}",
                self.blocks.len()
            )));
        }
        for (k, i) in span.enumerate() {
            let b = &self.blocks[i];
            let ok = cache.inputs[k].len() == b.d_in()
                && match b {
                    Block::MeanField(l) => cache.preacts[k].len() == l.width(),
                    Block::Linear(_) => cache.preacts[k].is_empty(),
                };
            if !ok {
                return Err(Error::CacheMismatch(format!("block {i} does not match its cached shapes")));
            }
        }
        Ok(())
    }

    /// Full reverse pass: gradients of `<upstream, output>` for every
    /// parameter, plus the input gradient.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(self);
        let input = self.backward_into(cache, upstream, &mut grads, None, true)?;
        grads.input = input;
        Ok(grads)
    }

    /// Reverse pass accumulating (`+=`) into `acc`. Blocks whose `mask`
    /// entry is false still propagate gradients but receive none. The pass
    /// stops early once nothing below needs a gradient, unless `want_input`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        acc: &mut GradientSet,
        mask: Option<&[bool]>,
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        self.check_cache(cache)?;
        if acc.blocks.len() != self.blocks.len() {
            return Err(Error::CacheMismatch("gradient set does not mirror the network".into()));
        }
        let span = cache.span();
        check_len("upstream gradient", self.blocks[span.end - 1].d_out(), upstream.len())?;
        check_finite("upstream gradient", upstream)?;
        let trainable = |i: usize| mask.is_none_or(|m| m.get(i).copied().unwrap_or(false));
        let lowest = if want_input {
            span.start
        } else {
            match span.clone().find(|&i| trainable(i)) {
                Some(i) => i,
                None => return Ok(None),
            }
        };
        let mut up = upstream.to_vec();
        for (k, i) in span.clone().enumerate().rev() {
            if i < lowest {
                break;
            }
            let z = &cache.inputs[k];
            let need_z = i > lowest || want_input;
            let mut gz = if need_z { Some(vec![0.0; z.len()]) } else { None };
            match (&self.blocks[i], &mut acc.blocks[i]) {
                (Block::MeanField(l), BlockGrad::MeanField { theta0, theta1 }) => {
                    let params = trainable(i).then_some((theta0.as_mut_slice(), theta1.as_mut_slice()));
                    l.backward_cached(z, &cache.preacts[k], &up, self.activation, params, gz.as_deref_mut());
                }
                (Block::Linear(l), BlockGrad::Linear { a }) => {
                    let params = trainable(i).then_some(a.as_mut_slice());
                    l.backward_cached(z, &up, params, gz.as_deref_mut());
                }
                _ => return Err(Error::CacheMismatch(format!("gradient block {i} has the wrong kind"))),
            }
            match gz {
                Some(g) => {
                    check_finite("backward gradient", &g).map_err(|e| e.at(i))?;
                    up = g;
                }
                None => break,
            }
        }
        Ok(want_input.then_some(up))
    }

    /// Vector-Jacobian product `J^T upstream` at the cached point.
    pub fn vjp(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        let span = cache.span();
        check_len("upstream vector", self.blocks[span.end - 1].d_out(), upstream.len())?;
        let mut up = upstream.to_vec();
        for (k, i) in span.enumerate().rev() {
            let mut gz = vec![0.0; cache.inputs[k].len()];
            match &self.blocks[i] {
                Block::MeanField(l) => {
                    l.backward_cached(&cache.inputs[k], &cache.preacts[k], &up, self.activation, None, Some(&mut gz))
                }
                Block::Linear(l) => l.backward_cached(&cache.inputs[k], &up, None, Some(&mut gz)),
            }
            up = gz;
        }
        Ok(up)
    }

    /// Jacobian-vector product `J dx` at the cached point.
    pub fn jvp(&self, cache: &ForwardCache, dx: &[f64]) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        let span = cache.span();
        check_len("tangent vector", self.blocks[span.start].d_in(), dx.len())?;
        let mut t = dx.to_vec();
        for (k, i) in span.enumerate() {
            t = match &self.blocks[i] {
                Block::MeanField(l) => l.jvp_cached(&cache.preacts[k], &t, self.activation),
                Block::Linear(l) => l.apply(&t),
            };
        }
        Ok(t)
    }

    /// All parameters, block by block (`theta0` then `theta1` for mean-field
    /// layers, row-major entries for linear maps).
    pub fn flat_params(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(Block::params).copied().collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        check_len("flat parameter vector", self.num_params(), values.len())?;
        check_finite("flat parameter vector", values)?;
        let mut it = values.iter().copied();
        for b in &mut self.blocks {
            match b {
                Block::MeanField(l) => {
                    let (t0, t1) = l.params_mut();
                    t0.iter_mut().chain(t1.iter_mut()).for_each(|p| *p = it.next().unwrap_or_default());
                }
                Block::Linear(l) => l.entries_mut().iter_mut().for_each(|p| *p = it.next().unwrap_or_default()),
            }
        }
        Ok(())
    }

    /// Apply `p -= rate(block) * g` to every block selected by `mask`.
    pub(crate) fn apply_step(&mut self, grads: &GradientSet, mask: &[bool], rate: impl Fn(&Block) -> f64) {
        for ((b, g), &on) in self.blocks.iter_mut().zip(&grads.blocks).zip(mask) {
            if !on {
                continue;
            }
            let r = rate(b);
            match (b, g) {
                (Block::MeanField(l), BlockGrad::MeanField { theta0, theta1 }) => {
                    let (t0, t1) = l.params_mut();
                    for (p, d) in t0.iter_mut().zip(theta0).chain(t1.iter_mut().zip(theta1)) {
                        *p -= r * d;
                    }
                }
                (Block::Linear(l), BlockGrad::Linear { a }) => {
                    for (p, d) in l.entries_mut().iter_mut().zip(a) {
                        *p -= r * d;
                    }
                }
                _ => unreachable!("gradient set built from this network"),
            }
        }
    }
}
