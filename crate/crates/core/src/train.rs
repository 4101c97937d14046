//! Initialization, losses, and seeded minibatch SGD.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{norm, Dataset};
use crate::error::{Error, Result};
use crate::net::{Architecture, Block, BlockShape, GradientSet, LinearMap, MeanFieldLayer, Network};
use crate::seed::{self, tag};

/// A bounded, absolutely continuous per-entry distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitDistribution {
    Uniform { lo: f64, hi: f64 },
    TruncatedNormal { sigma: f64, clip: f64 },
}

impl InitDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitDistribution::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            InitDistribution::TruncatedNormal { sigma, clip }
                if sigma.is_finite() && sigma > 0.0 && clip.is_finite() && clip > 0.0 =>
            {
                Ok(())
            }
            other => Err(Error::InvalidConfig(format!("unbounded or invalid distribution {other:?}"))),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            InitDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            InitDistribution::TruncatedNormal { sigma, clip } => loop {
                let z: f64 = StandardNormal.sample(rng);
                let v = sigma * z;
                if v.abs() <= clip {
                    break v;
                }
            },
        }
    }
}

/// How parameters are drawn at initialization.
///
/// Every entry is drawn i.i.d. from `distribution` (or the block's override).
/// With a non-zero `coupling`, each neuron's output weights additionally get
/// `coupling * theta0[k]` added on the shared leading coordinates, so the
/// joint law of a neuron's `(theta0, theta1)` is correlated. With independent
/// zero-mean weights a wide mean-field layer averages to zero and deep
/// stacks pass no signal; coupling keeps the layer Jacobian near
/// `coupling * E[theta0 theta0^T] * act'(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub distribution: InitDistribution,
    #[serde(default)]
    pub coupling: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_layer: BTreeMap<usize, InitDistribution>,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            distribution: InitDistribution::Uniform { lo: -1.0, hi: 1.0 },
            coupling: 0.0,
            per_layer: BTreeMap::new(),
        }
    }
}

impl InitSpec {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self {
            distribution: InitDistribution::Uniform { lo, hi },
            ..Self::default()
        }
    }

    pub fn with_coupling(mut self, coupling: f64) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.distribution.validate()?;
        for d in self.per_layer.values() {
            d.validate()?;
        }
        if !self.coupling.is_finite() {
            return Err(Error::InvalidConfig("coupling must be finite".into()));
        }
        Ok(())
    }

    fn for_block(&self, i: usize) -> &InitDistribution {
        self.per_layer.get(&i).unwrap_or(&self.distribution)
    }

    /// Draw one block from its own stream.
    pub fn draw_block(&self, shape: &BlockShape, index: usize, seed: u64) -> Result<Block> {
        let dist = self.for_block(index);
        let mut rng = seed::rng(seed::derive(seed, &[index as u64]));
        Ok(match *shape {
            BlockShape::MeanField { d_in, d_out, width } => {
                let mut theta0 = Vec::with_capacity(width * d_in);
                let mut theta1 = Vec::with_capacity(width * d_out);
                for _ in 0..width {
                    let t0: Vec<f64> = (0..d_in).map(|_| dist.sample(&mut rng)).collect();
                    let mut t1: Vec<f64> = (0..d_out).map(|_| dist.sample(&mut rng)).collect();
                    if self.coupling != 0.0 {
                        for (o, i) in t1.iter_mut().zip(&t0) {
                            *o += self.coupling * i;
                        }
                    }
                    theta0.extend(t0);
                    theta1.extend(t1);
                }
                MeanFieldLayer::from_flat(d_in, d_out, theta0, theta1)?.into()
            }
            BlockShape::Linear { rows, cols } => {
                LinearMap::new(rows, cols, (0..rows * cols).map(|_| dist.sample(&mut rng)).collect())?.into()
            }
        })
    }
}

/// Draw a network for `arch`; block `i` uses the stream `derive(seed, [i])`.
pub fn init_network(arch: &Architecture, init: &InitSpec, seed: u64) -> Result<Network> {
    arch.validate()?;
    init.validate()?;
    let blocks = arch
        .blocks
        .iter()
        .enumerate()
        .map(|(i, s)| init.draw_block(s, i, seed))
        .collect::<Result<Vec<_>>>()?;
    Network::new(blocks, arch.activation)
}

/// Squared error `(pred - y)^2` and its derivative `2 (pred - y)`.
pub fn mse_loss(pred: f64, y: f64) -> (f64, f64) {
    let r = pred - y;
    (r * r, 2.0 * r)
}

/// `(1/D) |student - teacher|^2` and its gradient `(2/D)(student - teacher)`.
pub fn imitation_loss(student: &[f64], teacher: &[f64]) -> Result<(f64, Vec<f64>)> {
    crate::error::check_len("imitation target", student.len(), teacher.len())?;
    let d = student.len() as f64;
    let mut loss = 0.0;
    let grad = student
        .iter()
        .zip(teacher)
        .map(|(s, t)| {
            let r = s - t;
            loss += r * r;
            2.0 * r / d
        })
        .collect();
    Ok((loss / d, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Cosine decay from `eta` at step 0 to `eta_final` at step `T`.
    Cosine { eta_final: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// Radius of the ball every neuron weight vector is projected onto after
    /// each step.
    #[serde(default)]
    pub param_bound: Option<f64>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Multiply the step of each mean-field layer by its width, so that each
    /// neuron moves at the same rate regardless of the `1/m` averaging.
    #[serde(default)]
    pub width_scaled: bool,
}

fn default_batch() -> usize {
    32
}

fn default_schedule() -> Schedule {
    Schedule::Constant
}

fn default_log_every() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            steps: 1000,
            batch_size: default_batch(),
            seed: 0,
            schedule: Schedule::Constant,
            param_bound: None,
            log_every: default_log_every(),
            width_scaled: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return bad(format!(
                "batch_size {} must be in 1..={dataset_len}",
                self.batch_size
            ));
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        if let Schedule::Cosine { eta_final } = self.schedule {
            if !(eta_final.is_finite() && eta_final >= 0.0) {
                return bad(format!("eta_final must be non-negative, got {eta_final}"));
            }
        }
        if let Some(b) = self.param_bound {
            if !(b.is_finite() && b > 0.0) {
                return bad(format!("param_bound must be positive, got {b}"));
            }
        }
        Ok(())
    }

    /// Step size in effect at step `t` (of `self.steps`).
    pub fn eta_at(&self, t: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.eta,
            Schedule::Cosine { eta_final } => {
                let frac = if self.steps == 0 { 1.0 } else { t as f64 / self.steps as f64 };
                eta_final + 0.5 * (self.eta - eta_final) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    pub eta: f64,
}

/// Minibatch losses logged during training, plus full-dataset objective
/// values before and after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl TrainTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "loss", "eta"])?;
        for r in &self.records {
            w.write_record([r.step.to_string(), fmt_f64(r.loss), fmt_f64(r.eta)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// What a training run minimizes.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Mean squared error against the dataset labels (scalar output).
    Task,
    /// Match precomputed per-sample targets with the output of the first
    /// `student_blocks` blocks.
    Imitation {
        targets: Vec<Vec<f64>>,
        student_blocks: usize,
    },
}

impl Objective {
    /// Targets are the teacher's first `teacher_blocks` blocks evaluated on
    /// every training input. The teacher is frozen.
    pub fn imitation(teacher: &Network, teacher_blocks: usize, student_blocks: usize, data: &Dataset) -> Result<Self> {
        let targets = crate::par::map_range(data.len(), |i| teacher.eval_span(data.x(i), 0..teacher_blocks))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Objective::Imitation {
            targets,
            student_blocks,
        })
    }

    fn span_end(&self, net: &Network) -> usize {
        match self {
            Objective::Task => net.len(),
            Objective::Imitation { student_blocks, .. } => *student_blocks,
        }
    }

    fn validate(&self, net: &Network, data: &Dataset) -> Result<()> {
        match self {
            Objective::Task => crate::error::check_len("task network output", 1, net.output_dim()),
            Objective::Imitation {
                targets,
                student_blocks,
            } => {
                if *student_blocks == 0 || *student_blocks > net.len() {
                    return Err(Error::InvalidConfig(format!(
                        "imitation span of {student_blocks} blocks for a {}-block network",
                        net.len()
                    )));
                }
                crate::error::check_len("imitation targets", data.len(), targets.len())?;
                let d = net.block(student_blocks - 1).d_out();
                targets
                    .iter()
                    .try_for_each(|t| crate::error::check_len("imitation target", d, t.len()))
            }
        }
    }

    fn sample_loss(&self, out: &[f64], data: &Dataset, i: usize) -> Result<(f64, Vec<f64>)> {
        match self {
            Objective::Task => {
                let (l, g) = mse_loss(out[0], data.y(i));
                Ok((l, vec![g]))
            }
            Objective::Imitation { targets, .. } => imitation_loss(out, &targets[i]),
        }
    }
}

/// Mean objective over the whole dataset, reduced in sample order.
pub fn objective_loss(net: &Network, data: &Dataset, objective: &Objective) -> Result<f64> {
    objective.validate(net, data)?;
    let end = objective.span_end(net);
    let losses = crate::par::map_range(data.len(), |i| {
        let out = net.eval_span(data.x(i), 0..end)?;
        Ok(objective.sample_loss(&out, data, i)?.0)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// Which blocks receive updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask(pub Vec<bool>);

impl TrainableMask {
    pub fn all(blocks: usize) -> Self {
        Self(vec![true; blocks])
    }

    pub fn prefix(blocks: usize, upto: usize) -> Self {
        Self((0..blocks).map(|i| i < upto).collect())
    }

    pub fn range(blocks: usize, range: std::ops::Range<usize>) -> Self {
        Self((0..blocks).map(|i| range.contains(&i)).collect())
    }
}

/// Shuffled epochs without replacement; a partial tail batch is dropped.
pub struct EpochSampler {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            n,
            batch,
            seed,
            epoch: 0,
            order: epoch_order(seed, 0, n),
            pos: 0,
        }
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos + self.batch > self.n {
            self.epoch += 1;
            self.order = epoch_order(self.seed, self.epoch, self.n);
            self.pos = 0;
        }
        let b = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        b
    }
}

/// The permutation used for `epoch`; depends only on `(seed, epoch, n)`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, &[tag::EPOCH, epoch])));
    order
}

/// Project `v` onto the closed ball of radius `bound`.
pub(crate) fn project_ball(v: &mut [f64], bound: f64) {
    let n = norm(v);
    if n > bound {
        let s = bound / n;
        v.iter_mut().for_each(|x| *x *= s);
        while norm(v) > bound {
            v.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
        }
    }
}

/// Plain minibatch SGD: `theta <- theta - eta_t * grad` on the masked blocks.
///
/// Single-threaded and bit-reproducible for a given `(net, data, cfg,
/// objective, mask)`.
pub fn sgd_train(
    mut net: Network,
    data: &Dataset,
    cfg: &TrainConfig,
    objective: &Objective,
    mask: &TrainableMask,
) -> Result<(Network, TrainTrace)> {
    if data.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    cfg.validate(data.len())?;
    objective.validate(&net, data)?;
    crate::error::check_len("trainable mask", net.len(), mask.0.len())?;
    let end = objective.span_end(&net);
    let mask: Vec<bool> = mask.0.iter().enumerate().map(|(i, &m)| m && i < end).collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }

    let initial_loss = objective_loss(&net, data, objective)?;
    let mut records = Vec::new();
    let mut grads = GradientSet::zeros_like(&net);
    let mut sampler = EpochSampler::new(data.len(), cfg.batch_size, cfg.seed);
    let inv_b = 1.0 / cfg.batch_size as f64;

    for step in 0..cfg.steps {
        let diverged = |loss: f64| Error::Diverged { step, loss };
        grads.reset();
        let mut loss_sum = 0.0;
        for &i in sampler.next_batch() {
            let (out, cache) = net.forward_span(data.x(i), 0..end).map_err(|_| diverged(f64::NAN))?;
            let (l, g) = objective.sample_loss(&out, data, i)?;
            loss_sum += l;
            let up: Vec<f64> = g.iter().map(|v| v * inv_b).collect();
            net.backward_into(&cache, &up, &mut grads, Some(&mask), false)
                .map_err(|_| diverged(f64::NAN))?;
        }
        let loss = loss_sum * inv_b;
        if !loss.is_finite() {
            return Err(diverged(loss));
        }
        let eta = cfg.eta_at(step);
        net.apply_step(&grads, &mask, |b| match b {
            Block::MeanField(l) if cfg.width_scaled => eta * l.width() as f64,
            _ => eta,
        });
        if let Some(bound) = cfg.param_bound {
            for (b, _) in net.blocks_mut().iter_mut().zip(&mask).filter(|(_, &m)| m) {
                if let Block::MeanField(l) = b {
                    for (t0, t1) in l.neurons_mut() {
                        project_ball(t0, bound);
                        project_ball(t1, bound);
                    }
                }
            }
        }
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            records.push(TraceRecord { step, loss, eta });
        }
    }

    let final_loss = if cfg.steps == 0 {
        initial_loss
    } else {
        objective_loss(&net, data, objective).map_err(|_| Error::Diverged {
            step: cfg.steps,
            loss: f64::NAN,
        })?
    };
    Ok((
        net,
        TrainTrace {
            records,
            initial_loss,
            final_loss,
        },
    ))
}
