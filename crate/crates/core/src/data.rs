//! Bounded synthetic regression data.
//!
//! Inputs are drawn uniformly from the radius-`c` ball (Gaussian direction,
//! radius `c * U^(1/d)`), labels come from a seeded ground-truth map plus
//! optional Gaussian noise and are clipped to `[-c, c]`. Train and test
//! inputs use independent streams, so resizing one split never changes the
//! other.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, Architecture, BlockShape, Network};
use crate::seed::{self, tag};
use crate::train::{init_network, InitDistribution, InitSpec};

/// A regression dataset with inputs stored row-major (`len x dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    bound: f64,
    generator: String,
}

impl Dataset {
    /// Validates every invariant: non-empty, finite, `|x| <= c`, `|y| <= c`.
    pub fn new(dim: usize, xs: Vec<f64>, ys: Vec<f64>, bound: f64, generator: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dataset dimension must be positive".into()));
        }
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::InvalidConfig(format!("dataset bound must be positive, got {bound}")));
        }
        if ys.is_empty() {
            return Err(Error::EmptyEvalSet);
        }
        crate::error::check_len("dataset inputs", ys.len() * dim, xs.len())?;
        crate::error::check_finite("dataset inputs", &xs)?;
        crate::error::check_finite("dataset labels", &ys)?;
        for (i, x) in xs.chunks_exact(dim).enumerate() {
            if norm(x) > bound {
                return Err(Error::InvalidConfig(format!("sample {i} has |x| = {} > {bound}", norm(x))));
            }
        }
        if let Some((i, y)) = ys.iter().enumerate().find(|(_, y)| y.abs() > bound) {
            return Err(Error::InvalidConfig(format!("sample {i} has |y| = {} > {bound}", y.abs())));
        }
        Ok(Self {
            dim,
            xs,
            ys,
            bound,
            generator: generator.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn generator(&self) -> &str {
        &self.generator
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn xs_flat(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Inputs as owned vectors, for metric routines that take point sets.
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.xs.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        Dataset::new(
            self.dim,
            self.xs[..n * self.dim].to_vec(),
            self.ys[..n].to_vec(),
            self.bound,
            self.generator.clone(),
        )
    }
}

/// Ground-truth functions that can be sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// A seeded random mean-field network of the given depth and width,
    /// output rescaled as `c * tanh(g(x) / rms(g))`.
    TeacherNet {
        depth: usize,
        width: usize,
        init_seed: u64,
        #[serde(default = "default_coupling")]
        coupling: f64,
    },
    /// `c * sin(freq * <w, x>)` with a seeded unit vector `w`.
    SinOfProjection { freq: f64 },
    /// `c * sin(freq * <w1, x>) * cos(freq * <w2, x>)`.
    SinCosOfProjections { freq: f64 },
    /// `c * tanh(gain * <w, x>)`.
    TanhOfProjection { gain: f64 },
    /// `c * tanh(|x|^2 / c^2)`.
    NormSqSaturated,
}

fn default_coupling() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub dim: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_bound")]
    pub c: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_bound() -> f64 {
    1.0
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dim == 0 || self.n_train == 0 || self.n_test == 0 {
            return bad("generator dim, n_train and n_test must be positive".into());
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad(format!("bound c must be positive, got {}", self.c));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        match &self.kind {
            GeneratorKind::TeacherNet { depth, width, coupling, .. } => {
                if *depth == 0 || *width == 0 || !coupling.is_finite() {
                    return bad("teacher_net generator needs positive depth and width".into());
                }
            }
            GeneratorKind::SinOfProjection { freq } | GeneratorKind::SinCosOfProjections { freq } => {
                if !freq.is_finite() {
                    return bad("frequency must be finite".into());
                }
            }
            GeneratorKind::TanhOfProjection { gain } => {
                if !gain.is_finite() {
                    return bad("gain must be finite".into());
                }
            }
            GeneratorKind::NormSqSaturated => {}
        }
        Ok(())
    }

    /// Compact single-token description stored alongside the data.
    pub fn descriptor(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

enum Truth {
    Net { net: Network, scale: f64 },
    Projections { w1: Vec<f64>, w2: Vec<f64> },
    None,
}

impl Truth {
    fn build(spec: &GeneratorSpec) -> Result<Self> {
        match &spec.kind {
            GeneratorKind::TeacherNet {
                depth,
                width,
                init_seed,
                coupling,
            } => {
                let arch = thin_architecture(*depth, *width, spec.dim, Activation::Tanh);
                let init = InitSpec {
                    distribution: InitDistribution::Uniform { lo: -1.0, hi: 1.0 },
                    coupling: *coupling,
                    per_layer: Default::default(),
                };
                let net = init_network(&arch, &init, *init_seed)?;
                let mut rng = seed::rng(seed::derive(*init_seed, &[tag::CALIBRATION]));
                let mut sq = 0.0;
                let n = 1024;
                for _ in 0..n {
                    let x = sample_ball(&mut rng, spec.dim, spec.c);
                    let v = net.predict(&x)?[0];
                    sq += v * v;
                }
                let scale = (sq / n as f64).sqrt();
                if !(scale > 0.0) {
                    return Err(Error::InvalidConfig("teacher_net generator is identically zero".into()));
                }
                Ok(Truth::Net { net, scale })
            }
            GeneratorKind::SinOfProjection { .. }
            | GeneratorKind::SinCosOfProjections { .. }
            | GeneratorKind::TanhOfProjection { .. } => {
                let mut rng = seed::rng(seed::derive(spec.seed, &[tag::GENERATOR]));
                Ok(Truth::Projections {
                    w1: unit_vector(&mut rng, spec.dim),
                    w2: unit_vector(&mut rng, spec.dim),
                })
            }
            GeneratorKind::NormSqSaturated => Ok(Truth::None),
        }
    }

    fn eval(&self, kind: &GeneratorKind, x: &[f64], c: f64) -> Result<f64> {
        let dot = |w: &[f64]| crate::net::layer::dot(w, x);
        Ok(match (self, kind) {
            (Truth::Net { net, scale }, _) => c * (net.predict(x)?[0] / scale).tanh(),
            (Truth::Projections { w1, .. }, GeneratorKind::SinOfProjection { freq }) => c * (freq * dot(w1)).sin(),
            (Truth::Projections { w1, w2 }, GeneratorKind::SinCosOfProjections { freq }) => {
                c * (freq * dot(w1)).sin() * (freq * dot(w2)).cos()
            }
            (Truth::Projections { w1, .. }, GeneratorKind::TanhOfProjection { gain }) => c * (gain * dot(w1)).tanh(),
            _ => c * (dot(x) / (c * c)).tanh(),
        })
    }
}

/// Thin task architecture: `depth` mean-field layers of `width` neurons,
/// `dim -> dim -> ... -> dim -> 1`.
pub fn thin_architecture(depth: usize, width: usize, dim: usize, activation: Activation) -> Architecture {
    let blocks = (0..depth)
        .map(|i| BlockShape::MeanField {
            d_in: dim,
            d_out: if i + 1 == depth { 1 } else { dim },
            width,
        })
        .collect();
    Architecture { activation, blocks }
}

/// Generate the train and test splits described by `spec`.
pub fn gen_dataset(spec: &GeneratorSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let truth = Truth::build(spec)?;
    let desc = spec.descriptor();
    let split = |n: usize, stream: u64| -> Result<Dataset> {
        let mut xrng = seed::rng(seed::derive(spec.seed, &[stream]));
        let mut nrng = seed::rng(seed::derive(spec.seed, &[tag::NOISE, stream]));
        let mut xs = Vec::with_capacity(n * spec.dim);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = sample_ball(&mut xrng, spec.dim, spec.c);
            let mut y = truth.eval(&spec.kind, &x, spec.c)?;
            if spec.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut nrng);
                y += spec.noise_sigma * z;
            }
            xs.extend_from_slice(&x);
            ys.push(y.clamp(-spec.c, spec.c));
        }
        Dataset::new(spec.dim, xs, ys, spec.c, desc.clone())
    };
    Ok((split(spec.n_train, tag::TRAIN_DATA)?, split(spec.n_test, tag::TEST_DATA)?))
}

/// Uniform sample from the closed radius-`c` ball in `dim` dimensions.
pub fn sample_ball(rng: &mut impl Rng, dim: usize, c: f64) -> Vec<f64> {
    let dir = unit_vector(rng, dim);
    let u: f64 = rng.random();
    let r = c * u.powf(1.0 / dim as f64);
    let mut x: Vec<f64> = dir.iter().map(|v| v * r).collect();
    let n = norm(&x);
    if n > c {
        x.iter_mut().for_each(|v| *v *= c / n);
        while norm(&x) > c {
            x.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
        }
    }
    x
}

pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
