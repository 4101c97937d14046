use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{norm, sample_ball, unit_vector};
use crate::error::{check_len, Error, Result};
use crate::net::{Activation, Block, LinearMap, MeanFieldLayer, Network, NeuronParams};
use crate::seed;

/// Anything evaluable on a fixed-length input.
pub trait VectorMap: Sync {
    fn input_dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl VectorMap for Network {
    fn input_dim(&self) -> usize {
        Network::input_dim(self)
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

impl VectorMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.cols()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

/// A closure with a declared input dimension.
pub struct FnMap<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> VectorMap for FnMap<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("map input", self.dim, x.len())?;
        Ok((self.f)(x))
    }
}

/// Which probe pairs the realized-ratio estimator uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Pairs of evaluation points; all pairs when this exceeds their number.
    pub data_pairs: usize,
    /// Random unit directions per point for `x' = x + delta * u`.
    pub local_dirs: usize,
    /// Also probe along every coordinate axis from each point.
    pub axis_aligned: bool,
    pub delta: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            data_pairs: 256,
            local_dirs: 4,
            axis_aligned: false,
            delta: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub value: f64,
    pub probes: usize,
    pub skipped: usize,
}

enum Probe {
    Data(usize, usize),
    Local(usize, Vec<f64>),
}

fn probes(xs: &[Vec<f64>], cfg: &ProbeConfig) -> Vec<Probe> {
    let n = xs.len();
    let mut rng = seed::rng(seed::derive(cfg.seed, &[seed::tag::PAIRS]));
    let mut out = Vec::new();
    let all = n * (n - 1) / 2;
    if cfg.data_pairs >= all {
        for i in 0..n {
            for j in i + 1..n {
                out.push(Probe::Data(i, j));
            }
        }
    } else {
        for _ in 0..cfg.data_pairs {
            let ij = sample_indices(&mut rng, n, 2);
            out.push(Probe::Data(ij.index(0), ij.index(1)));
        }
    }
    let d = xs[0].len();
    for (i, x) in xs.iter().enumerate() {
        let shift = |dir: &[f64]| x.iter().zip(dir).map(|(a, u)| a + cfg.delta * u).collect::<Vec<f64>>();
        for _ in 0..cfg.local_dirs {
            out.push(Probe::Local(i, shift(&unit_vector(&mut rng, d))));
        }
        if cfg.axis_aligned {
            for a in 0..d {
                let mut e = vec![0.0; d];
                e[a] = 1.0;
                out.push(Probe::Local(i, shift(&e)));
            }
        }
    }
    out
}

fn ratio(fa: &[f64], fb: &[f64], a: &[f64], b: &[f64]) -> Option<f64> {
    let dx: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    (dx > 0.0).then(|| fa.iter().zip(fb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() / dx)
}

/// Largest realized slope `|f(x) - f(x')| / |x - x'|` over data pairs and
/// local perturbations. A lower bound on the Lipschitz constant.
pub fn lipschitz_pairs<F: VectorMap + ?Sized>(f: &F, xs: &[Vec<f64>], cfg: &ProbeConfig) -> Result<PairEstimate> {
    if xs.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "pairwise Lipschitz estimate needs at least 2 points, got {}",
            xs.len()
        )));
    }
    if !(cfg.delta.is_finite() && cfg.delta > 0.0) {
        return Err(Error::InvalidConfig(format!("probe delta must be positive, got {}", cfg.delta)));
    }
    for x in xs {
        check_len("probe point", f.input_dim(), x.len())?;
    }
    let fx = crate::par::map(xs, |x| f.apply(x)).into_iter().collect::<Result<Vec<_>>>()?;
    let list = probes(xs, cfg);
    let ratios = crate::par::map(&list, |p| -> Result<Option<f64>> {
        Ok(match p {
            Probe::Data(i, j) => ratio(&fx[*i], &fx[*j], &xs[*i], &xs[*j]),
            Probe::Local(i, xp) => ratio(&fx[*i], &f.apply(xp)?, &xs[*i], xp),
        })
    });
    let mut value = 0.0f64;
    let mut skipped = 0;
    for r in ratios {
        match r? {
            Some(v) => value = value.max(v),
            None => skipped += 1,
        }
    }
    if skipped == list.len() {
        return Err(Error::DegenerateProbes(skipped));
    }
    Ok(PairEstimate {
        value,
        probes: list.len(),
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerConfig {
    pub max_iters: usize,
    /// Relative change of the singular value estimate that counts as converged.
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-10,
            seed: 0,
        }
    }
}

fn spectral_at(net: &Network, x: &[f64], cfg: &PowerConfig, stream: u64) -> Result<f64> {
    let (_, cache) = net.forward(x)?;
    let mut rng = seed::rng(seed::derive(cfg.seed, &[stream]));
    let mut v: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|a| *a /= nv);
    let mut prev = f64::NAN;
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        let w = net.jvp(&cache, &v)?;
        let s = norm(&w);
        if s == 0.0 {
            return Ok(0.0);
        }
        residual = (s - prev).abs() / s;
        if residual <= cfg.tol {
            return Ok(s);
        }
        prev = s;
        let u = net.vjp(&cache, &w)?;
        let nu = norm(&u);
        if nu == 0.0 {
            return Ok(s);
        }
        v = u.into_iter().map(|a| a / nu).collect();
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iters,
        residual,
    })
}

/// Largest Jacobian spectral norm over `xs`, by power iteration on `J^T J`.
pub fn lipschitz_jacobian(net: &Network, xs: &[Vec<f64>], cfg: &PowerConfig) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let per = crate::par::map_range(xs.len(), |i| spectral_at(net, &xs[i], cfg, i as u64));
    let mut best = 0.0f64;
    for v in per {
        best = best.max(v?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Pairs(ProbeConfig),
    Jacobian(PowerConfig),
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Pairs(_) => "pairs",
            Estimator::Jacobian(_) => "jacobian",
        }
    }
}

/// Lipschitz estimates of the teacher suffixes `B_{k+1:n}`, `k = 1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// `estimates[k - 1]` is the estimate for `B_{k+1:n}`; the last entry is
    /// the empty suffix, exactly 1.
    pub estimates: Vec<f64>,
    pub ell_b: f64,
    pub estimator: String,
    pub samples: usize,
    pub probes: usize,
}

/// Each suffix is probed at the teacher's own layer-`k` representations of
/// `xs`.
pub fn suffix_lipschitz(teacher: &Network, xs: &[Vec<f64>], estimator: &Estimator) -> Result<LipschitzReport> {
    if xs.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let n = teacher.len();
    let mut estimates = Vec::with_capacity(n);
    let mut probes = 0;
    let mut reps: Vec<Vec<f64>> = xs.to_vec();
    for k in 1..=n {
        reps = crate::par::map(&reps, |h| teacher.eval_span(h, k - 1..k))
            .into_iter()
            .collect::<Result<_>>()?;
        if k == n {
            estimates.push(1.0);
            break;
        }
        let suffix = teacher.slice(k..n)?;
        let value = match estimator {
            Estimator::Pairs(cfg) => {
                let e = lipschitz_pairs(&suffix, &reps, cfg)?;
                probes += e.probes - e.skipped;
                e.value
            }
            Estimator::Jacobian(cfg) => {
                probes += reps.len();
                lipschitz_jacobian(&suffix, &reps, cfg)?
            }
        };
        estimates.push(value);
    }
    let ell_b = estimates.iter().copied().fold(0.0, f64::max);
    Ok(LipschitzReport {
        estimates,
        ell_b,
        estimator: estimator.name().into(),
        samples: xs.len(),
        probes,
    })
}

/// Per-neuron difference quotients `(sigma(x, theta) - sigma(x', theta)) / |x - x'|`.
pub fn q_ratio(layer: &MeanFieldLayer, x: &[f64], xp: &[f64], act: Activation) -> Result<Vec<Vec<f64>>> {
    check_len("q input", layer.d_in(), x.len())?;
    check_len("q input", layer.d_in(), xp.len())?;
    let dx = x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if dx == 0.0 {
        return Err(Error::InvalidConfig("q ratio needs x != x'".into()));
    }
    Ok(layer
        .neurons()
        .map(|n| {
            let a = n.eval(x, act);
            let b = n.eval(xp, act);
            a.iter().zip(&b).map(|(p, q)| (p - q) / dx).collect()
        })
        .collect())
}

/// `|q(theta) - q(theta')| / |theta - theta'|` for one pair of neurons.
pub fn q_param_ratio(
    theta: &NeuronParams,
    theta_p: &NeuronParams,
    x: &[f64],
    xp: &[f64],
    act: Activation,
) -> Result<f64> {
    let layer = MeanFieldLayer::new(x.len(), theta.theta1.len(), &[theta.clone(), theta_p.clone()])?;
    let q = q_ratio(&layer, x, xp, act)?;
    let dq = q[0].iter().zip(&q[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let dt = theta
        .theta0
        .iter()
        .zip(&theta_p.theta0)
        .chain(theta.theta1.iter().zip(&theta_p.theta1))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if dt == 0.0 {
        return Err(Error::InvalidConfig("q parameter ratio needs theta != theta'".into()));
    }
    Ok(dq / dt)
}

/// Largest parameter-Lipschitz ratio of `q` over random probes with inputs
/// and neuron weights in the unit ball and `theta'` at distance `delta`.
pub fn q_lipschitz_sweep(d_in: usize, d_out: usize, probes: usize, delta: f64, act: Activation, seed: u64) -> Result<f64> {
    let mut rng = seed::rng(seed);
    let mut best = 0.0f64;
    for _ in 0..probes {
        let x = sample_ball(&mut rng, d_in, 1.0);
        let xp = sample_ball(&mut rng, d_in, 1.0);
        let theta = NeuronParams::new(sample_ball(&mut rng, d_in, 1.0), sample_ball(&mut rng, d_out, 1.0));
        let dir = unit_vector(&mut rng, d_in + d_out);
        let theta_p = NeuronParams::new(
            theta.theta0.iter().zip(&dir).map(|(a, u)| a + delta * u).collect(),
            theta.theta1.iter().zip(&dir[d_in..]).map(|(a, u)| a + delta * u).collect(),
        );
        best = best.max(q_param_ratio(&theta, &theta_p, &x, &xp, act)?);
    }
    Ok(best)
}

/// `|L(thin) - L(wide)|` with both layers probed on identical pairs.
pub fn layer_lipschitz_gap(
    wide: &MeanFieldLayer,
    thin: &MeanFieldLayer,
    act: Activation,
    xs: &[Vec<f64>],
    cfg: &ProbeConfig,
) -> Result<f64> {
    let w = Network::new(vec![Block::from(wide.clone())], act)?;
    let t = Network::new(vec![Block::from(thin.clone())], act)?;
    check_len("layer gap input", w.input_dim(), t.input_dim())?;
    check_len("layer gap output", w.output_dim(), t.output_dim())?;
    Ok((lipschitz_pairs(&t, xs, cfg)?.value - lipschitz_pairs(&w, xs, cfg)?.value).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::thin_architecture;
    use crate::train::{init_network, InitSpec};
    use rand::Rng;

    fn points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::seed::rng(seed);
        (0..n).map(|_| sample_ball(&mut rng, d, 1.0)).collect()
    }

    fn lin_net(a: &LinearMap) -> Network {
        Network::new(vec![a.clone().into()], Activation::Tanh).unwrap()
    }

    fn svd_max(a: &LinearMap) -> f64 {
        let m = nalgebra::DMatrix::from_row_slice(a.rows(), a.cols(), a.entries());
        m.singular_values().max()
    }

    #[test]
    fn scaled_identity_and_constant() {
        let two = LinearMap::new(3, 3, vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let cfg = ProbeConfig::default();
        let e = lipschitz_pairs(&two, &points(20, 3, 1), &cfg).unwrap();
        assert!((e.value - 2.0).abs() < 1e-9);
        let constant = FnMap { dim: 3, f: |_: &[f64]| vec![0.7] };
        assert_eq!(lipschitz_pairs(&constant, &points(20, 3, 1), &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn diagonal_with_axis_probes() {
        let diag = LinearMap::new(2, 2, vec![3.0, 0.0, 0.0, 0.5]).unwrap();
        let cfg = ProbeConfig {
            data_pairs: 0,
            local_dirs: 0,
            axis_aligned: true,
            ..ProbeConfig::default()
        };
        let e = lipschitz_pairs(&diag, &points(5, 2, 2), &cfg).unwrap();
        assert!((e.value - svd_max(&diag)).abs() < 1e-9);
        assert!((e.value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_probes_error() {
        let xs = vec![vec![0.5, 0.5]; 3];
        let cfg = ProbeConfig {
            local_dirs: 0,
            ..ProbeConfig::default()
        };
        assert!(matches!(
            lipschitz_pairs(&LinearMap::identity(2), &xs, &cfg),
            Err(Error::DegenerateProbes(3))
        ));
        assert!(lipschitz_pairs(&LinearMap::identity(2), &xs[..1], &cfg).is_err());
    }

    #[test]
    fn jacobian_matches_svd() {
        let mut rng = crate::seed::rng(9);
        let a = LinearMap::new(5, 5, (0..25).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let est = lipschitz_jacobian(&lin_net(&a), &points(3, 5, 3), &PowerConfig::default()).unwrap();
        assert!((est - svd_max(&a)).abs() < 1e-6, "{est} vs {}", svd_max(&a));
        let zero = LinearMap::new(2, 4, vec![0.0; 8]).unwrap();
        assert_eq!(lipschitz_jacobian(&lin_net(&zero), &points(3, 4, 3), &PowerConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn jacobian_submultiplicative() {
        let mut rng = crate::seed::rng(4);
        let a = LinearMap::new(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = LinearMap::new(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let both = Network::new(vec![a.clone().into(), b.clone().into()], Activation::Tanh).unwrap();
        let xs = points(4, 3, 0);
        let cfg = PowerConfig::default();
        let ab = lipschitz_jacobian(&both, &xs, &cfg).unwrap();
        let la = lipschitz_jacobian(&lin_net(&a), &xs, &cfg).unwrap();
        let lb = lipschitz_jacobian(&lin_net(&b), &points(4, 4, 0), &cfg).unwrap();
        assert!(ab <= la * lb + 1e-9);
    }

    #[test]
    fn no_convergence_is_reported() {
        let mut rng = crate::seed::rng(9);
        let a = LinearMap::new(5, 5, (0..25).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let cfg = PowerConfig {
            max_iters: 2,
            tol: 0.0,
            seed: 0,
        };
        assert!(matches!(
            lipschitz_jacobian(&lin_net(&a), &points(1, 5, 0), &cfg),
            Err(Error::NoConvergence { iterations: 2, .. })
        ));
    }

    #[test]
    fn local_pairs_below_jacobian() {
        let net = init_network(
            &thin_architecture(3, 8, 4, Activation::Tanh),
            &InitSpec::default().with_coupling(2.0),
            5,
        )
        .unwrap();
        let xs = points(30, 4, 6);
        let local = ProbeConfig {
            data_pairs: 0,
            local_dirs: 8,
            axis_aligned: true,
            delta: 1e-6,
            seed: 1,
        };
        let p = lipschitz_pairs(&net, &xs, &local).unwrap().value;
        let j = lipschitz_jacobian(&net, &xs, &PowerConfig::default()).unwrap();
        assert!(p <= j + 1e-6, "{p} > {j}");
    }

    #[test]
    fn suffix_report_shape() {
        let net = init_network(
            &thin_architecture(3, 8, 4, Activation::Tanh),
            &InitSpec::default().with_coupling(2.0),
            5,
        )
        .unwrap();
        let rep = suffix_lipschitz(&net, &points(20, 4, 1), &Estimator::Pairs(ProbeConfig::default())).unwrap();
        assert_eq!(rep.estimates.len(), 3);
        assert_eq!(rep.estimates[2], 1.0);
        assert!(rep.estimates.iter().all(|&v| v >= 0.0));
        assert_eq!(rep.ell_b, rep.estimates.iter().copied().fold(0.0, f64::max));
    }

    #[test]
    fn q_ratio_cases() {
        let zero_out = MeanFieldLayer::new(2, 1, &[NeuronParams::new(vec![0.3, -0.2], vec![0.0])]).unwrap();
        let q = q_ratio(&zero_out, &[0.1, 0.2], &[0.5, -0.1], Activation::Tanh).unwrap();
        assert_eq!(q, vec![vec![0.0]]);
        let layer = MeanFieldLayer::new(2, 2, &[NeuronParams::new(vec![0.7, -0.4], vec![0.5, -1.5])]).unwrap();
        let x = [0.3, 0.4];
        let q = q_ratio(&layer, &x, &[-0.3, -0.4], Activation::Tanh).unwrap();
        let s = layer.neuron(0).eval(&x, Activation::Tanh);
        for (a, b) in q[0].iter().zip(&s) {
            assert!((a - b / 0.5).abs() < 1e-15);
        }
        assert!(q_ratio(&layer, &x, &x, Activation::Tanh).is_err());
    }

    #[test]
    fn q_parameter_lipschitz_pin() {
        let a = q_lipschitz_sweep(3, 2, 10_000, 1e-4, Activation::Tanh, 42).unwrap();
        let b = q_lipschitz_sweep(3, 2, 10_000, 1e-4, Activation::Tanh, 43).unwrap();
        assert!(a.is_finite() && b.is_finite());
        assert!((a - b).abs() / a < 0.25, "{a} vs {b}");
        assert!((a - Q_LIPSCHITZ_PIN).abs() < 1e-9, "pin {a}");
    }

    const Q_LIPSCHITZ_PIN: f64 = 1.0294496110192355;

    #[test]
    fn gap_zero_cases() {
        let mut rng = crate::seed::rng(3);
        let ns: Vec<NeuronParams> = (0..8)
            .map(|_| NeuronParams::new(sample_ball(&mut rng, 3, 1.0), sample_ball(&mut rng, 3, 1.0)))
            .collect();
        let wide = MeanFieldLayer::new(3, 3, &ns).unwrap();
        let xs = points(20, 3, 8);
        let cfg = ProbeConfig::default();
        assert_eq!(layer_lipschitz_gap(&wide, &wide.clone(), Activation::Tanh, &xs, &cfg).unwrap(), 0.0);
        let dead: Vec<NeuronParams> = ns.iter().map(|n| NeuronParams::new(n.theta0.clone(), vec![0.0; 3])).collect();
        let dead_wide = MeanFieldLayer::new(3, 3, &dead).unwrap();
        let dead_thin = dead_wide.select(&[0, 3]).unwrap();
        assert_eq!(layer_lipschitz_gap(&dead_wide, &dead_thin, Activation::Tanh, &xs, &cfg).unwrap(), 0.0);
    }
}
