use super::Activation;
use crate::error::{check_finite, check_len, Error, Result};

/// One mean-field unit: input weights `theta0` (length `d_in`) and output
/// weights `theta1` (length `d_out`). Its map is `theta1 * act(<theta0, z>)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronParams {
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
}

impl NeuronParams {
    pub fn new(theta0: Vec<f64>, theta1: Vec<f64>) -> Self {
        Self { theta0, theta1 }
    }
}

/// Borrowed view of one neuron inside a layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronRef<'a> {
    pub theta0: &'a [f64],
    pub theta1: &'a [f64],
}

impl NeuronRef<'_> {
    pub fn to_owned(self) -> NeuronParams {
        NeuronParams::new(self.theta0.to_vec(), self.theta1.to_vec())
    }

    /// The neuron's own contribution `theta1 * act(<theta0, z>)`, before the
    /// layer's `1/m` averaging.
    pub fn eval(&self, z: &[f64], act: Activation) -> Vec<f64> {
        let a = act.eval(dot(self.theta0, z));
        self.theta1.iter().map(|w| w * a).collect()
    }
}

/// A mean-field layer `z -> (1/m) sum_j theta1_j * act(<theta0_j, z>)`.
///
/// Neuron parameters are stored contiguously (`theta0` is `m x d_in`,
/// `theta1` is `m x d_out`, both row-major). The width `m` is derived from
/// the buffer lengths and never stored on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldLayer {
    d_in: usize,
    d_out: usize,
    theta0: Vec<f64>,
    theta1: Vec<f64>,
}

/// Parameter and input gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub d_in: usize,
    pub d_out: usize,
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
    pub z: Vec<f64>,
}

impl LayerGrad {
    pub fn theta0(&self, j: usize) -> &[f64] {
        &self.theta0[j * self.d_in..(j + 1) * self.d_in]
    }

    pub fn theta1(&self, j: usize) -> &[f64] {
        &self.theta1[j * self.d_out..(j + 1) * self.d_out]
    }
}

impl MeanFieldLayer {
    pub fn new(d_in: usize, d_out: usize, neurons: &[NeuronParams]) -> Result<Self> {
        let mut theta0 = Vec::with_capacity(neurons.len() * d_in);
        let mut theta1 = Vec::with_capacity(neurons.len() * d_out);
        for n in neurons {
            check_len("neuron theta0", d_in, n.theta0.len())?;
            check_len("neuron theta1", d_out, n.theta1.len())?;
            theta0.extend_from_slice(&n.theta0);
            theta1.extend_from_slice(&n.theta1);
        }
        Self::from_flat(d_in, d_out, theta0, theta1)
    }

    pub fn from_flat(d_in: usize, d_out: usize, theta0: Vec<f64>, theta1: Vec<f64>) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::InvalidConfig("layer dimensions must be positive".into()));
        }
        if theta0.is_empty() || theta0.len() % d_in != 0 {
            return Err(Error::Malformed(format!(
                "theta0 length {} is not a positive multiple of d_in = {d_in}",
                theta0.len()
            )));
        }
        let m = theta0.len() / d_in;
        check_len("theta1 entries", m * d_out, theta1.len())?;
        check_finite("layer parameters", &theta0)?;
        check_finite("layer parameters", &theta1)?;
        Ok(Self {
            d_in,
            d_out,
            theta0,
            theta1,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn width(&self) -> usize {
        self.theta0.len() / self.d_in
    }

    pub fn neuron(&self, j: usize) -> NeuronRef<'_> {
        NeuronRef {
            theta0: &self.theta0[j * self.d_in..(j + 1) * self.d_in],
            theta1: &self.theta1[j * self.d_out..(j + 1) * self.d_out],
        }
    }

    pub fn neurons(&self) -> impl Iterator<Item = NeuronRef<'_>> + '_ {
        self.theta0
            .chunks_exact(self.d_in)
            .zip(self.theta1.chunks_exact(self.d_out))
            .map(|(theta0, theta1)| NeuronRef { theta0, theta1 })
    }

    /// Mutable views of every neuron's `(theta0, theta1)`.
    pub fn neurons_mut(&mut self) -> impl Iterator<Item = (&mut [f64], &mut [f64])> + '_ {
        self.theta0
            .chunks_exact_mut(self.d_in)
            .zip(self.theta1.chunks_exact_mut(self.d_out))
    }

    pub fn theta0_flat(&self) -> &[f64] {
        &self.theta0
    }

    pub fn theta1_flat(&self) -> &[f64] {
        &self.theta1
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.theta0, &mut self.theta1)
    }

    /// Build a layer from a subset of this layer's neurons, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let m = self.width();
        let mut theta0 = Vec::with_capacity(indices.len() * self.d_in);
        let mut theta1 = Vec::with_capacity(indices.len() * self.d_out);
        for &j in indices {
            if j >= m {
                return Err(Error::InvalidConfig(format!("neuron index {j} out of range for width {m}")));
            }
            let n = self.neuron(j);
            theta0.extend_from_slice(n.theta0);
            theta1.extend_from_slice(n.theta1);
        }
        Self::from_flat(self.d_in, self.d_out, theta0, theta1)
    }

    /// `(1/m) sum_j theta1_j * act(<theta0_j, z>)`, summed in ascending
    /// neuron order.
    pub fn forward(&self, z: &[f64], act: Activation) -> Result<Vec<f64>> {
        check_len("layer input", self.d_in, z.len())?;
        check_finite("layer input", z)?;
        Ok(self.forward_unchecked(z, act, None))
    }

    pub(crate) fn forward_unchecked(&self, z: &[f64], act: Activation, mut preacts: Option<&mut Vec<f64>>) -> Vec<f64> {
        let mut out = vec![0.0; self.d_out];
        if let Some(p) = preacts.as_deref_mut() {
            p.clear();
            p.reserve(self.width());
        }
        for n in self.neurons() {
            let s = dot(n.theta0, z);
            if let Some(p) = preacts.as_deref_mut() {
                p.push(s);
            }
            let a = act.eval(s);
            for (o, w) in out.iter_mut().zip(n.theta1) {
                *o += w * a;
            }
        }
        let m = self.width() as f64;
        for o in &mut out {
            *o /= m;
        }
        out
    }

    /// Gradients of `<upstream, layer(z)>` with respect to the parameters and
    /// the input.
    pub fn backward(&self, z: &[f64], upstream: &[f64], act: Activation) -> Result<LayerGrad> {
        check_len("layer input", self.d_in, z.len())?;
        check_len("layer upstream gradient", self.d_out, upstream.len())?;
        check_finite("layer input", z)?;
        check_finite("layer upstream gradient", upstream)?;
        let preacts: Vec<f64> = self.neurons().map(|n| dot(n.theta0, z)).collect();
        let mut g0 = vec![0.0; self.theta0.len()];
        let mut g1 = vec![0.0; self.theta1.len()];
        let mut gz = vec![0.0; self.d_in];
        self.backward_cached(z, &preacts, upstream, act, Some((&mut g0, &mut g1)), Some(&mut gz));
        Ok(LayerGrad {
            d_in: self.d_in,
            d_out: self.d_out,
            theta0: g0,
            theta1: g1,
            z: gz,
        })
    }

    /// Accumulates (`+=`) parameter gradients into `params` and the input
    /// gradient into `grad_z`, either of which may be skipped.
    pub(crate) fn backward_cached(
        &self,
        z: &[f64],
        preacts: &[f64],
        upstream: &[f64],
        act: Activation,
        mut params: Option<(&mut [f64], &mut [f64])>,
        mut grad_z: Option<&mut [f64]>,
    ) {
        let m = self.width() as f64;
        for (j, n) in self.neurons().enumerate() {
            let (a, da) = act.eval_with_deriv(preacts[j]);
            let coef = dot(n.theta1, upstream) * da / m;
            if let Some((g0, g1)) = params.as_mut() {
                let a_m = a / m;
                for (g, u) in g1[j * self.d_out..(j + 1) * self.d_out].iter_mut().zip(upstream) {
                    *g += a_m * u;
                }
                for (g, x) in g0[j * self.d_in..(j + 1) * self.d_in].iter_mut().zip(z) {
                    *g += coef * x;
                }
            }
            if let Some(gz) = grad_z.as_deref_mut() {
                for (g, w) in gz.iter_mut().zip(n.theta0) {
                    *g += coef * w;
                }
            }
        }
    }

    /// Directional derivative of the layer at the cached point along `dz`.
    pub(crate) fn jvp_cached(&self, preacts: &[f64], dz: &[f64], act: Activation) -> Vec<f64> {
        let mut out = vec![0.0; self.d_out];
        for (j, n) in self.neurons().enumerate() {
            let c = act.deriv(preacts[j]) * dot(n.theta0, dz);
            for (o, w) in out.iter_mut().zip(n.theta1) {
                *o += w * c;
            }
        }
        let m = self.width() as f64;
        for o in &mut out {
            *o /= m;
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.theta0.len() + self.theta1.len()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn random_layer(d_in: usize, d_out: usize, m: usize, s: u64) -> MeanFieldLayer {
        let mut rng = seed::rng(s);
        let neurons: Vec<_> = (0..m)
            .map(|_| {
                NeuronParams::new(
                    (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..d_out).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        MeanFieldLayer::new(d_in, d_out, &neurons).unwrap()
    }

    #[test]
    fn zero_input_weight_gives_zero_under_tanh() {
        let l = MeanFieldLayer::new(1, 1, &[NeuronParams::new(vec![0.0], vec![5.0])]).unwrap();
        assert_eq!(l.forward(&[3.0], Activation::Tanh).unwrap(), vec![0.0]);
    }

    #[test]
    fn odd_pair_cancels() {
        let l = MeanFieldLayer::new(
            1,
            1,
            &[NeuronParams::new(vec![1.0], vec![1.0]), NeuronParams::new(vec![-1.0], vec![1.0])],
        )
        .unwrap();
        for x in [-2.0, -0.3, 0.0, 0.9, 4.0] {
            assert_eq!(l.forward(&[x], Activation::Tanh).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn forward_matches_straight_line_summation() {
        // Oracle: sum each neuron's term separately, then divide.
        let l = random_layer(2, 2, 3, 11);
        let z = [0.3, -0.7];
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let mut expect = [0.0; 2];
            for j in 0..3 {
                let n = l.neuron(j);
                let s = n.theta0[0] * z[0] + n.theta0[1] * z[1];
                let a = act.eval(s);
                expect[0] += n.theta1[0] * a;
                expect[1] += n.theta1[1] * a;
            }
            let got = l.forward(&z, act).unwrap();
            for k in 0..2 {
                assert!((got[k] - expect[k] / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let l = random_layer(3, 2, 4, 1);
        assert!(matches!(
            l.forward(&[1.0, 2.0], Activation::Tanh),
            Err(Error::DimMismatch { expected: 3, actual: 2, .. })
        ));
        assert!(matches!(
            l.forward(&[1.0, f64::NAN, 0.0], Activation::Tanh),
            Err(Error::NonFinite { .. })
        ));
        assert!(l.backward(&[0.0; 3], &[f64::INFINITY, 0.0], Activation::Tanh).is_err());
        assert!(MeanFieldLayer::new(2, 1, &[NeuronParams::new(vec![1.0], vec![1.0])]).is_err());
    }

    #[test]
    fn zero_input_gives_zero_parameter_gradients_under_tanh() {
        let l = random_layer(3, 2, 5, 2);
        let g = l.backward(&[0.0; 3], &[0.4, -1.2], Activation::Tanh).unwrap();
        assert!(g.theta1.iter().all(|&v| v == 0.0));
        assert!(g.theta0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_sigmoid_neuron_by_hand() {
        let l = MeanFieldLayer::new(1, 1, &[NeuronParams::new(vec![0.0], vec![1.0])]).unwrap();
        let g = l.backward(&[1.0], &[1.0], Activation::Sigmoid).unwrap();
        assert_eq!(g.theta1, vec![0.5]);
        assert_eq!(g.theta0, vec![0.25]);
        assert_eq!(g.z, vec![0.0]);
    }

    #[test]
    fn backward_matches_central_differences() {
        let h = 1e-5;
        for (s, act) in [(3, Activation::Tanh), (4, Activation::Sigmoid)] {
            let l = random_layer(4, 3, 6, s);
            let mut rng = seed::rng(s + 100);
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let up: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = l.backward(&z, &up, act).unwrap();
            let obj = |l: &MeanFieldLayer, z: &[f64]| dot(&l.forward(z, act).unwrap(), &up);
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
            for i in 0..l.theta0.len() {
                let (mut p, mut q) = (l.clone(), l.clone());
                p.theta0[i] += h;
                q.theta0[i] -= h;
                let fd = (obj(&p, &z) - obj(&q, &z)) / (2.0 * h);
                assert!(rel(fd, g.theta0[i]) < 1e-6, "theta0[{i}]");
            }
            for i in 0..l.theta1.len() {
                let (mut p, mut q) = (l.clone(), l.clone());
                p.theta1[i] += h;
                q.theta1[i] -= h;
                let fd = (obj(&p, &z) - obj(&q, &z)) / (2.0 * h);
                assert!(rel(fd, g.theta1[i]) < 1e-6, "theta1[{i}]");
            }
            for i in 0..4 {
                let (mut zp, mut zq) = (z.clone(), z.clone());
                zp[i] += h;
                zq[i] -= h;
                let fd = (obj(&l, &zp) - obj(&l, &zq)) / (2.0 * h);
                assert!(rel(fd, g.z[i]) < 1e-6, "z[{i}]");
            }
        }
    }

    #[test]
    fn select_copies_neurons_verbatim() {
        let l = random_layer(3, 2, 8, 5);
        let s = l.select(&[1, 1, 6]).unwrap();
        assert_eq!(s.width(), 3);
        assert_eq!(s.neuron(0), l.neuron(1));
        assert_eq!(s.neuron(2), l.neuron(6));
        assert!(l.select(&[8]).is_err());
    }
}
