use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::net::Network;

/// `sqrt(mean_x |f(x) - g(x)|^2)` over `xs`. For vector outputs the squared
/// Euclidean norm is averaged.
pub fn discrepancy(f: &Network, g: &Network, xs: &[Vec<f64>]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    check_len("compared network input", f.input_dim(), g.input_dim())?;
    check_len("compared network output", f.output_dim(), g.output_dim())?;
    let sq = crate::par::map(xs, |x| -> Result<f64> {
        let a = f.predict(x)?;
        let b = g.predict(x)?;
        Ok(a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum())
    });
    let mut total = 0.0;
    for s in sq {
        total += s?;
    }
    Ok((total / xs.len() as f64).sqrt())
}

/// Mean squared task error of a scalar network.
pub fn mse(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    check_len("task network output", 1, net.output_dim())?;
    let sq = crate::par::map_range(data.len(), |i| -> Result<f64> {
        let r = net.predict(data.x(i))?[0] - data.y(i);
        Ok(r * r)
    });
    let mut total = 0.0;
    for s in sq {
        total += s?;
    }
    Ok(total / data.len() as f64)
}

pub fn rmse(net: &Network, data: &Dataset) -> Result<f64> {
    mse(net, data).map(f64::sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::thin_architecture;
    use crate::net::{Activation, Block, LinearMap, MeanFieldLayer, NeuronParams};
    use crate::train::{init_network, InitSpec};

    fn points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::seed::rng(seed);
        (0..n).map(|_| crate::data::sample_ball(&mut rng, d, 1.0)).collect()
    }

    #[test]
    fn zero_and_symmetry() {
        let arch = thin_architecture(2, 5, 3, Activation::Tanh);
        let f = init_network(&arch, &InitSpec::default(), 1).unwrap();
        let g = init_network(&arch, &InitSpec::default(), 2).unwrap();
        let xs = points(64, 3, 0);
        assert_eq!(discrepancy(&f, &f, &xs).unwrap(), 0.0);
        assert_eq!(discrepancy(&f, &g, &xs).unwrap(), discrepancy(&g, &f, &xs).unwrap());
        assert!(matches!(discrepancy(&f, &g, &[]), Err(Error::EmptyEvalSet)));
    }

    #[test]
    fn constant_offset() {
        // sigmoid(0) = 1/2, so theta1 = 0.6 with theta0 = 0 outputs the constant 0.3.
        let offset = MeanFieldLayer::new(2, 1, &[NeuronParams::new(vec![0.0, 0.0], vec![0.6])]).unwrap();
        let zero = MeanFieldLayer::new(2, 1, &[NeuronParams::new(vec![0.0, 0.0], vec![0.0])]).unwrap();
        let f = Network::new(vec![Block::from(offset)], Activation::Sigmoid).unwrap();
        let g = Network::new(vec![Block::from(zero)], Activation::Sigmoid).unwrap();
        let d = discrepancy(&f, &g, &points(32, 2, 4)).unwrap();
        assert!((d - 0.3).abs() < 1e-15);
    }

    #[test]
    fn matches_two_pass_recomputation() {
        let arch = thin_architecture(3, 7, 4, Activation::Sigmoid);
        let f = init_network(&arch, &InitSpec::default(), 10).unwrap();
        let g = init_network(&arch, &InitSpec::default(), 11).unwrap();
        let xs = points(512, 4, 3);
        let diffs: Vec<f64> = xs
            .iter()
            .map(|x| f.predict(x).unwrap()[0] - g.predict(x).unwrap()[0])
            .collect();
        let mean_sq = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
        assert!((discrepancy(&f, &g, &xs).unwrap() - mean_sq.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn vector_outputs_use_squared_norm() {
        let f = Network::new(vec![LinearMap::identity(2).into()], Activation::Tanh).unwrap();
        let g = Network::new(vec![LinearMap::new(2, 2, vec![0.0; 4]).unwrap().into()], Activation::Tanh).unwrap();
        let xs = vec![vec![3.0, 4.0], vec![0.0, 0.0]];
        assert!((discrepancy(&f, &g, &xs).unwrap() - (25.0f64 / 2.0).sqrt()).abs() < 1e-15);
    }
}
