//! Exact rewrites that remove inserted linear maps from a network.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::net::{Block, LinearMap, MeanFieldLayer, Network};

/// `second ∘ first` as a single map with matrix `second.a * first.a`.
pub fn fuse_linear(first: &LinearMap, second: &LinearMap) -> Result<LinearMap> {
    check_len("fused map inner dimension", first.rows(), second.cols())?;
    let (r, k, c) = (second.rows(), first.rows(), first.cols());
    let mut a = vec![0.0; r * c];
    for i in 0..r {
        let out = &mut a[i * c..(i + 1) * c];
        for (t, &s) in second.row(i).iter().enumerate().take(k) {
            for (o, &f) in out.iter_mut().zip(first.row(t)) {
                *o += s * f;
            }
        }
    }
    LinearMap::new(r, c, a)
}

/// A layer computing `layer(lin(z))`: every `theta0 <- A^T theta0`.
pub fn absorb_pre(lin: &LinearMap, layer: &MeanFieldLayer) -> Result<MeanFieldLayer> {
    check_len("absorbed map rows", layer.d_in(), lin.rows())?;
    let theta0 = layer
        .neurons()
        .flat_map(|n| lin.apply_transpose(n.theta0))
        .collect();
    MeanFieldLayer::from_flat(lin.cols(), layer.d_out(), theta0, layer.theta1_flat().to_vec())
}

/// A layer computing `lin(layer(z))`: every `theta1 <- A theta1`.
pub fn absorb_post(layer: &MeanFieldLayer, lin: &LinearMap) -> Result<MeanFieldLayer> {
    check_len("absorbed map cols", layer.d_out(), lin.cols())?;
    let theta1 = layer.neurons().flat_map(|n| lin.apply(n.theta1)).collect();
    MeanFieldLayer::from_flat(layer.d_in(), lin.rows(), layer.theta0_flat().to_vec(), theta1)
}

/// One rewrite, with block indices into the network given to [`merge_pass`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MergeStep {
    Fuse { first: usize, second: usize },
    AbsorbPre { linear: usize, layer: usize },
    AbsorbPost { layer: usize, linear: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePlan {
    pub steps: Vec<MergeStep>,
}

impl MergePlan {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("merge plan serializes")
    }
}

/// Remove every inserted linear pair.
///
/// Expects the pattern `S_1, M_11, M_12, S_2, ..., S_n`: each run of linear
/// maps must have length two and sit between two mean-field layers. Each
/// pair is fused into `R_i = M_i2 M_i1` and absorbed into the input weights
/// of the following layer. A network without linear maps is returned as is.
pub fn merge_pass(net: &Network) -> Result<(Network, MergePlan)> {
    let blocks = net.blocks();
    let mut out: Vec<Block> = Vec::with_capacity(blocks.len());
    let mut plan = MergePlan::default();
    let mut i = 0;
    while i < blocks.len() {
        match &blocks[i] {
            Block::MeanField(_) => {
                out.push(blocks[i].clone());
                i += 1;
            }
            Block::Linear(first) => {
                let pattern = |reason: &str| Error::MergePattern {
                    position: i,
                    reason: reason.into(),
                };
                if i == 0 || !matches!(out.last(), Some(Block::MeanField(_))) {
                    return Err(pattern("linear pair must follow a mean-field layer"));
                }
                let Some(Block::Linear(second)) = blocks.get(i + 1) else {
                    return Err(pattern("expected a second linear map"));
                };
                let Some(Block::MeanField(next)) = blocks.get(i + 2) else {
                    return Err(pattern("linear pair must be followed by a mean-field layer"));
                };
                let fused = fuse_linear(first, second)?;
                out.push(absorb_pre(&fused, next)?.into());
                plan.steps.push(MergeStep::Fuse {
                    first: i,
                    second: i + 1,
                });
                plan.steps.push(MergeStep::AbsorbPre {
                    linear: i,
                    layer: i + 2,
                });
                i += 3;
            }
        }
    }
    Ok((Network::new(out, net.activation())?, plan))
}

/// Largest output deviation between `a` and `b` over `xs`, relative to the
/// largest output magnitude of `b` (floored at 1e-300).
pub fn relative_deviation(a: &Network, b: &Network, xs: &[Vec<f64>]) -> Result<f64> {
    let rows = crate::par::map(xs, |x| -> Result<(f64, f64)> {
        let ya = a.predict(x)?;
        let yb = b.predict(x)?;
        let dev = ya.iter().zip(&yb).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let scale = yb.iter().map(|q| q.abs()).fold(0.0, f64::max);
        Ok((dev, scale))
    });
    let mut dev = 0.0f64;
    let mut scale = 0.0f64;
    for r in rows {
        let (d, s) = r?;
        dev = dev.max(d);
        scale = scale.max(s);
    }
    Ok(dev / scale.max(1e-300))
}
