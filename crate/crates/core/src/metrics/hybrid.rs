use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::norm;
use crate::error::{Error, Result};
use crate::net::Network;

/// Per-layer terms of the telescoping decomposition
/// `D[F_n, F_0] <= sum_k D[F_k, F_{k-1}]`, where `F_k` runs the student's
/// first `k` layers and the teacher's remaining ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridScan {
    pub samples: usize,
    /// `D[F_k, F_{k-1}]` for `k = 1..=n`.
    pub terms: Vec<f64>,
    /// `D[F_n, F_0]`, student against teacher.
    pub total: f64,
    /// RMS distance at layer `k` between the student's handoff `u` and the
    /// teacher layer applied to the previous handoff, `v`.
    pub handoffs: Vec<f64>,
    /// Largest realized `|B_{k+1:n}(u) - B_{k+1:n}(v)| / |u - v|`.
    pub amplification: Vec<f64>,
    /// Samples with `u == v`, left out of the ratio.
    pub skipped: Vec<usize>,
}

impl HybridScan {
    pub fn depth(&self) -> usize {
        self.terms.len()
    }

    pub fn term_sum(&self) -> f64 {
        self.terms.iter().sum()
    }

    /// `total <= sum(terms) + tol`.
    pub fn telescopes(&self, tol: f64) -> bool {
        self.total <= self.term_sum() + tol
    }

    /// `amplification_k * handoff_k - term_k` per layer.
    pub fn amplification_slack(&self) -> Vec<f64> {
        self.terms
            .iter()
            .zip(&self.amplification)
            .zip(&self.handoffs)
            .map(|((t, a), h)| a * h - t)
            .collect()
    }

    pub fn amplification_holds(&self, tol: f64) -> bool {
        self.amplification_slack().iter().all(|s| *s >= -tol)
    }
}

/// Split the student into `n` segments, one per teacher layer. Segment `k`
/// ends right after the student's `k`-th mean-field layer, or after the
/// linear map that directly follows it (the up-projection of an inserted
/// pair), so its output lives in the teacher's layer-`k` space.
pub fn student_segments(teacher: &Network, student: &Network) -> Result<Vec<Range<usize>>> {
    if teacher.blocks().iter().any(|b| b.is_linear()) {
        return Err(Error::InvalidConfig("hybrid teacher must consist of mean-field layers".into()));
    }
    let n = teacher.len();
    let positions = student.mean_field_positions();
    if positions.len() != n {
        return Err(Error::InvalidConfig(format!(
            "student has {} mean-field layers, teacher has {n}",
            positions.len()
        )));
    }
    let mut segments = Vec::with_capacity(n);
    let mut start = 0;
    for (k, &p) in positions.iter().enumerate() {
        let end = if k + 1 == n {
            student.len()
        } else if student.blocks().get(p + 1).is_some_and(|b| b.is_linear()) {
            p + 2
        } else {
            p + 1
        };
        let (student_dim, teacher_dim) = (student.block(end - 1).d_out(), teacher.block(k).d_out());
        let start_dim = student.block(start).d_in();
        let expected_in = teacher.block(k).d_in();
        if student_dim != teacher_dim || start_dim != expected_in {
            return Err(Error::MisalignedHandoff {
                layer: k + 1,
                student: if student_dim != teacher_dim { student_dim } else { start_dim },
                teacher: if student_dim != teacher_dim { teacher_dim } else { expected_in },
            });
        }
        segments.push(start..end);
        start = end;
    }
    Ok(segments)
}

/// `F_k`: the student's first `k` segments followed by teacher layers
/// `k+1..=n`. `F_0` is the teacher and `F_n` the student.
pub fn build_hybrid(teacher: &Network, student: &Network, k: usize) -> Result<Network> {
    let segments = student_segments(teacher, student)?;
    let n = segments.len();
    if k > n {
        return Err(Error::InvalidConfig(format!("hybrid index {k} exceeds depth {n}")));
    }
    let cut = if k == 0 { 0 } else { segments[k - 1].end };
    let blocks = student.blocks()[..cut]
        .iter()
        .chain(&teacher.blocks()[k..])
        .cloned()
        .collect();
    Network::new(blocks, teacher.activation())
}

struct LayerSample {
    term_sq: f64,
    handoff_sq: f64,
    ratio: Option<f64>,
}

/// Evaluate every telescoping term on `xs`.
///
/// Both `F_k(x)` and `F_{k-1}(x)` are computed as the teacher suffix
/// `B_{k+1:n}` applied to `u` and `v` respectively, so the per-sample ratio
/// bounds each sample's contribution and the amplification inequality holds
/// up to rounding.
pub fn hybrid_scan(teacher: &Network, student: &Network, xs: &[Vec<f64>]) -> Result<HybridScan> {
    if xs.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    if teacher.activation() != student.activation() {
        return Err(Error::InvalidConfig("teacher and student activations differ".into()));
    }
    let segments = student_segments(teacher, student)?;
    let n = segments.len();
    let per_sample = crate::par::map(xs, |x| -> Result<(Vec<LayerSample>, f64)> {
        let mut h = x.clone();
        let mut layers = Vec::with_capacity(n);
        let mut f0 = Vec::new();
        for (k, seg) in segments.iter().enumerate() {
            let v = teacher.eval_span(&h, k..k + 1)?;
            let u = student.eval_span(&h, seg.clone())?;
            let fk = teacher.eval_span(&u, k + 1..n)?;
            let fk1 = teacher.eval_span(&v, k + 1..n)?;
            if k == 0 {
                f0 = fk1.clone();
            }
            let du: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
            let df: Vec<f64> = fk.iter().zip(&fk1).map(|(a, b)| a - b).collect();
            let (nu, nf) = (norm(&du), norm(&df));
            layers.push(LayerSample {
                term_sq: df.iter().map(|d| d * d).sum(),
                handoff_sq: du.iter().map(|d| d * d).sum(),
                ratio: (nu > 0.0).then(|| nf / nu),
            });
            h = u;
        }
        let total_sq = h.iter().zip(&f0).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((layers, total_sq))
    });

    let mut term_sq = vec![0.0; n];
    let mut handoff_sq = vec![0.0; n];
    let mut amplification = vec![0.0f64; n];
    let mut skipped = vec![0usize; n];
    let mut total_sq = 0.0;
    for s in per_sample {
        let (layers, t) = s?;
        total_sq += t;
        for (k, l) in layers.into_iter().enumerate() {
            term_sq[k] += l.term_sq;
            handoff_sq[k] += l.handoff_sq;
            match l.ratio {
                Some(r) => amplification[k] = amplification[k].max(r),
                None => skipped[k] += 1,
            }
        }
    }
    let count = xs.len() as f64;
    let root = |v: f64| (v / count).sqrt();
    Ok(HybridScan {
        samples: xs.len(),
        terms: term_sq.into_iter().map(root).collect(),
        total: root(total_sq),
        handoffs: handoff_sq.into_iter().map(root).collect(),
        amplification,
        skipped,
    })
}
