use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::slope;
use crate::error::{Error, Result};

/// One completed run: measured student-teacher discrepancy and the teacher's
/// suffix Lipschitz estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub n: usize,
    pub m: usize,
    pub big_m: usize,
    pub seed: u64,
    pub d: f64,
    pub ell_hat: f64,
}

/// Seed-averaged cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: usize,
    pub m: usize,
    pub big_m: usize,
    pub seeds: usize,
    pub d: f64,
    pub ell_hat: f64,
    /// `ell_hat * n / sqrt(m)`.
    pub predictor: f64,
    /// `ln d - ln(C * predictor)`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Least-squares fit of `ln D = ln C + ln predictor`.
    pub constant: f64,
    /// Pooled slope of `ln D` against `ln m`, within groups of equal `n`.
    pub width_slope: f64,
    /// Pooled slope of `ln D` against `ln n`, within groups of equal `m`.
    pub depth_slope: f64,
    pub rows: Vec<BoundRow>,
}

fn pooled_slope(groups: &BTreeMap<usize, Vec<(f64, f64)>>) -> Option<f64> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for pts in groups.values().filter(|p| p.len() >= 2) {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        for p in pts {
            x.push(p.0 - mx);
            y.push(p.1 - my);
        }
    }
    (!x.is_empty()).then(|| slope(&x, &y)).flatten()
}

/// Fit `D ~ C * ell_hat * n / sqrt(m)` over the seed-averaged grid.
pub fn bound_report(runs: &[RunRow]) -> Result<BoundReport> {
    let ns: BTreeSet<usize> = runs.iter().map(|r| r.n).collect();
    let ms: BTreeSet<usize> = runs.iter().map(|r| r.m).collect();
    if ns.len() < 3 || ms.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "bound report needs at least 3 distinct n and m, got {} and {}",
            ns.len(),
            ms.len()
        )));
    }
    if runs.iter().any(|r| !(r.d > 0.0 && r.d.is_finite() && r.ell_hat > 0.0 && r.ell_hat.is_finite())) {
        return Err(Error::InvalidConfig("discrepancies and Lipschitz estimates must be positive".into()));
    }
    let mut cells: BTreeMap<(usize, usize, usize), Vec<&RunRow>> = BTreeMap::new();
    for r in runs {
        cells.entry((r.n, r.m, r.big_m)).or_default().push(r);
    }
    let mut rows: Vec<BoundRow> = cells
        .into_iter()
        .map(|((n, m, big_m), rs)| {
            let k = rs.len() as f64;
            let d = rs.iter().map(|r| r.d).sum::<f64>() / k;
            let ell_hat = rs.iter().map(|r| r.ell_hat).sum::<f64>() / k;
            BoundRow {
                n,
                m,
                big_m,
                seeds: rs.len(),
                d,
                ell_hat,
                predictor: ell_hat * n as f64 / (m as f64).sqrt(),
                residual: 0.0,
            }
        })
        .collect();
    let log_c = rows.iter().map(|r| r.d.ln() - r.predictor.ln()).sum::<f64>() / rows.len() as f64;
    for r in &mut rows {
        r.residual = r.d.ln() - r.predictor.ln() - log_c;
    }
    let mut by_n: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    let mut by_m: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        by_n.entry(r.n).or_default().push(((r.m as f64).ln(), r.d.ln()));
        by_m.entry(r.m).or_default().push(((r.n as f64).ln(), r.d.ln()));
    }
    let nan = f64::NAN;
    Ok(BoundReport {
        constant: log_c.exp(),
        width_slope: pooled_slope(&by_n).unwrap_or(nan),
        depth_slope: pooled_slope(&by_m).unwrap_or(nan),
        rows,
    })
}
