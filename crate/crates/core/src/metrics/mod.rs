//! Discrepancies, hybrid-network scans, Lipschitz estimates and the
//! scaling-law report.

mod bound;
mod discrepancy;
mod hybrid;
mod lipschitz;

pub use bound::{bound_report, BoundReport, BoundRow, RunRow};
pub use discrepancy::{discrepancy, mse, rmse};
pub use hybrid::{build_hybrid, hybrid_scan, student_segments, HybridScan};
pub use lipschitz::{
    layer_lipschitz_gap, lipschitz_jacobian, lipschitz_pairs, q_lipschitz_sweep, q_param_ratio, q_ratio,
    suffix_lipschitz, Estimator, FnMap, LipschitzReport, PairEstimate, PowerConfig, ProbeConfig, VectorMap,
};

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    slope(&lx, &ly)
}

pub(crate) fn slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Median of the finite values (mean of the middle two for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[h] } else { 0.5 * (v[h - 1] + v[h]) })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
