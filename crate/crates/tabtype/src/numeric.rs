//! Small numerically-stable helpers used throughout the crate.

/// Numerically stable `log(sum(exp(xs)))`.
///
/// Returns negative infinity for an empty slice or when every entry is
/// negative infinity.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Stable softmax; `zs` must be nonempty and finite.
pub(crate) fn softmax(zs: &[f64]) -> Vec<f64> {
    let max = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = zs.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}
