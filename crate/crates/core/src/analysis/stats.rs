//! Order statistics, dispersion and rank correlation.

use crate::error::{invalid, Result};

/// Median; even-length inputs average the two middle order statistics.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return invalid("median of an empty list");
    }
    if values.iter().any(|v| v.is_nan()) {
        return invalid("median of a list containing NaN");
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by `n`).
pub fn population_variance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return invalid("variance of an empty list");
    }
    let m = mean(values);
    Ok(values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64)
}

/// 1-based ranks with ties sharing the average of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let r = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return invalid(format!("length mismatch {} vs {}", a.len(), b.len()));
    }
    if a.len() < 2 {
        return invalid("correlation needs at least two observations");
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return invalid("correlation undefined for a constant list");
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return invalid(format!("length mismatch {} vs {}", a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return invalid("spearman input contains NaN");
    }
    pearson(&average_ranks(a), &average_ranks(b))
}
