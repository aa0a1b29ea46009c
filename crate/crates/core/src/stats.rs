//! Small hypothesis tests used to judge sweep trends and noise models.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};

/// Mann–Kendall statistic `S = sum_{i<j} sign(x_j - x_i)`.
pub fn mann_kendall_s(series: &[f64]) -> i64 {
    let mut s = 0i64;
    for i in 0..series.len() {
        for j in i + 1..series.len() {
            s += match series[j].partial_cmp(&series[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    s
}

/// One-sided p-value for a decreasing trend.
///
/// Normal approximation with continuity correction; the variance includes the
/// usual correction for tied groups.
pub fn mann_kendall_decreasing(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 3 {
        return Err(invalid("trend test needs at least three points"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(invalid("trend test needs finite values"));
    }
    let s = mann_kendall_s(series) as f64;
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut k = 0;
    while k < n {
        let mut e = k + 1;
        while e < n && sorted[e] == sorted[k] {
            e += 1;
        }
        let t = (e - k) as f64;
        ties += t * (t - 1.0) * (2.0 * t + 5.0);
        k = e;
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - ties) / 18.0;
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = if s < 0.0 { (s + 1.0) / var.sqrt() } else if s > 0.0 { (s - 1.0) / var.sqrt() } else { 0.0 };
    Ok(Normal::standard().cdf(z))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("KS test needs non-empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic two-sided p-value of the two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let d = ks_statistic(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ne = na * nb / (na + nb);
    // Stephens' small-sample adjustment of the Kolmogorov argument.
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok((d, kolmogorov_survival(lambda)))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
