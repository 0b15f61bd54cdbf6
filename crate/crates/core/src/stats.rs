//! Kolmogorov–Smirnov statistics for comparing simulated samples.

use crate::error::{invalid, Result};

/// `sup_x |F_n(x) - F(x)|` for a sample against a continuous distribution function.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return invalid("empty sample");
    }
    let xs = sorted(sample)?;
    let n = xs.len() as f64;
    let mut d = 0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}

/// `sup_x |F_n(x) - G_m(x)|` for two samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return invalid("empty sample");
    }
    let (xs, ys) = (sorted(a)?, sorted(b)?);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| x.is_nan()) {
        return invalid("sample contains NaN");
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Asymptotic Kolmogorov quantile `sqrt(-ln(α/2) / 2)`.
pub fn kolmogorov_quantile(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

/// Asymptotic level-`α` critical value of the one-sample statistic.
pub fn ks_critical_one_sample(n: usize, alpha: f64) -> f64 {
    kolmogorov_quantile(alpha) / (n as f64).sqrt()
}

/// Asymptotic level-`α` critical value of the two-sample statistic.
pub fn ks_critical_two_sample(n: usize, m: usize, alpha: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    kolmogorov_quantile(alpha) * ((n + m) / (n * m)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_value_at_one_percent() {
        assert!((kolmogorov_quantile(0.01) - 1.6276).abs() < 1e-4);
        assert!((ks_critical_two_sample(100, 100, 0.01) - 1.6276 * 0.02f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn small_samples_by_hand() {
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.5);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        let d = ks_one_sample(&[0.25, 0.75], |x| x).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
    }
}
