//! Small descriptive statistics and distribution helpers shared across modules.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with the n - 1 denominator; 0 for fewer than two values.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn sample_sd(v: &[f64]) -> f64 {
    sample_variance(v).sqrt()
}

pub fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn median(v: &[f64]) -> f64 {
    quantile_sorted(&sorted(v), 0.5)
}

/// Linear interpolation between order statistics at position 1 + (n - 1) q
/// (1-based), the "type 7" convention. `sorted` must be ascending and
/// non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval from order statistics: with k = max(1, floor(n (1 -
/// level) / 2)) the endpoints are the k-th and (n + 1 - k)-th smallest values.
pub fn order_statistic_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let n = sorted.len();
    let k = ((n as f64 * (1.0 - level) / 2.0).floor() as usize).max(1);
    (sorted[k - 1], sorted[n - k])
}

/// The `p`-quantile of a chi-square distribution with `df` degrees of freedom.
pub fn chi_square_quantile(df: f64, p: f64) -> f64 {
    ChiSquared::new(df)
        .expect("chi-square degrees of freedom must be positive")
        .inverse_cdf(p)
}

/// Upper tail probability of a chi-square statistic.
pub fn chi_square_sf(stat: f64, df: f64) -> f64 {
    if !(stat > 0.0) {
        return 1.0;
    }
    ChiSquared::new(df)
        .expect("chi-square degrees of freedom must be positive")
        .sf(stat)
}

/// Two-sided p-value of a Student t statistic.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("t degrees of freedom must be positive");
    (2.0 * dist.sf(t.abs())).min(1.0)
}
