//! Rank statistics and moment helpers shared by the estimators and the
//! study protocol. All p-values are two-sided normal approximations with
//! tie corrections.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with denominator `n - 1`.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Adjusted Fisher-Pearson skewness `G1`. `None` for zero variance.
pub fn adjusted_skewness(x: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let m = mean(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    if !(m2 > 0.0) {
        return None;
    }
    let g1 = m3 / m2.powf(1.5);
    Some(g1 * (n * (n - 1.0)).sqrt() / (n - 2.0))
}

/// Excess kurtosis `m4 / m2^2 - 3` (population moments).
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = mean(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Pearson correlation; `None` if either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Sample covariance with denominator `n - 1`.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

pub(crate) fn two_sided_p(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { 1.0 } else { 0.0 };
    }
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0)
}

/// Average ranks (1-based) and the sizes of tie groups.
fn ranks(x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (r, ties)
}

fn tie_groups(x: &[f64]) -> Vec<usize> {
    ranks(x).1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kendall's tau-b between `x` and `y` with the tie-corrected normal
/// approximation for the p-value.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> TestResult {
    let n = x.len();
    let mut s: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[j] - x[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            let b = (y[j] - y[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            s += a * b;
        }
    }
    let nf = n as f64;
    let n0 = nf * (nf - 1.0) / 2.0;
    let tx = tie_groups(x);
    let ty = tie_groups(y);
    let pairs = |t: &[usize]| t.iter().map(|&t| (t * (t - 1)) as f64 / 2.0).sum::<f64>();
    let (n1, n2) = (pairs(&tx), pairs(&ty));
    let denom = ((n0 - n1) * (n0 - n2)).sqrt();
    let tau = if denom > 0.0 { (s as f64 / denom).clamp(-1.0, 1.0) } else { f64::NAN };

    let f = |t: &[usize], g: &dyn Fn(f64) -> f64| t.iter().map(|&t| g(t as f64)).sum::<f64>();
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = f(&tx, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = f(&ty, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = f(&tx, &|t| t * (t - 1.0)) * f(&ty, &|t| t * (t - 1.0)) / (2.0 * nf * (nf - 1.0));
    let v2 = if n > 2 {
        f(&tx, &|t| t * (t - 1.0) * (t - 2.0)) * f(&ty, &|t| t * (t - 1.0) * (t - 2.0))
            / (9.0 * nf * (nf - 1.0) * (nf - 2.0))
    } else {
        0.0
    };
    let var = (v0 - vt - vu) / 18.0 + v1 + v2;
    let p = if var > 0.0 { two_sided_p(s as f64 / var.sqrt()) } else { 1.0 };
    TestResult { statistic: tau, p_value: p }
}

/// Kendall tau-b of `values` against their index.
pub fn kendall_trend(values: &[f64]) -> TestResult {
    let idx: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    kendall_tau_b(&idx, values)
}

/// Mann-Whitney U test of `a` against `b`; the statistic is `U` for `a`.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let (r, ties) = ranks(&all);
    let r1: f64 = r[..a.len()].iter().sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let mu = n1 * n2 / 2.0;
    let p = if var > 0.0 {
        let d = (u1 - mu).abs();
        two_sided_p((d - 0.5).max(0.0) / var.sqrt())
    } else {
        1.0
    };
    Ok(TestResult { statistic: u1, p_value: p })
}

/// Wilcoxon signed-rank test of the median of `d` against zero. Zeros are
/// dropped. The statistic is the positive-rank sum.
pub fn signed_rank(d: &[f64]) -> Result<TestResult> {
    let nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    let (r, ties) = ranks(&abs);
    let w: f64 = nz.iter().zip(&r).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let n = nz.len() as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let mu = n * (n + 1.0) / 4.0;
    let p = if var > 0.0 { two_sided_p((w - mu) / var.sqrt()) } else { 1.0 };
    Ok(TestResult { statistic: w, p_value: p })
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n1, n2) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let v = x[i].min(y[j]);
        while i < n1 && x[i] <= v {
            i += 1;
        }
        while j < n2 && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let en = (n1 as f64 * n2 as f64 / (n1 + n2) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    TestResult { statistic: d, p_value: kolmogorov_q(lambda) }
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_monotone_and_ties() {
        let up: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(kendall_trend(&up).statistic, 1.0);
        let down: Vec<f64> = up.iter().rev().copied().collect();
        assert_eq!(kendall_trend(&down).statistic, -1.0);
        let t = kendall_trend(&[1.0, 2.0, 2.0, 3.0]).statistic;
        assert!((t - 5.0 / 30f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn kendall_p_value_matches_reference() {
        // n = 10, no ties, S = 45: z = 45 / sqrt(125), p = 5.69e-5
        let up: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = kendall_trend(&up);
        let z: f64 = 45.0 / (10.0 * 9.0 * 25.0f64 / 18.0).sqrt();
        assert!((r.p_value - two_sided_p(z)).abs() < 1e-15);
        assert!(r.p_value < 1e-4);
    }

    #[test]
    fn skewness_hand_value() {
        assert!((adjusted_skewness(&[-3.0, 1.0, 1.0, 1.0]).unwrap() + 2.0).abs() < 1e-12);
        assert!(adjusted_skewness(&[1.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn mann_whitney_separated_samples() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let b: Vec<f64> = (100..120).map(|i| i as f64).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value < 1e-6);
        let same = mann_whitney_u(&a, &a).unwrap();
        assert!(same.p_value > 0.9);
    }

    #[test]
    fn signed_rank_symmetric_sample() {
        let d = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let r = signed_rank(&d).unwrap();
        assert_eq!(r.statistic, 10.5);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        assert!(ks_two_sample(&a, &a).p_value > 0.99);
        let b: Vec<f64> = a.iter().map(|v| v + 0.2).collect();
        assert!(ks_two_sample(&a, &b).p_value < 1e-10);
    }
}
