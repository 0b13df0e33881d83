//! Oracles shared by the integration tests. Nothing here calls into the
//! library's own statistics code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normals(n: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| sd * r.sample::<f64, _>(StandardNormal)).collect()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn lag1(x: &[f64]) -> f64 {
    let a = &x[..x.len() - 1];
    let b = &x[1..];
    let (ma, mb) = (mean(a), mean(b));
    let num: f64 = a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum();
    let da: f64 = a.iter().map(|u| (u - ma).powi(2)).sum();
    let db: f64 = b.iter().map(|v| (v - mb).powi(2)).sum();
    num / (da * db).sqrt()
}

pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

pub fn cumsum(x0: f64, inc: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(inc.len() + 1);
    out.push(x0);
    for d in inc {
        out.push(out.last().unwrap() + d);
    }
    out
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
pub fn ks_p(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut q = 0.0;
    for k in 1..200 {
        let k = k as f64;
        q += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    q.clamp(0.0, 1.0)
}

/// `P(|X| > x)` for the standard symmetric stable law with characteristic
/// function `exp(-|t|^alpha)`, from the inversion formula
/// `1 - (2/pi) * int_0^inf sin(t x)/t * exp(-t^alpha) dt` (composite Simpson).
pub fn stable_tail(alpha: f64, x: f64) -> f64 {
    let upper = 40f64.powf(1.0 / alpha).max(10.0);
    let n = 2 * ((upper * x.max(1.0) * 400.0) as usize / 2 + 1);
    let h = upper / n as f64;
    let f = |t: f64| if t == 0.0 { x } else { (t * x).sin() / t * (-t.powf(alpha)).exp() };
    let mut s = f(0.0) + f(upper);
    for k in 1..n {
        s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 / std::f64::consts::PI * s * h / 3.0
}

/// Classical fourth-order Runge-Kutta for a scalar non-autonomous ODE.
pub fn rk4(f: impl Fn(f64, f64) -> f64, y0: f64, t0: f64, h: f64, steps: usize) -> Vec<f64> {
    let mut y = y0;
    let mut out = vec![y0];
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
        let k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(y);
    }
    out
}

/// AR(1) returns `r_t = phi r_{t-1} + e_t`, started from stationarity.
pub fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
    let e = normals(n, 1.0, seed);
    let mut r = Vec::with_capacity(n);
    let mut prev = e[0] / (1.0 - phi * phi).sqrt();
    r.push(prev);
    for v in &e[1..] {
        prev = phi * prev + v;
        r.push(prev);
    }
    r
}

/// Exact fractional Gaussian noise by Cholesky of its Toeplitz covariance.
pub fn fgn_cholesky(n: usize, h: f64, seed: u64) -> Vec<f64> {
    let g = |k: usize| {
        let k = k as f64;
        0.5 * ((k + 1.0).powf(2.0 * h) - 2.0 * k.powf(2.0 * h) + (k - 1.0).abs().powf(2.0 * h))
    };
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = g(i - j);
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = if i == j { s.sqrt() } else { s / l[j][j] };
        }
    }
    let z = normals(n, 1.0, seed);
    (0..n).map(|i| (0..=i).map(|k| l[i][k] * z[k]).sum()).collect()
}
