//! Seeded generation of driving noise: Gaussian increments, symmetric
//! alpha-stable increments and (multi)fractional Brownian motion.
//!
//! All generators are pure functions of their parameters and [`Seed`].

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use once_cell::sync::Lazy;
use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Seed;

/// Largest constant-H path synthesized by the exact Toeplitz factorization.
pub const EXACT_FBM_MAX_N: usize = 4096;
const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Wiener,
    Fbm,
    AlphaStable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ramp {
    #[default]
    Constant,
    LinearInTime,
}

/// Hurst exponent as a function of the step index.
///
/// With `LinearInTime` the exponent is `h_start` up to `t_start`, moves
/// linearly to `h_end` at `t_end` and stays there afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstSchedule {
    pub h_start: f64,
    pub h_end: f64,
    #[serde(default)]
    pub ramp: Ramp,
    #[serde(default)]
    pub t_start: usize,
    #[serde(default)]
    pub t_end: usize,
}

impl HurstSchedule {
    pub fn constant(h: f64) -> Self {
        HurstSchedule { h_start: h, h_end: h, ramp: Ramp::Constant, t_start: 0, t_end: 0 }
    }

    pub fn linear(h_start: f64, h_end: f64, t_start: usize, t_end: usize) -> Self {
        HurstSchedule { h_start, h_end, ramp: Ramp::LinearInTime, t_start, t_end }
    }

    pub fn validate(&self) -> Result<()> {
        for h in [self.h_start, self.h_end] {
            if !(h > 0.0 && h < 1.0) {
                return Err(invalid(format!("Hurst exponent {h} outside (0, 1)")));
            }
        }
        if self.ramp == Ramp::LinearInTime && self.t_start >= self.t_end {
            return Err(invalid(format!(
                "Hurst ramp needs t_start < t_end, got {} >= {}",
                self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    /// Exponent at path point `i` (point 0 is the origin).
    pub fn at(&self, i: usize) -> f64 {
        match self.ramp {
            Ramp::Constant => self.h_start,
            Ramp::LinearInTime => {
                if i <= self.t_start {
                    self.h_start
                } else if i >= self.t_end {
                    self.h_end
                } else {
                    let w = (i - self.t_start) as f64 / (self.t_end - self.t_start) as f64;
                    self.h_start + (self.h_end - self.h_start) * w
                }
            }
        }
    }

    fn is_constant(&self) -> bool {
        self.ramp == Ramp::Constant || self.h_start == self.h_end
    }
}

impl fmt::Display for HurstSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ramp {
            Ramp::Constant => write!(f, "H={}", self.h_start),
            Ramp::LinearInTime => write!(
                f,
                "H={}->{} over steps {}..{}",
                self.h_start, self.h_end, self.t_start, self.t_end
            ),
        }
    }
}

/// Stability index as a function of the increment index. A linear ramp runs
/// from `alpha_start` at the first increment to `alpha_end` at the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableSchedule {
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub scale: f64,
    #[serde(default)]
    pub ramp: Ramp,
}

impl StableSchedule {
    pub fn constant(alpha: f64, scale: f64) -> Self {
        StableSchedule { alpha_start: alpha, alpha_end: alpha, scale, ramp: Ramp::Constant }
    }

    pub fn linear(alpha_start: f64, alpha_end: f64, scale: f64) -> Self {
        StableSchedule { alpha_start, alpha_end, scale, ramp: Ramp::LinearInTime }
    }

    pub fn validate(&self) -> Result<()> {
        // A linear ramp between two valid endpoints stays valid.
        for a in [self.alpha_start, self.alpha_end] {
            if !(a > 0.0 && a <= 2.0) {
                return Err(invalid(format!("stability index {a} outside (0, 2]")));
            }
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(invalid(format!("stable scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    pub fn at(&self, i: usize, n: usize) -> f64 {
        match self.ramp {
            Ramp::Constant => self.alpha_start,
            Ramp::LinearInTime if n <= 1 => self.alpha_start,
            Ramp::LinearInTime => {
                let w = i as f64 / (n - 1) as f64;
                self.alpha_start + (self.alpha_end - self.alpha_start) * w
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Schedule {
    Hurst(HurstSchedule),
    Stable(StableSchedule),
}

/// One realization of a driving noise, stored as increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    pub increments: Vec<f64>,
    pub dt: f64,
    pub kind: NoiseKind,
    pub schedule: Option<Schedule>,
}

impl NoisePath {
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Cumulative path starting at `x0`, length `len() + 1`.
    pub fn cumulative(&self, x0: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.increments.len() + 1);
        let mut x = x0;
        out.push(x);
        for &d in &self.increments {
            x += d;
            out.push(x);
        }
        out
    }
}

fn check_n_dt(n: usize, dt: f64) -> Result<()> {
    if n == 0 {
        return Err(invalid("path length must be at least 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// Brownian increments with variance `dt`.
pub fn sample_gaussian_increments(n: usize, dt: f64, seed: Seed) -> Result<NoisePath> {
    check_n_dt(n, dt)?;
    let mut rng = seed.rng();
    let sd = dt.sqrt();
    let increments = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(NoisePath { increments, dt, kind: NoiseKind::Wiener, schedule: None })
}

/// Standard symmetric stable variate (characteristic function
/// `exp(-|t|^alpha)`) by the Chambers-Mallows-Stuck transform.
pub fn standard_symmetric_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    let v = PI * (u - 0.5);
    if alpha == 1.0 {
        return v.tan();
    }
    let w: f64 = rng.sample(Exp1);
    let a = (alpha * v).sin() / v.cos().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha);
    a * b
}

/// Independent symmetric alpha-stable increments; increment `i` has index
/// `alpha(i)` and scale `scale * dt^(1/alpha(i))`.
pub fn sample_alpha_stable(
    n: usize,
    schedule: &StableSchedule,
    dt: f64,
    seed: Seed,
) -> Result<NoisePath> {
    check_n_dt(n, dt)?;
    schedule.validate()?;
    let mut rng = seed.rng();
    let increments = (0..n)
        .map(|i| {
            let alpha = schedule.at(i, n);
            schedule.scale * dt.powf(1.0 / alpha) * standard_symmetric_stable(alpha, &mut rng)
        })
        .collect();
    Ok(NoisePath {
        increments,
        dt,
        kind: NoiseKind::AlphaStable,
        schedule: Some(Schedule::Stable(*schedule)),
    })
}

/// Autocovariance of unit fractional Gaussian noise at integer lag `k`.
pub fn fgn_autocovariance(h: f64, k: usize) -> f64 {
    let k = k as f64;
    let e = 2.0 * h;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

enum Method {
    /// Durbin-Levinson recursion on the fGn Toeplitz covariance. Produces
    /// exactly `L z` where `L` is its Cholesky factor, in O(n^2).
    Toeplitz { phi: Vec<Vec<f64>>, sd: Vec<f64> },
    /// Square roots of the circulant eigenvalues (Davies-Harte).
    Circulant { sqrt_eig: Vec<f64> },
    /// Dense Cholesky factor of the multifractional covariance of the path
    /// points `X(t_1) .. X(t_n)`.
    Dense { chol: DMatrix<f64> },
}

/// Precomputed fBM sampler for a fixed `(n, schedule, dt)`.
///
/// Building the generator carries all the factorization cost; each
/// [`FbmGenerator::sample`] call is then O(n^2) (or O(n log n) for the
/// circulant route).
pub struct FbmGenerator {
    n: usize,
    dt: f64,
    schedule: HurstSchedule,
    method: Method,
}

impl FbmGenerator {
    pub fn new(n: usize, schedule: HurstSchedule, dt: f64) -> Result<Self> {
        check_n_dt(n, dt)?;
        schedule.validate()?;
        let method = if schedule.is_constant() {
            let h = schedule.h_start;
            if n > EXACT_FBM_MAX_N {
                match circulant_sqrt_eigenvalues(n, h) {
                    Some(sqrt_eig) => Method::Circulant { sqrt_eig },
                    None => {
                        log::warn!("circulant embedding not nonnegative for {schedule}, using exact factorization");
                        toeplitz_method(n, h)
                    }
                }
            } else {
                toeplitz_method(n, h)
            }
        } else {
            Method::Dense { chol: multifractional_cholesky(n, &schedule, dt)? }
        };
        Ok(FbmGenerator { n, dt, schedule, method })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn sample(&self, seed: Seed) -> NoisePath {
        let mut rng = seed.rng();
        let n = self.n;
        let increments = match &self.method {
            Method::Toeplitz { phi, sd } => {
                let scale = self.dt.powf(self.schedule.h_start);
                let mut x = Vec::with_capacity(n);
                for t in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    let mean: f64 = phi[t].iter().enumerate().map(|(j, p)| p * x[t - 1 - j]).sum();
                    x.push(mean + sd[t] * z);
                }
                x.iter().map(|v| v * scale).collect()
            }
            Method::Circulant { sqrt_eig } => {
                let scale = self.dt.powf(self.schedule.h_start);
                davies_harte_sample(n, sqrt_eig, &mut rng).into_iter().map(|v| v * scale).collect()
            }
            Method::Dense { chol } => {
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let mut prev = 0.0;
                let mut incs = Vec::with_capacity(n);
                for i in 0..n {
                    let row = chol.row(i);
                    let xi: f64 = (0..=i).map(|j| row[j] * z[j]).sum();
                    incs.push(xi - prev);
                    prev = xi;
                }
                incs
            }
        };
        NoisePath {
            increments,
            dt: self.dt,
            kind: NoiseKind::Fbm,
            schedule: Some(Schedule::Hurst(self.schedule)),
        }
    }
}

fn toeplitz_method(n: usize, h: f64) -> Method {
    let gamma: Vec<f64> = (0..=n).map(|k| fgn_autocovariance(h, k)).collect();
    let mut phi: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    let mut v = gamma[0];
    phi.push(Vec::new());
    sd.push(v.sqrt());
    let mut prev: Vec<f64> = Vec::new();
    for t in 1..n {
        let acc: f64 = prev.iter().enumerate().map(|(j, p)| p * gamma[t - 1 - j]).sum();
        let k = (gamma[t] - acc) / v;
        let mut cur = Vec::with_capacity(t);
        for j in 0..t - 1 {
            cur.push(prev[j] - k * prev[t - 2 - j]);
        }
        cur.push(k);
        v *= 1.0 - k * k;
        sd.push(v.sqrt());
        phi.push(cur.clone());
        prev = cur;
    }
    Method::Toeplitz { phi, sd }
}

fn circulant_sqrt_eigenvalues(n: usize, h: f64) -> Option<Vec<f64>> {
    let m = 2 * n;
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|k| {
            let lag = if k <= n { k } else { m - k };
            Complex::new(fgn_autocovariance(h, lag), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut row);
    let mut out = Vec::with_capacity(m);
    for c in row {
        if c.re < -1e-8 {
            return None;
        }
        out.push(c.re.max(0.0).sqrt());
    }
    Some(out)
}

fn davies_harte_sample<R: Rng + ?Sized>(n: usize, sqrt_eig: &[f64], rng: &mut R) -> Vec<f64> {
    let m = sqrt_eig.len();
    let mut w = vec![Complex::new(0.0, 0.0); m];
    let norm = 1.0 / (m as f64).sqrt();
    let mut z = || rng.sample::<f64, _>(StandardNormal);
    w[0] = Complex::new(sqrt_eig[0] * z() * norm, 0.0);
    w[n] = Complex::new(sqrt_eig[n] * z() * norm, 0.0);
    for k in 1..n {
        let s = sqrt_eig[k] * norm / std::f64::consts::SQRT_2;
        let c = Complex::new(s * z(), s * z());
        w[k] = c;
        w[m - k] = c.conj();
    }
    FftPlanner::new().plan_fft_forward(m).process(&mut w);
    w.into_iter().take(n).map(|c| c.re).collect()
}

/// Covariance `R(s, t) = (s^a + t^a - |t - s|^a) / 2` with
/// `a = H(s) + H(t)`, evaluated at the path points `t_i = i dt`.
pub fn multifractional_covariance(n: usize, schedule: &HurstSchedule, dt: f64) -> DMatrix<f64> {
    let hs: Vec<f64> = (1..=n).map(|i| schedule.at(i)).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let s = (i + 1) as f64 * dt;
        let t = (j + 1) as f64 * dt;
        let a = hs[i] + hs[j];
        0.5 * (s.powf(a) + t.powf(a) - (t - s).abs().powf(a))
    })
}

fn multifractional_cholesky(n: usize, schedule: &HurstSchedule, dt: f64) -> Result<DMatrix<f64>> {
    let cov = multifractional_covariance(n, schedule, dt);
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.unpack());
    }
    let jittered = cov + DMatrix::identity(n, n) * JITTER;
    jittered.cholesky().map(|c| c.unpack()).ok_or_else(|| Error::Generation {
        schedule: schedule.to_string(),
        msg: format!("covariance not positive definite after jitter {JITTER:e}"),
    })
}

#[derive(Clone, Copy, PartialEq)]
struct CacheKey {
    n: usize,
    dt: f64,
    schedule: HurstSchedule,
}

const CACHE_CAPACITY: usize = 4;
type GeneratorCache = Mutex<Vec<(CacheKey, Arc<FbmGenerator>)>>;

static GENERATORS: Lazy<GeneratorCache> = Lazy::new(|| Mutex::new(Vec::new()));

/// Shared generator for `(n, schedule, dt)`, built on first use. A handful
/// of recent factorizations are kept so Monte Carlo loops over seeds pay
/// the setup cost once.
pub fn cached_generator(n: usize, schedule: HurstSchedule, dt: f64) -> Result<Arc<FbmGenerator>> {
    let key = CacheKey { n, dt, schedule };
    {
        let cache = GENERATORS.lock().expect("generator cache poisoned");
        if let Some((_, g)) = cache.iter().find(|(k, _)| *k == key) {
            return Ok(Arc::clone(g));
        }
    }
    let g = Arc::new(FbmGenerator::new(n, schedule, dt)?);
    let mut cache = GENERATORS.lock().expect("generator cache poisoned");
    if !cache.iter().any(|(k, _)| *k == key) {
        if cache.len() >= CACHE_CAPACITY {
            cache.remove(0);
        }
        cache.push((key, Arc::clone(&g)));
    }
    Ok(g)
}

/// Increments of a fractional (constant H) or multifractional (ramped H)
/// Brownian path with `X(0) = 0`.
pub fn synth_fbm(n: usize, schedule: &HurstSchedule, dt: f64, seed: Seed) -> Result<NoisePath> {
    Ok(cached_generator(n, *schedule, dt)?.sample(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    fn lag1(x: &[f64]) -> f64 {
        let (m, v) = mean_var(x);
        let c: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / (x.len() as f64 - 1.0);
        c / v
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = sample_gaussian_increments(1000, 1.0, Seed(9)).unwrap();
        let b = sample_gaussian_increments(1000, 1.0, Seed(9)).unwrap();
        assert_eq!(a, b);
        let c = sample_gaussian_increments(1000, 1.0, Seed(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_variance_matches_dt() {
        for dt in [1.0, 0.01] {
            let p = sample_gaussian_increments(100_000, dt, Seed(1)).unwrap();
            let (_, v) = mean_var(&p.increments);
            assert!((v / dt - 1.0).abs() < 0.03, "dt={dt} var={v}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(sample_gaussian_increments(0, 1.0, Seed(1)).is_err());
        assert!(sample_gaussian_increments(10, 0.0, Seed(1)).is_err());
        assert!(sample_alpha_stable(10, &StableSchedule::constant(2.5, 1.0), 1.0, Seed(1)).is_err());
        assert!(sample_alpha_stable(10, &StableSchedule::constant(0.0, 1.0), 1.0, Seed(1)).is_err());
        assert!(synth_fbm(10, &HurstSchedule::constant(1.0), 1.0, Seed(1)).is_err());
        assert!(synth_fbm(10, &HurstSchedule::linear(0.5, 0.9, 5, 5), 1.0, Seed(1)).is_err());
    }

    #[test]
    fn cauchy_interquartile_range() {
        let scale = 0.5;
        let dt = 0.25;
        let mut x = sample_alpha_stable(100_000, &StableSchedule::constant(1.0, scale), dt, Seed(3))
            .unwrap()
            .increments;
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let iqr = x[75_000] - x[25_000];
        let expected = 2.0 * scale * dt;
        assert!((iqr / expected - 1.0).abs() < 0.03, "iqr {iqr} vs {expected}");
    }

    #[test]
    fn stable_ramp_stays_in_range() {
        let s = StableSchedule::linear(2.0, 1.0, 1.0);
        assert_eq!(s.at(0, 11), 2.0);
        assert_eq!(s.at(10, 11), 1.0);
        assert!((s.at(5, 11) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn fgn_lag_one_autocorrelation() {
        let p = synth_fbm(10_000, &HurstSchedule::constant(0.5), 1.0, Seed(5)).unwrap();
        assert!(lag1(&p.increments).abs() < 0.02);
        let p = synth_fbm(10_000, &HurstSchedule::constant(0.7), 1.0, Seed(5)).unwrap();
        let expected = 2f64.powf(2.0 * 0.7 - 1.0) - 1.0;
        assert!((lag1(&p.increments) - expected).abs() < 0.03);
    }

    #[test]
    fn circulant_route_matches_fgn_moments() {
        let n = EXACT_FBM_MAX_N + 904;
        let p = synth_fbm(n, &HurstSchedule::constant(0.7), 1.0, Seed(8)).unwrap();
        assert_eq!(p.len(), n);
        let (_, v) = mean_var(&p.increments);
        assert!((v - 1.0).abs() < 0.1, "var {v}");
        let expected = 2f64.powf(0.4) - 1.0;
        assert!((lag1(&p.increments) - expected).abs() < 0.03);
    }

    #[test]
    fn toeplitz_route_equals_dense_cholesky() {
        // Durbin-Levinson must produce exactly the Cholesky map z -> L z.
        let n = 64;
        let h = 0.7;
        let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(h, i.abs_diff(j)));
        let l = cov.cholesky().unwrap().unpack();
        let p = FbmGenerator::new(n, HurstSchedule::constant(h), 1.0).unwrap().sample(Seed(2));
        let mut rng = Seed(2).rng();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..n {
            let xi: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
            assert!((xi - p.increments[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn multifractional_kernel_reduces_to_fbm() {
        // A ramp with equal endpoints is the plain fBM covariance.
        let s = HurstSchedule { h_start: 0.6, h_end: 0.6, ramp: Ramp::LinearInTime, t_start: 0, t_end: 5 };
        let c = multifractional_covariance(5, &s, 0.5);
        let f = |t: f64, u: f64| 0.5 * (t.powf(1.2) + u.powf(1.2) - (t - u).abs().powf(1.2));
        assert!((c[(1, 3)] - f(1.0, 2.0)).abs() < 1e-14);
    }

    #[test]
    fn ramped_hurst_path_generates() {
        let s = HurstSchedule::linear(0.5, 0.9, 100, 400);
        let p = synth_fbm(400, &s, 1.0, Seed(4)).unwrap();
        assert_eq!(p.len(), 400);
        assert!(p.increments.iter().all(|v| v.is_finite()));
        assert_eq!(p, synth_fbm(400, &s, 1.0, Seed(4)).unwrap());
    }
}
