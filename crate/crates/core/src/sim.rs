//! Euler-Maruyama simulation of the three crash routes and of the coupled
//! multivariate system.
//!
//! * critical: time-dependent cubic drift `-mu(t) + r p - p^3`, fixed noise;
//! * stochastic: fixed double well `r p - lambda p^3`, noise `sigma(t) = a t`;
//! * dynamic: zero drift, the noise law itself evolves (Hurst or stability
//!   index schedule).
//!
//! Simulated states are treated as log-prices downstream.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{self, Schedule};
use crate::rng::Seed;
use crate::series::PriceSeries;

/// Linear ramp of `mu` from `mu_start` at step 0 to `mu_end` at step `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSchedule {
    pub mu_start: f64,
    pub mu_end: f64,
}

impl MuSchedule {
    pub fn constant(mu: f64) -> Self {
        MuSchedule { mu_start: mu, mu_end: mu }
    }

    pub fn at(&self, k: usize, n: usize) -> f64 {
        if n == 0 {
            return self.mu_start;
        }
        self.mu_start + (self.mu_end - self.mu_start) * (k as f64 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CptParams {
    pub r: f64,
    pub mu: MuSchedule,
    pub sigma: f64,
    pub p0: f64,
}

impl CptParams {
    pub fn drift(&self, p: f64, mu: f64) -> f64 {
        -mu + self.r * p - p * p * p
    }

    fn validate(&self) -> Result<()> {
        // sigma = 0 is accepted so the deterministic flow can be checked.
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        finite("p0", self.p0)?;
        finite("r", self.r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SptParams {
    pub r: f64,
    pub lambda: f64,
    pub alpha_vol: f64,
    pub p0: f64,
}

impl SptParams {
    pub fn drift(&self, p: f64) -> f64 {
        self.r * p - self.lambda * p * p * p
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.alpha_vol >= 0.0 && self.alpha_vol.is_finite()) {
            return Err(invalid(format!("alpha_vol must be nonnegative, got {}", self.alpha_vol)));
        }
        finite("p0", self.p0)?;
        finite("r", self.r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DptParams {
    pub noise: Schedule,
    pub scale: f64,
    #[serde(default)]
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiParams {
    pub r: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: MuSchedule,
    pub sigma: Vec<f64>,
    /// Noise correlation matrix, row-major `k x k`.
    pub d: Vec<Vec<f64>>,
    pub p0: Vec<f64>,
}

impl MultiParams {
    /// `k` identical assets with pairwise noise correlation `rho`.
    pub fn homogeneous(k: usize, r: f64, lambda: f64, mu: MuSchedule, sigma: f64, rho: f64, p0: f64) -> Self {
        let d = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { rho }).collect()).collect();
        MultiParams {
            r: vec![r; k],
            lambda: vec![lambda; k],
            mu,
            sigma: vec![sigma; k],
            d,
            p0: vec![p0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.r.len()
    }

    fn validate(&self) -> Result<()> {
        let k = self.k();
        if k < 2 {
            return Err(invalid(format!("multivariate system needs k >= 2 assets, got {k}")));
        }
        if self.lambda.len() != k || self.sigma.len() != k || self.p0.len() != k || self.d.len() != k {
            return Err(invalid("per-asset parameter vectors must all have length k"));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("sigma_i must be nonnegative"));
        }
        for (i, row) in self.d.iter().enumerate() {
            if row.len() != k {
                return Err(invalid("noise correlation matrix must be k x k"));
            }
            if (row[i] - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("D[{i}][{i}] = {} but must be 1", row[i])));
            }
            for (j, v) in row.iter().enumerate() {
                if (v - self.d[j][i]).abs() > 1e-12 {
                    return Err(invalid(format!("D not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Lower Cholesky factor of `D`. A singular PSD matrix gets a tiny
    /// diagonal jitter; anything else is rejected.
    fn noise_factor(&self) -> Result<DMatrix<f64>> {
        let k = self.k();
        let d = DMatrix::from_fn(k, k, |i, j| self.d[i][j]);
        if let Some(c) = d.clone().cholesky() {
            return Ok(c.unpack());
        }
        (d + DMatrix::identity(k, k) * 1e-12)
            .cholesky()
            .map(|c| c.unpack())
            .ok_or_else(|| invalid("noise correlation matrix D is not positive semi-definite"))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite")))
    }
}

/// Parameters that produced a [`SimPath`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimParams {
    Cpt(CptParams),
    Spt(SptParams),
    Dpt(DptParams),
    Multi { asset: usize, params: MultiParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPath {
    /// State at steps `0..=n`, starting with `p0`.
    pub values: Vec<f64>,
    pub dt: f64,
    pub params: SimParams,
    pub seed: Seed,
}

impl SimPath {
    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| k as f64 * self.dt).collect()
    }

    /// Every `every`-th state, starting with the first.
    pub fn thinned(&self, every: usize) -> Vec<f64> {
        self.values.iter().step_by(every.max(1)).copied().collect()
    }

    /// The path as a log-price series, with states shifted by `level`.
    pub fn to_series(&self, id: impl Into<String>, level: f64, every: usize) -> PriceSeries {
        let every = every.max(1);
        let values = self.thinned(every).into_iter().map(|v| v + level).collect::<Vec<_>>();
        let times = (0..values.len()).map(|k| (k * every) as f64 * self.dt).collect();
        PriceSeries { id: id.into(), times, log_prices: values, dates: None }
    }
}

fn check_n_dt(n: usize, dt: f64) -> Result<()> {
    if n == 0 {
        return Err(invalid("number of steps must be at least 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

fn guard(p: f64, step: usize) -> Result<f64> {
    if p.is_finite() {
        Ok(p)
    } else {
        Err(Error::SimulationOverflow { step })
    }
}

/// Critical transition: `dp = (-mu(t) + r p - p^3) dt + sigma dW`.
pub fn simulate_cpt(params: &CptParams, n: usize, dt: f64, seed: Seed) -> Result<SimPath> {
    check_n_dt(n, dt)?;
    params.validate()?;
    let mut rng = seed.rng();
    let sd = params.sigma * dt.sqrt();
    let mut values = Vec::with_capacity(n + 1);
    let mut p = params.p0;
    values.push(p);
    for k in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        p = guard(p + params.drift(p, params.mu.at(k, n)) * dt + sd * z, k + 1)?;
        values.push(p);
    }
    Ok(SimPath { values, dt, params: SimParams::Cpt(*params), seed })
}

/// Stochastic transition: fixed double well, volatility `alpha_vol * t`.
pub fn simulate_spt(params: &SptParams, n: usize, dt: f64, seed: Seed) -> Result<SimPath> {
    check_n_dt(n, dt)?;
    params.validate()?;
    let mut rng = seed.rng();
    let sqdt = dt.sqrt();
    let mut values = Vec::with_capacity(n + 1);
    let mut p = params.p0;
    values.push(p);
    for k in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let sigma = params.alpha_vol * k as f64 * dt;
        p = guard(p + params.drift(p) * dt + sigma * sqdt * z, k + 1)?;
        values.push(p);
    }
    Ok(SimPath { values, dt, params: SimParams::Spt(*params), seed })
}

/// Dynamic transition: `p(t) = p0 + scale X(t)` with `X` the scheduled noise.
pub fn simulate_dpt(params: &DptParams, n: usize, dt: f64, seed: Seed) -> Result<SimPath> {
    check_n_dt(n, dt)?;
    if !(params.scale >= 0.0 && params.scale.is_finite()) {
        return Err(invalid(format!("scale must be nonnegative, got {}", params.scale)));
    }
    let noise = match &params.noise {
        Schedule::Hurst(h) => noise::synth_fbm(n, h, dt, seed)?,
        Schedule::Stable(s) => noise::sample_alpha_stable(n, s, dt, seed)?,
    };
    let mut values = Vec::with_capacity(n + 1);
    let mut p = params.p0;
    values.push(p);
    for (k, d) in noise.increments.iter().enumerate() {
        p = guard(p + params.scale * d, k + 1)?;
        values.push(p);
    }
    Ok(SimPath { values, dt, params: SimParams::Dpt(*params), seed })
}

/// Coupled system `dp_i = (-mu(t) + r_i p_i - lambda_i p_i^3) dt + sigma_i dW_i`
/// with `<dW_i dW_j> = D_ij dt`.
pub fn simulate_multivariate(params: &MultiParams, n: usize, dt: f64, seed: Seed) -> Result<Vec<SimPath>> {
    check_n_dt(n, dt)?;
    params.validate()?;
    let chol = params.noise_factor()?;
    let k = params.k();
    let mut rng = seed.rng();
    let sqdt = dt.sqrt();
    let mut state = params.p0.clone();
    let mut paths: Vec<Vec<f64>> = state.iter().map(|&p| {
        let mut v = Vec::with_capacity(n + 1);
        v.push(p);
        v
    }).collect();
    let mut z = vec![0.0; k];
    for step in 0..n {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let mu = params.mu.at(step, n);
        for i in 0..k {
            let dw: f64 = (0..=i).map(|j| chol[(i, j)] * z[j]).sum::<f64>() * sqdt;
            let p = state[i];
            let drift = -mu + params.r[i] * p - params.lambda[i] * p * p * p;
            state[i] = guard(p + drift * dt + params.sigma[i] * dw, step + 1)?;
            paths[i].push(state[i]);
        }
    }
    Ok(paths
        .into_iter()
        .enumerate()
        .map(|(asset, values)| SimPath {
            values,
            dt,
            params: SimParams::Multi { asset, params: params.clone() },
            seed,
        })
        .collect())
}

/// Upper equilibrium of `r p - p^3 = mu` disappears at this `mu`
/// (fold point `p = sqrt(r / 3)`).
pub fn cpt_fold_mu(r: f64) -> f64 {
    2.0 * r / 3.0 * (r / 3.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{HurstSchedule, StableSchedule};

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn diffs(v: &[f64]) -> Vec<f64> {
        v.windows(2).map(|w| w[1] - w[0]).collect()
    }

    #[test]
    fn cpt_relaxes_to_fixed_point() {
        let p = CptParams { r: 1.0, mu: MuSchedule::constant(0.0), sigma: 0.0, p0: 0.5 };
        let path = simulate_cpt(&p, 2000, 0.01, Seed(1)).unwrap();
        assert!((path.values.last().unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(path.values.len(), 2001);
    }

    #[test]
    fn cpt_is_deterministic_and_odd() {
        let p = CptParams { r: 1.0, mu: MuSchedule { mu_start: 0.1, mu_end: 0.3 }, sigma: 0.2, p0: 0.8 };
        let a = simulate_cpt(&p, 500, 0.01, Seed(3)).unwrap();
        let b = simulate_cpt(&p, 500, 0.01, Seed(3)).unwrap();
        assert_eq!(a, b);

        let det = CptParams { sigma: 0.0, ..p };
        let neg = CptParams { p0: -0.8, mu: MuSchedule { mu_start: -0.1, mu_end: -0.3 }, ..det };
        let x = simulate_cpt(&det, 500, 0.01, Seed(0)).unwrap();
        let y = simulate_cpt(&neg, 500, 0.01, Seed(0)).unwrap();
        for (u, v) in x.values.iter().zip(&y.values) {
            assert_eq!(*u, -*v);
        }
    }

    #[test]
    fn cpt_past_fold_drops_to_lower_branch() {
        let p = CptParams { r: 1.0, mu: MuSchedule { mu_start: 0.3, mu_end: 0.45 }, sigma: 0.0, p0: 0.85 };
        let path = simulate_cpt(&p, 300_000, 0.01, Seed(0)).unwrap();
        let last = *path.values.last().unwrap();
        // lower root of p - p^3 = 0.45
        assert!(last < -1.0, "ended at {last}");
        assert!((last - last.powi(3) - 0.45).abs() < 1e-2);
    }

    #[test]
    fn fold_mu_value() {
        assert!((cpt_fold_mu(1.0) - 0.384_900_179_459_750_5).abs() < 1e-15);
    }

    #[test]
    fn overflow_is_reported() {
        let p = SptParams { r: 1.0, lambda: 1.0, alpha_vol: 0.0, p0: 100.0 };
        match simulate_spt(&p, 100, 1.0, Seed(0)) {
            Err(Error::SimulationOverflow { step }) => assert!(step >= 1),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn spt_zero_noise_stays_in_well() {
        let p = SptParams { r: 1.0, lambda: 1.0, alpha_vol: 0.0, p0: 1.0 };
        let path = simulate_spt(&p, 10_000, 0.01, Seed(0)).unwrap();
        assert!(path.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn dpt_is_scaled_noise() {
        let h = HurstSchedule::constant(0.5);
        let p = DptParams { noise: Schedule::Hurst(h), scale: 2.0, p0: 1.0 };
        let path = simulate_dpt(&p, 100, 1.0, Seed(5)).unwrap();
        let noise = noise::synth_fbm(100, &h, 1.0, Seed(5)).unwrap();
        for (k, d) in noise.increments.iter().enumerate() {
            assert!((path.values[k + 1] - path.values[k] - 2.0 * d).abs() < 1e-12);
        }
        let s = DptParams { noise: Schedule::Stable(StableSchedule::constant(2.5, 1.0)), scale: 1.0, p0: 0.0 };
        assert!(simulate_dpt(&s, 10, 1.0, Seed(0)).is_err());
    }

    #[test]
    fn multivariate_noise_correlation() {
        let flat = |rho| MultiParams::homogeneous(2, 0.0, 1e-9, MuSchedule::constant(0.0), 0.01, rho, 0.0);
        let paths = simulate_multivariate(&flat(0.0), 10_000, 0.01, Seed(2)).unwrap();
        let c = corr(&diffs(&paths[0].values), &diffs(&paths[1].values));
        assert!(c.abs() < 0.03, "independent corr {c}");
        let paths = simulate_multivariate(&flat(0.8), 10_000, 0.01, Seed(2)).unwrap();
        let c = corr(&diffs(&paths[0].values), &diffs(&paths[1].values));
        assert!((c - 0.8).abs() < 0.05, "coupled corr {c}");
    }

    #[test]
    fn multivariate_rejects_bad_d() {
        let mut p = MultiParams::homogeneous(3, 1.0, 1.0, MuSchedule::constant(0.0), 0.1, 0.5, 1.0);
        p.d[0][1] = 0.4;
        assert!(simulate_multivariate(&p, 10, 0.01, Seed(0)).is_err());
        let mut p = MultiParams::homogeneous(3, 1.0, 1.0, MuSchedule::constant(0.0), 0.1, 0.5, 1.0);
        p.d[0][1] = 2.0;
        p.d[1][0] = 2.0;
        assert!(simulate_multivariate(&p, 10, 0.01, Seed(0)).is_err());
        let single = MultiParams::homogeneous(1, 1.0, 1.0, MuSchedule::constant(0.0), 0.1, 0.5, 1.0);
        assert!(simulate_multivariate(&single, 10, 0.01, Seed(0)).is_err());
        // perfectly correlated (singular) D is PSD and accepted
        let full = MultiParams::homogeneous(2, 1.0, 1.0, MuSchedule::constant(0.0), 0.1, 1.0, 1.0);
        assert!(simulate_multivariate(&full, 10, 0.01, Seed(0)).is_ok());
    }
}
