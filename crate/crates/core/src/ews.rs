//! Rolling early-warning-signal estimators.
//!
//! A window of size `w` ending at observation `e` covers the log-prices
//! `e - w ..= e`, i.e. `w` returns. Windows end at `w, w + stride, ...`, so a
//! stride-`s` output is the stride-1 output subsampled every `s` windows.
//!
//! Self-similarity exponents are read off the increment structure function
//! `S_n(tau) = mean |x(t + tau) - x(t)|^n`: a least-squares line of
//! `ln S_n` on `ln tau` has slope `n * Delta_n`. The intercept absorbs the
//! additive constant.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::series::PriceSeries;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Signal {
    Volatility,
    Skewness,
    Lag1Ac,
    AnomalousDim,
    /// Generalized Hurst exponent of the given order.
    Ghe(u32),
    Conformality,
    CrossCov,
}

impl Signal {
    /// Signals computed from a single asset.
    pub fn is_univariate(&self) -> bool {
        !matches!(self, Signal::CrossCov)
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Volatility => f.write_str("volatility"),
            Signal::Skewness => f.write_str("skewness"),
            Signal::Lag1Ac => f.write_str("lag1_ac"),
            Signal::AnomalousDim => f.write_str("anomalous_dim"),
            Signal::Ghe(n) => write!(f, "ghe_{n}"),
            Signal::Conformality => f.write_str("conformality"),
            Signal::CrossCov => f.write_str("cross_cov"),
        }
    }
}

impl FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "volatility" => Signal::Volatility,
            "skewness" => Signal::Skewness,
            "lag1_ac" => Signal::Lag1Ac,
            "anomalous_dim" => Signal::AnomalousDim,
            "conformality" => Signal::Conformality,
            "cross_cov" => Signal::CrossCov,
            other => match other.strip_prefix("ghe_").and_then(|n| n.parse::<u32>().ok()) {
                Some(n) if n > 0 => Signal::Ghe(n),
                _ => return Err(invalid(format!("unknown signal '{other}'"))),
            },
        })
    }
}

impl TryFrom<String> for Signal {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Signal> for String {
    fn from(s: Signal) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Returns per window.
    pub window: usize,
    pub stride: usize,
    /// Lags for the scaling regressions.
    pub tau_grid: Vec<usize>,
    /// Orders for the generalized Hurst exponents.
    pub orders: Vec<u32>,
    /// Remove a least-squares line (instead of only the mean) before the
    /// structure functions are computed.
    pub detrend: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { window: 252, stride: 5, tau_grid: vec![2, 4, 8, 16, 32], orders: vec![1, 2, 4], detrend: false }
    }
}

impl WindowConfig {
    /// Window used for the scaling estimators (anomalous dimension,
    /// generalized Hurst exponents, conformality).
    pub fn scaling_default() -> Self {
        WindowConfig { window: 512, ..Self::default() }
    }

    fn check_basic(&self, min_window: usize) -> Result<()> {
        if self.window < min_window {
            return Err(invalid(format!("window must be at least {min_window}, got {}", self.window)));
        }
        if self.stride == 0 {
            return Err(invalid("stride must be at least 1"));
        }
        Ok(())
    }

    fn check_scaling(&self, min_taus: usize) -> Result<()> {
        self.check_basic(2)?;
        if self.tau_grid.len() < min_taus {
            return Err(invalid(format!("tau_grid needs at least {min_taus} lags")));
        }
        if self.tau_grid.iter().any(|&t| t < 2) || self.tau_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("tau_grid entries must be >= 2 and strictly increasing"));
        }
        let max_tau = *self.tau_grid.last().unwrap();
        if self.window <= 4 * max_tau {
            return Err(invalid(format!("window {} must exceed 4 x max tau = {}", self.window, 4 * max_tau)));
        }
        Ok(())
    }
}

/// Rolling estimate of one signal. `None` marks a window whose estimate is
/// undefined (zero variance, zero structure function, overflow).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwsSeries {
    pub asset_id: String,
    pub signal: Signal,
    pub times: Vec<f64>,
    pub values: Vec<Option<f64>>,
}

impl EwsSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Non-missing values in window order.
    pub fn present(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

fn window_ends(n_obs: usize, cfg: &WindowConfig) -> Result<Vec<usize>> {
    if n_obs < cfg.window + 1 {
        return Err(Error::InsufficientData { needed: cfg.window + 1, got: n_obs });
    }
    Ok((cfg.window..n_obs).step_by(cfg.stride).collect())
}

fn rolling<F>(series: &PriceSeries, cfg: &WindowConfig, signal: Signal, f: F) -> Result<EwsSeries>
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    let ends = window_ends(series.len(), cfg)?;
    let x = &series.log_prices;
    let values = ends
        .par_iter()
        .map(|&e| f(&x[e - cfg.window..=e]).filter(|v| v.is_finite()))
        .collect();
    Ok(EwsSeries {
        asset_id: series.id.clone(),
        signal,
        times: ends.iter().map(|&e| series.times[e]).collect(),
        values,
    })
}

fn diffs(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Sample standard deviation of returns.
pub fn volatility(returns: &[f64]) -> Option<f64> {
    (returns.len() >= 2).then(|| stats::std_dev(returns))
}

/// Adjusted Fisher-Pearson skewness of returns.
pub fn skewness(returns: &[f64]) -> Option<f64> {
    stats::adjusted_skewness(returns)
}

/// Pearson correlation of consecutive return pairs.
pub fn lag1_autocorr(returns: &[f64]) -> Option<f64> {
    let n = returns.len();
    if n < 3 {
        return None;
    }
    stats::pearson(&returns[..n - 1], &returns[1..])
}

pub fn rolling_volatility(series: &PriceSeries, cfg: &WindowConfig) -> Result<EwsSeries> {
    cfg.check_basic(2)?;
    rolling(series, cfg, Signal::Volatility, |x| volatility(&diffs(x)))
}

pub fn rolling_skewness(series: &PriceSeries, cfg: &WindowConfig) -> Result<EwsSeries> {
    cfg.check_basic(3)?;
    rolling(series, cfg, Signal::Skewness, |x| skewness(&diffs(x)))
}

pub fn rolling_lag1_autocorr(series: &PriceSeries, cfg: &WindowConfig) -> Result<EwsSeries> {
    cfg.check_basic(4)?;
    rolling(series, cfg, Signal::Lag1Ac, |x| lag1_autocorr(&diffs(x)))
}

fn centred(x: &[f64], detrend: bool) -> Vec<f64> {
    let n = x.len() as f64;
    let m = stats::mean(x);
    if !detrend {
        return x.iter().map(|v| v - m).collect();
    }
    let tm = (n - 1.0) / 2.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 - tm;
        sxy += dt * (v - m);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    x.iter().enumerate().map(|(i, v)| v - m - slope * (i as f64 - tm)).collect()
}

/// `mean |x(t + tau) - x(t)|^order`.
pub fn structure_function(x: &[f64], tau: usize, order: u32) -> f64 {
    let count = x.len() - tau;
    let sum: f64 = (0..count).map(|t| (x[t + tau] - x[t]).abs().powi(order as i32)).sum();
    sum / count as f64
}

/// Least-squares `(slope, intercept)` of `ln s` on `ln tau`. `None` when a
/// structure function is zero or not finite.
pub fn scaling_fit(taus: &[usize], s: &[f64]) -> Option<(f64, f64)> {
    if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = taus.iter().map(|&t| (t as f64).ln()).collect();
    let ly: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let mx = stats::mean(&lx);
    let my = stats::mean(&ly);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Dispersion across lags of the per-lag exponents
/// `(ln S2(tau) - intercept) / (2 ln tau)`.
pub fn conformality_from_structure(taus: &[usize], s2: &[f64]) -> Option<f64> {
    let (_, intercept) = scaling_fit(taus, s2)?;
    let per_tau: Vec<f64> = taus
        .iter()
        .zip(s2)
        .map(|(&t, s)| (s.ln() - intercept) / (2.0 * (t as f64).ln()))
        .collect();
    Some(stats::std_dev(&per_tau))
}

fn exponent(x: &[f64], cfg: &WindowConfig, order: u32) -> Option<f64> {
    let c = centred(x, cfg.detrend);
    let s: Vec<f64> = cfg.tau_grid.iter().map(|&t| structure_function(&c, t, order)).collect();
    scaling_fit(&cfg.tau_grid, &s).map(|(slope, _)| slope / order as f64)
}

/// Second-order scaling exponent per window (`slope / 2`).
pub fn anomalous_dimension(series: &PriceSeries, cfg: &WindowConfig) -> Result<EwsSeries> {
    cfg.check_scaling(2)?;
    rolling(series, cfg, Signal::AnomalousDim, |x| exponent(x, cfg, 2))
}

/// Per-order scaling exponents `slope / n`, one series per configured order.
pub fn generalized_hurst(series: &PriceSeries, cfg: &WindowConfig) -> Result<Vec<EwsSeries>> {
    cfg.check_scaling(2)?;
    if cfg.orders.is_empty() || cfg.orders.contains(&0) {
        return Err(invalid("orders must be a nonempty list of positive integers"));
    }
    cfg.orders
        .iter()
        .map(|&n| rolling(series, cfg, Signal::Ghe(n), |x| exponent(x, cfg, n)))
        .collect()
}

pub fn conformality_index(series: &PriceSeries, cfg: &WindowConfig) -> Result<EwsSeries> {
    cfg.check_scaling(3)?;
    rolling(series, cfg, Signal::Conformality, |x| {
        let c = centred(x, cfg.detrend);
        let s: Vec<f64> = cfg.tau_grid.iter().map(|&t| structure_function(&c, t, 2)).collect();
        conformality_from_structure(&cfg.tau_grid, &s)
    })
}

/// Mean pairwise sample covariance of returns across aligned assets.
pub fn cross_covariance(series_list: &[PriceSeries], cfg: &WindowConfig) -> Result<EwsSeries> {
    cfg.check_basic(2)?;
    if series_list.len() < 2 {
        return Err(invalid(format!("cross-covariance needs at least 2 series, got {}", series_list.len())));
    }
    let base = &series_list[0];
    let misaligned: Vec<String> =
        series_list[1..].iter().filter(|s| s.times != base.times).map(|s| s.id.clone()).collect();
    if !misaligned.is_empty() {
        return Err(Error::Alignment(misaligned));
    }
    let ends = window_ends(base.len(), cfg)?;
    let k = series_list.len();
    let values = ends
        .par_iter()
        .map(|&e| {
            let rets: Vec<Vec<f64>> =
                series_list.iter().map(|s| diffs(&s.log_prices[e - cfg.window..=e])).collect();
            let mut acc = 0.0;
            let mut pairs = 0usize;
            for i in 0..k {
                for j in i + 1..k {
                    acc += stats::covariance(&rets[i], &rets[j]);
                    pairs += 1;
                }
            }
            Some(acc / pairs as f64).filter(|v| v.is_finite())
        })
        .collect();
    Ok(EwsSeries {
        asset_id: "panel".into(),
        signal: Signal::CrossCov,
        times: ends.iter().map(|&e| base.times[e]).collect(),
        values,
    })
}

/// Compute one univariate signal. `Ghe(n)` uses order `n` regardless of
/// `cfg.orders`.
pub fn compute(series: &PriceSeries, signal: Signal, cfg: &WindowConfig) -> Result<EwsSeries> {
    match signal {
        Signal::Volatility => rolling_volatility(series, cfg),
        Signal::Skewness => rolling_skewness(series, cfg),
        Signal::Lag1Ac => rolling_lag1_autocorr(series, cfg),
        Signal::AnomalousDim => anomalous_dimension(series, cfg),
        Signal::Ghe(n) => {
            let one = WindowConfig { orders: vec![n], ..cfg.clone() };
            Ok(generalized_hurst(series, &one)?.remove(0))
        }
        Signal::Conformality => conformality_index(series, cfg),
        Signal::CrossCov => Err(invalid("cross_cov needs a panel; use cross_covariance")),
    }
}
