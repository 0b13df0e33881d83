//! Log-periodic power law: price formula, hazard rate and the profiled
//! least-squares calibration.
//!
//! The log-price model is
//!
//! ```text
//! ln p(t) = A + B (tc - t)^m + (tc - t)^m [C1 cos(w ln(tc - t)) + C2 sin(w ln(tc - t))]
//! ```
//!
//! valid for `t < tc` only. For fixed `(tc, m, w)` the four amplitudes are
//! a linear least-squares problem, so calibration searches the three
//! nonlinear parameters and profiles the linear ones out.
//!
//! The crash amplitude `kappa` and the jump process never enter the fitted
//! formula; the model is sign-symmetric, so anti-bubbles need no special
//! handling.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nelder_mead::{self, Options};
use crate::series::PriceSeries;

/// Condition number (after column scaling) beyond which the linear
/// subproblem is reported as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpplParams {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub m: f64,
    pub omega: f64,
    pub tc: f64,
}

impl LpplParams {
    /// Oscillation amplitude `sqrt(C1^2 + C2^2)`.
    pub fn c(&self) -> f64 {
        self.c1.hypot(self.c2)
    }

    /// Phase such that the oscillation equals `C cos(w ln(tc - t) - phi)`.
    pub fn phi(&self) -> f64 {
        self.c2.atan2(self.c1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m < 1.0) {
            return Err(invalid(format!("m = {} outside (0, 1)", self.m)));
        }
        if !(self.omega > 0.0) {
            return Err(invalid(format!("omega = {} must be positive", self.omega)));
        }
        Ok(())
    }

    pub fn log_price(&self, t: f64) -> Result<f64> {
        if !(t < self.tc) {
            return Err(Error::Domain { t, tc: self.tc });
        }
        let dt = self.tc - t;
        let pw = dt.powf(self.m);
        let (s, c) = (self.omega * dt.ln()).sin_cos();
        Ok(self.a + self.b * pw + pw * (self.c1 * c + self.c2 * s))
    }
}

/// Power-law hazard rate with log-periodic modulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    pub alpha_h: f64,
    pub beta_h: f64,
    pub m: f64,
    pub omega: f64,
    pub phi: f64,
    pub tc: f64,
}

impl HazardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_h > 0.0) {
            return Err(invalid("hazard amplitude alpha_h must be positive"));
        }
        if !(self.beta_h.abs() <= 1.0) {
            return Err(invalid(format!("|beta_h| = {} exceeds 1", self.beta_h.abs())));
        }
        if !(self.m > 0.0 && self.m < 1.0) {
            return Err(invalid(format!("m = {} outside (0, 1)", self.m)));
        }
        if !(self.omega > 0.0) {
            return Err(invalid("omega must be positive"));
        }
        Ok(())
    }

    pub fn rate(&self, t: f64) -> Result<f64> {
        self.validate()?;
        if !(t < self.tc) {
            return Err(Error::Domain { t, tc: self.tc });
        }
        let dt = self.tc - t;
        let osc = 1.0 + self.beta_h * (self.omega * dt.ln() - self.phi).cos();
        // |beta| <= 1 keeps osc >= 0 up to rounding.
        Ok((self.alpha_h * dt.powf(self.m - 1.0) * osc).max(0.0))
    }
}

pub fn lppl_log_price(params: &LpplParams, t: f64) -> Result<f64> {
    params.log_price(t)
}

pub fn hazard_rate(params: &HazardParams, t: f64) -> Result<f64> {
    params.rate(t)
}

/// Profiled linear amplitudes for a fixed `(tc, m, omega)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolution {
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub ssr: f64,
}

impl LinearSolution {
    pub fn params(&self, tc: f64, m: f64, omega: f64) -> LpplParams {
        LpplParams { a: self.a, b: self.b, c1: self.c1, c2: self.c2, m, omega, tc }
    }
}

/// Sum of squared residuals of `params` against the series.
pub fn ssr(params: &LpplParams, series: &PriceSeries) -> Result<f64> {
    let mut acc = 0.0;
    for (&t, &y) in series.times.iter().zip(&series.log_prices) {
        let r = y - params.log_price(t)?;
        acc += r * r;
    }
    Ok(acc)
}

fn basis_row(tc: f64, m: f64, omega: f64, t: f64, with_osc: bool) -> [f64; 4] {
    let dt = tc - t;
    let pw = dt.powf(m);
    if with_osc {
        let (s, c) = (omega * dt.ln()).sin_cos();
        [1.0, pw, pw * c, pw * s]
    } else {
        [1.0, pw, 0.0, 0.0]
    }
}

/// Least squares on the first `cols` basis functions.
fn linear_lsq(
    tc: f64,
    m: f64,
    omega: f64,
    times: &[f64],
    y: &[f64],
    cols: usize,
) -> Result<([f64; 4], f64)> {
    let n = times.len();
    if let Some(&t) = times.iter().find(|&&t| !(t < tc)) {
        return Err(Error::Domain { t, tc });
    }
    let mut x = DMatrix::<f64>::zeros(n, cols);
    for (i, &t) in times.iter().enumerate() {
        let row = basis_row(tc, m, omega, t, cols == 4);
        for j in 0..cols {
            x[(i, j)] = row[j];
        }
    }
    let norms: Vec<f64> = (0..cols).map(|j| x.column(j).norm()).collect();
    if norms.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateDesign { cond: f64::INFINITY });
    }
    for j in 0..cols {
        x.column_mut(j).scale_mut(1.0 / norms[j]);
    }
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yv;
    let svd = r.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::DegenerateDesign { cond });
    }
    let u = svd.u.as_ref().expect("U requested");
    let vt = svd.v_t.as_ref().expect("V^T requested");
    let uty = u.transpose() * qty;
    let mut coef = [0.0; 4];
    for j in 0..cols {
        let mut v = 0.0;
        for k in 0..cols {
            v += vt[(k, j)] * uty[k] / svd.singular_values[k];
        }
        coef[j] = v / norms[j];
    }
    let mut ssr = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let row = basis_row(tc, m, omega, t, cols == 4);
        let fit: f64 = (0..cols).map(|j| row[j] * coef[j]).sum();
        ssr += (y[i] - fit).powi(2);
    }
    Ok((coef, ssr))
}

/// Exact least-squares amplitudes `(A, B, C1, C2)` for fixed nonlinear
/// parameters.
pub fn solve_linear_params(tc: f64, m: f64, omega: f64, series: &PriceSeries) -> Result<LinearSolution> {
    if series.len() < 8 {
        return Err(Error::InsufficientData { needed: 8, got: series.len() });
    }
    let (c, ssr) = linear_lsq(tc, m, omega, &series.times, &series.log_prices, 4)?;
    Ok(LinearSolution { a: c[0], b: c[1], c1: c[2], c2: c[3], ssr })
}

/// Bounds and density of the calibration search. `None` bounds on `tc`
/// default to `(last, last + 0.5 * span]` where `span` is the observed time
/// range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub tc_min: Option<f64>,
    pub tc_max: Option<f64>,
    pub m_min: f64,
    pub m_max: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_tc: usize,
    pub n_m: usize,
    pub n_omega: usize,
    pub top_k: usize,
    pub max_evals: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            tc_min: None,
            tc_max: None,
            m_min: 0.1,
            m_max: 0.9,
            omega_min: 2.0,
            omega_max: 25.0,
            n_tc: 20,
            n_m: 9,
            n_omega: 12,
            top_k: 5,
            max_evals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0 < self.m_min && self.m_min <= self.m_max && self.m_max < 1.0) {
            return Err(invalid("m bounds must satisfy 0 < m_min <= m_max < 1"));
        }
        if !(0.0 < self.omega_min && self.omega_min <= self.omega_max) {
            return Err(invalid("omega bounds must satisfy 0 < omega_min <= omega_max"));
        }
        if self.n_tc == 0 || self.n_m == 0 || self.n_omega == 0 || self.top_k == 0 {
            return Err(invalid("grid sizes and top_k must be positive"));
        }
        Ok(())
    }

    /// Grid nodes in lexicographic `(tc, m, omega)` order.
    pub fn grid(&self, series: &PriceSeries) -> Result<Vec<[f64; 3]>> {
        let b = self.bounds(series)?;
        let tcs = self.tc_nodes(series, &b);
        let ms = linspace(self.m_min, self.m_max, self.n_m);
        let ws = linspace(self.omega_min, self.omega_max, self.n_omega);
        let mut nodes = Vec::with_capacity(tcs.len() * ms.len() * ws.len());
        for &tc in &tcs {
            for &m in &ms {
                for &w in &ws {
                    nodes.push([tc, m, w]);
                }
            }
        }
        Ok(nodes)
    }

    fn bounds(&self, series: &PriceSeries) -> Result<Bounds> {
        let first = series.times[0];
        let last = *series.times.last().unwrap();
        let tc_lo = self.tc_min.unwrap_or(last);
        let tc_hi = self.tc_max.unwrap_or(last + 0.5 * (last - first));
        if !(tc_lo >= last && tc_hi > tc_lo) {
            return Err(invalid(format!(
                "tc bounds [{tc_lo}, {tc_hi}] must lie after the last observation {last}"
            )));
        }
        Ok(Bounds { lo: [tc_lo, self.m_min, self.omega_min], hi: [tc_hi, self.m_max, self.omega_max] })
    }

    fn tc_nodes(&self, series: &PriceSeries, b: &Bounds) -> Vec<f64> {
        let last = *series.times.last().unwrap();
        if self.tc_min.is_none() || b.lo[0] <= last {
            // open at the last observation
            let w = b.hi[0] - b.lo[0];
            (1..=self.n_tc).map(|i| b.lo[0] + w * i as f64 / self.n_tc as f64).collect()
        } else {
            linspace(b.lo[0], b.hi[0], self.n_tc)
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Calibration result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpplFit {
    pub params: LpplParams,
    pub ssr: f64,
    pub n_obs: usize,
    pub grid_evals: usize,
    pub converged: bool,
    /// Best residual over the same `(tc, m)` grid with the oscillation
    /// switched off. The gap to `ssr` is the overfitting diagnostic.
    pub power_law_ssr: f64,
}

impl LpplFit {
    /// Relative residual reduction bought by the log-periodic terms.
    pub fn oscillation_gain(&self) -> f64 {
        if self.power_law_ssr > 0.0 {
            1.0 - self.ssr / self.power_law_ssr
        } else {
            0.0
        }
    }

    pub fn record(&self) -> FitRecord {
        let p = &self.params;
        FitRecord {
            a: p.a,
            b: p.b,
            c1: p.c1,
            c2: p.c2,
            c: p.c(),
            phi: p.phi(),
            m: p.m,
            omega: p.omega,
            tc: p.tc,
            ssr: self.ssr,
            n_obs: self.n_obs,
            converged: self.converged,
        }
    }
}

/// JSON layout of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub phi: f64,
    pub m: f64,
    pub omega: f64,
    pub tc: f64,
    pub ssr: f64,
    pub n_obs: usize,
    pub converged: bool,
}

fn node_cmp(a: &(f64, [f64; 3]), b: &(f64, [f64; 3])) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1[0].total_cmp(&b.1[0]))
        .then(a.1[1].total_cmp(&b.1[1]))
        .then(a.1[2].total_cmp(&b.1[2]))
}

/// Grid search over `(tc, m, omega)` followed by Nelder-Mead refinement of
/// the best `top_k` nodes.
pub fn fit_lppl(series: &PriceSeries, search: &SearchConfig) -> Result<LpplFit> {
    if series.len() < 30 {
        return Err(Error::InsufficientData { needed: 30, got: series.len() });
    }
    series.validate()?;
    search.validate()?;
    let bounds = search.bounds(series)?;
    let grid = search.grid(series)?;
    let times = &series.times;
    let y = &series.log_prices;

    let objective = |x: &[f64]| -> f64 {
        for i in 0..3 {
            if x[i] < bounds.lo[i] || x[i] > bounds.hi[i] {
                return f64::INFINITY;
            }
        }
        if x[0] <= *times.last().unwrap() {
            return f64::INFINITY;
        }
        linear_lsq(x[0], x[1], x[2], times, y, 4).map(|(_, s)| s).unwrap_or(f64::INFINITY)
    };

    let mut scored: Vec<(f64, [f64; 3])> = grid.par_iter().map(|node| (objective(node), *node)).collect();
    scored.retain(|(s, _)| s.is_finite());
    if scored.is_empty() {
        return Err(Error::FitFailure("every grid node gave a degenerate design".into()));
    }
    scored.sort_by(node_cmp);
    let grid_best = scored[0].0;

    let step = [
        (bounds.hi[0] - bounds.lo[0]) / search.n_tc as f64 / 2.0,
        ((bounds.hi[1] - bounds.lo[1]) / search.n_m as f64 / 2.0).max(1e-3),
        ((bounds.hi[2] - bounds.lo[2]) / search.n_omega as f64 / 2.0).max(1e-3),
    ];
    let opts = Options { max_evals: search.max_evals, ..Options::default() };
    let starts: Vec<[f64; 3]> = scored.iter().take(search.top_k).map(|(_, n)| *n).collect();
    let refined: Vec<(f64, [f64; 3], bool)> = starts
        .par_iter()
        .map(|start| {
            let first = nelder_mead::minimize(&objective, start, &step, opts);
            // one restart from the converged point to escape a collapsed simplex
            let small: Vec<f64> = step.iter().map(|s| s / 10.0).collect();
            let second = nelder_mead::minimize(&objective, &first.x, &small, opts);
            let best = if second.f <= first.f { second } else { first };
            (best.f, [best.x[0], best.x[1], best.x[2]], best.converged)
        })
        .collect();

    let (best_ssr, best_x, converged) = refined
        .into_iter()
        .filter(|r| r.0.is_finite())
        .min_by(|a, b| node_cmp(&(a.0, a.1), &(b.0, b.1)))
        .unwrap_or((grid_best, scored[0].1, false));
    let (best_ssr, best_x) = if best_ssr <= grid_best { (best_ssr, best_x) } else { (grid_best, scored[0].1) };

    let (coef, ssr) = linear_lsq(best_x[0], best_x[1], best_x[2], times, y, 4)?;
    debug_assert!(ssr <= best_ssr * (1.0 + 1e-12) + 1e-300);
    let params = LpplParams { a: coef[0], b: coef[1], c1: coef[2], c2: coef[3], m: best_x[1], omega: best_x[2], tc: best_x[0] };

    let power_law_ssr = power_law_baseline(search, &bounds, &grid, times, y, opts);
    Ok(LpplFit { params, ssr, n_obs: series.len(), grid_evals: grid.len(), converged, power_law_ssr })
}

/// Best residual of the oscillation-free model, refined like the full fit
/// so the two residuals are comparable.
fn power_law_baseline(search: &SearchConfig, bounds: &Bounds, grid: &[[f64; 3]], times: &[f64], y: &[f64], opts: Options) -> f64 {
    let last = *times.last().unwrap();
    let objective = |x: &[f64]| -> f64 {
        for i in 0..2 {
            if x[i] < bounds.lo[i] || x[i] > bounds.hi[i] {
                return f64::INFINITY;
            }
        }
        if x[0] <= last {
            return f64::INFINITY;
        }
        linear_lsq(x[0], x[1], 0.0, times, y, 2).map(|(_, s)| s).unwrap_or(f64::INFINITY)
    };
    let mut nodes: Vec<[f64; 2]> = grid.iter().map(|n| [n[0], n[1]]).collect();
    nodes.dedup();
    let mut scored: Vec<(f64, [f64; 3])> = nodes.par_iter().map(|n| (objective(n), [n[0], n[1], 0.0])).collect();
    scored.retain(|(s, _)| s.is_finite());
    scored.sort_by(node_cmp);
    let step = [
        (bounds.hi[0] - bounds.lo[0]) / search.n_tc as f64 / 2.0,
        ((bounds.hi[1] - bounds.lo[1]) / search.n_m as f64 / 2.0).max(1e-3),
    ];
    scored
        .par_iter()
        .take(search.top_k)
        .map(|(s, n)| nelder_mead::minimize(&objective, &n[..2], &step, opts).f.min(*s))
        .reduce(|| f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LpplParams {
        LpplParams { a: 1.0, b: -0.02, c1: 0.002, c2: -0.0015, m: 0.5, omega: 8.0, tc: 550.0 }
    }

    fn synthetic(p: &LpplParams, n: usize) -> PriceSeries {
        let y = (0..n).map(|t| p.log_price(t as f64).unwrap()).collect();
        PriceSeries::from_log_prices("lppl", y).unwrap()
    }

    #[test]
    fn degenerate_parameters_give_constant() {
        let p = LpplParams { a: 3.5, b: 0.0, c1: 0.0, c2: 0.0, m: 0.4, omega: 7.0, tc: 10.0 };
        for t in [-100.0, 0.0, 9.99] {
            assert_eq!(p.log_price(t).unwrap(), 3.5);
        }
    }

    #[test]
    fn pure_power_law_value() {
        let p = LpplParams { a: 0.0, b: 1.0, c1: 0.0, c2: 0.0, m: 0.5, omega: 7.0, tc: 100.0 };
        assert_eq!(p.log_price(96.0).unwrap(), 2.0);
    }

    #[test]
    fn evaluation_after_tc_is_a_domain_error() {
        let p = params();
        assert!(matches!(p.log_price(550.0), Err(Error::Domain { .. })));
        assert!(matches!(p.log_price(600.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn hazard_examples() {
        let h = HazardParams { alpha_h: 1.0, beta_h: 0.5, m: 0.5, omega: 6.0, phi: 0.0, tc: 100.0 };
        assert!((h.rate(99.0).unwrap() - 1.5).abs() < 1e-15);

        let pure = HazardParams { beta_h: 0.0, ..h };
        let mut prev = 0.0;
        for t in [0.0, 50.0, 90.0, 99.0, 99.9] {
            let v = pure.rate(t).unwrap();
            assert!(v > prev);
            prev = v;
        }

        // ln(tc - t) = 0 at t = 99, so phi = pi puts the cosine at -1
        let edge = HazardParams { beta_h: 1.0, phi: std::f64::consts::PI, ..h };
        assert!(edge.rate(99.0).unwrap().abs() < 1e-15);

        assert!(HazardParams { beta_h: 1.5, ..h }.rate(0.0).is_err());
        assert!(h.rate(100.0).is_err());
    }

    #[test]
    fn linear_solve_round_trip() {
        let p = params();
        let s = synthetic(&p, 500);
        let sol = solve_linear_params(p.tc, p.m, p.omega, &s).unwrap();
        assert!((sol.a - p.a).abs() < 1e-9);
        assert!((sol.b - p.b).abs() < 1e-9);
        assert!((sol.c1 - p.c1).abs() < 1e-9);
        assert!((sol.c2 - p.c2).abs() < 1e-9);
        assert!(sol.ssr < 1e-18, "ssr {}", sol.ssr);
    }

    #[test]
    fn constant_series_fits_constant() {
        let s = PriceSeries::from_log_prices("c", vec![5.0; 40]).unwrap();
        let sol = solve_linear_params(60.0, 0.5, 6.0, &s).unwrap();
        assert!((sol.a - 5.0).abs() < 1e-10);
        assert!(sol.b.abs() < 1e-10 && sol.c1.abs() < 1e-10 && sol.c2.abs() < 1e-10);
        assert!(sol.ssr < 1e-20);
    }

    #[test]
    fn perturbation_increases_ssr() {
        let p = params();
        let mut s = synthetic(&p, 200);
        for (i, v) in s.log_prices.iter_mut().enumerate() {
            *v += 0.01 * ((i * 7919 % 13) as f64 - 6.0) / 6.0;
        }
        let sol = solve_linear_params(p.tc, p.m, p.omega, &s).unwrap();
        let base = sol.params(p.tc, p.m, p.omega);
        for k in 0..4 {
            for d in [-1e-3, 1e-3] {
                let mut q = base;
                match k {
                    0 => q.a += d,
                    1 => q.b += d,
                    2 => q.c1 += d,
                    _ => q.c2 += d,
                }
                assert!(ssr(&q, &s).unwrap() > sol.ssr);
            }
        }
    }

    #[test]
    fn degenerate_design_is_rejected() {
        // A single repeated (tc - t) makes all non-constant basis columns
        // collinear with the constant.
        let s = PriceSeries::new("d", (0..10).map(|i| i as f64 * 1e-13).collect(), vec![1.0; 10]).unwrap();
        assert!(matches!(
            solve_linear_params(1e6, 0.5, 3.0, &s),
            Err(Error::DegenerateDesign { .. })
        ));
    }

    #[test]
    fn short_series_is_rejected() {
        let s = PriceSeries::from_log_prices("s", vec![1.0; 7]).unwrap();
        assert!(matches!(solve_linear_params(10.0, 0.5, 3.0, &s), Err(Error::InsufficientData { .. })));
        let s = PriceSeries::from_log_prices("s", vec![1.0; 29]).unwrap();
        assert!(matches!(fit_lppl(&s, &SearchConfig::default()), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn noiseless_fit_recovers_parameters() {
        let p = params();
        let s = synthetic(&p, 500);
        let fit = fit_lppl(&s, &SearchConfig::default()).unwrap();
        let q = fit.params;
        assert!((q.tc - p.tc).abs() < 1.0, "tc {}", q.tc);
        assert!((q.m - p.m).abs() < 0.02, "m {}", q.m);
        assert!((q.omega - p.omega).abs() < 0.1, "omega {}", q.omega);
        assert_eq!(fit.grid_evals, 20 * 9 * 12);
        assert!(fit.ssr <= fit.power_law_ssr);
    }
}
