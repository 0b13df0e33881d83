//! Synthetic price panels built from the simulators.
//!
//! Asset `j` (counted across all groups, in order) is simulated with seed
//! `seed.child(j)`, so a corpus is a pure function of its spec and seed and
//! adding a group at the end leaves earlier assets untouched.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::noise;
use crate::rng::Seed;
use crate::series::PriceSeries;
use crate::sim::{self, CptParams, DptParams, SptParams};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Brownian log-price with per-step standard deviation `sigma`.
    Bm { sigma: f64 },
    Cpt(CptParams),
    Spt(SptParams),
    Dpt(DptParams),
}

/// Deterministic drop appended to a path: the log-price falls by
/// `ln(1 - drop)` linearly over `steps` observations, then continues as a
/// random walk with the path's own return volatility for `tail` more.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcedCrash {
    pub drop: f64,
    pub steps: usize,
    #[serde(default)]
    pub tail: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_level() -> f64 {
    100f64.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusGroup {
    pub prefix: String,
    pub count: usize,
    /// Simulation steps per asset.
    pub n: usize,
    #[serde(default = "one")]
    pub dt: f64,
    /// Keep every `thin`-th simulated state.
    #[serde(default = "one_usize")]
    pub thin: usize,
    /// Added to the simulated state to form the log-price.
    #[serde(default = "default_level")]
    pub level: f64,
    pub generator: Generator,
    #[serde(default)]
    pub crash: Option<ForcedCrash>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    #[serde(default)]
    pub groups: Vec<CorpusGroup>,
}

impl CorpusSpec {
    pub fn n_assets(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }

    fn validate(&self) -> Result<()> {
        for g in &self.groups {
            if g.thin == 0 {
                return Err(invalid(format!("group {}: thin must be at least 1", g.prefix)));
            }
            if let Some(c) = g.crash {
                if !(c.drop > 0.0 && c.drop < 1.0) || c.steps == 0 {
                    return Err(invalid(format!("group {}: crash needs 0 < drop < 1 and steps >= 1", g.prefix)));
                }
            }
            if let Generator::Bm { sigma } = g.generator {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(invalid(format!("group {}: sigma must be nonnegative", g.prefix)));
                }
            }
        }
        Ok(())
    }
}

fn simulate_group(g: &CorpusGroup, seed: Seed) -> Result<Vec<f64>> {
    let path = match &g.generator {
        Generator::Bm { sigma } => {
            let inc = noise::sample_gaussian_increments(g.n, g.dt, seed)?;
            inc.cumulative(0.0).into_iter().map(|v| v * sigma).collect::<Vec<_>>()
        }
        Generator::Cpt(p) => sim::simulate_cpt(p, g.n, g.dt, seed)?.values,
        Generator::Spt(p) => sim::simulate_spt(p, g.n, g.dt, seed)?.values,
        Generator::Dpt(p) => sim::simulate_dpt(p, g.n, g.dt, seed)?.values,
    };
    let mut x: Vec<f64> = path.iter().step_by(g.thin).map(|v| v + g.level).collect();
    if let Some(c) = g.crash {
        let vol = if x.len() > 2 {
            let r: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
            stats::std_dev(&r)
        } else {
            0.0
        };
        let start = *x.last().unwrap();
        let total = (1.0 - c.drop).ln();
        for k in 1..=c.steps {
            x.push(start + total * k as f64 / c.steps as f64);
        }
        let mut rng = seed.stream(1);
        for _ in 0..c.tail {
            let z: f64 = rng.sample(StandardNormal);
            x.push(x.last().unwrap() + vol * z);
        }
    }
    Ok(x)
}

/// Simulate every asset of the spec.
pub fn synth_corpus(spec: &CorpusSpec, seed: Seed) -> Result<Vec<PriceSeries>> {
    spec.validate()?;
    let jobs: Vec<(usize, &CorpusGroup, usize)> = spec
        .groups
        .iter()
        .scan(0usize, |next, g| {
            let base = *next;
            *next += g.count;
            Some((0..g.count).map(move |j| (base + j, g, j)))
        })
        .flatten()
        .collect();
    jobs.par_iter()
        .map(|&(global, g, j)| {
            let x = simulate_group(g, seed.child(global as u64))?;
            PriceSeries::from_log_prices(format!("{}{:03}", g.prefix, j), x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{HurstSchedule, Schedule};
    use crate::sim::MuSchedule;

    #[test]
    fn empty_spec_gives_empty_corpus() {
        assert!(synth_corpus(&CorpusSpec::default(), Seed(1)).unwrap().is_empty());
    }

    #[test]
    fn corpus_is_deterministic() {
        let spec = CorpusSpec {
            groups: vec![
                CorpusGroup {
                    prefix: "dpt".into(),
                    count: 3,
                    n: 300,
                    dt: 1.0,
                    thin: 1,
                    level: 0.0,
                    generator: Generator::Dpt(DptParams {
                        noise: Schedule::Hurst(HurstSchedule::linear(0.5, 0.9, 100, 300)),
                        scale: 0.01,
                        p0: 0.0,
                    }),
                    crash: Some(ForcedCrash { drop: 0.25, steps: 5, tail: 10 }),
                },
                CorpusGroup {
                    prefix: "bm".into(),
                    count: 2,
                    n: 300,
                    dt: 1.0,
                    thin: 1,
                    level: 0.0,
                    generator: Generator::Bm { sigma: 0.01 },
                    crash: None,
                },
            ],
        };
        let a = synth_corpus(&spec, Seed(11)).unwrap();
        let b = synth_corpus(&spec, Seed(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert_eq!(a[0].id, "dpt000");
        assert_eq!(a[4].id, "bm001");
        assert_eq!(a[0].len(), 301 + 5 + 10);
        let x = &a[0].log_prices;
        assert!((x[305] - x[300] - 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_cpt_matches_simulator() {
        let p = CptParams { r: 1.0, mu: MuSchedule { mu_start: 0.3, mu_end: 0.45 }, sigma: 0.0, p0: 0.85 };
        let spec = CorpusSpec {
            groups: vec![CorpusGroup {
                prefix: "cpt".into(),
                count: 1,
                n: 1000,
                dt: 0.01,
                thin: 1,
                level: 0.0,
                generator: Generator::Cpt(p),
                crash: None,
            }],
        };
        let c = synth_corpus(&spec, Seed(0)).unwrap();
        let direct = sim::simulate_cpt(&p, 1000, 0.01, Seed(99)).unwrap();
        assert_eq!(c[0].log_prices, direct.values);
    }
}
