use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use phasecrash_core::corpus::{synth_corpus, CorpusSpec};
use phasecrash_core::io::{self, Calendar, RunManifest};
use phasecrash_core::lppl::{fit_lppl, FitRecord};
use phasecrash_core::study::{detect_crashes, run_study};
use phasecrash_core::{
    ews, sim, CptParams, DptParams, HurstSchedule, MuSchedule, MultiParams, PriceSeries, SearchConfig, Seed,
    Signal, SimPath, SptParams, StableSchedule, StudyConfig, WindowConfig,
};
use phasecrash_core::noise::Schedule;

use crate::args::*;
use crate::config::resolve;

/// A command's result before it touches the disk.
pub struct Output {
    pub files: Vec<(&'static str, Vec<u8>)>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
}

/// Raised when a flag combination is rejected before any computation.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Files whose bytes determine the run, in a fixed order.
pub fn inputs(cli: &Cli) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = cli.config.iter().cloned().collect();
    match &cli.command {
        Command::FitLppl(a) => v.push(a.input.clone()),
        Command::Ews(a) => v.push(a.input.clone()),
        Command::DetectCrashes(a) => v.push(a.input.clone()),
        Command::Study(a) => v.extend(a.input.iter().chain(&a.corpus).cloned()),
        Command::Synth(a) => v.push(a.spec.clone()),
        Command::Simulate(_) | Command::Replay(_) => {}
    }
    v
}

pub fn input_digest(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn execute(cli: &Cli) -> Result<Output> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Simulate(a) => simulate(a, config, cli.seed.unwrap_or(0)),
        Command::FitLppl(a) => fit(a, config),
        Command::Ews(a) => ews_cmd(a, config),
        Command::DetectCrashes(a) => detect(a, config),
        Command::Study(a) => study(a, config, cli.seed),
        Command::Synth(a) => synth(a, cli.seed.unwrap_or(0)),
        Command::Replay(_) => unreachable!("replay is dispatched in main"),
    }
}

/// Write outputs plus `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &Output, manifest: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, bytes) in &out.files {
        io::atomic_write(&dir.join(name), bytes)?;
    }
    io::atomic_write(&dir.join("manifest.json"), &io::to_json_bytes(manifest)?)?;
    Ok(())
}

fn calendar(arg: Option<CalendarArg>, default: Calendar) -> Calendar {
    match arg {
        Some(CalendarArg::AsIs) => Calendar::AsIs,
        Some(CalendarArg::Intersect) => Calendar::IntersectDates,
        None => default,
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> phasecrash_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

// ---- simulate ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub kind: Kind,
    pub n: usize,
    pub dt: f64,
    pub paths: usize,
    pub cpt: CptParams,
    pub spt: SptParams,
    pub dpt: DptParams,
    pub multi: MultiParams,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let mu = MuSchedule { mu_start: 0.0, mu_end: 0.45 };
        SimulateConfig {
            kind: Kind::Cpt,
            n: 2000,
            dt: 0.01,
            paths: 1,
            cpt: CptParams { r: 1.0, mu, sigma: 0.05, p0: 1.0 },
            spt: SptParams { r: 1.0, lambda: 1.0, alpha_vol: 0.02, p0: 1.0 },
            dpt: DptParams { noise: Schedule::Hurst(HurstSchedule::linear(0.5, 0.9, 0, 2000)), scale: 0.01, p0: 0.0 },
            multi: MultiParams::homogeneous(3, 1.0, 1.0, mu, 0.05, 0.5, 1.0),
        }
    }
}

fn apply_simulate_flags(c: &mut SimulateConfig, a: &SimulateArgs) -> Result<()> {
    if let Some(k) = a.kind {
        c.kind = k;
    }
    if let Some(n) = a.n {
        c.n = n;
    }
    if let Some(dt) = a.dt {
        c.dt = dt;
    }
    if let Some(p) = a.paths {
        c.paths = p;
    }
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut c.cpt.r, a.r);
    set(&mut c.cpt.mu.mu_start, a.mu_start);
    set(&mut c.cpt.mu.mu_end, a.mu_end);
    set(&mut c.cpt.sigma, a.sigma);
    set(&mut c.cpt.p0, a.p0);
    set(&mut c.spt.r, a.r);
    set(&mut c.spt.lambda, a.lambda);
    set(&mut c.spt.alpha_vol, a.alpha_vol);
    set(&mut c.spt.p0, a.p0);
    set(&mut c.dpt.scale, a.scale);
    set(&mut c.dpt.p0, a.p0);
    if a.h_start.is_some() || a.h_end.is_some() {
        if a.alpha_start.is_some() || a.alpha_end.is_some() {
            bail!(usage("Hurst and stability-index ramps are exclusive"));
        }
        let h0 = a.h_start.unwrap_or(0.5);
        c.dpt.noise = Schedule::Hurst(HurstSchedule::linear(h0, a.h_end.unwrap_or(h0), 0, c.n));
    } else if a.alpha_start.is_some() || a.alpha_end.is_some() {
        let a0 = a.alpha_start.unwrap_or(2.0);
        c.dpt.noise = Schedule::Stable(StableSchedule::linear(a0, a.alpha_end.unwrap_or(a0), 1.0));
    } else if a.n.is_some() {
        if let Schedule::Hurst(h) = &mut c.dpt.noise {
            if h.t_end > c.n {
                h.t_end = c.n;
            }
        }
    }
    let k = a.k.unwrap_or(c.multi.k());
    let touched = a.k.is_some() || a.rho.is_some();
    if touched || a.r.is_some() || a.lambda.is_some() || a.sigma.is_some() || a.p0.is_some() {
        let m = &c.multi;
        let first = |v: &[f64], d: f64| v.first().copied().unwrap_or(d);
        let rho = a.rho.unwrap_or_else(|| m.d.first().and_then(|r| r.get(1)).copied().unwrap_or(0.0));
        let mu = MuSchedule {
            mu_start: a.mu_start.unwrap_or(m.mu.mu_start),
            mu_end: a.mu_end.unwrap_or(m.mu.mu_end),
        };
        c.multi = MultiParams::homogeneous(
            k,
            a.r.unwrap_or(first(&m.r, 1.0)),
            a.lambda.unwrap_or(first(&m.lambda, 1.0)),
            mu,
            a.sigma.unwrap_or(first(&m.sigma, 0.05)),
            rho,
            a.p0.unwrap_or(first(&m.p0, 1.0)),
        );
    } else {
        set(&mut c.multi.mu.mu_start, a.mu_start);
        set(&mut c.multi.mu.mu_end, a.mu_end);
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, config: Option<&Path>, seed: u64) -> Result<Output> {
    let mut c: SimulateConfig = resolve(config)?;
    apply_simulate_flags(&mut c, a)?;
    if c.paths == 0 {
        bail!(usage("--paths must be at least 1"));
    }
    let seed = Seed(seed);
    let runs: Vec<Vec<SimPath>> = (0..c.paths)
        .into_par_iter()
        .map(|i| -> phasecrash_core::Result<Vec<SimPath>> {
            let s = if c.paths == 1 { seed } else { seed.child(i as u64) };
            Ok(match c.kind {
                Kind::Cpt => vec![sim::simulate_cpt(&c.cpt, c.n, c.dt, s)?],
                Kind::Spt => vec![sim::simulate_spt(&c.spt, c.n, c.dt, s)?],
                Kind::Dpt => vec![sim::simulate_dpt(&c.dpt, c.n, c.dt, s)?],
                Kind::Multi => sim::simulate_multivariate(&c.multi, c.n, c.dt, s)?,
            })
        })
        .collect::<phasecrash_core::Result<_>>()?;
    let paths: Vec<SimPath> = runs.into_iter().flatten().collect();
    let bytes = csv_bytes(|b| io::write_paths_csv(b, &paths))?;
    Ok(Output { files: vec![("paths.csv", bytes)], config: resolved_view(&c)?, seed: Some(seed.0) })
}

/// Only the parameter block of the selected kind goes into the manifest.
fn resolved_view(c: &SimulateConfig) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(c)?;
    let keep = match c.kind {
        Kind::Cpt => "cpt",
        Kind::Spt => "spt",
        Kind::Dpt => "dpt",
        Kind::Multi => "multi",
    };
    if let Some(obj) = v.as_object_mut() {
        obj.retain(|k, _| !matches!(k.as_str(), "cpt" | "spt" | "dpt" | "multi") || k == keep);
    }
    Ok(v)
}

// ---- fit-lppl ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub ticker: Option<String>,
    pub search: SearchConfig,
}

#[derive(Debug, Serialize)]
struct TickerFit {
    ticker: String,
    #[serde(flatten)]
    fit: FitRecord,
    oscillation_gain: f64,
}

fn fit(a: &FitArgs, config: Option<&Path>) -> Result<Output> {
    let mut c: FitConfig = resolve(config)?;
    if a.ticker.is_some() {
        c.ticker = a.ticker.clone();
    }
    let s = &mut c.search;
    for (slot, v) in [(&mut s.tc_min, a.tc_min), (&mut s.tc_max, a.tc_max)] {
        if v.is_some() {
            *slot = v;
        }
    }
    for (slot, v) in [
        (&mut s.m_min, a.m_min),
        (&mut s.m_max, a.m_max),
        (&mut s.omega_min, a.omega_min),
        (&mut s.omega_max, a.omega_max),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    for (slot, v) in [(&mut s.n_tc, a.n_tc), (&mut s.n_m, a.n_m), (&mut s.n_omega, a.n_omega)] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    let mut series = io::load_price_csv(&a.input, Calendar::AsIs)?;
    if let Some(t) = &c.ticker {
        series.retain(|s| &s.id == t);
        if series.is_empty() {
            bail!(usage(format!("ticker '{t}' not found in {}", a.input.display())));
        }
    }
    let mut fits = Vec::with_capacity(series.len());
    for s in &series {
        let f = fit_lppl(s, &c.search)?;
        log::info!("{}: tc={:.3} m={:.4} omega={:.4} ssr={:.3e}", s.id, f.params.tc, f.params.m, f.params.omega, f.ssr);
        fits.push(TickerFit { ticker: s.id.clone(), fit: f.record(), oscillation_gain: f.oscillation_gain() });
    }
    Ok(Output {
        files: vec![("fit.json", io::to_json_bytes(&fits)?)],
        config: serde_json::to_value(&c)?,
        seed: None,
    })
}

// ---- ews ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EwsConfig {
    pub calendar: Calendar,
    pub signals: Vec<Signal>,
    pub window: WindowConfig,
}

impl Default for EwsConfig {
    fn default() -> Self {
        EwsConfig {
            calendar: Calendar::AsIs,
            signals: vec![Signal::Volatility, Signal::Skewness, Signal::Lag1Ac, Signal::AnomalousDim],
            window: WindowConfig::default(),
        }
    }
}

fn parse_signals(names: &[String]) -> Result<Vec<Signal>> {
    names.iter().map(|n| n.trim().parse::<Signal>().map_err(anyhow::Error::from)).collect()
}

fn apply_window_flags(w: &mut WindowConfig, a: &WindowArgs) {
    if let Some(v) = a.window {
        w.window = v;
    }
    if let Some(v) = a.stride {
        w.stride = v;
    }
    if let Some(v) = &a.tau_grid {
        w.tau_grid = v.clone();
    }
    if let Some(v) = &a.orders {
        w.orders = v.clone();
    }
    if a.detrend {
        w.detrend = true;
    }
}

fn ews_cmd(a: &EwsArgs, config: Option<&Path>) -> Result<Output> {
    let mut c: EwsConfig = resolve(config)?;
    apply_window_flags(&mut c.window, &a.window);
    if let Some(names) = &a.window.signals {
        c.signals = parse_signals(names)?;
    }
    c.calendar = calendar(a.calendar, c.calendar);
    let series = io::load_price_csv(&a.input, c.calendar)?;
    let mut out = Vec::new();
    for &signal in &c.signals {
        if signal == Signal::CrossCov {
            out.push(ews::cross_covariance(&series, &c.window)?);
        } else {
            let per: Vec<_> = series
                .par_iter()
                .map(|s| ews::compute(s, signal, &c.window))
                .collect::<phasecrash_core::Result<_>>()?;
            out.extend(per);
        }
    }
    let bytes = csv_bytes(|b| io::write_ews_csv(b, &out))?;
    Ok(Output { files: vec![("signals.csv", bytes)], config: serde_json::to_value(&c)?, seed: None })
}

// ---- detect-crashes ----

fn apply_crash_flags(c: &mut StudyConfig, a: &CrashArgs) {
    if let Some(v) = a.threshold {
        c.crash_threshold = v;
    }
    if let Some(v) = a.lookback {
        c.lookback = v;
    }
    if let Some(v) = a.recovery {
        c.recovery = v;
    }
}

fn detect(a: &DetectArgs, config: Option<&Path>) -> Result<Output> {
    let mut c: StudyConfig = resolve(config)?;
    apply_crash_flags(&mut c, &a.crash);
    c.validate()?;
    let series = io::load_price_csv(&a.input, Calendar::AsIs)?;
    let mut events = Vec::new();
    for s in &series {
        events.extend(detect_crashes(s, &c)?);
    }
    let view = serde_json::json!({
        "crash_threshold": c.crash_threshold,
        "lookback": c.lookback,
        "recovery": c.recovery,
    });
    Ok(Output { files: vec![("events.json", io::to_json_bytes(&events)?)], config: view, seed: None })
}

// ---- study ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyRunConfig {
    pub calendar: Calendar,
    #[serde(flatten)]
    pub study: StudyConfig,
}

fn study(a: &StudyArgs, config: Option<&Path>, seed: Option<u64>) -> Result<Output> {
    let mut c: StudyRunConfig = resolve(config)?;
    let s = &mut c.study;
    apply_crash_flags(s, &a.crash);
    apply_window_flags(&mut s.ews_cfg, &a.window);
    if let Some(names) = &a.window.signals {
        s.signals = parse_signals(names)?;
    }
    if let Some(v) = a.pre_window {
        s.pre_crash_window = v;
    }
    if let Some(v) = a.margin {
        s.exclusion_margin = v;
    }
    let default_cal = if s.signals.contains(&Signal::CrossCov) { Calendar::IntersectDates } else { c.calendar };
    c.calendar = calendar(a.calendar, default_cal);

    let (assets, seed): (Vec<PriceSeries>, Option<u64>) = match (&a.input, &a.corpus) {
        (Some(path), None) => (io::load_price_csv(path, c.calendar)?, None),
        (None, Some(spec_path)) => {
            let seed = seed.unwrap_or(0);
            (synth_corpus(&read_corpus_spec(spec_path)?, Seed(seed))?, Some(seed))
        }
        _ => bail!(usage("study needs exactly one of --input or --corpus")),
    };
    let report = run_study(&assets, &c.study)?;
    let report_csv = csv_bytes(|b| io::write_report_csv(b, &report))?;
    let segments_csv = csv_bytes(|b| io::write_segments_csv(b, &report))?;
    Ok(Output {
        files: vec![
            ("report.json", io::to_json_bytes(&report)?),
            ("report.csv", report_csv),
            ("segments.csv", segments_csv),
        ],
        config: serde_json::to_value(&c)?,
        seed,
    })
}

// ---- synth ----

fn read_corpus_spec(path: &Path) -> Result<CorpusSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading corpus spec {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing corpus spec {}", path.display()))
}

fn synth(a: &SynthArgs, seed: u64) -> Result<Output> {
    let spec = read_corpus_spec(&a.spec)?;
    let series = synth_corpus(&spec, Seed(seed))?;
    if series.is_empty() {
        log::warn!("corpus spec has no assets");
    }
    let bytes = csv_bytes(|b| io::write_price_csv(b, &series))?;
    Ok(Output { files: vec![("prices.csv", bytes)], config: serde_json::to_value(&spec)?, seed: Some(seed) })
}
