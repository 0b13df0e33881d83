//! Crash study: detect drawdown crashes, split each asset into pre-crash
//! and normal-time segments, measure the Kendall trend of every configured
//! early-warning signal on every segment, and compare the two groups.
//!
//! Nothing in this module draws random numbers; a fixed corpus and config
//! always give the same report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ews::{self, EwsSeries, Signal, WindowConfig};
use crate::series::PriceSeries;
use crate::stats;

/// Relative slack on the threshold comparison so a drop of exactly the
/// threshold (up to rounding in `ln`/`exp`) counts as a crash.
const THRESHOLD_SLACK: f64 = 1e-12;

/// Minimum number of non-missing values for a trend statistic.
pub const MIN_TREND_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashEvent {
    pub asset_id: String,
    pub peak_index: usize,
    /// Deepest point of the episode.
    pub trough_index: usize,
    /// First observation at which the drawdown reached the threshold.
    pub trigger_index: usize,
    pub peak_time: f64,
    pub trough_time: f64,
    pub peak_log_price: f64,
    pub trough_log_price: f64,
    pub drawdown: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub crash_threshold: f64,
    /// Rolling-peak horizon in observations.
    pub lookback: usize,
    /// An episode ends once the price is back within this fraction of its peak.
    pub recovery: f64,
    pub pre_crash_window: usize,
    pub exclusion_margin: usize,
    pub signals: Vec<Signal>,
    pub ews_cfg: WindowConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            crash_threshold: 0.20,
            lookback: 126,
            recovery: 0.05,
            pre_crash_window: 252,
            exclusion_margin: 63,
            signals: vec![Signal::Volatility, Signal::Skewness, Signal::Lag1Ac, Signal::AnomalousDim],
            ews_cfg: WindowConfig { window: 63, stride: 5, tau_grid: vec![2, 4, 8], orders: vec![1, 2], detrend: false },
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.crash_threshold > 0.0 && self.crash_threshold < 1.0) {
            return Err(invalid(format!("crash_threshold {} outside (0, 1)", self.crash_threshold)));
        }
        if !(self.recovery >= 0.0 && self.recovery < 1.0) {
            return Err(invalid("recovery must lie in [0, 1)"));
        }
        if self.lookback == 0 {
            return Err(invalid("lookback must be positive"));
        }
        if self.pre_crash_window < self.ews_cfg.window {
            return Err(invalid(format!(
                "pre_crash_window {} is shorter than the EWS window {}",
                self.pre_crash_window, self.ews_cfg.window
            )));
        }
        Ok(())
    }
}

/// Drawdown episodes of at least `crash_threshold` from the rolling peak.
///
/// Within an episode no further events are raised until the price recovers
/// to within `recovery` of the episode's peak; the next search only looks at
/// peaks after that recovery point.
pub fn detect_crashes(series: &PriceSeries, cfg: &StudyConfig) -> Result<Vec<CrashEvent>> {
    cfg.validate()?;
    series.validate()?;
    if series.len() <= cfg.lookback {
        return Err(Error::InsufficientData { needed: cfg.lookback + 1, got: series.len() });
    }
    let x = &series.log_prices;
    let recover_level = (1.0 - cfg.recovery).ln();
    let mut events = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < x.len() {
        let lo = start.max(i.saturating_sub(cfg.lookback));
        // earliest index of the window maximum
        let mut peak = lo;
        for j in lo..=i {
            if x[j] > x[peak] {
                peak = j;
            }
        }
        let dd = 1.0 - (x[i] - x[peak]).exp();
        if dd >= cfg.crash_threshold * (1.0 - THRESHOLD_SLACK) {
            let trigger = i;
            let mut trough = i;
            let mut k = i + 1;
            while k < x.len() && x[k] - x[peak] < recover_level {
                if x[k] < x[trough] {
                    trough = k;
                }
                k += 1;
            }
            events.push(CrashEvent {
                asset_id: series.id.clone(),
                peak_index: peak,
                trough_index: trough,
                trigger_index: trigger,
                peak_time: series.times[peak],
                trough_time: series.times[trough],
                peak_log_price: x[peak],
                trough_log_price: x[trough],
                drawdown: 1.0 - (x[trough] - x[peak]).exp(),
            });
            start = k;
            i = k;
            continue;
        }
        i += 1;
    }
    Ok(events)
}

/// Half-open observation range `start..end` of one series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Segments {
    pub pre: Vec<Segment>,
    pub normal: Vec<Segment>,
}

/// Exclusion zone `[peak - margin, trough + margin]` of an event, clamped.
fn exclusion_zone(e: &CrashEvent, margin: usize, n: usize) -> (usize, usize) {
    (e.peak_index.saturating_sub(margin), (e.trough_index + margin).min(n - 1))
}

/// Pre-crash segments end at each event's peak (inclusive). A segment never
/// reaches back past an earlier event's trough plus the exclusion margin and
/// is dropped when too short for one EWS window. Normal segments are the
/// maximal runs outside every exclusion zone that fit at least one window.
pub fn segment_windows(series_len: usize, events: &[CrashEvent], cfg: &StudyConfig) -> Segments {
    let min_len = cfg.ews_cfg.window + 1;
    let mut sorted: Vec<&CrashEvent> = events.iter().collect();
    sorted.sort_by_key(|e| e.peak_index);

    let mut pre = Vec::new();
    let mut floor = 0usize;
    for e in &sorted {
        let end = e.peak_index + 1;
        let start = end.saturating_sub(cfg.pre_crash_window).max(floor);
        if start < end && end - start >= min_len {
            pre.push(Segment { start, end });
        }
        floor = floor.max(e.trough_index + cfg.exclusion_margin + 1);
    }

    let mut excluded = vec![false; series_len];
    for e in &sorted {
        let (lo, hi) = exclusion_zone(e, cfg.exclusion_margin, series_len);
        excluded[lo..=hi].iter_mut().for_each(|v| *v = true);
    }
    let mut normal = Vec::new();
    let mut i = 0;
    while i < series_len {
        if excluded[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < series_len && !excluded[i] {
            i += 1;
        }
        if i - start >= min_len {
            normal.push(Segment { start, end: i });
        }
    }
    Segments { pre, normal }
}

/// Kendall tau-b of the non-missing values against their window index.
pub fn kendall_tau_trend(values: &EwsSeries) -> Result<(f64, f64)> {
    let (idx, vals): (Vec<f64>, Vec<f64>) = values
        .values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i as f64, v)))
        .unzip();
    if vals.len() < MIN_TREND_POINTS {
        return Err(Error::InsufficientData { needed: MIN_TREND_POINTS, got: vals.len() });
    }
    let r = stats::kendall_tau_b(&idx, &vals);
    Ok((r.statistic, r.p_value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Pre,
    Normal,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Group::Pre => "pre",
            Group::Normal => "normal",
        })
    }
}

/// Trend of one signal on one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrend {
    pub asset_id: String,
    pub signal: Signal,
    pub group: Group,
    pub start: usize,
    pub end: usize,
    pub tau: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTrend {
    pub signal: Signal,
    pub mean_tau_pre: Option<f64>,
    pub mean_tau_normal: Option<f64>,
    pub n_pre: usize,
    pub n_normal: usize,
    /// Mann-Whitney p-value of pre against normal segment taus.
    pub p_value: Option<f64>,
    /// Set when either group has no usable segment.
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub n_assets: usize,
    pub n_events: usize,
    pub signals: Vec<SignalTrend>,
    pub events: Vec<CrashEvent>,
    pub segments: Vec<SegmentTrend>,
}

impl TrendReport {
    pub fn signal(&self, s: Signal) -> Option<&SignalTrend> {
        self.signals.iter().find(|t| t.signal == s)
    }
}

fn segment_trends(
    id: &str,
    signal: Signal,
    group: Group,
    segs: &[Segment],
    compute: impl Fn(Segment) -> Result<EwsSeries>,
) -> Result<Vec<SegmentTrend>> {
    let mut out = Vec::new();
    for &seg in segs {
        let series = match compute(seg) {
            Ok(s) => s,
            Err(Error::InsufficientData { .. }) => continue,
            Err(e) => return Err(e),
        };
        match kendall_tau_trend(&series) {
            Ok((tau, p)) if tau.is_finite() => out.push(SegmentTrend {
                asset_id: id.to_string(),
                signal,
                group,
                start: seg.start,
                end: seg.end,
                tau,
                p_value: p,
            }),
            Ok(_) | Err(Error::InsufficientData { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn asset_events(series: &PriceSeries, cfg: &StudyConfig) -> Result<Vec<CrashEvent>> {
    match detect_crashes(series, cfg) {
        Err(Error::InsufficientData { .. }) => {
            log::warn!("series {} shorter than the lookback; no crashes searched", series.id);
            Ok(Vec::new())
        }
        r => r,
    }
}

/// Run the full protocol over a panel of assets.
pub fn run_study(assets: &[PriceSeries], cfg: &StudyConfig) -> Result<TrendReport> {
    cfg.validate()?;
    if assets.is_empty() {
        return Err(invalid("study needs at least one asset"));
    }
    let univariate: Vec<Signal> = cfg.signals.iter().copied().filter(Signal::is_univariate).collect();

    let per_asset: Vec<(Vec<CrashEvent>, Vec<SegmentTrend>)> = assets
        .par_iter()
        .map(|series| -> Result<_> {
            let events = asset_events(series, cfg)?;
            let segs = segment_windows(series.len(), &events, cfg);
            let mut trends = Vec::new();
            for &signal in &univariate {
                for (group, list) in [(Group::Pre, &segs.pre), (Group::Normal, &segs.normal)] {
                    trends.extend(segment_trends(&series.id, signal, group, list, |seg| {
                        ews::compute(&series.slice(seg.start, seg.end), signal, &cfg.ews_cfg)
                    })?);
                }
            }
            Ok((events, trends))
        })
        .collect::<Result<_>>()?;

    let mut events = Vec::new();
    let mut segments = Vec::new();
    for (e, t) in per_asset {
        events.extend(e);
        segments.extend(t);
    }

    if cfg.signals.contains(&Signal::CrossCov) {
        if assets.len() < 2 {
            return Err(invalid("cross_cov needs at least two assets"));
        }
        let misaligned: Vec<String> =
            assets[1..].iter().filter(|s| s.times != assets[0].times).map(|s| s.id.clone()).collect();
        if !misaligned.is_empty() {
            return Err(Error::Alignment(misaligned));
        }
        // union of every asset's events on the shared time axis
        let segs = segment_windows(assets[0].len(), &events, cfg);
        for (group, list) in [(Group::Pre, &segs.pre), (Group::Normal, &segs.normal)] {
            segments.extend(segment_trends("panel", Signal::CrossCov, group, list, |seg| {
                let panel: Vec<PriceSeries> = assets.iter().map(|s| s.slice(seg.start, seg.end)).collect();
                ews::cross_covariance(&panel, &cfg.ews_cfg)
            })?);
        }
    }

    let signals = cfg
        .signals
        .iter()
        .map(|&signal| {
            let taus = |g: Group| -> Vec<f64> {
                segments.iter().filter(|s| s.signal == signal && s.group == g).map(|s| s.tau).collect()
            };
            let pre = taus(Group::Pre);
            let normal = taus(Group::Normal);
            let mean = |v: &[f64]| (!v.is_empty()).then(|| stats::mean(v));
            let inconclusive = pre.is_empty() || normal.is_empty();
            let p_value = if inconclusive {
                None
            } else {
                stats::mann_whitney_u(&pre, &normal).ok().map(|r| r.p_value)
            };
            SignalTrend {
                signal,
                mean_tau_pre: mean(&pre),
                mean_tau_normal: mean(&normal),
                n_pre: pre.len(),
                n_normal: normal.len(),
                p_value,
                inconclusive,
            }
        })
        .collect();

    Ok(TrendReport { n_assets: assets.len(), n_events: events.len(), signals, events, segments })
}

/// Aggregate of per-path trend statistics over independent seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelTrend {
    pub n: usize,
    pub mean_tau: f64,
    /// Wilcoxon signed-rank p-value of the per-seed taus against zero.
    pub p_value: f64,
}

/// Summarize per-seed Kendall taus of one signal. Each seed is an
/// independent path, so the signed-rank test is valid where the per-path
/// Kendall p-value (computed on overlapping windows) is not.
pub fn panel_trend(taus: &[f64]) -> Result<PanelTrend> {
    let finite: Vec<f64> = taus.iter().copied().filter(|t| t.is_finite()).collect();
    let r = stats::signed_rank(&finite)?;
    Ok(PanelTrend { n: finite.len(), mean_tau: stats::mean(&finite), p_value: r.p_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(prices: &[f64]) -> PriceSeries {
        PriceSeries::from_log_prices("a", prices.iter().map(|p| p.ln()).collect()).unwrap()
    }

    fn cfg(lookback: usize) -> StudyConfig {
        StudyConfig {
            lookback,
            pre_crash_window: 10,
            exclusion_margin: 2,
            ews_cfg: WindowConfig { window: 5, stride: 1, tau_grid: vec![2], orders: vec![2], detrend: false },
            ..StudyConfig::default()
        }
    }

    fn event(peak: usize, trough: usize) -> CrashEvent {
        CrashEvent {
            asset_id: "a".into(),
            peak_index: peak,
            trough_index: trough,
            trigger_index: trough,
            peak_time: peak as f64,
            trough_time: trough as f64,
            peak_log_price: 0.0,
            trough_log_price: -0.3,
            drawdown: 0.26,
        }
    }

    #[test]
    fn monotone_decline_is_one_event() {
        let p: Vec<f64> = (79..=100).rev().map(|v| v as f64).collect();
        let ev = detect_crashes(&series(&p), &cfg(21)).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].peak_index, 0);
        assert!((ev[0].drawdown - 0.21).abs() < 1e-12);
        assert_eq!(ev[0].trigger_index, 20);
    }

    #[test]
    fn increasing_series_has_no_events() {
        let p: Vec<f64> = (0..200).map(|v| 100.0 + v as f64).collect();
        assert!(detect_crashes(&series(&p), &cfg(126)).unwrap().is_empty());
    }

    #[test]
    fn threshold_boundary() {
        let mut p = vec![100.0; 30];
        p.extend([90.0, 80.0, 85.0]);
        assert_eq!(detect_crashes(&series(&p), &cfg(20)).unwrap().len(), 1);
        let mut q = vec![100.0; 30];
        q.extend([90.0, 80.1, 85.0]);
        assert!(detect_crashes(&series(&q), &cfg(20)).unwrap().is_empty());
    }

    #[test]
    fn one_decline_spawns_one_event() {
        // falls through 20% and keeps falling; bounces without recovering
        let mut p = vec![100.0; 30];
        p.extend([85.0, 78.0, 70.0, 75.0, 65.0, 72.0, 60.0]);
        let ev = detect_crashes(&series(&p), &cfg(20)).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].trough_index, 36);
    }

    #[test]
    fn recovery_allows_second_event() {
        let mut p = vec![100.0; 30];
        p.extend([75.0, 80.0, 96.0, 99.0, 100.0, 100.0, 70.0]);
        let ev = detect_crashes(&series(&p), &cfg(20)).unwrap();
        assert_eq!(ev.len(), 2);
        assert!(ev[1].peak_index > ev[0].trough_index);
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(detect_crashes(&series(&[100.0; 10]), &cfg(20)).is_err());
    }

    #[test]
    fn segmentation_without_events() {
        let s = segment_windows(100, &[], &cfg(20));
        assert!(s.pre.is_empty());
        assert_eq!(s.normal, vec![Segment { start: 0, end: 100 }]);
    }

    #[test]
    fn segmentation_single_event() {
        let s = segment_windows(100, &[event(50, 55)], &cfg(20));
        assert_eq!(s.pre, vec![Segment { start: 41, end: 51 }]);
        assert_eq!(s.normal, vec![Segment { start: 0, end: 48 }, Segment { start: 58, end: 100 }]);
    }

    #[test]
    fn segmentation_close_events() {
        // the second pre-segment is cut at trough 32 + margin 2 + 1 = 35
        let c = cfg(20);
        let s = segment_windows(100, &[event(20, 32), event(42, 45)], &c);
        assert_eq!(s.pre, vec![Segment { start: 11, end: 21 }, Segment { start: 35, end: 43 }]);
        // with a later second peak the cut leaves too few points
        let s = segment_windows(100, &[event(20, 32), event(39, 45)], &c);
        assert_eq!(s.pre, vec![Segment { start: 11, end: 21 }]);
    }

    #[test]
    fn kendall_needs_ten_points() {
        let e = EwsSeries {
            asset_id: "a".into(),
            signal: Signal::Volatility,
            times: (0..12).map(|i| i as f64).collect(),
            values: (0..12).map(|i| if i % 4 == 0 { None } else { Some(i as f64) }).collect(),
        };
        assert!(kendall_tau_trend(&e).is_err());
        let full = EwsSeries { values: (0..12).map(|i| Some(i as f64)).collect(), ..e };
        assert_eq!(kendall_tau_trend(&full).unwrap().0, 1.0);
    }
}
