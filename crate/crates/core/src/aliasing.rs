//! Aliasing detection and internal sampling rate recovery.
//!
//! A workload that oscillates close to the internal sampling rate is sampled
//! at a slowly drifting phase. Power-from-energy values then alternate
//! between the workload's levels with the beat frequency
//! `|f_sampling - f_workload|` instead of settling at the mean, and their
//! spread approaches the spread of the direct samples.

use alloc::vec::Vec;

use crate::power::{PowerKind, PowerSeries};

pub const DEFAULT_RATIO_THRESHOLD: f64 = 1.5;
/// Minimum number of points of each kind for spread statistics.
pub const MIN_SPREAD_POINTS: usize = 100;
/// Hysteresis half-width as a fraction of `high - low`.
pub const HYSTERESIS_FRACTION: f64 = 0.10;
/// Largest tolerated disagreement between workload/pattern pairs.
pub const MAX_DISAGREEMENT_HZ: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AliasingError {
    #[error("need at least {needed} {kind} points, got {got}")]
    TooFewSamples { kind: &'static str, needed: usize, got: usize },
    #[error("levels must satisfy low < high")]
    BadLevels,
    #[error("no complete pattern cycle found")]
    NoPattern,
    #[error("at least one workload/pattern pair is required")]
    NoPairs,
    #[error("pair {0} is invalid: frequencies must be finite, workload positive, pattern non-negative")]
    InvalidPair(usize),
    #[error("nominal rate must be positive")]
    BadNominal,
    #[error("pairs disagree by {disagreement} Hz")]
    Inconsistent { disagreement: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AliasingReport {
    pub stddev_direct: f64,
    pub stddev_pfe: f64,
    /// `stddev_direct / stddev_pfe`; 1 when both are zero.
    pub spread_ratio: f64,
    pub aliasing_detected: bool,
    pub f_pattern: Option<f64>,
    pub cycles_counted: usize,
    pub observation_span: f64,
}

impl AliasingReport {
    pub fn with_pattern(mut self, pattern: &PatternFrequency) -> Self {
        self.f_pattern = Some(pattern.f_pattern);
        self.cycles_counted = pattern.cycles;
        self.observation_span = pattern.span;
        self
    }
}

fn sample_stddev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    libm::sqrt(ss / (n - 1.0))
}

/// Compares the spread of direct samples against power-from-energy values.
pub fn spread_stats(series: &PowerSeries, ratio_threshold: f64) -> Result<AliasingReport, AliasingError> {
    let direct = series.values(PowerKind::DirectSample);
    let pfe = series.values(PowerKind::PowerFromEnergy);
    for (kind, got) in [("direct sample", direct.len()), ("power-from-energy", pfe.len())] {
        if got < MIN_SPREAD_POINTS {
            return Err(AliasingError::TooFewSamples { kind, needed: MIN_SPREAD_POINTS, got });
        }
    }
    let stddev_direct = sample_stddev(&direct);
    let stddev_pfe = sample_stddev(&pfe);
    let spread_ratio = match (stddev_direct == 0.0, stddev_pfe == 0.0) {
        (true, true) => 1.0,
        (false, true) => f64::INFINITY,
        _ => stddev_direct / stddev_pfe,
    };
    Ok(AliasingReport {
        stddev_direct,
        stddev_pfe,
        spread_ratio,
        aliasing_detected: spread_ratio < ratio_threshold,
        f_pattern: None,
        cycles_counted: 0,
        observation_span: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternLevel {
    Low,
    High,
}

/// Classifies each power-from-energy point; `None` inside the hysteresis band.
pub fn classify_levels(pfe: &PowerSeries, low: f64, high: f64) -> Result<Vec<(f64, Option<PatternLevel>)>, AliasingError> {
    if !(low < high) {
        return Err(AliasingError::BadLevels);
    }
    let mid = (low + high) / 2.0;
    let band = HYSTERESIS_FRACTION * (high - low);
    Ok(pfe
        .of_kind(PowerKind::PowerFromEnergy)
        .map(|p| {
            let level = if p.power > mid + band {
                Some(PatternLevel::High)
            } else if p.power < mid - band {
                Some(PatternLevel::Low)
            } else {
                None
            };
            (p.time, level)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternFrequency {
    pub f_pattern: f64,
    pub cycles: usize,
    pub span: f64,
}

/// Counts beat cycles in a power-from-energy series.
///
/// Points inside the hysteresis band keep the previous state. A transition
/// is timed at the first point of the new state. Cycles are counted between
/// transitions of the same direction (whichever direction occurs more often),
/// so `span` covers whole cycles only.
pub fn pattern_frequency(pfe: &PowerSeries, low: f64, high: f64) -> Result<PatternFrequency, AliasingError> {
    let levels = classify_levels(pfe, low, high)?;
    let mut state = None;
    let mut rising = Vec::new();
    let mut falling = Vec::new();
    for &(t, level) in &levels {
        let Some(level) = level else { continue };
        match (state, level) {
            (Some(PatternLevel::Low), PatternLevel::High) => rising.push(t),
            (Some(PatternLevel::High), PatternLevel::Low) => falling.push(t),
            _ => {}
        }
        state = Some(level);
    }
    let pick = |edges: &[f64]| -> Option<(usize, f64)> {
        if edges.len() < 2 {
            return None;
        }
        Some((edges.len() - 1, edges[edges.len() - 1] - edges[0]))
    };
    let best = match (pick(&rising), pick(&falling)) {
        (Some(r), Some(f)) => {
            if f.0 > r.0 || (f.0 == r.0 && f.1 > r.1) {
                f
            } else {
                r
            }
        }
        (Some(r), None) => r,
        (None, Some(f)) => f,
        (None, None) => return Err(AliasingError::NoPattern),
    };
    let (cycles, span) = best;
    if !(span > 0.0) {
        return Err(AliasingError::NoPattern);
    }
    Ok(PatternFrequency { f_pattern: cycles as f64 / span, cycles, span })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCandidates {
    pub f_workload: f64,
    pub f_pattern: f64,
    /// `f_workload - f_pattern` and `f_workload + f_pattern`.
    pub candidates: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub f_sampling: f64,
    pub per_pair: Vec<PairCandidates>,
    pub disagreement: f64,
}

fn worst_distance(f: f64, pairs: &[PairCandidates]) -> f64 {
    pairs
        .iter()
        .map(|p| libm::fabs(f - p.candidates[0]).min(libm::fabs(f - p.candidates[1])))
        .fold(0.0, f64::max)
}

/// Recovers the internal sampling rate from beat observations.
///
/// The optimum of the minimax objective lies at a candidate or halfway
/// between two candidates, so all of those points are tried. Ties prefer the
/// value closest to `nominal`.
pub fn estimate_internal_rate(pairs: &[(f64, f64)], nominal: f64) -> Result<RateEstimate, AliasingError> {
    if pairs.is_empty() {
        return Err(AliasingError::NoPairs);
    }
    if !(nominal > 0.0 && nominal.is_finite()) {
        return Err(AliasingError::BadNominal);
    }
    let mut per_pair = Vec::with_capacity(pairs.len());
    for (i, &(fw, fp)) in pairs.iter().enumerate() {
        if !(fw > 0.0 && fw.is_finite() && fp >= 0.0 && fp.is_finite()) {
            return Err(AliasingError::InvalidPair(i));
        }
        per_pair.push(PairCandidates { f_workload: fw, f_pattern: fp, candidates: [fw - fp, fw + fp] });
    }
    let all: Vec<f64> = per_pair.iter().flat_map(|p| p.candidates).collect();
    let mut best: Option<(f64, f64, f64)> = None;
    for (i, &a) in all.iter().enumerate() {
        for &b in &all[i..] {
            let f = (a + b) / 2.0;
            let key = (worst_distance(f, &per_pair), libm::fabs(f - nominal), f);
            let better = match best {
                None => true,
                Some(cur) => key.0 < cur.0 || (key.0 == cur.0 && (key.1 < cur.1 || (key.1 == cur.1 && key.2 < cur.2))),
            };
            if better {
                best = Some(key);
            }
        }
    }
    let (disagreement, _, f_sampling) = best.expect("at least one candidate");
    if disagreement > MAX_DISAGREEMENT_HZ {
        return Err(AliasingError::Inconsistent { disagreement });
    }
    Ok(RateEstimate { f_sampling, per_pair, disagreement })
}

/// Relative error of a mean estimate that only ever sees one level of a
/// symmetric two-level signal.
pub fn worst_case_error(p_low: f64, p_high: f64) -> f64 {
    debug_assert!(p_low + p_high > 0.0);
    let mid = (p_low + p_high) / 2.0;
    libm::fabs(p_high - mid) / mid
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn series(points: impl IntoIterator<Item = (f64, f64, PowerKind)>) -> PowerSeries {
        let mut s = PowerSeries::default();
        for (t, p, k) in points {
            s.push(t, p, k);
        }
        s
    }

    /// `cycles` full square beat cycles at `f`, sampled every `dt`, starting low.
    fn square_beat(f: f64, cycles: usize, dt: f64) -> PowerSeries {
        let n = libm::ceil(cycles as f64 / f / dt) as usize;
        series((0..=n).map(|i| {
            let t = i as f64 * dt;
            let u = t * f;
            let p = if u - libm::floor(u) < 0.5 { 225.0 } else { 285.0 };
            (t, p, PowerKind::PowerFromEnergy)
        }))
    }

    #[test]
    fn constant_series_is_flagged() {
        let s = series((0..200).flat_map(|i| {
            [(i as f64, 100.0, PowerKind::DirectSample), (i as f64, 100.0, PowerKind::PowerFromEnergy)]
        }));
        let r = spread_stats(&s, DEFAULT_RATIO_THRESHOLD).unwrap();
        assert_eq!(r.spread_ratio, 1.0);
        assert!(r.aliasing_detected);
        assert_eq!(r.f_pattern, None);
    }

    #[test]
    fn spread_needs_points() {
        let s = series((0..99).flat_map(|i| {
            [(i as f64, 1.0, PowerKind::DirectSample), (i as f64, 1.0, PowerKind::PowerFromEnergy)]
        }));
        assert!(matches!(spread_stats(&s, 1.5), Err(AliasingError::TooFewSamples { got: 99, .. })));
    }

    #[test]
    fn spread_ratio_value() {
        // direct alternates +-30, pfe alternates +-3
        let s = series((0..200).flat_map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            [
                (i as f64, 255.0 + 30.0 * sign, PowerKind::DirectSample),
                (i as f64, 255.0 + 3.0 * sign, PowerKind::PowerFromEnergy),
            ]
        }));
        let r = spread_stats(&s, 1.5).unwrap();
        assert!((r.spread_ratio - 10.0).abs() < 1e-9);
        assert!(!r.aliasing_detected);
    }

    #[test]
    fn pattern_of_known_square_beat() {
        let s = square_beat(1.24, 24, 0.04);
        let p = pattern_frequency(&s, 225.0, 285.0).unwrap();
        assert!((p.f_pattern - 1.24).abs() < 1.0 / p.span, "{p:?}");
        assert_eq!(p.f_pattern, p.cycles as f64 / p.span);
    }

    #[test]
    fn pattern_constant_mid_level() {
        let s = series((0..100).map(|i| (i as f64 * 0.04, 255.0, PowerKind::PowerFromEnergy)));
        assert_eq!(pattern_frequency(&s, 225.0, 285.0), Err(AliasingError::NoPattern));
        assert_eq!(pattern_frequency(&s, 285.0, 225.0), Err(AliasingError::BadLevels));
    }

    #[test]
    fn pattern_ignores_band_chatter() {
        let mut pts = vec![];
        for (i, p) in [225.0, 256.0, 254.0, 257.0, 285.0, 258.0, 253.0, 225.0, 285.0, 225.0].iter().enumerate() {
            pts.push((i as f64, *p, PowerKind::PowerFromEnergy));
        }
        let p = pattern_frequency(&series(pts), 225.0, 285.0).unwrap();
        // rising at t=4 and t=8
        assert_eq!(p.cycles, 1);
        assert_eq!(p.span, 4.0);
    }

    #[test]
    fn rate_from_three_pairs() {
        let est = estimate_internal_rate(&[(1995.0, 1.24), (1996.0, 0.24), (1997.0, 0.77)], 2000.0).unwrap();
        assert!((est.f_sampling - 1996.24).abs() < 0.01, "{est:?}");
        assert!(est.disagreement <= 0.01);
        assert_eq!(est.per_pair[0].candidates, [1995.0 - 1.24, 1995.0 + 1.24]);
    }

    #[test]
    fn rate_from_one_pair_prefers_nominal_side() {
        let est = estimate_internal_rate(&[(1996.0, 0.24)], 2000.0).unwrap();
        assert_eq!(est.f_sampling, 1996.24);
        assert_eq!(est.disagreement, 0.0);
        let est = estimate_internal_rate(&[(1996.0, 0.24)], 1990.0).unwrap();
        assert_eq!(est.f_sampling, 1995.76);
    }

    #[test]
    fn rate_zero_beat() {
        assert_eq!(estimate_internal_rate(&[(1000.0, 0.0)], 2000.0).unwrap().f_sampling, 1000.0);
    }

    #[test]
    fn rate_errors() {
        assert_eq!(estimate_internal_rate(&[], 2000.0), Err(AliasingError::NoPairs));
        assert_eq!(estimate_internal_rate(&[(1000.0, -1.0)], 2000.0), Err(AliasingError::InvalidPair(0)));
        assert!(matches!(
            estimate_internal_rate(&[(1000.0, 1.0), (1500.0, 1.0)], 2000.0),
            Err(AliasingError::Inconsistent { .. })
        ));
    }

    #[test]
    fn worst_case_examples() {
        assert!((worst_case_error(225.0, 285.0) - 0.117647).abs() < 1e-6);
        assert_eq!(worst_case_error(100.0, 100.0), 0.0);
        assert_eq!(worst_case_error(0.0, 200.0), 1.0);
        assert_eq!(worst_case_error(285.0, 225.0), worst_case_error(225.0, 285.0));
    }
}
