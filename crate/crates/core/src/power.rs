//! Energy and power arithmetic on traces, and consistency statistics.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::{ticks_to_seconds, SensorRecord};
use crate::reader::RawTrace;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PowerError {
    #[error("records belong to different sensors ({0:#06x} vs {1:#06x})")]
    MismatchedSensor(u16, u16),
    #[error("update_tag did not change between the records")]
    ZeroSampleDelta,
    #[error("needs at least {needed} points, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("inputs are empty")]
    Empty,
    #[error("truth value at index {0} is zero")]
    ZeroTruthValue(usize),
    #[error("fewer distinct x values than coefficients")]
    DegenerateInput,
    #[error("series share no common instants")]
    AlignmentError,
}

/// Average power between two readouts of the same sensor:
/// `(accumulator2 - accumulator1) / (update_tag2 - update_tag1)` with both
/// differences taken modulo the counter width.
pub fn power_from_energy(first: &SensorRecord, second: &SensorRecord) -> Result<f64, PowerError> {
    if first.gsid != second.gsid {
        return Err(PowerError::MismatchedSensor(first.gsid, second.gsid));
    }
    let samples = second.update_tag.wrapping_sub(first.update_tag);
    if samples == 0 {
        return Err(PowerError::ZeroSampleDelta);
    }
    let energy = second.accumulator.wrapping_sub(first.accumulator);
    Ok(energy as f64 / samples as f64)
}

/// Energy in J represented by an accumulator delta at the given internal
/// sampling rate. `internal_rate` must be positive.
pub fn energy_from_accumulator(delta_accumulator: u64, internal_rate: f64) -> f64 {
    debug_assert!(internal_rate > 0.0);
    delta_accumulator as f64 / internal_rate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PowerKind {
    DirectSample,
    PowerFromEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPoint {
    pub time: f64,
    pub power: f64,
    pub kind: PowerKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerSeries {
    pub points: Vec<PowerPoint>,
}

impl PowerSeries {
    pub fn of_kind(&self, kind: PowerKind) -> impl Iterator<Item = &PowerPoint> + '_ {
        self.points.iter().filter(move |p| p.kind == kind)
    }

    pub fn values(&self, kind: PowerKind) -> Vec<f64> {
        self.of_kind(kind).map(|p| p.power).collect()
    }

    pub fn push(&mut self, time: f64, power: f64, kind: PowerKind) {
        self.points.push(PowerPoint { time, power, kind });
    }
}

/// Direct samples and power-from-energy values of a trace.
///
/// The trace is reduced to one entry per device update first. Every update
/// yields a direct sample; every consecutive pair of updates yields one
/// power-from-energy value stamped at the later update. Pairs whose update
/// tag did not move are skipped.
pub fn derive_pfe_series(trace: &RawTrace) -> Result<PowerSeries, PowerError> {
    let updates = trace.updates();
    if updates.len() < 2 {
        return Err(PowerError::TooFewSamples { needed: 2, got: updates.len() });
    }
    let mut series = PowerSeries { points: Vec::with_capacity(2 * updates.len()) };
    series.push(updates[0].host_time, updates[0].record.sample as f64, PowerKind::DirectSample);
    for pair in updates.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        series.push(b.host_time, b.record.sample as f64, PowerKind::DirectSample);
        match power_from_energy(&a.record, &b.record) {
            Ok(p) => series.push(b.host_time, p, PowerKind::PowerFromEnergy),
            Err(PowerError::ZeroSampleDelta) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(series)
}

/// Internal sampling rate as counted by the device: update-tag delta over the
/// device timestamp delta between the first and last update of a trace.
pub fn counted_sample_rate(trace: &RawTrace) -> Result<f64, PowerError> {
    let updates = trace.updates();
    match (updates.first(), updates.last()) {
        (Some(a), Some(b)) if updates.len() >= 2 => {
            let samples = b.record.update_tag.wrapping_sub(a.record.update_tag);
            let span = ticks_to_seconds(b.record.timestamp.wrapping_sub(a.record.timestamp));
            Ok(samples as f64 / span)
        }
        _ => Err(PowerError::TooFewSamples { needed: 2, got: updates.len() }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    /// Mean absolute percentage error as a fraction.
    pub mape: f64,
    /// Mean absolute error in W.
    pub mae: f64,
    pub n: usize,
}

pub fn error_stats(truth: &[f64], estimate: &[f64]) -> Result<ErrorStats, PowerError> {
    if truth.len() != estimate.len() {
        return Err(PowerError::LengthMismatch(truth.len(), estimate.len()));
    }
    if truth.is_empty() {
        return Err(PowerError::Empty);
    }
    if let Some(i) = truth.iter().position(|&t| t == 0.0) {
        return Err(PowerError::ZeroTruthValue(i));
    }
    let n = truth.len();
    let (mut ape, mut ae) = (0.0, 0.0);
    for (&t, &e) in truth.iter().zip(estimate) {
        ae += (e - t).abs();
        ape += (e - t).abs() / t.abs();
    }
    Ok(ErrorStats { mape: ape / n as f64, mae: ae / n as f64, n })
}

/// Least-squares polynomial `y = c[0] + c[1] x + ... + c[d] x^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    pub coefficients: Vec<f64>,
    /// `y - fitted` in input order.
    pub residuals: Vec<f64>,
    /// Fitted values against `y`. MAPE only covers points with nonzero `y`.
    pub residual_stats: ErrorStats,
}

impl PolyFit {
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// Quadratic least-squares fit, with coefficients `(c0, c1, c2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFit {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub residuals: Vec<f64>,
    pub residual_stats: ErrorStats,
}

pub fn quadratic_fit(x: &[f64], y: &[f64]) -> Result<QuadraticFit, PowerError> {
    let fit = polynomial_fit(x, y, 2)?;
    Ok(QuadraticFit {
        c0: fit.coefficients[0],
        c1: fit.coefficients[1],
        c2: fit.coefficients[2],
        residuals: fit.residuals,
        residual_stats: fit.residual_stats,
    })
}

/// Least-squares polynomial fit of the given degree.
///
/// The abscissae are centered and scaled before a Householder QR solve of the
/// Vandermonde system; the solution is then expanded back into the monomial
/// basis of the raw `x`.
pub fn polynomial_fit(x: &[f64], y: &[f64], degree: usize) -> Result<PolyFit, PowerError> {
    if x.len() != y.len() {
        return Err(PowerError::LengthMismatch(x.len(), y.len()));
    }
    let cols = degree + 1;
    if x.len() < cols {
        return Err(PowerError::TooFewSamples { needed: cols, got: x.len() });
    }
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < cols {
        return Err(PowerError::DegenerateInput);
    }

    let lo = distinct[0];
    let hi = distinct[distinct.len() - 1];
    let center = 0.5 * (lo + hi);
    let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };

    let rows = x.len();
    // column-major Vandermonde in the scaled variable
    let mut a = vec![0.0; rows * cols];
    for (i, &xi) in x.iter().enumerate() {
        let u = (xi - center) / scale;
        let mut p = 1.0;
        for j in 0..cols {
            a[j * rows + i] = p;
            p *= u;
        }
    }
    let mut b = y.to_vec();
    let scaled = householder_solve(&mut a, &mut b, rows, cols).ok_or(PowerError::DegenerateInput)?;
    let coefficients = expand_shifted(&scaled, center, scale);

    let mut fit = PolyFit {
        coefficients,
        residuals: Vec::with_capacity(rows),
        residual_stats: ErrorStats { mape: 0.0, mae: 0.0, n: rows },
    };
    // residuals from the scaled basis, which is the better-conditioned one
    let eval_scaled = |u: f64| scaled.iter().rev().fold(0.0, |acc, &c| acc * u + c);
    let (mut ae, mut ape, mut nonzero) = (0.0, 0.0, 0usize);
    for (&xi, &yi) in x.iter().zip(y) {
        let r = yi - eval_scaled((xi - center) / scale);
        fit.residuals.push(r);
        ae += r.abs();
        if yi != 0.0 {
            ape += r.abs() / yi.abs();
            nonzero += 1;
        }
    }
    fit.residual_stats.mae = ae / rows as f64;
    fit.residual_stats.mape = if nonzero > 0 { ape / nonzero as f64 } else { 0.0 };
    Ok(fit)
}

/// Solves `min |A c - b|` in place; `a` is column-major `rows x cols`.
fn householder_solve(a: &mut [f64], b: &mut [f64], rows: usize, cols: usize) -> Option<Vec<f64>> {
    let mut diag = vec![0.0; cols];
    for k in 0..cols {
        let col = &a[k * rows..(k + 1) * rows];
        let norm = libm::sqrt(col[k..].iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            return None;
        }
        let alpha = if col[k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = col[k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k + 1..cols {
            let cj = &mut a[j * rows..(j + 1) * rows];
            let dot: f64 = v.iter().zip(&cj[k..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in cj[k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&b[k..]).map(|(p, q)| p * q).sum();
        let f = 2.0 * dot / vnorm2;
        for (c, vi) in b[k..].iter_mut().zip(&v) {
            *c -= f * vi;
        }
    }
    let max_diag = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if diag.iter().any(|d| d.abs() <= max_diag * 1e-12) {
        return None;
    }
    let mut c = vec![0.0; cols];
    for k in (0..cols).rev() {
        let mut s = b[k];
        for j in k + 1..cols {
            s -= a[j * rows + k] * c[j];
        }
        c[k] = s / diag[k];
    }
    Some(c)
}

/// Rewrites `sum d_j ((x - center) / scale)^j` as `sum c_j x^j`.
fn expand_shifted(d: &[f64], center: f64, scale: f64) -> Vec<f64> {
    let n = d.len();
    let mut out = vec![0.0; n];
    // term = ((x - center)/scale)^j as monomial coefficients
    let mut term = vec![0.0; n];
    term[0] = 1.0;
    for (j, &dj) in d.iter().enumerate() {
        if j > 0 {
            let mut next = vec![0.0; n];
            for k in 0..j {
                next[k + 1] += term[k] / scale;
                next[k] -= term[k] * center / scale;
            }
            term = next;
        }
        for k in 0..=j {
            out[k] += dj * term[k];
        }
    }
    out
}

/// Outcome of comparing a bulk series against the sum of its components.
#[derive(Debug, Clone, PartialEq)]
pub struct SumCheck {
    /// Sum of components against bulk as truth.
    pub stats: ErrorStats,
    /// `(time, bulk - sum of components)` per aligned instant.
    pub residuals: Vec<(f64, f64)>,
}

/// Recomputes bulk power as the sum of components and compares.
///
/// Only points of `kind` are used. Every bulk point is matched to the nearest
/// point of each component within half the bulk update interval (median
/// spacing of the bulk points). Bulk points missing any component, and bulk
/// points of zero power (no relative error defined), are left out.
pub fn component_sum_check(
    bulk: &PowerSeries,
    components: &[PowerSeries],
    kind: PowerKind,
) -> Result<SumCheck, PowerError> {
    let bulk_pts: Vec<&crate::power::PowerPoint> = bulk.of_kind(kind).collect();
    if bulk_pts.len() < 2 || components.is_empty() {
        return Err(PowerError::AlignmentError);
    }
    let mut gaps: Vec<f64> = bulk_pts.windows(2).map(|w| w[1].time - w[0].time).collect();
    gaps.sort_by(f64::total_cmp);
    let tolerance = 0.5 * gaps[gaps.len() / 2];

    let comp_pts: Vec<Vec<(f64, f64)>> = components
        .iter()
        .map(|c| c.of_kind(kind).map(|p| (p.time, p.power)).collect())
        .collect();

    let mut truth = Vec::new();
    let mut estimate = Vec::new();
    let mut residuals = Vec::new();
    'points: for p in &bulk_pts {
        if p.power == 0.0 {
            continue;
        }
        let mut sum = 0.0;
        for pts in &comp_pts {
            match nearest(pts, p.time) {
                Some((t, v)) if (t - p.time).abs() <= tolerance => sum += v,
                _ => continue 'points,
            }
        }
        truth.push(p.power);
        estimate.push(sum);
        residuals.push((p.time, p.power - sum));
    }
    if truth.is_empty() {
        return Err(PowerError::AlignmentError);
    }
    Ok(SumCheck { stats: error_stats(&truth, &estimate)?, residuals })
}

fn nearest(points: &[(f64, f64)], t: f64) -> Option<(f64, f64)> {
    let idx = points.partition_point(|p| p.0 < t);
    let after = points.get(idx).copied();
    let before = idx.checked_sub(1).and_then(|i| points.get(i)).copied();
    match (before, after) {
        (Some(a), Some(b)) => Some(if t - a.0 <= b.0 - t { a } else { b }),
        (a, b) => a.or(b),
    }
}
