//! Readout loop and interface benchmarks.
//!
//! [`sample_loop`] polls one sensor back-to-back from an [`ImageSource`] and
//! buffers every readout in memory. The resulting [`RawTrace`] feeds the two
//! interface benchmarks: the readout-latency histogram and the external
//! update-rate estimate.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::image::{
    locate_sensor, parse_image, read_record_with, select_buffer, ImageError, SensorLocator,
    SensorRecord,
};

/// Default window for the external update-rate estimate, seconds.
pub const DEFAULT_CHANGE_WINDOW_S: f64 = 0.060;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SourceError {
    #[error("source unavailable: {0}")]
    Unavailable(String),
    #[error("source exhausted")]
    Exhausted,
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReaderError {
    #[error("a readout loop needs at least 2 reads, got {0}")]
    TooFewReads(usize),
    #[error("sensor {0:?} not found")]
    SensorNotFound(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("image: {0}")]
    Image(ImageError),
    #[error("needs at least {needed} entries, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("bin width must be positive")]
    BadBinWidth,
    #[error("change window must be positive")]
    BadWindow,
    #[error("mean readout spacing {spacing_s} s exceeds a tenth of the change window")]
    SparseTrace { spacing_s: f64 },
    #[error("no value changes within the change window")]
    NoChanges,
}

impl From<ImageError> for ReaderError {
    fn from(e: ImageError) -> Self {
        ReaderError::Image(e)
    }
}

/// Something that exposes an encoded sensor image plus the host clock the
/// readouts are timestamped with.
pub trait ImageSource {
    /// Called once before every readout of the loop. Live sources do nothing;
    /// simulated and replayed sources move to their next state here.
    fn prepare_read(&mut self) -> Result<(), SourceError> {
        Ok(())
    }

    /// Reads the complete image into `buf`, replacing its contents.
    fn read_image(&mut self, buf: &mut Vec<u8>) -> Result<(), SourceError>;

    /// Reads `buf.len()` bytes starting at `offset`.
    fn read_at(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), SourceError>;

    /// Monotonic host time in seconds.
    fn host_time(&mut self) -> f64;
}

impl<S: ImageSource + ?Sized> ImageSource for &mut S {
    fn prepare_read(&mut self) -> Result<(), SourceError> {
        (**self).prepare_read()
    }
    fn read_image(&mut self, buf: &mut Vec<u8>) -> Result<(), SourceError> {
        (**self).read_image(buf)
    }
    fn read_at(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), SourceError> {
        (**self).read_at(offset, buf)
    }
    fn host_time(&mut self) -> f64 {
        (**self).host_time()
    }
}

/// A frozen in-memory image on a caller-supplied clock.
pub struct StaticSource<C> {
    pub bytes: Vec<u8>,
    pub clock: C,
    pub bytes_read: u64,
}

impl<C: FnMut() -> f64> StaticSource<C> {
    pub fn new(bytes: Vec<u8>, clock: C) -> Self {
        StaticSource { bytes, clock, bytes_read: 0 }
    }
}

impl<C: FnMut() -> f64> ImageSource for StaticSource<C> {
    fn read_image(&mut self, buf: &mut Vec<u8>) -> Result<(), SourceError> {
        buf.clear();
        buf.extend_from_slice(&self.bytes);
        self.bytes_read += self.bytes.len() as u64;
        Ok(())
    }

    fn read_at(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), SourceError> {
        let src = self
            .bytes
            .get(offset..offset + buf.len())
            .ok_or(ImageError::OutOfBounds { offset, len: buf.len() })?;
        buf.copy_from_slice(src);
        self.bytes_read += buf.len() as u64;
        Ok(())
    }

    fn host_time(&mut self) -> f64 {
        (self.clock)()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReadMode {
    /// Read and decode the whole image, look the sensor up, select a buffer.
    Naive,
    /// Look the sensor up once, then read only its two records and flags.
    Optimized,
}

impl ReadMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReadMode::Naive => "naive",
            ReadMode::Optimized => "optimized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub host_time: f64,
    pub record: SensorRecord,
}

/// Host-timestamped readouts of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    pub sensor: String,
    pub mode: ReadMode,
    pub entries: Vec<TraceEntry>,
    /// Reads that produced no entry: torn snapshots without a valid buffer, or
    /// a host clock that did not advance.
    pub skipped_reads: u64,
}

impl RawTrace {
    pub fn new(sensor: &str, mode: ReadMode) -> Self {
        RawTrace { sensor: sensor.to_string(), mode, entries: Vec::new(), skipped_reads: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn span(&self) -> f64 {
        match (self.entries.first(), self.entries.last()) {
            (Some(a), Some(b)) => b.host_time - a.host_time,
            _ => 0.0,
        }
    }

    /// Keeps the first entry of every device update, i.e. of every change of
    /// the record timestamp.
    pub fn updates(&self) -> Vec<TraceEntry> {
        let mut out: Vec<TraceEntry> = Vec::new();
        for e in &self.entries {
            if out.last().map_or(true, |p| p.record.timestamp != e.record.timestamp) {
                out.push(*e);
            }
        }
        out
    }
}

/// Performs `n` back-to-back readouts of `sensor`.
///
/// Entries go into a buffer preallocated for `n` readouts. In optimized mode
/// the sensor is located once from an initial full read. Readouts that find no
/// valid buffer are skipped and counted in [`RawTrace::skipped_reads`].
pub fn sample_loop<S: ImageSource>(
    source: &mut S,
    sensor: &str,
    n: usize,
    mode: ReadMode,
) -> Result<RawTrace, ReaderError> {
    if n < 2 {
        return Err(ReaderError::TooFewReads(n));
    }
    let mut image_buf = Vec::new();
    source.read_image(&mut image_buf)?;
    let image = parse_image(&image_buf)?;
    let locator = match locate_sensor(&image, sensor) {
        Ok(l) => l,
        Err(ImageError::NotFound) => return Err(ReaderError::SensorNotFound(sensor.to_string())),
        Err(e) => return Err(e.into()),
    };
    let gsid = image.blocks[locator.block].names[locator.record].gsid;
    drop(image);

    let mut trace = RawTrace::new(sensor, mode);
    trace.entries.reserve_exact(n);
    let mut last_time = f64::NEG_INFINITY;
    for _ in 0..n {
        source.prepare_read()?;
        let outcome = match mode {
            ReadMode::Optimized => read_optimized(source, &locator),
            ReadMode::Naive => read_naive(source, &mut image_buf, sensor),
        };
        let host_time = source.host_time();
        match outcome {
            Ok(record) if record.gsid == gsid && host_time > last_time => {
                last_time = host_time;
                trace.entries.push(TraceEntry { host_time, record });
            }
            Ok(_) | Err(SourceError::Image(ImageError::NoValidBuffer)) => trace.skipped_reads += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(trace)
}

fn read_optimized<S: ImageSource>(
    source: &mut S,
    locator: &SensorLocator,
) -> Result<SensorRecord, SourceError> {
    read_record_with(locator, |offset, buf| source.read_at(offset, buf)).map(|r| r.record())
}

fn read_naive<S: ImageSource>(
    source: &mut S,
    buf: &mut Vec<u8>,
    sensor: &str,
) -> Result<SensorRecord, SourceError> {
    source.read_image(buf)?;
    let image = parse_image(buf)?;
    let loc = locate_sensor(&image, sensor)?;
    let block = &image.blocks[loc.block];
    let choice = select_buffer(block)?;
    Ok(block.buffer(choice).records[loc.record])
}

/// Histogram of successive readout separations.
///
/// Bin `k` covers `[k * bin_width, (k + 1) * bin_width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyHistogram {
    pub bin_width: f64,
    pub bins: BTreeMap<u64, u64>,
    pub mean: f64,
    pub count: u64,
}

impl LatencyHistogram {
    /// `(bin lower edge in seconds, count)` pairs in ascending order.
    pub fn rows(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.bins.iter().map(move |(&k, &c)| (k as f64 * self.bin_width, c))
    }
}

// Relative slack (in bins) for separations that land on a bin edge up to
// floating-point error, e.g. 4.3e-6 / 1e-7.
const BIN_EDGE_SLACK: f64 = 1e-9;

pub fn latency_histogram(trace: &RawTrace, bin_width: f64) -> Result<LatencyHistogram, ReaderError> {
    if !(bin_width > 0.0) {
        return Err(ReaderError::BadBinWidth);
    }
    if trace.entries.len() < 2 {
        return Err(ReaderError::TooFewSamples { needed: 2, got: trace.entries.len() });
    }
    let mut bins = BTreeMap::new();
    let mut sum = 0.0;
    let mut count = 0u64;
    for pair in trace.entries.windows(2) {
        let gap = pair[1].host_time - pair[0].host_time;
        let index = libm::floor(gap / bin_width + BIN_EDGE_SLACK).max(0.0) as u64;
        *bins.entry(index).or_insert(0) += 1;
        sum += gap;
        count += 1;
    }
    Ok(LatencyHistogram { bin_width, bins, mean: sum / count as f64, count })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRate {
    pub rate_sa_s: f64,
    pub mean_interval_s: f64,
    /// Readouts at which the sample or timestamp changed.
    pub changes: usize,
    /// Gaps between changes that fell inside the window and were averaged.
    pub kept_gaps: usize,
}

/// Host times of the readouts at which the sample or the record timestamp
/// differs from the previous readout.
pub fn change_times(trace: &RawTrace) -> Vec<f64> {
    trace
        .entries
        .windows(2)
        .filter(|w| {
            w[1].record.sample != w[0].record.sample || w[1].record.timestamp != w[0].record.timestamp
        })
        .map(|w| w[1].host_time)
        .collect()
}

/// Estimates how often the interface exposes new values.
///
/// Gaps between consecutive changes longer than `change_window` are dropped:
/// they span an update at which the sensor repeated its previous value.
pub fn estimate_external_update_rate(
    trace: &RawTrace,
    change_window: f64,
) -> Result<UpdateRate, ReaderError> {
    if !(change_window > 0.0) {
        return Err(ReaderError::BadWindow);
    }
    let n = trace.entries.len();
    if n < 2 {
        return Err(ReaderError::TooFewSamples { needed: 2, got: n });
    }
    let spacing = trace.span() / (n - 1) as f64;
    if spacing > change_window / 10.0 {
        return Err(ReaderError::SparseTrace { spacing_s: spacing });
    }
    let changes = change_times(trace);
    let (sum, kept) = changes
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&gap| gap <= change_window)
        .fold((0.0, 0usize), |(s, k), gap| (s + gap, k + 1));
    if kept == 0 {
        return Err(ReaderError::NoChanges);
    }
    let mean = sum / kept as f64;
    Ok(UpdateRate { rate_sa_s: 1.0 / mean, mean_interval_s: mean, changes: changes.len(), kept_gaps: kept })
}
