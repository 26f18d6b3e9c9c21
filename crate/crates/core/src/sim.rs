//! Deterministic emulation of the on-chip power sampling pipeline.
//!
//! The device runs on its own clock, `clock_skew` device-seconds per host
//! second. On a fixed device-time grid it samples every sensor's workload
//! signal, rounds to whole watts and folds the sample into the sensor's
//! accumulator. Every `flush_period_device` it rewrites the inactive reading
//! buffer (clearing its valid flag first) with the current accumulator and
//! update tag; every `publish_every_n_flushes`-th flush also refreshes the
//! published sample and timestamp, which is what readers see as a new value.
//!
//! Workload signals run on host time, like the processes that generate the
//! load. Record timestamps count host time in units of the timebase.
//!
//! Internal samples are folded into the accumulator unfiltered; there is no
//! smoothing stage between the sampler and the accumulator.

use alloc::vec::Vec;

use crate::image::{
    encode_image, standard_power_sensors, write_record, BufferChoice, SensorDataBlock, SensorImage,
    SensorNameEntry, SensorRecord, BLOCK_SIZE, TIMEBASE_HZ,
};
use crate::reader::{sample_loop, ImageSource, RawTrace, ReadMode, ReaderError, SourceError};

pub const DEFAULT_NOMINAL_RATE: f64 = 2000.0;
/// 1996.16 effective samples per second against a 2 kSa/s nominal rate.
pub const DEFAULT_CLOCK_SKEW: f64 = 0.99808;
pub const DEFAULT_FLUSH_PERIOD: f64 = 0.008;
pub const DEFAULT_PUBLISH_EVERY: u32 = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("cannot move from host time {from} s back to {to} s")]
    TimeReversal { from: f64, to: f64 },
    #[error("invalid experiment: {0}")]
    InvalidExperiment(&'static str),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
}

/// Analytic power signal of a workload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkloadSignal {
    Constant { power_w: f64 },
    /// `high_w` while `frac(t * freq_hz + phase) < duty`, `low_w` otherwise.
    Square { freq_hz: f64, duty: f64, low_w: f64, high_w: f64, phase: f64 },
}

impl WorkloadSignal {
    pub fn constant(power_w: f64) -> Self {
        WorkloadSignal::Constant { power_w }
    }

    /// Half idle, half work.
    pub fn square(freq_hz: f64, low_w: f64, high_w: f64) -> Self {
        WorkloadSignal::Square { freq_hz, duty: 0.5, low_w, high_w, phase: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match *self {
            WorkloadSignal::Constant { power_w } if power_w.is_finite() => Ok(()),
            WorkloadSignal::Constant { .. } => Err(SimError::InvalidConfig("constant power must be finite")),
            WorkloadSignal::Square { freq_hz, duty, low_w, high_w, phase } => {
                if !(freq_hz > 0.0 && freq_hz.is_finite()) {
                    return Err(SimError::InvalidConfig("square wave frequency must be positive"));
                }
                if !(duty > 0.0 && duty < 1.0) {
                    return Err(SimError::InvalidConfig("duty must lie in (0, 1)"));
                }
                if !(low_w <= high_w && low_w.is_finite() && high_w.is_finite()) {
                    return Err(SimError::InvalidConfig("square wave needs low <= high"));
                }
                if !(0.0..1.0).contains(&phase) {
                    return Err(SimError::InvalidConfig("phase must lie in [0, 1)"));
                }
                Ok(())
            }
        }
    }

    pub fn max_power(&self) -> f64 {
        match *self {
            WorkloadSignal::Constant { power_w } => power_w,
            WorkloadSignal::Square { high_w, .. } => high_w,
        }
    }

    pub fn mean_power(&self) -> f64 {
        match *self {
            WorkloadSignal::Constant { power_w } => power_w,
            WorkloadSignal::Square { duty, low_w, high_w, .. } => low_w + duty * (high_w - low_w),
        }
    }
}

/// Instantaneous power of `signal` at time `t`; transitions are instantaneous.
pub fn signal_power(signal: &WorkloadSignal, t: f64) -> f64 {
    match *signal {
        WorkloadSignal::Constant { power_w } => power_w,
        WorkloadSignal::Square { freq_hz, duty, low_w, high_w, phase } => {
            let u = t * freq_hz + phase;
            if u - libm::floor(u) < duty {
                high_w
            } else {
                low_w
            }
        }
    }
}

/// Exact integral of `signal` over `[t1, t2]` in J.
pub fn ground_truth_energy(signal: &WorkloadSignal, t1: f64, t2: f64) -> f64 {
    match *signal {
        WorkloadSignal::Constant { power_w } => power_w * (t2 - t1),
        WorkloadSignal::Square { freq_hz, duty, low_w, high_w, phase } => {
            // time spent high in [0, t]: in cycle units, whole cycles
            // contribute `duty` each, the partial one min(frac, duty).
            let high_cycles = |t: f64| {
                let u = t * freq_hz + phase;
                let whole = libm::floor(u);
                whole * duty + (u - whole).min(duty)
            };
            let high_time = (high_cycles(t2) - high_cycles(t1)) / freq_hz;
            low_w * (t2 - t1) + (high_w - low_w) * high_time
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSensor {
    pub entry: SensorNameEntry,
    pub signal: WorkloadSignal,
    pub block: usize,
}

impl SimSensor {
    /// One of the standard power sensors of `block`, driven by `signal`.
    pub fn standard(name: &str, block: usize, signal: WorkloadSignal) -> Option<Self> {
        standard_power_sensors(block)
            .into_iter()
            .find(|e| e.name.matches(name))
            .map(|entry| SimSensor { entry, signal, block })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Internal samples per device-second.
    pub nominal_internal_rate: f64,
    /// Device-seconds per host-second.
    pub clock_skew: f64,
    /// Device-seconds between buffer rewrites.
    pub flush_period_device: f64,
    pub publish_every_n_flushes: u32,
    pub timebase_hz: u64,
    /// Sample resolution in W; a positive whole number.
    pub quantization_w: f64,
    pub sensors: Vec<SimSensor>,
    /// Constant added to the `PWRSYS` signal only.
    pub unaccounted_bulk_w: f64,
}

impl SimConfig {
    pub fn new(sensors: Vec<SimSensor>) -> Self {
        SimConfig {
            nominal_internal_rate: DEFAULT_NOMINAL_RATE,
            clock_skew: DEFAULT_CLOCK_SKEW,
            flush_period_device: DEFAULT_FLUSH_PERIOD,
            publish_every_n_flushes: DEFAULT_PUBLISH_EVERY,
            timebase_hz: TIMEBASE_HZ,
            quantization_w: 1.0,
            sensors,
            unaccounted_bulk_w: 0.0,
        }
    }

    /// A single standard sensor in block 0.
    pub fn single(name: &str, signal: WorkloadSignal) -> Result<Self, SimError> {
        let sensor = SimSensor::standard(name, 0, signal)
            .ok_or(SimError::InvalidConfig("not a standard power sensor name"))?;
        Ok(SimConfig::new(alloc::vec![sensor]))
    }

    /// Samples per host-second.
    pub fn effective_rate(&self) -> f64 {
        self.nominal_internal_rate * self.clock_skew
    }

    /// Host-seconds between published value changes.
    pub fn external_update_interval(&self) -> f64 {
        self.flush_period_device * self.publish_every_n_flushes as f64 / self.clock_skew
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.nominal_internal_rate) {
            return Err(SimError::InvalidConfig("nominal_internal_rate must be positive"));
        }
        if !positive(self.clock_skew) {
            return Err(SimError::InvalidConfig("clock_skew must be positive"));
        }
        if !positive(self.flush_period_device) {
            return Err(SimError::InvalidConfig("flush_period_device must be positive"));
        }
        if self.publish_every_n_flushes == 0 {
            return Err(SimError::InvalidConfig("publish_every_n_flushes must be at least 1"));
        }
        if self.timebase_hz == 0 {
            return Err(SimError::InvalidConfig("timebase_hz must be positive"));
        }
        if !(self.quantization_w >= 1.0 && libm::floor(self.quantization_w) == self.quantization_w) {
            return Err(SimError::InvalidConfig("quantization_w must be a positive whole number"));
        }
        if self.sensors.is_empty() {
            return Err(SimError::InvalidConfig("at least one sensor is required"));
        }
        if !self.unaccounted_bulk_w.is_finite() {
            return Err(SimError::InvalidConfig("unaccounted_bulk_w must be finite"));
        }
        for s in &self.sensors {
            s.signal.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SensorState {
    pub accumulator: u64,
    pub update_tag: u32,
    pub last_sample: u16,
    pub published_sample: u16,
    /// Timestamp of the last published update, in timebase ticks.
    pub last_publish_tick: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub host_time: f64,
    pub sensors: Vec<SensorState>,
    /// Buffer written by the most recent committed flush.
    pub active_buffer: BufferChoice,
    pub flushes: u64,
    /// Bytes handed out to readers through [`SimSource`].
    pub byte_access_counter: u64,
}

/// What [`Simulator::step`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEvent {
    Sample,
    /// The target buffer's valid flag was cleared.
    RewriteStarted(BufferChoice),
    /// The target buffer holds fresh records and is valid again.
    RewriteCommitted { buffer: BufferChoice, published: bool },
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    ping_record: usize,
    pong_record: usize,
    gsid: u16,
    bulk: bool,
}

pub struct Simulator {
    config: SimConfig,
    state: SimState,
    bytes: Vec<u8>,
    slots: Vec<Slot>,
    /// Absolute offsets of the ping and pong valid flags of every block.
    flags: Vec<(usize, usize)>,
    next_sample: u64,
    next_flush: u64,
    rewriting: Option<BufferChoice>,
}

fn other(b: BufferChoice) -> BufferChoice {
    match b {
        BufferChoice::Ping => BufferChoice::Pong,
        BufferChoice::Pong => BufferChoice::Ping,
    }
}

impl Simulator {
    /// Builds the image and commits an initial all-zero ping buffer at time 0,
    /// so that every snapshot has a valid buffer.
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let block_count = config.sensors.iter().map(|s| s.block).max().unwrap_or(0) + 1;
        let mut blocks: Vec<SensorDataBlock> = (0..block_count)
            .map(|b| {
                SensorDataBlock::canonical(
                    config.sensors.iter().filter(|s| s.block == b).map(|s| s.entry).collect(),
                )
            })
            .collect();
        for block in blocks.iter_mut() {
            block.ping.valid = true;
        }
        let image = SensorImage { blocks };
        let bytes = encode_image(&image)?;

        let mut slots = Vec::with_capacity(config.sensors.len());
        let mut per_block = alloc::vec![0usize; block_count];
        for s in &config.sensors {
            let layout = image.blocks[s.block].layout();
            let base = s.block * BLOCK_SIZE;
            let index = per_block[s.block];
            per_block[s.block] += 1;
            slots.push(Slot {
                ping_record: base + layout.record_offset(BufferChoice::Ping, index),
                pong_record: base + layout.record_offset(BufferChoice::Pong, index),
                gsid: s.entry.gsid,
                bulk: s.entry.name.matches("PWRSYS"),
            });
        }
        let flags = image
            .blocks
            .iter()
            .enumerate()
            .map(|(b, block)| (b * BLOCK_SIZE + block.ping_offset as usize, b * BLOCK_SIZE + block.pong_offset as usize))
            .collect();

        let state = SimState {
            host_time: 0.0,
            sensors: alloc::vec![SensorState::default(); config.sensors.len()],
            active_buffer: BufferChoice::Ping,
            flushes: 0,
            byte_access_counter: 0,
        };
        Ok(Simulator { config, state, bytes, slots, flags, next_sample: 1, next_flush: 1, rewriting: None })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn host_time(&self) -> f64 {
        self.state.host_time
    }

    pub fn device_time(&self) -> f64 {
        self.state.host_time * self.config.clock_skew
    }

    pub fn sensor_index(&self, name: &str) -> Option<usize> {
        self.config.sensors.iter().position(|s| s.entry.name.matches(name))
    }

    pub fn sensor_state(&self, name: &str) -> Option<&SensorState> {
        self.sensor_index(name).map(|i| &self.state.sensors[i])
    }

    /// True between the start and the commit of a buffer rewrite.
    pub fn rewriting(&self) -> Option<BufferChoice> {
        self.rewriting
    }

    fn sample_device_time(&self) -> f64 {
        self.next_sample as f64 / self.config.nominal_internal_rate
    }

    fn flush_device_time(&self) -> f64 {
        self.next_flush as f64 * self.config.flush_period_device
    }

    // Samples that coincide with a flush (up to rounding) happen before it.
    fn sample_is_next(&self) -> bool {
        let ts = self.sample_device_time();
        let tf = self.flush_device_time();
        ts <= tf + tf * 1e-12
    }

    /// Device time of the next event.
    pub fn next_event_device_time(&self) -> f64 {
        if self.rewriting.is_some() {
            // commit happens at the instant of the rewrite start
            return (self.next_flush - 1) as f64 * self.config.flush_period_device;
        }
        if self.sample_is_next() {
            self.sample_device_time()
        } else {
            self.flush_device_time()
        }
    }

    /// Processes exactly one event and moves host time to it.
    pub fn step(&mut self) -> SimEvent {
        if let Some(target) = self.rewriting.take() {
            return self.commit_rewrite(target);
        }
        if self.sample_is_next() {
            let device = self.sample_device_time();
            self.set_host_time(device / self.config.clock_skew);
            self.take_sample(device / self.config.clock_skew);
            self.next_sample += 1;
            SimEvent::Sample
        } else {
            let device = self.flush_device_time();
            self.set_host_time(device / self.config.clock_skew);
            self.next_flush += 1;
            let target = other(self.state.active_buffer);
            for &(ping, pong) in &self.flags {
                self.bytes[if target == BufferChoice::Ping { ping } else { pong }] = 0;
            }
            self.rewriting = Some(target);
            SimEvent::RewriteStarted(target)
        }
    }

    fn set_host_time(&mut self, t: f64) {
        if t > self.state.host_time {
            self.state.host_time = t;
        }
    }

    /// Runs all events up to `to_host_time` (host seconds).
    pub fn advance(&mut self, to_host_time: f64) -> Result<(), SimError> {
        if !(to_host_time >= self.state.host_time) {
            return Err(SimError::TimeReversal { from: self.state.host_time, to: to_host_time });
        }
        if let Some(target) = self.rewriting.take() {
            self.commit_rewrite(target);
        }
        let device_to = to_host_time * self.config.clock_skew;
        while self.next_event_device_time() <= device_to {
            if let SimEvent::RewriteStarted(target) = self.step() {
                self.rewriting = None;
                self.commit_rewrite(target);
            }
        }
        self.state.host_time = to_host_time;
        Ok(())
    }

    fn take_sample(&mut self, host_time: f64) {
        let q = self.config.quantization_w;
        for (i, sensor) in self.config.sensors.iter().enumerate() {
            let mut p = signal_power(&sensor.signal, host_time);
            if self.slots[i].bulk {
                p += self.config.unaccounted_bulk_w;
            }
            // round half up to the resolution
            let quantized = (libm::floor(p / q + 0.5) * q).clamp(0.0, u16::MAX as f64) as u16;
            let st = &mut self.state.sensors[i];
            st.accumulator = st.accumulator.wrapping_add(quantized as u64);
            st.update_tag = st.update_tag.wrapping_add(1);
            st.last_sample = quantized;
        }
    }

    fn commit_rewrite(&mut self, target: BufferChoice) -> SimEvent {
        let flush_index = self.next_flush - 1;
        let published = flush_index % self.config.publish_every_n_flushes as u64 == 0;
        if published {
            let host = flush_index as f64 * self.config.flush_period_device / self.config.clock_skew;
            let tick = libm::round(host * self.config.timebase_hz as f64) as u64;
            for st in self.state.sensors.iter_mut() {
                st.published_sample = st.last_sample;
                st.last_publish_tick = tick;
            }
        }
        for (slot, st) in self.slots.iter().zip(&self.state.sensors) {
            let record = SensorRecord {
                gsid: slot.gsid,
                timestamp: st.last_publish_tick,
                sample: st.published_sample,
                accumulator: st.accumulator,
                update_tag: st.update_tag,
            };
            let at = if target == BufferChoice::Ping { slot.ping_record } else { slot.pong_record };
            write_record(&mut self.bytes, at, &record);
        }
        for &(ping, pong) in &self.flags {
            self.bytes[if target == BufferChoice::Ping { ping } else { pong }] = 1;
        }
        self.state.active_buffer = target;
        self.state.flushes += 1;
        SimEvent::RewriteCommitted { buffer: target, published }
    }

    /// The committed image bytes as a reader would see them right now.
    pub fn snapshot_image(&self) -> Vec<u8> {
        self.bytes.clone()
    }

    pub fn image_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Serves a simulator as an [`ImageSource`], advancing it by one readout
/// period before every readout.
pub struct SimSource {
    sim: Simulator,
    readout_period: f64,
    start: f64,
    reads: u64,
}

impl SimSource {
    pub fn new(sim: Simulator, readout_period: f64) -> Result<Self, SimError> {
        if !(readout_period > 0.0 && readout_period.is_finite()) {
            return Err(SimError::InvalidExperiment("readout period must be positive"));
        }
        let start = sim.host_time();
        Ok(SimSource { sim, readout_period, start, reads: 0 })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn into_simulator(self) -> Simulator {
        self.sim
    }

    pub fn bytes_read(&self) -> u64 {
        self.sim.state.byte_access_counter
    }
}

impl ImageSource for SimSource {
    fn prepare_read(&mut self) -> Result<(), SourceError> {
        self.reads += 1;
        let t = self.start + self.reads as f64 * self.readout_period;
        self.sim.advance(t).map_err(|_| SourceError::Exhausted)
    }

    fn read_image(&mut self, buf: &mut Vec<u8>) -> Result<(), SourceError> {
        buf.clear();
        buf.extend_from_slice(&self.sim.bytes);
        self.sim.state.byte_access_counter += self.sim.bytes.len() as u64;
        Ok(())
    }

    fn read_at(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), SourceError> {
        let src = self
            .sim
            .bytes
            .get(offset..offset + buf.len())
            .ok_or(crate::image::ImageError::OutOfBounds { offset, len: buf.len() })?;
        buf.copy_from_slice(src);
        self.sim.state.byte_access_counter += buf.len() as u64;
        Ok(())
    }

    fn host_time(&mut self) -> f64 {
        self.sim.host_time()
    }
}

/// Simulates `duration` host-seconds and reads `sensor` through the optimized
/// path every `readout_period`.
pub fn run_experiment(
    config: &SimConfig,
    duration: f64,
    readout_period: f64,
    sensor: &str,
) -> Result<RawTrace, SimError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(SimError::InvalidExperiment("duration must be positive"));
    }
    if !(readout_period > 0.0) {
        return Err(SimError::InvalidExperiment("readout period must be positive"));
    }
    let reads = libm::floor(duration / readout_period + 1e-9) as usize;
    let mut source = SimSource::new(Simulator::new(config.clone())?, readout_period)?;
    Ok(sample_loop(&mut source, sensor, reads, ReadMode::Optimized)?)
}
