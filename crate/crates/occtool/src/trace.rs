//! CSV trace files, one row per readout.

use std::io::{self, Read, Write};

use occ_core::image::SensorRecord;
use occ_core::reader::{RawTrace, ReadMode, TraceEntry};
use serde::Deserialize;

pub const TRACE_HEADER: &str = "host_time_s,gsid,occ_timestamp_ticks,sample_w,accumulator,update_tag";

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace header must be `{TRACE_HEADER}`")]
    Header,
    #[error("trace row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("trace has no rows")]
    Empty,
}

#[derive(Deserialize)]
struct Row {
    host_time_s: f64,
    gsid: u16,
    occ_timestamp_ticks: u64,
    sample_w: u16,
    accumulator: u64,
    update_tag: u32,
}

pub fn write_trace<W: Write>(mut out: W, trace: &RawTrace) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for e in &trace.entries {
        let r = &e.record;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.host_time, r.gsid, r.timestamp, r.sample, r.accumulator, r.update_tag
        )?;
    }
    out.flush()
}

/// Reads a trace back. The read mode is not stored in the file and is
/// reported as optimized.
pub fn read_trace<R: Read>(input: R, sensor: &str) -> Result<RawTrace, TraceError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|_| TraceError::Header)?;
    if header.iter().collect::<Vec<_>>().join(",") != TRACE_HEADER {
        return Err(TraceError::Header);
    }
    let mut trace = RawTrace::new(sensor, ReadMode::Optimized);
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| TraceError::Row { row: i + 1, message: e.to_string() })?;
        trace.entries.push(TraceEntry {
            host_time: row.host_time_s,
            record: SensorRecord {
                gsid: row.gsid,
                timestamp: row.occ_timestamp_ticks,
                sample: row.sample_w,
                accumulator: row.accumulator,
                update_tag: row.update_tag,
            },
        });
    }
    if trace.entries.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(trace)
}
