//! The `occtool` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use occ_core::aliasing::{
    classify_levels, estimate_internal_rate, pattern_frequency, spread_stats, PatternLevel, DEFAULT_RATIO_THRESHOLD,
};
use occ_core::image::{parse_image, select_buffer, ticks_to_seconds, BufferChoice, SensorImage};
use occ_core::power::{component_sum_check, derive_pfe_series, error_stats, polynomial_fit, ErrorStats, PowerKind};
use occ_core::reader::{
    estimate_external_update_rate, latency_histogram, sample_loop, ImageSource, RawTrace, ReadMode, SourceError,
};
use occ_core::sim::{run_experiment, SimSource, Simulator, DEFAULT_NOMINAL_RATE};

use crate::config::SimConfigFile;
use crate::error::CliError;
use crate::plot::write_columns;
use crate::source::{resolve_image_path, FileSource, ReplaySource, IMAGE_PATH_ENV};
use crate::trace::{read_trace, write_trace};

#[derive(Debug, Parser)]
#[command(name = "occtool", version, about = "Read, simulate and analyze OCC in-band power sensor images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// Sensor image file or live export [default: $OCCTOOL_IMAGE_PATH, then the sysfs export]
    #[arg(long, value_name = "PATH")]
    image: Option<PathBuf>,
    /// Recorded stream of concatenated images
    #[arg(long, value_name = "PATH", conflicts_with = "image")]
    replay: Option<PathBuf>,
    /// Simulator configuration (JSON)
    #[arg(long, value_name = "PATH", conflicts_with_all = ["image", "replay"])]
    sim_config: Option<PathBuf>,
    /// Seconds each replayed frame stays current
    #[arg(long, value_name = "S", default_value_t = 0.04)]
    interval: f64,
    /// Blocks per replayed frame
    #[arg(long, value_name = "N", default_value_t = 1)]
    frame_blocks: usize,
    /// Readout period for replayed and simulated sources [default: replay interval, 0.001 for the simulator]
    #[arg(long, value_name = "S")]
    period: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Naive,
    Optimized,
}

impl From<Mode> for ReadMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Naive => ReadMode::Naive,
            Mode::Optimized => ReadMode::Optimized,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Direct,
    Pfe,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse an image and print its blocks, sensors and current records
    Dump {
        #[command(flatten)]
        source: SourceArgs,
        /// Print JSON instead of a table
        #[arg(long)]
        json: bool,
    },
    /// Sample one sensor back to back and write a CSV trace
    Monitor {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        sensor: String,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, value_enum, default_value_t = Mode::Optimized)]
        mode: Mode,
        /// Trace output [default: stdout]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Histogram of readout separations
    BenchLatency {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value = "PWRSYS")]
        sensor: String,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, value_enum, default_value_t = Mode::Optimized)]
        mode: Mode,
        /// Analyze an existing trace instead of sampling
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// Bin width in microseconds
        #[arg(long, value_name = "US", default_value_t = 0.1)]
        bin_us: f64,
        /// Histogram data file
        #[arg(long, value_name = "PATH")]
        hist: Option<PathBuf>,
    },
    /// Estimate how often the interface exposes new values
    UpdateRate {
        #[arg(long, value_name = "PATH")]
        trace: PathBuf,
        /// Longest gap between changes that still counts as one update, ms
        #[arg(long, value_name = "MS", default_value_t = 60.0)]
        window_ms: f64,
    },
    /// Run the device simulator and write a CSV trace
    Simulate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long)]
        sensor: String,
        /// Simulated host seconds
        #[arg(long, value_name = "S")]
        duration: f64,
        /// Readout period
        #[arg(long, value_name = "S", default_value_t = 0.001)]
        period: f64,
        /// Trace output [default: stdout]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Also record a replayable snapshot stream
        #[arg(long, value_name = "PATH")]
        snapshots: Option<PathBuf>,
        /// Seconds between recorded snapshots
        #[arg(long, value_name = "S", default_value_t = 0.04)]
        snapshot_interval: f64,
    },
    /// Spread comparison, beat pattern and internal rate estimate
    AnalyzeAliasing {
        /// Trace files; repeat for several workloads
        #[arg(long, value_name = "PATH", required = true)]
        trace: Vec<PathBuf>,
        /// Workload frequency of each trace, in the same order
        #[arg(long, value_name = "HZ")]
        workload_hz: Vec<f64>,
        /// Low workload level [default: lowest power-from-energy value]
        #[arg(long, value_name = "W")]
        low_w: Option<f64>,
        /// High workload level [default: highest power-from-energy value]
        #[arg(long, value_name = "W")]
        high_w: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_RATIO_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_name = "SA_S", default_value_t = DEFAULT_NOMINAL_RATE)]
        nominal_sa_s: f64,
        /// Classification data file (time, level); suffixed with the trace index for several traces
        #[arg(long, value_name = "PATH")]
        levels_out: Option<PathBuf>,
    },
    /// Least-squares polynomial fit and error statistics over a two-column CSV
    Fit {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        degree: usize,
        /// Fitted curve data file
        #[arg(long, value_name = "PATH")]
        plot: Option<PathBuf>,
    },
    /// Compare a bulk sensor against the sum of its components
    SumCheck {
        #[arg(long, value_name = "PATH")]
        bulk: PathBuf,
        #[arg(long, value_name = "PATH", required = true)]
        component: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Kind::Direct)]
        kind: Kind,
        /// Residual data file (time, bulk - sum)
        #[arg(long, value_name = "PATH")]
        residuals_out: Option<PathBuf>,
    },
}

/// Runs the CLI against the process streams.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run_cli_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) if e.is_broken_pipe() => 0,
        Err(e) => {
            let _ = writeln!(err, "occtool: {e}");
            if let CliError::Usage(_) = e {
                let _ = writeln!(err, "Try 'occtool --help' for more information.");
            }
            e.exit_code()
        }
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Dump { source, json } => dump(&source, json, out),
        Command::Monitor { source, sensor, count, mode, out: path } => {
            let trace = sample(&source, &sensor, count, mode.into())?;
            writeln!(err, "{} readouts of {sensor}, {} skipped", trace.entries.len(), trace.skipped_reads)?;
            write_output(path.as_deref(), out, |w| write_trace(w, &trace))
        }
        Command::BenchLatency { source, sensor, count, mode, trace, bin_us, hist } => {
            if !(bin_us > 0.0) {
                return Err(CliError::Usage("--bin-us must be positive".into()));
            }
            let trace = match trace {
                Some(path) => load_trace(&path)?,
                None => sample(&source, &sensor, count, mode.into())?,
            };
            let h = latency_histogram(&trace, bin_us * 1e-6)?;
            if let Some(path) = hist {
                write_file(&path, |w| write_columns(w, "latency_s", "count", h.rows().map(|(t, c)| (t, c as f64))))?;
            }
            let bins: Vec<Value> = h.rows().map(|(lower, count)| json!({ "lower_s": lower, "count": count })).collect();
            print_json(
                out,
                &json!({
                    "sensor": trace.sensor,
                    "mode": trace.mode.as_str(),
                    "intervals": h.count,
                    "bin_width_s": h.bin_width,
                    "mean_latency_s": h.mean,
                    "bins": bins,
                }),
            )
        }
        Command::UpdateRate { trace, window_ms } => {
            if !(window_ms > 0.0) {
                return Err(CliError::Usage("--window-ms must be positive".into()));
            }
            let trace = load_trace(&trace)?;
            let rate = estimate_external_update_rate(&trace, window_ms * 1e-3)?;
            print_json(
                out,
                &json!({
                    "rate_sa_s": rate.rate_sa_s,
                    "mean_interval_s": rate.mean_interval_s,
                    "mean_interval_ms": rate.mean_interval_s * 1e3,
                    "changes": rate.changes,
                    "kept_gaps": rate.kept_gaps,
                    "window_s": window_ms * 1e-3,
                }),
            )
        }
        Command::Simulate { config, sensor, duration, period, out: path, snapshots, snapshot_interval } => {
            let config = load_sim_config(&config)?;
            let trace = run_experiment(&config, duration, period, &sensor)?;
            if let Some(stream) = snapshots {
                if !(snapshot_interval > 0.0) {
                    return Err(CliError::Usage("--snapshot-interval must be positive".into()));
                }
                let mut sim = Simulator::new(config.clone())?;
                let frames = (duration / snapshot_interval + 1e-9).floor() as usize;
                write_file(&stream, |w| {
                    for k in 0..frames {
                        sim.advance(k as f64 * snapshot_interval).map_err(std::io::Error::other)?;
                        w.write_all(sim.image_bytes())?;
                    }
                    Ok(())
                })?;
            }
            writeln!(err, "{} readouts of {sensor} over {duration} s", trace.entries.len())?;
            write_output(path.as_deref(), out, |w| write_trace(w, &trace))
        }
        Command::AnalyzeAliasing { trace, workload_hz, low_w, high_w, threshold, nominal_sa_s, levels_out } => {
            if !workload_hz.is_empty() && workload_hz.len() != trace.len() {
                return Err(CliError::Usage("give one --workload-hz per --trace".into()));
            }
            analyze_aliasing(&trace, &workload_hz, low_w, high_w, threshold, nominal_sa_s, levels_out.as_deref(), out)
        }
        Command::Fit { data, degree, plot } => fit(&data, degree, plot.as_deref(), out),
        Command::SumCheck { bulk, component, kind, residuals_out } => {
            let kind = match kind {
                Kind::Direct => PowerKind::DirectSample,
                Kind::Pfe => PowerKind::PowerFromEnergy,
            };
            let bulk_series = derive_pfe_series(&load_trace(&bulk)?)?;
            let components = component
                .iter()
                .map(|p| Ok(derive_pfe_series(&load_trace(p)?)?))
                .collect::<Result<Vec<_>, CliError>>()?;
            let check = component_sum_check(&bulk_series, &components, kind)?;
            if let Some(path) = residuals_out {
                write_file(&path, |w| write_columns(w, "time_s", "residual_w", check.residuals.iter().copied()))?;
            }
            let mean = check.residuals.iter().map(|r| r.1).sum::<f64>() / check.residuals.len() as f64;
            print_json(
                out,
                &json!({
                    "kind": kind_name(kind),
                    "components": components.len(),
                    "stats": stats_json(&check.stats),
                    "mean_residual_w": mean,
                }),
            )
        }
    }
}

fn kind_name(kind: PowerKind) -> &'static str {
    match kind {
        PowerKind::DirectSample => "direct",
        PowerKind::PowerFromEnergy => "pfe",
    }
}

fn stats_json(s: &ErrorStats) -> Value {
    json!({ "mape": s.mape, "mape_percent": s.mape * 100.0, "mae_w": s.mae, "n": s.n })
}

fn print_json(out: &mut dyn Write, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("values serialize");
    writeln!(out, "{text}")?;
    Ok(())
}

fn write_file<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn write_output<F>(path: Option<&Path>, out: &mut dyn Write, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    match path {
        Some(p) => write_file(p, |w| body(w)),
        None => Ok(body(out)?),
    }
}

fn load_trace(path: &Path) -> Result<RawTrace, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(read_trace(std::io::BufReader::new(file), &name)?)
}

fn load_sim_config(path: &Path) -> Result<occ_core::sim::SimConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(SimConfigFile::from_json(&text)?.to_sim_config()?)
}

enum AnySource {
    File(FileSource),
    Replay(ReplaySource),
    Sim(SimSource),
}

impl ImageSource for AnySource {
    fn prepare_read(&mut self) -> Result<(), SourceError> {
        match self {
            AnySource::File(s) => s.prepare_read(),
            AnySource::Replay(s) => s.prepare_read(),
            AnySource::Sim(s) => s.prepare_read(),
        }
    }
    fn read_image(&mut self, buf: &mut Vec<u8>) -> Result<(), SourceError> {
        match self {
            AnySource::File(s) => s.read_image(buf),
            AnySource::Replay(s) => s.read_image(buf),
            AnySource::Sim(s) => s.read_image(buf),
        }
    }
    fn read_at(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), SourceError> {
        match self {
            AnySource::File(s) => s.read_at(offset, buf),
            AnySource::Replay(s) => s.read_at(offset, buf),
            AnySource::Sim(s) => s.read_at(offset, buf),
        }
    }
    fn host_time(&mut self) -> f64 {
        match self {
            AnySource::File(s) => s.host_time(),
            AnySource::Replay(s) => s.host_time(),
            AnySource::Sim(s) => s.host_time(),
        }
    }
}

fn open_source(args: &SourceArgs) -> Result<AnySource, CliError> {
    if let Some(p) = args.period {
        if !(p > 0.0) {
            return Err(CliError::Usage("--period must be positive".into()));
        }
    }
    if let Some(path) = &args.replay {
        let period = args.period.unwrap_or(args.interval);
        return Ok(AnySource::Replay(ReplaySource::open(path, args.frame_blocks, args.interval, period)?));
    }
    if let Some(path) = &args.sim_config {
        let sim = Simulator::new(load_sim_config(path)?)?;
        return Ok(AnySource::Sim(SimSource::new(sim, args.period.unwrap_or(1e-3))?));
    }
    let path = resolve_image_path(args.image.as_deref(), std::env::var_os(IMAGE_PATH_ENV));
    Ok(AnySource::File(FileSource::open(&path)?))
}

fn sample(args: &SourceArgs, sensor: &str, count: usize, mode: ReadMode) -> Result<RawTrace, CliError> {
    if count < 2 {
        return Err(CliError::Usage("--count must be at least 2".into()));
    }
    let mut source = open_source(args)?;
    let count = match &source {
        AnySource::Replay(r) => count.min(r.available_reads()),
        _ => count,
    };
    Ok(sample_loop(&mut source, sensor, count, mode)?)
}

fn current_image(args: &SourceArgs) -> Result<SensorImage, CliError> {
    let mut source = open_source(args)?;
    if let AnySource::Sim(_) = source {
        // show the state after one readout period
        source.prepare_read()?;
    }
    let mut buf = Vec::new();
    source.read_image(&mut buf)?;
    Ok(parse_image(&buf)?)
}

fn dump(args: &SourceArgs, as_json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let image = current_image(args)?;
    if as_json {
        let blocks: Vec<Value> = image
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let selected = select_buffer(b).ok();
                let sensors: Vec<Value> = b
                    .names
                    .iter()
                    .enumerate()
                    .map(|(r, n)| {
                        let record = selected.map(|c| {
                            let rec = b.buffer(c).records[r];
                            json!({
                                "timestamp_ticks": rec.timestamp,
                                "timestamp_s": ticks_to_seconds(rec.timestamp),
                                "sample_w": rec.sample,
                                "accumulator": rec.accumulator,
                                "update_tag": rec.update_tag,
                            })
                        });
                        json!({
                            "gsid": n.gsid,
                            "name": n.name.as_str(),
                            "units": n.units.as_str(),
                            "kind": n.kind.0,
                            "location": n.location.0,
                            "location_label": n.location.label(),
                            "sample_rate_sa_s": n.sampling_rate_sa_s(),
                            "record": record,
                        })
                    })
                    .collect();
                json!({
                    "index": i,
                    "sensor_count": b.sensor_count(),
                    "names_offset": b.names_offset,
                    "ping_offset": b.ping_offset,
                    "pong_offset": b.pong_offset,
                    "ping_valid": b.ping.valid,
                    "pong_valid": b.pong.valid,
                    "selected": selected.map(buffer_name),
                    "sensors": sensors,
                })
            })
            .collect();
        return print_json(out, &json!({ "blocks": blocks }));
    }
    for (i, b) in image.blocks.iter().enumerate() {
        let selected = select_buffer(b).ok();
        writeln!(
            out,
            "block {i}: {} sensors, names @{:#x}, ping @{:#x} ({}), pong @{:#x} ({}), reading {}",
            b.sensor_count(),
            b.names_offset,
            b.ping_offset,
            if b.ping.valid { "valid" } else { "invalid" },
            b.pong_offset,
            if b.pong.valid { "valid" } else { "invalid" },
            selected.map_or("none", buffer_name),
        )?;
        writeln!(
            out,
            "  {:>6}  {:<16} {:<5} {:<10} {:>9} {:>8} {:>20} {:>20} {:>10}",
            "gsid", "name", "units", "location", "rate_sa_s", "sample_w", "timestamp_ticks", "accumulator", "update_tag"
        )?;
        for (r, n) in b.names.iter().enumerate() {
            let loc = n.location.label().map_or_else(|| n.location.0.to_string(), str::to_string);
            write!(
                out,
                "  {:>6}  {:<16} {:<5} {:<10} {:>9}",
                n.gsid,
                n.name.as_str(),
                n.units.as_str(),
                loc,
                n.sampling_rate_sa_s()
            )?;
            match selected {
                Some(c) => {
                    let rec = b.buffer(c).records[r];
                    writeln!(out, " {:>8} {:>20} {:>20} {:>10}", rec.sample, rec.timestamp, rec.accumulator, rec.update_tag)?
                }
                None => writeln!(out, " {:>8}", "-")?,
            }
        }
    }
    Ok(())
}

fn buffer_name(c: BufferChoice) -> &'static str {
    match c {
        BufferChoice::Ping => "ping",
        BufferChoice::Pong => "pong",
    }
}

fn suffixed(path: &Path, index: usize, many: bool) -> PathBuf {
    if !many {
        return path.to_path_buf();
    }
    let mut name = path.as_os_str().to_owned();
    name.push(format!(".{index}"));
    PathBuf::from(name)
}

#[allow(clippy::too_many_arguments)]
fn analyze_aliasing(
    traces: &[PathBuf],
    workload_hz: &[f64],
    low_w: Option<f64>,
    high_w: Option<f64>,
    threshold: f64,
    nominal: f64,
    levels_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut reports = Vec::new();
    let mut pairs = Vec::new();
    for (i, path) in traces.iter().enumerate() {
        let series = derive_pfe_series(&load_trace(path)?)?;
        let report = spread_stats(&series, threshold)?;
        let pfe = series.values(PowerKind::PowerFromEnergy);
        let low = low_w.unwrap_or_else(|| pfe.iter().copied().fold(f64::INFINITY, f64::min));
        let high = high_w.unwrap_or_else(|| pfe.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let pattern = if low < high { pattern_frequency(&series, low, high).ok() } else { None };
        if let (Some(dest), true) = (levels_out, low < high) {
            let levels = classify_levels(&series, low, high)?;
            let rows = levels.into_iter().filter_map(|(t, l)| {
                l.map(|l| (t, if l == PatternLevel::High { 1.0 } else { 0.0 }))
            });
            write_file(&suffixed(dest, i, traces.len() > 1), |w| write_columns(w, "time_s", "level", rows))?;
        }
        let report = match &pattern {
            Some(p) => report.with_pattern(p),
            None => report,
        };
        let f_workload = workload_hz.get(i).copied();
        if let (Some(fw), Some(p)) = (f_workload, &pattern) {
            pairs.push((fw, p.f_pattern));
        }
        reports.push(json!({
            "trace": path.display().to_string(),
            "f_workload_hz": f_workload,
            "low_w": low,
            "high_w": high,
            "stddev_direct_w": report.stddev_direct,
            "stddev_pfe_w": report.stddev_pfe,
            "spread_ratio": if report.spread_ratio.is_finite() { json!(report.spread_ratio) } else { json!("inf") },
            "aliasing_detected": report.aliasing_detected,
            "f_pattern_hz": report.f_pattern,
            "cycles_counted": report.cycles_counted,
            "observation_span_s": report.observation_span,
        }));
    }
    let rate = if pairs.is_empty() {
        Value::Null
    } else {
        let est = estimate_internal_rate(&pairs, nominal)?;
        let per_pair: Vec<Value> = est
            .per_pair
            .iter()
            .map(|p| {
                json!({ "f_workload_hz": p.f_workload, "f_pattern_hz": p.f_pattern, "candidates_sa_s": p.candidates })
            })
            .collect();
        json!({ "f_sampling_sa_s": est.f_sampling, "disagreement_hz": est.disagreement, "per_pair": per_pair })
    };
    print_json(out, &json!({ "traces": reports, "rate_estimate": rate }))
}

/// Reads `x,y` rows; a first row that does not parse as numbers is a header.
fn read_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(file);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
        let parsed = match (record.get(0), record.get(1)) {
            (Some(a), Some(b)) => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((a, b)) => {
                x.push(a);
                y.push(b);
            }
            None if i == 0 => {}
            None => {
                return Err(CliError::io(path, std::io::Error::other(format!("row {} is not two numbers", i + 1))))
            }
        }
    }
    Ok((x, y))
}

fn fit(data: &Path, degree: usize, plot: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let (x, y) = read_xy(data)?;
    let fit = polynomial_fit(&x, &y, degree)?;
    if let Some(path) = plot {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let steps = 200;
        let rows = (0..=steps).map(|i| {
            let xi = lo + (hi - lo) * i as f64 / steps as f64;
            (xi, fit.eval(xi))
        });
        write_file(path, |w| write_columns(w, "x", "fit", rows))?;
    }
    let mut report = json!({
        "degree": degree,
        "coefficients": fit.coefficients,
        "residuals": fit.residuals,
        "residual_stats": stats_json(&fit.residual_stats),
        "error_stats": error_stats(&x, &y).ok().map(|s| stats_json(&s)),
        "mean_ratio": x.iter().zip(&y).filter(|(a, _)| **a != 0.0).map(|(a, b)| b / a).sum::<f64>()
            / x.iter().filter(|a| **a != 0.0).count().max(1) as f64,
    });
    if degree == 2 {
        report["c0"] = json!(fit.coefficients[0]);
        report["c1"] = json!(fit.coefficients[1]);
        report["c2"] = json!(fit.coefficients[2]);
    }
    print_json(out, &report)
}
