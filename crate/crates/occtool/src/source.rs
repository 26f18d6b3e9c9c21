//! Image sources backed by the filesystem.

use std::ffi::OsString;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use occ_core::image::{BLOCK_SIZE, DEFAULT_SYSFS_PATH};
use occ_core::reader::{ImageSource, SourceError};

pub const IMAGE_PATH_ENV: &str = "OCCTOOL_IMAGE_PATH";

/// `--image` wins over the environment variable, which wins over the sysfs
/// default.
pub fn resolve_image_path(flag: Option<&Path>, env: Option<OsString>) -> PathBuf {
    match (flag, env) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
        _ => PathBuf::from(DEFAULT_SYSFS_PATH),
    }
}

fn unavailable(path: &Path, e: std::io::Error) -> SourceError {
    SourceError::Unavailable(format!("{}: {e}", path.display()))
}

/// A live export or an image file, read with positioned reads and
/// timestamped against a monotonic clock started at open.
pub struct FileSource {
    file: File,
    path: PathBuf,
    start: Instant,
    bytes_read: u64,
}

impl FileSource {
    pub fn open(path: &Path) -> Result<Self, SourceError> {
        let file = File::open(path).map_err(|e| unavailable(path, e))?;
        Ok(FileSource { file, path: path.to_path_buf(), start: Instant::now(), bytes_read: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn bytes_read(&self) -> u64 {
        self.bytes_read
    }
}

impl ImageSource for FileSource {
    fn read_image(&mut self, buf: &mut Vec<u8>) -> Result<(), SourceError> {
        buf.clear();
        // sysfs binary attributes report their size but are read like streams
        self.file.seek(SeekFrom::Start(0)).map_err(|e| unavailable(&self.path, e))?;
        self.file.read_to_end(buf).map_err(|e| unavailable(&self.path, e))?;
        self.bytes_read += buf.len() as u64;
        Ok(())
    }

    fn read_at(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), SourceError> {
        self.file.read_exact_at(buf, offset as u64).map_err(|e| unavailable(&self.path, e))?;
        self.bytes_read += buf.len() as u64;
        Ok(())
    }

    fn host_time(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// A recorded stream of concatenated images, replayed on a virtual clock.
///
/// Frame `k` is current during `[k * interval, (k + 1) * interval)`. Every
/// readout advances the clock by `period`.
pub struct ReplaySource {
    bytes: Vec<u8>,
    frame_len: usize,
    interval: f64,
    period: f64,
    reads: u64,
}

impl ReplaySource {
    pub fn open(path: &Path, frame_blocks: usize, interval: f64, period: f64) -> Result<Self, SourceError> {
        let bytes = std::fs::read(path).map_err(|e| unavailable(path, e))?;
        Self::from_bytes(bytes, frame_blocks, interval, period)
    }

    pub fn from_bytes(bytes: Vec<u8>, frame_blocks: usize, interval: f64, period: f64) -> Result<Self, SourceError> {
        if frame_blocks == 0 {
            return Err(SourceError::Unavailable("frames need at least one block".into()));
        }
        if !(interval > 0.0 && period > 0.0) {
            return Err(SourceError::Unavailable("replay interval and period must be positive".into()));
        }
        let frame_len = frame_blocks * BLOCK_SIZE;
        if bytes.is_empty() || bytes.len() % frame_len != 0 {
            return Err(SourceError::Unavailable(format!(
                "stream of {} bytes is not a whole number of {frame_len}-byte frames",
                bytes.len()
            )));
        }
        Ok(ReplaySource { bytes, frame_len, interval, period, reads: 0 })
    }

    pub fn frames(&self) -> usize {
        self.bytes.len() / self.frame_len
    }

    /// Loop readouts the stream can serve after the initial full read.
    pub fn available_reads(&self) -> usize {
        let total = self.frames() as f64 * self.interval / self.period;
        ((total - 1e-9).ceil() as usize).saturating_sub(1)
    }

    fn now(&self) -> f64 {
        self.reads as f64 * self.period
    }

    fn frame(&self) -> Result<&[u8], SourceError> {
        let k = (self.now() / self.interval + 1e-9).floor() as usize;
        if k >= self.frames() {
            return Err(SourceError::Exhausted);
        }
        Ok(&self.bytes[k * self.frame_len..(k + 1) * self.frame_len])
    }
}

impl ImageSource for ReplaySource {
    fn prepare_read(&mut self) -> Result<(), SourceError> {
        self.reads += 1;
        self.frame().map(|_| ())
    }

    fn read_image(&mut self, buf: &mut Vec<u8>) -> Result<(), SourceError> {
        let frame = self.frame()?;
        buf.clear();
        buf.extend_from_slice(frame);
        Ok(())
    }

    fn read_at(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), SourceError> {
        let frame = self.frame()?;
        let src = frame
            .get(offset..offset + buf.len())
            .ok_or(occ_core::image::ImageError::OutOfBounds { offset, len: buf.len() })?;
        buf.copy_from_slice(src);
        Ok(())
    }

    fn host_time(&mut self) -> f64 {
        self.now()
    }
}
