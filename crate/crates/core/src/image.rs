//! OCC-IMAGE v1: the canonical sensor memory image.
//!
//! An image is a sequence of 150 KiB sensor data blocks, one per on-chip
//! controller. Block 0 additionally carries the system-level sensors. Every
//! block holds a names directory and two reading buffers (ping and pong) that
//! the producer rewrites alternately, so that one of them is always valid.
//!
//! All multi-byte fields are big-endian. Offsets below are relative to the
//! start of the block; the full table lives in `docs/format.md`.
//!
//! ```text
//! Block header (32 bytes)
//!   [0..4]    signature      "OCCS"
//!   [4]       version        0x01
//!   [5]       reserved       0
//!   [6..8]    sensor_count   u16
//!   [8..12]   names_offset   u32   (canonical 0x0000_0020)
//!   [12..16]  ping_offset    u32   (canonical 0x0000_8000)
//!   [16..20]  pong_offset    u32   (canonical 0x0001_4000)
//!   [20..32]  reserved       0
//! Names directory entry (32 bytes)
//!   [0..2] gsid  [2..18] name  [18..22] units  [22..24] kind
//!   [24..26] location  [26..28] pad  [28..32] sampling rate (mSa/s)
//! Reading buffer
//!   [0] valid (0|1)  [1..8] pad  then sensor_count x 24-byte records
//! Sensor record (24 bytes)
//!   [0..2] gsid  [2..10] timestamp  [10..12] sample
//!   [12..20] accumulator  [20..24] update_tag
//! ```

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Size of one sensor data block on the wire.
pub const BLOCK_SIZE: usize = 153_600;
pub const SIGNATURE: [u8; 4] = *b"OCCS";
pub const FORMAT_VERSION: u8 = 1;

pub const HEADER_SIZE: usize = 32;
pub const NAME_ENTRY_SIZE: usize = 32;
pub const BUFFER_HEADER_SIZE: usize = 8;
pub const RECORD_SIZE: usize = 24;

pub const CANONICAL_NAMES_OFFSET: u32 = 0x0000_0020;
pub const CANONICAL_PING_OFFSET: u32 = 0x0000_8000;
pub const CANONICAL_PONG_OFFSET: u32 = 0x0001_4000;

/// Largest sensor count that fits the canonical layout.
pub const CANONICAL_MAX_SENSORS: usize =
    (CANONICAL_PING_OFFSET - CANONICAL_NAMES_OFFSET) as usize / NAME_ENTRY_SIZE;

/// Frequency of the timebase the record timestamps count in.
pub const TIMEBASE_HZ: u64 = 512_000_000;

/// Default location of the live export on PowerNV systems.
pub const DEFAULT_SYSFS_PATH: &str = "/sys/firmware/opal/exports/occ_inband_sensors";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error("image length {len} is not a positive multiple of {BLOCK_SIZE} bytes")]
    Size { len: usize },
    #[error("block {block}: bad signature")]
    Signature { block: usize },
    #[error("block {block}: unsupported format version {version}")]
    Version { block: usize, version: u8 },
    #[error("block {block}: bad layout: {detail}")]
    Layout { block: usize, detail: &'static str },
    #[error("block {block}: record count mismatch: {detail}")]
    Count { block: usize, detail: &'static str },
    #[error("block {block}: valid flag byte {value:#04x} is neither 0 nor 1")]
    Flag { block: usize, value: u8 },
    #[error("image violates an invariant: {0}")]
    Invariant(&'static str),
    #[error("neither ping nor pong buffer is valid")]
    NoValidBuffer,
    #[error("sensor not found")]
    NotFound,
    #[error("read of {len} bytes at offset {offset} is out of bounds")]
    OutOfBounds { offset: usize, len: usize },
}

/// Converts a count of 512 MHz timebase ticks to seconds.
pub fn ticks_to_seconds(ticks: u64) -> f64 {
    ticks as f64 / TIMEBASE_HZ as f64
}

/// One power sensor reading as stored in a reading buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SensorRecord {
    pub gsid: u16,
    /// Ticks of the 512 MHz timebase at the last published update.
    pub timestamp: u64,
    /// Instantaneous power in W (1 W resolution).
    pub sample: u16,
    /// Running sum of all internal samples, W·sample.
    pub accumulator: u64,
    /// Number of internal samples folded into `accumulator`.
    pub update_tag: u32,
}

impl SensorRecord {
    pub fn decode(bytes: &[u8; RECORD_SIZE]) -> Self {
        SensorRecord {
            gsid: be_u16(&bytes[0..2]),
            timestamp: be_u64(&bytes[2..10]),
            sample: be_u16(&bytes[10..12]),
            accumulator: be_u64(&bytes[12..20]),
            update_tag: be_u32(&bytes[20..24]),
        }
    }

    pub fn encode(&self) -> [u8; RECORD_SIZE] {
        let mut out = [0u8; RECORD_SIZE];
        out[0..2].copy_from_slice(&self.gsid.to_be_bytes());
        out[2..10].copy_from_slice(&self.timestamp.to_be_bytes());
        out[10..12].copy_from_slice(&self.sample.to_be_bytes());
        out[12..20].copy_from_slice(&self.accumulator.to_be_bytes());
        out[20..24].copy_from_slice(&self.update_tag.to_be_bytes());
        out
    }
}

/// Zero-padded fixed-width ASCII field.
///
/// The raw bytes are kept verbatim so that decoding and re-encoding is exact.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedAscii<const N: usize>([u8; N]);

pub type SensorName = FixedAscii<16>;
pub type SensorUnits = FixedAscii<4>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FieldError {
    #[error("text is longer than {max} bytes")]
    TooLong { max: usize },
    #[error("text must be printable ASCII")]
    NotAscii,
}

impl<const N: usize> FixedAscii<N> {
    pub const fn from_raw(raw: [u8; N]) -> Self {
        FixedAscii(raw)
    }

    pub fn new(text: &str) -> Result<Self, FieldError> {
        if text.len() > N {
            return Err(FieldError::TooLong { max: N });
        }
        if !text.bytes().all(|b| b.is_ascii_graphic() || b == b' ') {
            return Err(FieldError::NotAscii);
        }
        let mut raw = [0u8; N];
        raw[..text.len()].copy_from_slice(text.as_bytes());
        Ok(FixedAscii(raw))
    }

    pub fn raw(&self) -> &[u8; N] {
        &self.0
    }

    /// Bytes up to the first NUL.
    pub fn trimmed(&self) -> &[u8] {
        let end = self.0.iter().position(|&b| b == 0).unwrap_or(N);
        &self.0[..end]
    }

    /// Text up to the first NUL; a non-UTF-8 tail is cut off.
    pub fn as_str(&self) -> &str {
        let bytes = self.trimmed();
        match core::str::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => core::str::from_utf8(&bytes[..e.valid_up_to()]).unwrap_or_default(),
        }
    }

    pub fn matches(&self, text: &str) -> bool {
        self.trimmed() == text.as_bytes()
    }
}

impl<const N: usize> fmt::Debug for FixedAscii<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_str())
    }
}

impl<const N: usize> fmt::Display for FixedAscii<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sensor kind; only [`SensorKind::POWER`] is interpreted, other values are
/// carried through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorKind(pub u16);

impl SensorKind {
    pub const POWER: SensorKind = SensorKind(0x0001);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorLocation(pub u16);

impl SensorLocation {
    pub const SYSTEM: SensorLocation = SensorLocation(0);
    pub const PROCESSOR: SensorLocation = SensorLocation(1);
    pub const MEMORY: SensorLocation = SensorLocation(2);
    pub const GPU: SensorLocation = SensorLocation(3);

    pub fn label(self) -> Option<&'static str> {
        match self.0 {
            0 => Some("system"),
            1 => Some("processor"),
            2 => Some("memory"),
            3 => Some("gpu"),
            _ => None,
        }
    }
}

/// Entry of a block's names directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorNameEntry {
    pub gsid: u16,
    pub name: SensorName,
    pub units: SensorUnits,
    pub kind: SensorKind,
    pub location: SensorLocation,
    /// Internal sampling rate in thousandths of a sample per second
    /// (2 000 000 for 2 kSa/s).
    pub rate_milli_sa_s: u32,
}

impl SensorNameEntry {
    /// A power sensor entry with units "W".
    pub fn power(
        gsid: u16,
        name: &str,
        location: SensorLocation,
        rate_milli_sa_s: u32,
    ) -> Result<Self, FieldError> {
        Ok(SensorNameEntry {
            gsid,
            name: SensorName::new(name)?,
            units: SensorUnits::new("W")?,
            kind: SensorKind::POWER,
            location,
            rate_milli_sa_s,
        })
    }

    pub fn sampling_rate_sa_s(&self) -> f64 {
        self.rate_milli_sa_s as f64 / 1000.0
    }

    fn decode(b: &[u8]) -> Self {
        let mut name = [0u8; 16];
        name.copy_from_slice(&b[2..18]);
        let mut units = [0u8; 4];
        units.copy_from_slice(&b[18..22]);
        SensorNameEntry {
            gsid: be_u16(&b[0..2]),
            name: FixedAscii(name),
            units: FixedAscii(units),
            kind: SensorKind(be_u16(&b[22..24])),
            location: SensorLocation(be_u16(&b[24..26])),
            rate_milli_sa_s: be_u32(&b[28..32]),
        }
    }

    fn encode_into(&self, out: &mut [u8]) {
        out[0..2].copy_from_slice(&self.gsid.to_be_bytes());
        out[2..18].copy_from_slice(self.name.raw());
        out[18..22].copy_from_slice(self.units.raw());
        out[22..24].copy_from_slice(&self.kind.0.to_be_bytes());
        out[24..26].copy_from_slice(&self.location.0.to_be_bytes());
        out[26..28].fill(0);
        out[28..32].copy_from_slice(&self.rate_milli_sa_s.to_be_bytes());
    }
}

/// The power sensors an on-chip controller exposes, with their documented
/// internal sampling rates. `PWRSYS` only exists in the first block.
pub fn standard_power_sensors(block: usize) -> Vec<SensorNameEntry> {
    let base = (block as u16) << 8;
    let mut out = Vec::with_capacity(6);
    let table: [(&str, SensorLocation, u32); 6] = [
        ("PWRSYS", SensorLocation::SYSTEM, 2_000_000),
        ("PWRGPU", SensorLocation::GPU, 2_000_000),
        ("PWRMEM", SensorLocation::MEMORY, 2_000_000),
        ("PWRPROC", SensorLocation::PROCESSOR, 2_000_000),
        ("PWRVDD", SensorLocation::PROCESSOR, 1_000_000),
        ("PWRVDN", SensorLocation::PROCESSOR, 1_000_000),
    ];
    for (i, (name, loc, rate)) in table.into_iter().enumerate() {
        if i == 0 && block != 0 {
            continue;
        }
        out.push(
            SensorNameEntry::power(base | (i as u16 + 1), name, loc, rate)
                .expect("static sensor names are valid"),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReadingBuffer {
    pub valid: bool,
    pub records: Vec<SensorRecord>,
}

impl ReadingBuffer {
    /// Recency of the buffer: the timestamp of its first record.
    pub fn recency(&self) -> u64 {
        self.records.first().map_or(0, |r| r.timestamp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BufferChoice {
    Ping,
    Pong,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorDataBlock {
    pub names_offset: u32,
    pub ping_offset: u32,
    pub pong_offset: u32,
    pub names: Vec<SensorNameEntry>,
    pub ping: ReadingBuffer,
    pub pong: ReadingBuffer,
}

impl SensorDataBlock {
    /// A block with the canonical offsets and both buffers invalid and zeroed
    /// except for their gsids.
    pub fn canonical(names: Vec<SensorNameEntry>) -> Self {
        let empty = ReadingBuffer {
            valid: false,
            records: names
                .iter()
                .map(|n| SensorRecord { gsid: n.gsid, ..SensorRecord::default() })
                .collect(),
        };
        SensorDataBlock {
            names_offset: CANONICAL_NAMES_OFFSET,
            ping_offset: CANONICAL_PING_OFFSET,
            pong_offset: CANONICAL_PONG_OFFSET,
            names,
            ping: empty.clone(),
            pong: empty,
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.names.len()
    }

    pub fn buffer(&self, choice: BufferChoice) -> &ReadingBuffer {
        match choice {
            BufferChoice::Ping => &self.ping,
            BufferChoice::Pong => &self.pong,
        }
    }

    pub fn buffer_mut(&mut self, choice: BufferChoice) -> &mut ReadingBuffer {
        match choice {
            BufferChoice::Ping => &mut self.ping,
            BufferChoice::Pong => &mut self.pong,
        }
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout {
            names_offset: self.names_offset as usize,
            ping_offset: self.ping_offset as usize,
            pong_offset: self.pong_offset as usize,
            sensor_count: self.names.len(),
        }
    }
}

/// Byte offsets of the regions of one block, relative to the block start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub names_offset: usize,
    pub ping_offset: usize,
    pub pong_offset: usize,
    pub sensor_count: usize,
}

impl BlockLayout {
    pub fn buffer_offset(&self, choice: BufferChoice) -> usize {
        match choice {
            BufferChoice::Ping => self.ping_offset,
            BufferChoice::Pong => self.pong_offset,
        }
    }

    pub fn record_offset(&self, choice: BufferChoice, index: usize) -> usize {
        self.buffer_offset(choice) + BUFFER_HEADER_SIZE + index * RECORD_SIZE
    }

    fn names_end(&self) -> usize {
        self.names_offset + self.sensor_count * NAME_ENTRY_SIZE
    }

    fn buffer_len(&self) -> usize {
        BUFFER_HEADER_SIZE + self.sensor_count * RECORD_SIZE
    }

    fn check(&self) -> Result<(), &'static str> {
        if self.names_offset < HEADER_SIZE {
            return Err("names directory overlaps the header");
        }
        if !(self.names_offset < self.ping_offset && self.ping_offset < self.pong_offset) {
            return Err("offsets are not strictly increasing");
        }
        if self.names_end() > self.ping_offset {
            return Err("names directory overlaps the ping buffer");
        }
        if self.ping_offset + self.buffer_len() > self.pong_offset {
            return Err("ping buffer overlaps the pong buffer");
        }
        if self.pong_offset + self.buffer_len() > BLOCK_SIZE {
            return Err("pong buffer exceeds the block");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SensorImage {
    pub blocks: Vec<SensorDataBlock>,
}

impl SensorImage {
    pub fn encoded_len(&self) -> usize {
        self.blocks.len() * BLOCK_SIZE
    }
}

/// Decodes a complete image. Every region is decoded eagerly.
///
/// Buffers whose valid flag is clear are decoded as-is and not checked against
/// the names directory, since they may be mid-rewrite.
pub fn parse_image(bytes: &[u8]) -> Result<SensorImage, ImageError> {
    if bytes.is_empty() || bytes.len() % BLOCK_SIZE != 0 {
        return Err(ImageError::Size { len: bytes.len() });
    }
    let blocks = bytes
        .chunks_exact(BLOCK_SIZE)
        .enumerate()
        .map(|(i, chunk)| parse_block(i, chunk))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SensorImage { blocks })
}

fn parse_block(block: usize, b: &[u8]) -> Result<SensorDataBlock, ImageError> {
    if b[0..4] != SIGNATURE {
        return Err(ImageError::Signature { block });
    }
    if b[4] != FORMAT_VERSION {
        return Err(ImageError::Version { block, version: b[4] });
    }
    let layout = BlockLayout {
        sensor_count: be_u16(&b[6..8]) as usize,
        names_offset: be_u32(&b[8..12]) as usize,
        ping_offset: be_u32(&b[12..16]) as usize,
        pong_offset: be_u32(&b[16..20]) as usize,
    };
    layout
        .check()
        .map_err(|detail| ImageError::Layout { block, detail })?;

    let names: Vec<SensorNameEntry> = b[layout.names_offset..layout.names_end()]
        .chunks_exact(NAME_ENTRY_SIZE)
        .map(SensorNameEntry::decode)
        .collect();

    let read_buffer = |choice: BufferChoice| -> Result<ReadingBuffer, ImageError> {
        let start = layout.buffer_offset(choice);
        let valid = match b[start] {
            0 => false,
            1 => true,
            value => return Err(ImageError::Flag { block, value }),
        };
        let records: Vec<SensorRecord> = b[start + BUFFER_HEADER_SIZE..start + layout.buffer_len()]
            .chunks_exact(RECORD_SIZE)
            .map(|c| SensorRecord::decode(c.try_into().expect("chunk is one record")))
            .collect();
        if valid && records.iter().zip(&names).any(|(r, n)| r.gsid != n.gsid) {
            return Err(ImageError::Count {
                block,
                detail: "valid buffer records do not follow the names directory",
            });
        }
        Ok(ReadingBuffer { valid, records })
    };

    Ok(SensorDataBlock {
        names_offset: layout.names_offset as u32,
        ping_offset: layout.ping_offset as u32,
        pong_offset: layout.pong_offset as u32,
        ping: read_buffer(BufferChoice::Ping)?,
        pong: read_buffer(BufferChoice::Pong)?,
        names,
    })
}

/// Encodes an image; padding is zero so the output is deterministic.
pub fn encode_image(image: &SensorImage) -> Result<Vec<u8>, ImageError> {
    if image.blocks.is_empty() {
        return Err(ImageError::Invariant("an image needs at least one block"));
    }
    let mut out = vec![0u8; image.encoded_len()];
    for (i, block) in image.blocks.iter().enumerate() {
        encode_block(i, block, &mut out[i * BLOCK_SIZE..(i + 1) * BLOCK_SIZE])?;
    }
    Ok(out)
}

fn encode_block(index: usize, block: &SensorDataBlock, out: &mut [u8]) -> Result<(), ImageError> {
    let count = block.names.len();
    if count > u16::MAX as usize {
        return Err(ImageError::Invariant("sensor count exceeds 16 bits"));
    }
    let layout = block.layout();
    layout
        .check()
        .map_err(|_| ImageError::Invariant("sensor count or offsets do not fit the block"))?;
    if block.ping.records.len() != count || block.pong.records.len() != count {
        return Err(ImageError::Count {
            block: index,
            detail: "buffer record count differs from sensor count",
        });
    }
    for (i, a) in block.names.iter().enumerate() {
        if block.names[i + 1..]
            .iter()
            .any(|b| a.gsid == b.gsid || a.name.trimmed() == b.name.trimmed())
        {
            return Err(ImageError::Invariant("sensor names and gsids must be unique per block"));
        }
        if a.kind == SensorKind::POWER && a.units.trimmed() != b"W" {
            return Err(ImageError::Invariant("power sensors must have units \"W\""));
        }
    }
    for buffer in [&block.ping, &block.pong] {
        if buffer.valid && buffer.records.iter().zip(&block.names).any(|(r, n)| r.gsid != n.gsid) {
            return Err(ImageError::Invariant(
                "valid buffer records must follow the names directory",
            ));
        }
    }

    out[0..4].copy_from_slice(&SIGNATURE);
    out[4] = FORMAT_VERSION;
    out[6..8].copy_from_slice(&(count as u16).to_be_bytes());
    out[8..12].copy_from_slice(&block.names_offset.to_be_bytes());
    out[12..16].copy_from_slice(&block.ping_offset.to_be_bytes());
    out[16..20].copy_from_slice(&block.pong_offset.to_be_bytes());
    for (i, entry) in block.names.iter().enumerate() {
        let at = layout.names_offset + i * NAME_ENTRY_SIZE;
        entry.encode_into(&mut out[at..at + NAME_ENTRY_SIZE]);
    }
    for choice in [BufferChoice::Ping, BufferChoice::Pong] {
        let buffer = block.buffer(choice);
        out[layout.buffer_offset(choice)] = buffer.valid as u8;
        for (i, record) in buffer.records.iter().enumerate() {
            let at = layout.record_offset(choice, i);
            out[at..at + RECORD_SIZE].copy_from_slice(&record.encode());
        }
    }
    Ok(())
}

fn choose(ping_valid: bool, ping_ts: u64, pong_valid: bool, pong_ts: u64) -> Result<BufferChoice, ImageError> {
    match (ping_valid, pong_valid) {
        (true, false) => Ok(BufferChoice::Ping),
        (false, true) => Ok(BufferChoice::Pong),
        (true, true) if pong_ts > ping_ts => Ok(BufferChoice::Pong),
        (true, true) => Ok(BufferChoice::Ping),
        (false, false) => Err(ImageError::NoValidBuffer),
    }
}

/// Picks the buffer a reader should use. With both buffers valid the one with
/// the newer first-record timestamp wins; ties go to ping.
pub fn select_buffer(block: &SensorDataBlock) -> Result<BufferChoice, ImageError> {
    choose(block.ping.valid, block.ping.recency(), block.pong.valid, block.pong.recency())
}

/// Where a sensor's record lives in an encoded image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorLocator {
    pub block: usize,
    pub record: usize,
    /// Absolute file offset of the sensor's record in the ping buffer.
    pub offset: usize,
    /// Distance from the ping record to the pong record.
    pub pong_displacement: usize,
}

impl SensorLocator {
    pub fn ping_record_offset(&self) -> usize {
        self.offset
    }

    pub fn pong_record_offset(&self) -> usize {
        self.offset + self.pong_displacement
    }

    pub fn ping_flag_offset(&self) -> usize {
        self.offset - BUFFER_HEADER_SIZE - self.record * RECORD_SIZE
    }

    pub fn pong_flag_offset(&self) -> usize {
        self.ping_flag_offset() + self.pong_displacement
    }

    /// Bytes one optimized read touches: two records and two flags.
    pub const BYTES_PER_READ: usize = 2 * RECORD_SIZE + 2;
}

/// Finds the first sensor named `name`, scanning blocks in order.
pub fn locate_sensor(image: &SensorImage, name: &str) -> Result<SensorLocator, ImageError> {
    for (b, block) in image.blocks.iter().enumerate() {
        if let Some(r) = block.names.iter().position(|n| n.name.matches(name)) {
            let layout = block.layout();
            return Ok(SensorLocator {
                block: b,
                record: r,
                offset: b * BLOCK_SIZE + layout.record_offset(BufferChoice::Ping, r),
                pong_displacement: layout.pong_offset - layout.ping_offset,
            });
        }
    }
    Err(ImageError::NotFound)
}

/// Result of reading one sensor from both buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordReadout {
    pub ping_valid: bool,
    pub pong_valid: bool,
    pub ping: SensorRecord,
    pub pong: SensorRecord,
    pub chosen: BufferChoice,
}

impl RecordReadout {
    pub fn record(&self) -> SensorRecord {
        match self.chosen {
            BufferChoice::Ping => self.ping,
            BufferChoice::Pong => self.pong,
        }
    }

    pub fn both_valid(&self) -> bool {
        self.ping_valid && self.pong_valid
    }
}

/// Optimized read path: touches only the sensor's two records and the two
/// valid flags, then applies the buffer selection rule on the record
/// timestamps.
pub fn read_record_at(bytes: &[u8], locator: &SensorLocator) -> Result<RecordReadout, ImageError> {
    read_record_with(locator, |offset, buf| {
        let src = offset
            .checked_add(buf.len())
            .and_then(|end| bytes.get(offset..end))
            .ok_or(ImageError::OutOfBounds { offset, len: buf.len() })?;
        buf.copy_from_slice(src);
        Ok(())
    })
}

/// [`read_record_at`] over an arbitrary positioned-read function.
///
/// `read` is called exactly four times: both flags, then both records.
pub fn read_record_with<E, F>(locator: &SensorLocator, mut read: F) -> Result<RecordReadout, E>
where
    F: FnMut(usize, &mut [u8]) -> Result<(), E>,
    E: From<ImageError>,
{
    let mut flag = [0u8; 1];
    read(locator.ping_flag_offset(), &mut flag)?;
    let ping_valid = decode_flag(locator.block, flag[0])?;
    read(locator.pong_flag_offset(), &mut flag)?;
    let pong_valid = decode_flag(locator.block, flag[0])?;

    let mut raw = [0u8; RECORD_SIZE];
    read(locator.ping_record_offset(), &mut raw)?;
    let ping = SensorRecord::decode(&raw);
    read(locator.pong_record_offset(), &mut raw)?;
    let pong = SensorRecord::decode(&raw);

    let chosen = choose(ping_valid, ping.timestamp, pong_valid, pong.timestamp)?;
    Ok(RecordReadout { ping_valid, pong_valid, ping, pong, chosen })
}

fn decode_flag(block: usize, value: u8) -> Result<bool, ImageError> {
    match value {
        0 => Ok(false),
        1 => Ok(true),
        value => Err(ImageError::Flag { block, value }),
    }
}

/// Naive read path: full decode, lookup and buffer selection.
pub fn read_record_naive(bytes: &[u8], name: &str) -> Result<SensorRecord, ImageError> {
    let image = parse_image(bytes)?;
    let loc = locate_sensor(&image, name)?;
    let block = &image.blocks[loc.block];
    let choice = select_buffer(block)?;
    Ok(block.buffer(choice).records[loc.record])
}

/// Writes one record into an encoded image in place.
pub fn write_record(bytes: &mut [u8], offset: usize, record: &SensorRecord) {
    bytes[offset..offset + RECORD_SIZE].copy_from_slice(&record.encode());
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn be_u64(b: &[u8]) -> u64 {
    let mut raw = [0u8; 8];
    raw.copy_from_slice(&b[..8]);
    u64::from_be_bytes(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single_sensor_image() -> SensorImage {
        let names = vec![SensorNameEntry::power(1, "PWRSYS", SensorLocation::SYSTEM, 2_000_000).unwrap()];
        let mut block = SensorDataBlock::canonical(names);
        block.ping.valid = true;
        block.ping.records[0] = SensorRecord {
            gsid: 1,
            timestamp: 1000,
            sample: 255,
            accumulator: 20_400,
            update_tag: 80,
        };
        SensorImage { blocks: vec![block] }
    }

    fn two_block_image() -> SensorImage {
        let mut blocks = vec![];
        for b in 0..2 {
            let mut block = SensorDataBlock::canonical(standard_power_sensors(b));
            block.ping.valid = true;
            blocks.push(block);
        }
        SensorImage { blocks }
    }

    #[test]
    fn record_layout_is_24_bytes_big_endian() {
        let r = SensorRecord {
            gsid: 0x0102,
            timestamp: 0x0304_0506_0708_090a,
            sample: 0x0b0c,
            accumulator: 0x0d0e_0f10_1112_1314,
            update_tag: 0x1516_1718,
        };
        let raw = r.encode();
        assert_eq!(raw.len(), 24);
        assert_eq!(raw, core::array::from_fn::<u8, 24, _>(|i| i as u8 + 1));
        assert_eq!(SensorRecord::decode(&raw), r);
    }

    #[test]
    fn single_sensor_round_trip() {
        let image = single_sensor_image();
        let bytes = encode_image(&image).unwrap();
        assert_eq!(bytes.len(), BLOCK_SIZE);
        let parsed = parse_image(&bytes).unwrap();
        assert_eq!(parsed.blocks.len(), 1);
        assert_eq!(parsed.blocks[0].sensor_count(), 1);
        assert!(parsed.blocks[0].ping.valid);
        assert_eq!(parsed, image);
    }

    #[test]
    fn six_standard_sensors_fill_one_block() {
        let image = SensorImage { blocks: vec![SensorDataBlock::canonical(standard_power_sensors(0))] };
        let first = encode_image(&image).unwrap();
        assert_eq!(first.len(), 153_600);
        assert_eq!(encode_image(&image).unwrap(), first);
        let again = encode_image(&parse_image(&first).unwrap()).unwrap();
        assert_eq!(again, first);
    }

    #[test]
    fn empty_input_is_size_error() {
        assert_eq!(parse_image(&[]), Err(ImageError::Size { len: 0 }));
        assert_eq!(parse_image(&[0u8; BLOCK_SIZE + 1]), Err(ImageError::Size { len: BLOCK_SIZE + 1 }));
    }

    #[test]
    fn bad_signature_and_version() {
        let mut bytes = encode_image(&single_sensor_image()).unwrap();
        bytes[4] = 2;
        assert_eq!(parse_image(&bytes), Err(ImageError::Version { block: 0, version: 2 }));
        bytes[0] = b'X';
        assert_eq!(parse_image(&bytes), Err(ImageError::Signature { block: 0 }));
    }

    #[test]
    fn overlapping_offsets_are_layout_errors() {
        let mut bytes = encode_image(&single_sensor_image()).unwrap();
        // pong before ping
        bytes[16..20].copy_from_slice(&0x10u32.to_be_bytes());
        assert!(matches!(parse_image(&bytes), Err(ImageError::Layout { block: 0, .. })));
        let mut bytes = encode_image(&single_sensor_image()).unwrap();
        bytes[16..20].copy_from_slice(&(BLOCK_SIZE as u32 - 8).to_be_bytes());
        assert!(matches!(parse_image(&bytes), Err(ImageError::Layout { .. })));
    }

    #[test]
    fn valid_buffer_out_of_directory_order_is_count_error() {
        let mut bytes = encode_image(&single_sensor_image()).unwrap();
        let at = CANONICAL_PING_OFFSET as usize + BUFFER_HEADER_SIZE;
        bytes[at..at + 2].copy_from_slice(&7u16.to_be_bytes());
        assert!(matches!(parse_image(&bytes), Err(ImageError::Count { .. })));
    }

    #[test]
    fn both_buffers_invalid_still_parses() {
        let mut image = single_sensor_image();
        image.blocks[0].ping.valid = false;
        let parsed = parse_image(&encode_image(&image).unwrap()).unwrap();
        assert!(!parsed.blocks[0].ping.valid && !parsed.blocks[0].pong.valid);
        assert_eq!(select_buffer(&parsed.blocks[0]), Err(ImageError::NoValidBuffer));
    }

    #[test]
    fn unknown_kind_is_preserved() {
        let mut image = single_sensor_image();
        image.blocks[0].names[0].kind = SensorKind(0x0042);
        image.blocks[0].names[0].units = SensorUnits::new("C").unwrap();
        let parsed = parse_image(&encode_image(&image).unwrap()).unwrap();
        assert_eq!(parsed.blocks[0].names[0].kind, SensorKind(0x0042));
    }

    #[test]
    fn encode_rejects_broken_invariants() {
        let mut image = single_sensor_image();
        image.blocks[0].names[0].units = SensorUnits::new("mW").unwrap();
        assert!(matches!(encode_image(&image), Err(ImageError::Invariant(_))));

        let names = (0..=CANONICAL_MAX_SENSORS as u16)
            .map(|i| {
                SensorNameEntry::power(i, &alloc::format!("S{i}"), SensorLocation::SYSTEM, 0).unwrap()
            })
            .collect();
        let image = SensorImage { blocks: vec![SensorDataBlock::canonical(names)] };
        assert!(matches!(encode_image(&image), Err(ImageError::Invariant(_))));

        let mut dup = SensorDataBlock::canonical(standard_power_sensors(0));
        dup.names[1].name = dup.names[0].name;
        assert!(matches!(encode_image(&SensorImage { blocks: vec![dup] }), Err(ImageError::Invariant(_))));
    }

    #[test]
    fn select_buffer_rules() {
        let mut block = SensorDataBlock::canonical(standard_power_sensors(0));
        block.ping.valid = true;
        assert_eq!(select_buffer(&block), Ok(BufferChoice::Ping));
        block.pong.valid = true;
        block.ping.records[0].timestamp = 1000;
        block.pong.records[0].timestamp = 2000;
        assert_eq!(select_buffer(&block), Ok(BufferChoice::Pong));
        block.pong.records[0].timestamp = 1000;
        assert_eq!(select_buffer(&block), Ok(BufferChoice::Ping));
        block.ping.valid = false;
        assert_eq!(select_buffer(&block), Ok(BufferChoice::Pong));
    }

    #[test]
    fn locate_uses_canonical_offsets() {
        let image = two_block_image();
        let sys = locate_sensor(&image, "PWRSYS").unwrap();
        assert_eq!((sys.block, sys.record), (0, 0));
        // 0x8000 + 8-byte buffer header
        assert_eq!(sys.offset, 32_776);
        assert_eq!(sys.pong_record_offset(), 0x14000 + 8);
        assert_eq!(sys.ping_flag_offset(), 0x8000);

        let proc = locate_sensor(&image, "PWRPROC").unwrap();
        assert_eq!((proc.block, proc.record), (0, 3));
        assert_eq!(proc.offset, 0x8000 + 8 + 3 * 24);

        assert_eq!(locate_sensor(&image, "NOPE"), Err(ImageError::NotFound));
        assert_eq!(locate_sensor(&image, "PWRSY"), Err(ImageError::NotFound));
    }

    #[test]
    fn read_record_at_picks_like_select_buffer() {
        let mut image = two_block_image();
        let loc = locate_sensor(&image, "PWRMEM").unwrap();
        let bytes = encode_image(&image).unwrap();
        let readout = read_record_at(&bytes, &loc).unwrap();
        assert_eq!(readout.chosen, BufferChoice::Ping);
        assert!(!readout.both_valid());

        let block = &mut image.blocks[0];
        block.pong.valid = true;
        for r in block.ping.records.iter_mut() {
            r.timestamp = 1000;
        }
        for r in block.pong.records.iter_mut() {
            r.timestamp = 2000;
            r.sample = 42;
        }
        let bytes = encode_image(&image).unwrap();
        let readout = read_record_at(&bytes, &loc).unwrap();
        assert_eq!(readout.chosen, BufferChoice::Pong);
        assert_eq!(readout.record().sample, 42);
        assert_eq!(read_record_naive(&bytes, "PWRMEM").unwrap(), readout.record());
    }

    #[test]
    fn read_record_at_bounds() {
        let image = single_sensor_image();
        let bytes = encode_image(&image).unwrap();
        let mut loc = locate_sensor(&image, "PWRSYS").unwrap();
        loc.offset += BLOCK_SIZE;
        assert!(matches!(read_record_at(&bytes, &loc), Err(ImageError::OutOfBounds { .. })));
    }

    #[test]
    fn read_record_at_no_valid_buffer() {
        let mut image = single_sensor_image();
        image.blocks[0].ping.valid = false;
        let bytes = encode_image(&image).unwrap();
        let loc = locate_sensor(&image, "PWRSYS").unwrap();
        assert_eq!(read_record_at(&bytes, &loc), Err(ImageError::NoValidBuffer));
    }

    #[test]
    fn ticks() {
        assert_eq!(ticks_to_seconds(512_000_000), 1.0);
        assert_eq!(ticks_to_seconds(0), 0.0);
        assert_eq!(ticks_to_seconds(256_000_000), 0.5);
    }

    #[test]
    fn fixed_ascii() {
        let n = SensorName::new("PWRSYS").unwrap();
        assert_eq!(n.as_str(), "PWRSYS");
        assert!(n.matches("PWRSYS"));
        assert_eq!(SensorName::new("ABCDEFGHIJKLMNOPQ"), Err(FieldError::TooLong { max: 16 }));
        assert_eq!(SensorName::new("caf\u{e9}"), Err(FieldError::NotAscii));
    }
}
