#![allow(dead_code)]

use occ_core::image::*;
use proptest::prelude::*;

pub fn arb_record(gsid: u16, timestamp: u64) -> impl Strategy<Value = SensorRecord> {
    (any::<u16>(), any::<u64>(), any::<u32>()).prop_map(move |(sample, accumulator, update_tag)| SensorRecord {
        gsid,
        timestamp,
        sample,
        accumulator,
        update_tag,
    })
}

fn arb_entry(index: usize) -> impl Strategy<Value = SensorNameEntry> {
    (
        "[A-Z][A-Z0-9_]{0,9}",
        prop_oneof![3 => Just(SensorKind::POWER), 1 => (2u16..0x20).prop_map(SensorKind)],
        "[a-zA-Z%]{1,4}",
        0u16..8,
        any::<u32>(),
    )
        .prop_map(move |(prefix, kind, units, loc, rate)| {
            let units = if kind == SensorKind::POWER { "W".to_string() } else { units };
            SensorNameEntry {
                // gsid and name suffix make every entry unique in its block
                gsid: index as u16 + 1,
                name: SensorName::new(&format!("{prefix}.{index}")).unwrap(),
                units: SensorUnits::new(&units).unwrap(),
                kind,
                location: SensorLocation(loc),
                rate_milli_sa_s: rate,
            }
        })
}

/// A buffer as a reader may find it: committed (records follow the names,
/// one shared timestamp) or invalid (arbitrary leftovers).
fn arb_buffer(names: Vec<SensorNameEntry>, valid: bool) -> BoxedStrategy<ReadingBuffer> {
    let n = names.len();
    if valid {
        any::<u64>()
            .prop_flat_map(move |ts| {
                names.iter().map(|e| arb_record(e.gsid, ts)).collect::<Vec<_>>()
            })
            .prop_map(|records| ReadingBuffer { valid: true, records })
            .boxed()
    } else {
        prop::collection::vec(
            (any::<u16>(), any::<u64>()).prop_flat_map(|(g, t)| arb_record(g, t)),
            n,
        )
        .prop_map(|records| ReadingBuffer { valid: false, records })
        .boxed()
    }
}

fn arb_offsets(count: usize) -> impl Strategy<Value = (u32, u32, u32)> {
    let names_len = count * NAME_ENTRY_SIZE;
    let buf_len = BUFFER_HEADER_SIZE + count * RECORD_SIZE;
    let slack = BLOCK_SIZE - HEADER_SIZE - names_len - 2 * buf_len;
    prop_oneof![
        Just((CANONICAL_NAMES_OFFSET, CANONICAL_PING_OFFSET, CANONICAL_PONG_OFFSET)),
        (0..=slack, 0..=slack, 0..=slack).prop_map(move |(a, b, c)| {
            // split the slack into three gaps in proportion to a, b, c
            let total = (a + b + c).max(1);
            let g1 = slack * a / total / 2;
            let g2 = slack * b / total / 2;
            let names = HEADER_SIZE + g1;
            let ping = names + names_len + g2 + 1;
            let pong = ping + buf_len + (slack * c / total / 2);
            (names as u32, ping as u32, pong as u32)
        }),
    ]
}

pub fn arb_block(max_sensors: usize, require_valid: bool) -> impl Strategy<Value = SensorDataBlock> {
    let count = prop_oneof![8 => 0..=max_sensors.min(64), 1 => 0..=max_sensors];
    count
        .prop_flat_map(|n| (0..n).map(arb_entry).collect::<Vec<_>>())
        .prop_flat_map(move |names| {
            let flags = if require_valid {
                prop_oneof![Just((true, false)), Just((false, true)), Just((true, true))].boxed()
            } else {
                (any::<bool>(), any::<bool>()).boxed()
            };
            let offsets = arb_offsets(names.len());
            (Just(names), flags, offsets)
        })
        .prop_flat_map(|(names, (pv, qv), offsets)| {
            (
                Just(names.clone()),
                arb_buffer(names.clone(), pv),
                arb_buffer(names, qv),
                Just(offsets),
            )
        })
        .prop_map(|(names, ping, pong, (names_offset, ping_offset, pong_offset))| SensorDataBlock {
            names_offset,
            ping_offset,
            pong_offset,
            names,
            ping,
            pong,
        })
}

pub fn arb_image(max_blocks: usize, max_sensors: usize, require_valid: bool) -> impl Strategy<Value = SensorImage> {
    prop::collection::vec(arb_block(max_sensors, require_valid), 1..=max_blocks)
        .prop_map(|blocks| SensorImage { blocks })
}

/// A snapshot with at least one sensor and a committed buffer in every block,
/// plus the name of one sensor in it.
pub fn arb_snapshot() -> impl Strategy<Value = (SensorImage, String)> {
    arb_image(3, CANONICAL_MAX_SENSORS, true)
        .prop_filter("needs a sensor", |img| img.blocks.iter().any(|b| !b.names.is_empty()))
        .prop_flat_map(|img| {
            let names: Vec<String> =
                img.blocks.iter().flat_map(|b| b.names.iter().map(|n| n.name.as_str().to_string())).collect();
            (Just(img), prop::sample::select(names))
        })
}
