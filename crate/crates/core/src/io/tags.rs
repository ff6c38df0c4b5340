use std::fmt::Write as _;

use super::{fields, parse_document, parse_field, write_document, Metadata};
use crate::error::{Error, Result};
use crate::optics::{TagStream, TimeTag, DEFAULT_DELAY_PERIODS};
use crate::surface::Configuration;

const MAGIC: &str = "#g2dyn-tags v1";
const COLUMNS: &str = "channel,cycle,delay_ps";
const BINARY_MAGIC: &[u8; 4] = b"G2TG";
const BINARY_VERSION: u16 = 2;
const BINARY_HEADER: usize = 4 + 2 + 8 + 8;
const BINARY_RECORD: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TagFile {
    pub metadata: Metadata,
    pub stream: TagStream,
}

pub fn write_tags(file: &TagFile) -> String {
    let s = &file.stream;
    let mut meta = Metadata::new();
    meta.set("period_ns", s.period());
    meta.set("window_start_ns", s.start_ps as f64 / 1000.0);
    meta.set("n_cycles", s.n_cycles);
    meta.set("configuration", s.configuration);
    meta.set("delay_periods", s.delay_periods);
    meta.extend_missing(&file.metadata);
    let mut body = String::with_capacity(s.tags.len() * 16);
    for t in &s.tags {
        let _ = writeln!(body, "{},{},{}", t.channel, t.cycle, t.delay_ps);
    }
    write_document(MAGIC, &meta, COLUMNS, &body)
}

/// Parses a text tag file. When the header omits them, `n_cycles` defaults
/// to one past the last tagged cycle, `configuration` to HBT and
/// `window_start_ns` to zero.
pub fn read_tags(text: &str) -> Result<TagFile> {
    let (metadata, records) = parse_document(text, MAGIC, COLUMNS)?;
    let period: f64 = metadata.require("period_ns")?;
    let period_ps = crate::surface::ns_to_ps(period);
    if period_ps <= 0 {
        return Err(Error::parse_line(2, "period_ns must be positive"));
    }
    let start: f64 = metadata.optional("window_start_ns")?.unwrap_or(0.0);
    let start_ps = crate::surface::ns_to_ps(start);
    if !(start_ps <= 0 && start_ps > -period_ps) {
        return Err(Error::parse_line(2, "window_start_ns must lie in (-period, 0]"));
    }
    let mut tags = Vec::with_capacity(records.len());
    for (n, line) in records {
        let [ch, cycle, delay] = fields::<3>(n, line)?;
        let tag = TimeTag {
            channel: parse_field(n, "channel", ch)?,
            cycle: parse_field(n, "cycle", cycle)?,
            delay_ps: parse_field(n, "delay_ps", delay)?,
        };
        check_tag(&tag, start_ps, period_ps).map_err(|m| Error::parse_line(n, m))?;
        if tags.last().is_some_and(|prev| *prev > tag) {
            return Err(Error::parse_line(
                n,
                "tags are not in canonical (cycle, delay) order",
            ));
        }
        tags.push(tag);
    }
    let inferred = tags.last().map_or(0, |t| t.cycle + 1);
    let n_cycles = metadata.optional("n_cycles")?.unwrap_or(inferred);
    if n_cycles < inferred {
        return Err(Error::parse_line(
            2,
            format!("n_cycles={n_cycles} but a tag has cycle {}", inferred - 1),
        ));
    }
    let configuration = metadata
        .optional("configuration")?
        .unwrap_or(Configuration::Hbt);
    let delay_periods = metadata
        .optional("delay_periods")?
        .unwrap_or(DEFAULT_DELAY_PERIODS);
    Ok(TagFile {
        metadata,
        stream: TagStream {
            period_ps,
            start_ps,
            n_cycles,
            configuration,
            delay_periods,
            tags,
        },
    })
}

fn check_tag(tag: &TimeTag, start_ps: i64, period_ps: i64) -> std::result::Result<(), String> {
    if !(1..=2).contains(&tag.channel) {
        return Err(format!("channel must be 1 or 2, got {}", tag.channel));
    }
    let end = start_ps + period_ps;
    if !(start_ps..end).contains(&tag.delay_ps) {
        return Err(format!("delay {} ps outside [{start_ps}, {end})", tag.delay_ps));
    }
    Ok(())
}

/// Little-endian binary form: magic, version, period and window start in
/// fs, then 16-byte records. Cycle numbers must fit in 32 bits.
pub fn write_tags_binary(stream: &TagStream) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(BINARY_HEADER + stream.tags.len() * BINARY_RECORD);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.period_ps as u64 * 1000).to_le_bytes());
    out.extend_from_slice(&(stream.start_ps * 1000).to_le_bytes());
    for t in &stream.tags {
        let cycle = u32::try_from(t.cycle).map_err(|_| {
            Error::param(format!("cycle {} does not fit the binary format", t.cycle))
        })?;
        out.extend_from_slice(&(t.channel as u16).to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&cycle.to_le_bytes());
        out.extend_from_slice(&(t.delay_ps * 1000).to_le_bytes());
    }
    Ok(out)
}

/// The binary header carries the period and window; the remaining stream fields
/// come from the caller (`n_cycles` defaults to one past the last cycle).
pub fn read_tags_binary(
    bytes: &[u8],
    configuration: Configuration,
    delay_periods: u32,
    n_cycles: Option<u64>,
) -> Result<TagStream> {
    if bytes.len() < BINARY_HEADER {
        return Err(Error::parse_byte(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != BINARY_MAGIC {
        return Err(Error::parse_byte(0, "bad magic, expected G2TG"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BINARY_VERSION {
        return Err(Error::parse_byte(
            4,
            format!("unsupported version {version}"),
        ));
    }
    let period_fs = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    if period_fs == 0 || period_fs % 1000 != 0 {
        return Err(Error::parse_byte(
            6,
            format!("period {period_fs} fs is not a positive whole picosecond"),
        ));
    }
    let period_ps = (period_fs / 1000) as i64;
    let start_fs = i64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes"));
    let start_ps = start_fs / 1000;
    if start_fs % 1000 != 0 || !(start_ps <= 0 && start_ps > -period_ps) {
        return Err(Error::parse_byte(
            14,
            format!("window start {start_fs} fs is not a whole picosecond in (-period, 0]"),
        ));
    }
    let body = &bytes[BINARY_HEADER..];
    if body.len() % BINARY_RECORD != 0 {
        return Err(Error::parse_byte(
            BINARY_HEADER + body.len() / BINARY_RECORD * BINARY_RECORD,
            "truncated record",
        ));
    }
    let mut tags = Vec::with_capacity(body.len() / BINARY_RECORD);
    for (k, rec) in body.chunks_exact(BINARY_RECORD).enumerate() {
        let offset = BINARY_HEADER + k * BINARY_RECORD;
        let channel = u16::from_le_bytes([rec[0], rec[1]]);
        if u16::from_le_bytes([rec[2], rec[3]]) != 0 {
            return Err(Error::parse_byte(offset + 2, "reserved field must be zero"));
        }
        let cycle = u32::from_le_bytes(rec[4..8].try_into().expect("4 bytes")) as u64;
        let delay_fs = i64::from_le_bytes(rec[8..16].try_into().expect("8 bytes"));
        if delay_fs % 1000 != 0 {
            return Err(Error::parse_byte(
                offset + 8,
                "delay is not a whole picosecond",
            ));
        }
        let tag = TimeTag {
            channel: u8::try_from(channel).unwrap_or(0),
            cycle,
            delay_ps: delay_fs / 1000,
        };
        check_tag(&tag, start_ps, period_ps).map_err(|m| Error::parse_byte(offset, m))?;
        if tags.last().is_some_and(|prev| *prev > tag) {
            return Err(Error::parse_byte(offset, "tags are not in canonical order"));
        }
        tags.push(tag);
    }
    let inferred = tags.last().map_or(0, |t| t.cycle + 1);
    Ok(TagStream {
        period_ps,
        start_ps,
        n_cycles: n_cycles.unwrap_or(inferred).max(inferred),
        configuration,
        delay_periods,
        tags,
    })
}
