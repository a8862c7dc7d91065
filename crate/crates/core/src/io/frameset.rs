//! Binary FrameSet files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 4    | magic `TWBF`                                  |
//! | 4      | 2    | format version (1)                            |
//! | 6      | 1    | sample kind: 0 counts (u32), 1 ADU (i32)      |
//! | 7      | 1    | channels                                      |
//! | 8      | 4    | width                                         |
//! | 12     | 4    | height                                        |
//! | 16     | 8    | frames K                                      |
//! | 24     | 8    | master seed                                   |
//! | 32     | 32   | SHA-256 of the generating configuration       |
//! | 64     | 4    | CRC-32 of the payload                         |
//! | 68     | 4    | CRC-32 of bytes 0..68                         |
//! | 72     | 4·n  | samples, `[frame][channel][pixel]`            |
//!
//! Analog samples are rounded to integer ADU when written.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frames::{FrameData, FrameHeader, FrameSet, SampleKind};

pub const MAGIC: [u8; 4] = *b"TWBF";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: u64 = 72;
pub const SAMPLE_BYTES: u64 = 4;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

/// Exact file size for a header.
pub fn expected_file_size(header: &FrameHeader) -> u64 {
    HEADER_BYTES + SAMPLE_BYTES * header.samples() as u64
}

fn encode_payload(fs: &FrameSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(fs.header.samples() * 4);
    match &fs.data {
        FrameData::Counts(c) => {
            for &v in c {
                let v = u32::try_from(v).or_else(|_| format_err(format!("count {v} does not fit in 32 bits")))?;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        FrameData::Analog(a) => {
            for &v in a {
                let r = v.round();
                if !(r >= i32::MIN as f64 && r <= i32::MAX as f64) {
                    return format_err(format!("sample {v} does not fit in 32-bit ADU"));
                }
                out.extend_from_slice(&(r as i32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn encode_header(h: &FrameHeader, payload_crc: u32) -> [u8; 72] {
    let mut b = [0u8; 72];
    b[0..4].copy_from_slice(&MAGIC);
    b[4..6].copy_from_slice(&VERSION.to_le_bytes());
    b[6] = match h.kind {
        SampleKind::Counts => 0,
        SampleKind::Adu => 1,
    };
    b[7] = h.channels;
    b[8..12].copy_from_slice(&h.width.to_le_bytes());
    b[12..16].copy_from_slice(&h.height.to_le_bytes());
    b[16..24].copy_from_slice(&h.frames.to_le_bytes());
    b[24..32].copy_from_slice(&h.seed.to_le_bytes());
    b[32..64].copy_from_slice(&h.config_hash);
    b[64..68].copy_from_slice(&payload_crc.to_le_bytes());
    let header_crc = crc32fast::hash(&b[0..68]);
    b[68..72].copy_from_slice(&header_crc.to_le_bytes());
    b
}

/// Serializes a frame set to bytes.
pub fn to_bytes(fs: &FrameSet) -> Result<Vec<u8>> {
    let payload = encode_payload(fs)?;
    let mut out = encode_header(&fs.header, crc32fast::hash(&payload)).to_vec();
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save(fs: &FrameSet, path: impl AsRef<Path>) -> Result<()> {
    let payload = encode_payload(fs)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_header(&fs.header, crc32fast::hash(&payload)))?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

fn u32_at(b: &[u8], o: usize) -> u32 {
    u32::from_le_bytes(b[o..o + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], o: usize) -> u64 {
    u64::from_le_bytes(b[o..o + 8].try_into().unwrap())
}

/// Parses and checks a header; returns it with the payload CRC.
pub fn decode_header(b: &[u8]) -> Result<(FrameHeader, u32)> {
    if b.len() < HEADER_BYTES as usize {
        return format_err("file is shorter than the header");
    }
    if b[0..4] != MAGIC {
        return format_err("not a FrameSet file (bad magic)");
    }
    if crc32fast::hash(&b[0..68]) != u32_at(b, 68) {
        return format_err("corrupt header (checksum mismatch)");
    }
    let version = u16::from_le_bytes([b[4], b[5]]);
    if version != VERSION {
        return format_err(format!("unsupported format version {version}"));
    }
    let kind = match b[6] {
        0 => SampleKind::Counts,
        1 => SampleKind::Adu,
        k => return format_err(format!("unknown sample kind {k}")),
    };
    let mut config_hash = [0u8; 32];
    config_hash.copy_from_slice(&b[32..64]);
    let header = FrameHeader {
        kind,
        channels: b[7],
        width: u32_at(b, 8),
        height: u32_at(b, 12),
        frames: u64_at(b, 16),
        seed: u64_at(b, 24),
        config_hash,
    };
    Ok((header, u32_at(b, 64)))
}

fn decode_payload(header: FrameHeader, crc: u32, payload: &[u8]) -> Result<FrameSet> {
    let expected = (expected_file_size(&header) - HEADER_BYTES) as usize;
    if payload.len() != expected {
        return format_err(format!("truncated payload: {} bytes, header implies {expected}", payload.len()));
    }
    if crc32fast::hash(payload) != crc {
        return format_err("corrupt payload (checksum mismatch)");
    }
    let words = payload.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
    let data = match header.kind {
        SampleKind::Counts => FrameData::Counts(words.map(|w| u32::from_le_bytes(w) as u64).collect()),
        SampleKind::Adu => FrameData::Analog(words.map(|w| i32::from_le_bytes(w) as f64).collect()),
    };
    Ok(FrameSet { header, data })
}

pub fn from_bytes(b: &[u8]) -> Result<FrameSet> {
    let (header, crc) = decode_header(b)?;
    decode_payload(header, crc, &b[HEADER_BYTES as usize..])
}

pub fn load(path: impl AsRef<Path>) -> Result<FrameSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; HEADER_BYTES as usize];
    r.read_exact(&mut head).or_else(|_| format_err("file is shorter than the header"))?;
    let (header, crc) = decode_header(&head)?;
    let mut payload = Vec::with_capacity((expected_file_size(&header) - HEADER_BYTES) as usize);
    r.read_to_end(&mut payload)?;
    decode_payload(header, crc, &payload)
}

/// Loads a file and checks that it was generated by the configuration with
/// hash `expected`.
pub fn load_verified(path: impl AsRef<Path>, expected: &[u8; 32]) -> Result<FrameSet> {
    let fs = load(path)?;
    if &fs.header.config_hash != expected {
        return format_err(format!(
            "configuration hash mismatch: file {}, expected {}",
            super::hex(&fs.header.config_hash),
            super::hex(expected)
        ));
    }
    Ok(fs)
}

/// Long-format CSV: frame, channel, pixel, value.
pub fn write_csv(fs: &FrameSet, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["frame", "channel", "pixel", "value"]).map_err(csv_err)?;
    for f in 0..fs.frames() {
        for c in 0..fs.channels() {
            for (p, v) in fs.values(f, c).iter().enumerate() {
                out.write_record([f.to_string(), c.to_string(), p.to_string(), v.to_string()]).map_err(csv_err)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// A width×height grid as CSV rows.
pub fn write_grid_csv(values: &[f64], width: usize, w: impl Write) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in values.chunks(width.max(1)) {
        out.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_size_and_arithmetic() {
        let fs = FrameSet::from_counts(3, 2, 2, 7, (0..24).collect()).unwrap();
        let b = to_bytes(&fs).unwrap();
        assert_eq!(b.len() as u64, expected_file_size(&fs.header));
        assert_eq!(from_bytes(&b).unwrap(), fs);
        let big = FrameHeader { frames: 100_000, width: 64, height: 64, channels: 1, ..fs.header.clone() };
        assert_eq!(expected_file_size(&big), 72 + 100_000 * 4096 * 4);
    }

    #[test]
    fn corruption_is_detected() {
        let fs = FrameSet::from_counts(2, 2, 1, 7, vec![1, 2, 3, 4]).unwrap();
        let b = to_bytes(&fs).unwrap();
        let mut t = b.clone();
        t[40] ^= 1;
        assert!(from_bytes(&t).is_err());
        let mut t = b.clone();
        *t.last_mut().unwrap() ^= 1;
        assert!(from_bytes(&t).is_err());
        assert!(from_bytes(&b[..b.len() - 4]).is_err());
    }

    #[test]
    fn analog_rounds_to_adu() {
        let fs = FrameSet::from_analog(2, 1, 1, 0, vec![1.4, -2.6]).unwrap();
        let back = from_bytes(&to_bytes(&fs).unwrap()).unwrap();
        assert_eq!(back.values(0, 0), vec![1.0, -3.0]);
    }
}
