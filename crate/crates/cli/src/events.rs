//! Event files, version 1.
//!
//! ```text
//! magic    12 bytes  "GGSEVENTS\0\0\0"
//! version  u32le     1
//! header   JSON line, space padded so packets start 16-byte aligned
//! packets  16 bytes each:
//!          t        f64le seconds
//!          x, y     u16le
//!          flags    u8, bit 7 set = negative polarity, bits 0-6 = channel
//!          pad      3 zero bytes
//! ```

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use rgc_core::oracle::{EventPacket, EventStream, StreamHeader};
use rgc_core::{KernelBank, Layout, SimConfig};
use serde::{Deserialize, Serialize};

use crate::format::{parse_header, push_header_line, split_header_line, FormatError, Result};

pub const MAGIC: &[u8; 12] = b"GGSEVENTS\0\0\0";
pub const VERSION: u32 = 1;
pub const PACKET_BYTES: usize = 16;
pub const MAX_CHANNELS: usize = 128;
const NEGATIVE: u8 = 0x80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFileHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub layout: Layout,
    pub t_start: f64,
    pub t_end: f64,
    pub event_count: u64,
    pub bank: Option<KernelBank>,
    pub sim: Option<SimConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    pub header: EventFileHeader,
    pub stream: EventStream,
}

impl EventFile {
    pub fn new(stream: EventStream, bank: Option<KernelBank>, sim: Option<SimConfig>) -> Self {
        let h = &stream.header;
        Self {
            header: EventFileHeader {
                width: h.width,
                height: h.height,
                channels: h.channels,
                layout: h.layout,
                t_start: h.t_start,
                t_end: h.t_end,
                event_count: stream.len() as u64,
                bank,
                sim,
            },
            stream,
        }
    }

    /// Fails on packets out of `(t, y, x, channel)` order.
    pub fn encode(&self) -> Result<Vec<u8>> {
        self.stream.validate()?;
        if self.stream.header.channels > MAX_CHANNELS {
            return Err(FormatError::Payload(format!(
                "{} channels do not fit the 7-bit channel field",
                self.stream.header.channels
            )));
        }
        let mut header = self.header.clone();
        header.event_count = self.stream.len() as u64;
        let json = serde_json::to_string(&header).map_err(|e| FormatError::Header(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 16 + PACKET_BYTES * self.stream.len());
        out.extend_from_slice(MAGIC);
        let mut version = [0u8; 4];
        LittleEndian::write_u32(&mut version, VERSION);
        out.extend_from_slice(&version);
        push_header_line(&mut out, &json);
        let mut packet = [0u8; PACKET_BYTES];
        for p in &self.stream.packets {
            encode_packet(p, &mut packet);
            out.extend_from_slice(&packet);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..12] != MAGIC {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(MAGIC).into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(12)]).into(),
            });
        }
        let version = LittleEndian::read_u32(&bytes[12..16]);
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        let (text, payload) = split_header_line(bytes, 16)?;
        let header: EventFileHeader = parse_header(text)?;
        let expected = usize::try_from(header.event_count)
            .ok()
            .and_then(|n| n.checked_mul(PACKET_BYTES))
            .ok_or_else(|| FormatError::Header("event count overflows".into()))?;
        if payload.len() != expected {
            return Err(FormatError::Truncated {
                expected,
                actual: payload.len(),
            });
        }
        let packets = payload
            .chunks_exact(PACKET_BYTES)
            .enumerate()
            .map(|(i, b)| decode_packet(b).map_err(|e| FormatError::Payload(format!("packet {}: {}", i, e))))
            .collect::<Result<Vec<_>>>()?;
        let stream = EventStream {
            header: StreamHeader {
                width: header.width,
                height: header.height,
                channels: header.channels,
                layout: header.layout,
                t_start: header.t_start,
                t_end: header.t_end,
            },
            packets,
        };
        stream.validate()?;
        Ok(Self { header, stream })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.encode()?)?)
    }
}

pub fn encode_packet(p: &EventPacket, out: &mut [u8; PACKET_BYTES]) {
    LittleEndian::write_f64(&mut out[0..8], p.t);
    LittleEndian::write_u16(&mut out[8..10], p.x);
    LittleEndian::write_u16(&mut out[10..12], p.y);
    let sign = if p.polarity < 0 { NEGATIVE } else { 0 };
    out[12] = sign | (p.channel & 0x7f);
    out[13..16].fill(0);
}

pub fn decode_packet(b: &[u8]) -> std::result::Result<EventPacket, String> {
    if b[13..16] != [0, 0, 0] {
        return Err("non-zero pad bytes".into());
    }
    Ok(EventPacket {
        t: LittleEndian::read_f64(&b[0..8]),
        x: LittleEndian::read_u16(&b[8..10]),
        y: LittleEndian::read_u16(&b[10..12]),
        polarity: if b[12] & NEGATIVE != 0 { -1 } else { 1 },
        channel: b[12] & 0x7f,
    })
}

pub fn write_events(path: &Path, stream: &EventStream, bank: Option<&KernelBank>, sim: Option<&SimConfig>) -> Result<()> {
    EventFile::new(stream.clone(), bank.cloned(), sim.cloned()).write(path)
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    Ok(EventFile::read(path)?.stream)
}
