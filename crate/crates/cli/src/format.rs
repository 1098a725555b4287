//! Errors and helpers shared by the on-disk formats.

use std::io;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported version {0}")]
    Version(u32),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("invalid payload: {0}")]
    Payload(String),

    #[error(transparent)]
    Model(#[from] rgc_core::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Header lines are padded with spaces so the payload starts on a 16-byte
/// boundary of the file.
pub const ALIGN: usize = 16;

/// Appends `json`, padding spaces and the terminating newline to `out`.
pub fn push_header_line(out: &mut Vec<u8>, json: &str) {
    out.extend_from_slice(json.as_bytes());
    let used = out.len() + 1;
    let pad = (ALIGN - used % ALIGN) % ALIGN;
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
}

/// Splits `bytes[start..]` at the first newline: `(header, payload)`.
pub fn split_header_line(bytes: &[u8], start: usize) -> Result<(&str, &[u8])> {
    let rest = bytes.get(start..).ok_or_else(|| FormatError::Header("file too short".into()))?;
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FormatError::Header("no newline after the header".into()))?;
    let header = std::str::from_utf8(&rest[..end])
        .map_err(|e| FormatError::Header(format!("header is not UTF-8: {}", e)))?;
    Ok((header, &rest[end + 1..]))
}

pub fn parse_header<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text.trim_end()).map_err(|e| FormatError::Header(e.to_string()))
}

/// First bytes of a file, for format sniffing.
pub fn sniff(path: &std::path::Path) -> Result<Vec<u8>> {
    use std::io::Read;
    let mut buf = vec![0u8; 16];
    let mut f = std::fs::File::open(path)?;
    let mut n = 0;
    while n < buf.len() {
        let got = f.read(&mut buf[n..])?;
        if got == 0 {
            break;
        }
        n += got;
    }
    buf.truncate(n);
    Ok(buf)
}
