//! Raw tensor files: one JSON header line, then row-major little-endian f32.
//!
//! Videos are `[K, H, W]` with one timestamp per frame. Voxel grids are
//! `[C, B, H, W]` with one timestamp per bin anchor.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use rgc_core::{FrameSequence, IntensityDomain, VoxelGrid};
use serde::{Deserialize, Serialize};

use crate::format::{parse_header, push_header_line, split_header_line, FormatError, Result};

pub const MAGIC: &str = "GGS1";
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub magic: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub intensity_domain: IntensityDomain,
}

impl TensorHeader {
    /// Timestamps along the leading time axis (`shape[0]` for videos,
    /// `shape[1]` for grids).
    pub fn times(&self, count: usize) -> Result<Vec<f64>> {
        match (&self.timestamps, self.t0, self.dt) {
            (Some(ts), None, None) => {
                if ts.len() != count {
                    return Err(FormatError::Header(format!(
                        "{} timestamps for a time axis of length {}",
                        ts.len(),
                        count
                    )));
                }
                Ok(ts.clone())
            }
            (None, Some(t0), Some(dt)) => Ok((0..count).map(|k| t0 + k as f64 * dt).collect()),
            _ => Err(FormatError::Header(
                "need either `timestamps` or both `t0` and `dt`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub header: TensorHeader,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let expected: usize = self.header.shape.iter().product();
        if expected != self.data.len() {
            return Err(FormatError::Payload(format!(
                "shape holds {} values, data has {}",
                expected,
                self.data.len()
            )));
        }
        let json = serde_json::to_string(&self.header).map_err(|e| FormatError::Header(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 16 + 4 * self.data.len());
        push_header_line(&mut out, &json);
        let at = out.len();
        out.resize(at + 4 * self.data.len(), 0);
        LittleEndian::write_f32_into(&self.data, &mut out[at..]);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (text, payload) = split_header_line(bytes, 0)?;
        let header: TensorHeader = parse_header(text)?;
        if header.magic != MAGIC {
            return Err(FormatError::BadMagic {
                expected: MAGIC.into(),
                found: header.magic,
            });
        }
        if header.dtype != DTYPE {
            return Err(FormatError::Header(format!("unsupported dtype `{}`", header.dtype)));
        }
        let count = header
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| FormatError::Header("shape overflows".into()))?;
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| FormatError::Header("shape overflows".into()))?;
        if payload.len() != expected {
            return Err(FormatError::Truncated {
                expected,
                actual: payload.len(),
            });
        }
        let mut data = vec![0f32; count];
        LittleEndian::read_f32_into(payload, &mut data);
        Ok(Self { header, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.encode()?)?)
    }
}

pub fn video_tensor(seq: &FrameSequence, domain: IntensityDomain) -> RawTensor {
    RawTensor {
        header: TensorHeader {
            magic: MAGIC.into(),
            dtype: DTYPE.into(),
            shape: vec![seq.len(), seq.height, seq.width],
            timestamps: Some(seq.timestamps.clone()),
            t0: None,
            dt: None,
            intensity_domain: domain,
        },
        data: seq.frames.concat(),
    }
}

/// Video with the header's intensity domain.
pub fn video_from_tensor(t: &RawTensor) -> Result<(FrameSequence, IntensityDomain)> {
    let [k, h, w] = t.header.shape[..] else {
        return Err(FormatError::Header(format!(
            "a video needs shape [K, H, W], got {:?}",
            t.header.shape
        )));
    };
    let timestamps = t.header.times(k)?;
    let frames = if h * w == 0 {
        vec![Vec::new(); k]
    } else {
        t.data.chunks(h * w).map(<[f32]>::to_vec).collect()
    };
    let seq = FrameSequence::new(w, h, timestamps, frames)?;
    Ok((seq, t.header.intensity_domain))
}

pub fn read_video(path: &Path) -> Result<(FrameSequence, IntensityDomain)> {
    video_from_tensor(&RawTensor::read(path)?)
}

pub fn write_video(path: &Path, seq: &FrameSequence, domain: IntensityDomain) -> Result<()> {
    video_tensor(seq, domain).write(path)
}

/// Grid values are narrowed to f32 on disk.
pub fn grid_tensor(grid: &VoxelGrid, domain: IntensityDomain) -> RawTensor {
    RawTensor {
        header: TensorHeader {
            magic: MAGIC.into(),
            dtype: DTYPE.into(),
            shape: vec![grid.channels, grid.bins(), grid.height, grid.width],
            timestamps: Some(grid.bin_times.clone()),
            t0: None,
            dt: None,
            intensity_domain: domain,
        },
        data: grid.data.iter().map(|&v| v as f32).collect(),
    }
}

pub fn grid_from_tensor(t: &RawTensor) -> Result<VoxelGrid> {
    let [c, b, h, w] = t.header.shape[..] else {
        return Err(FormatError::Header(format!(
            "a voxel grid needs shape [C, B, H, W], got {:?}",
            t.header.shape
        )));
    };
    let mut grid = VoxelGrid::zeros(c, w, h, t.header.times(b)?);
    for (d, s) in grid.data.iter_mut().zip(&t.data) {
        *d = *s as f64;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq() -> FrameSequence {
        FrameSequence::new(
            3,
            2,
            vec![0.0, 0.25, 0.5],
            vec![vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5], vec![1.0; 6], vec![0.7; 6]],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let t = video_tensor(&seq(), IntensityDomain::Log);
        let bytes = t.encode().unwrap();
        assert_eq!(bytes.iter().position(|&b| b == b'\n').unwrap() % 16, 15);
        let back = RawTensor::decode(&bytes).unwrap();
        assert_eq!(back, t);
        let (s, d) = video_from_tensor(&back).unwrap();
        assert_eq!(s, seq());
        assert_eq!(d, IntensityDomain::Log);
    }

    #[test]
    fn truncation_names_byte_counts() {
        let bytes = video_tensor(&seq(), IntensityDomain::Linear).encode().unwrap();
        let err = RawTensor::decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, FormatError::Truncated { expected: 72, actual: 69 }));
        assert!(err.to_string().contains("72") && err.to_string().contains("69"));
    }

    #[test]
    fn header_checks() {
        let mut t = video_tensor(&seq(), IntensityDomain::Linear);
        t.header.timestamps = Some(vec![0.0, 1.0]);
        let bytes = t.encode().unwrap();
        assert!(matches!(
            video_from_tensor(&RawTensor::decode(&bytes).unwrap()),
            Err(FormatError::Header(_))
        ));
        let mut t = video_tensor(&seq(), IntensityDomain::Linear);
        t.header.magic = "GGS2".into();
        assert!(matches!(
            RawTensor::decode(&t.encode().unwrap()),
            Err(FormatError::BadMagic { .. })
        ));
        let mut t = video_tensor(&seq(), IntensityDomain::Linear);
        t.header.timestamps = Some(vec![0.0, 0.5, 0.5]);
        assert!(matches!(
            video_from_tensor(&RawTensor::decode(&t.encode().unwrap()).unwrap()),
            Err(FormatError::Model(rgc_core::Error::InvalidSequence(_)))
        ));
    }

    #[test]
    fn uniform_clock_header() {
        let mut t = video_tensor(&seq(), IntensityDomain::Linear);
        t.header.timestamps = None;
        t.header.t0 = Some(0.0);
        t.header.dt = Some(0.25);
        let (s, _) = video_from_tensor(&RawTensor::decode(&t.encode().unwrap()).unwrap()).unwrap();
        assert_eq!(s.timestamps, vec![0.0, 0.25, 0.5]);
    }
}
