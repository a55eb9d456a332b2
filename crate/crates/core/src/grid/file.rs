//! `RGM1` binary grid files: magic, `H W C` as little-endian u32, then
//! `H*W*C` little-endian f32 values, row-major and channel-last.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{GridError, GridMap};

const MAGIC: &[u8; 4] = b"RGM1";

#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Channel-last: index `(row * width + col) * channels + ch`.
    pub values: Vec<f32>,
}

impl GridTensor {
    /// Interleave same-sized single-channel maps into one tensor.
    pub fn from_maps(maps: &[&GridMap]) -> Result<Self, GridError> {
        let first = maps.first().ok_or_else(|| GridError::SizeMismatch("no channels".into()))?;
        let (h, w, c) = (first.height, first.width, maps.len());
        if maps.iter().any(|m| m.height != h || m.width != w) {
            return Err(GridError::SizeMismatch("channel maps differ in size".into()));
        }
        let mut values = vec![0.0; h * w * c];
        for (ch, m) in maps.iter().enumerate() {
            for (k, &v) in m.values.iter().enumerate() {
                values[k * c + ch] = v;
            }
        }
        Ok(Self {
            height: h,
            width: w,
            channels: c,
            values,
        })
    }

    pub fn channel(&self, ch: usize) -> Vec<f32> {
        self.values.iter().skip(ch).step_by(self.channels).copied().collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GridError> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(GridError::BadFile("missing RGM1 header".into()));
        }
        let dim = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (height, width, channels) = (dim(4), dim(8), dim(12));
        let n = height
            .checked_mul(width)
            .and_then(|x| x.checked_mul(channels))
            .ok_or_else(|| GridError::BadFile("dimension overflow".into()))?;
        if bytes.len() != 16 + 4 * n {
            return Err(GridError::BadFile(format!(
                "expected {} payload bytes, found {}",
                4 * n,
                bytes.len() - 16
            )));
        }
        let values = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }
}

pub fn write_grid_file(path: &Path, t: &GridTensor) -> Result<(), GridError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&t.to_bytes())?;
    Ok(())
}

pub fn read_grid_file(path: &Path) -> Result<GridTensor, GridError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    GridTensor::from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Vec2;

    #[test]
    fn header_layout_is_exact() {
        let t = GridTensor {
            height: 1,
            width: 2,
            channels: 1,
            values: vec![1.0, -2.5],
        };
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"RGM1");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(GridTensor::from_bytes(&b).unwrap(), t);
    }

    #[test]
    fn channel_last_interleave() {
        let mut a = GridMap::new(2, 2, 1.0, Vec2::ZERO);
        let mut b = a.clone();
        a.values = vec![1.0, 2.0, 3.0, 4.0];
        b.values = vec![5.0, 6.0, 7.0, 8.0];
        let t = GridTensor::from_maps(&[&a, &b]).unwrap();
        assert_eq!(t.values, vec![1.0, 5.0, 2.0, 6.0, 3.0, 7.0, 4.0, 8.0]);
        assert_eq!(t.channel(1), b.values);
    }

    #[test]
    fn truncated_rejected() {
        let t = GridTensor {
            height: 2,
            width: 2,
            channels: 1,
            values: vec![0.0; 4],
        };
        let b = t.to_bytes();
        assert!(GridTensor::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(GridTensor::from_bytes(b"XXXX").is_err());
    }
}
