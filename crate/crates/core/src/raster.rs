//! Row-major rasters and the `CVRG` binary raster format.
//!
//! Layout: 4-byte magic `CVRG`, then little-endian `u32` width, height and
//! dtype code (1 = f32 depth, 2 = u16 label, 3 = u8 intensity), followed by
//! the row-major payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const RASTER_MAGIC: &[u8; 4] = b"CVRG";

/// Label value reserved for pixels that carry no observation.
pub const MARGIN: u16 = 0;

/// Depth value reserved for invalid pixels.
pub const INVALID_DEPTH: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Metric depth per pixel. Kept in f64 in memory, stored as f32 on disk.
pub type DepthRaster = Raster<f64>;
pub type LabelRaster = Raster<u16>;
pub type IntensityRaster = Raster<u8>;

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::input(format!(
                "raster payload has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> T {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        self.data[v * self.width + u] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Iterates `(u, v, value)` in raster-scan order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &x)| (i % w, i / w, x))
    }
}

/// Element types with a `CVRG` dtype code.
pub trait RasterElement: Copy {
    const CODE: u32;
    const BYTES: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl RasterElement for f64 {
    const CODE: u32 = 1;
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self as f32).to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap()) as f64
    }
}

impl RasterElement for u16 {
    const CODE: u32 = 2;
    const BYTES: usize = 2;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        u16::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl RasterElement for u8 {
    const CODE: u32 = 3;
    const BYTES: usize = 1;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl<T: RasterElement> Raster<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * T::BYTES);
        out.extend_from_slice(RASTER_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&T::CODE.to_le_bytes());
        for &x in &self.data {
            x.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != RASTER_MAGIC {
            return Err(Error::format("raster", "missing CVRG header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (width, height, code) = (word(4) as usize, word(8) as usize, word(12));
        if code != T::CODE {
            return Err(Error::format(
                "raster",
                format!("dtype code {code}, expected {}", T::CODE),
            ));
        }
        let payload = &bytes[16..];
        if payload.len() != width * height * T::BYTES {
            return Err(Error::format(
                "raster",
                format!(
                    "payload is {} bytes, expected {}",
                    payload.len(),
                    width * height * T::BYTES
                ),
            ));
        }
        let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl LabelRaster {
    pub fn is_margin(&self, u: usize, v: usize) -> bool {
        self.get(u, v) == MARGIN
    }
}
