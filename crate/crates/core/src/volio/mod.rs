//! Volume and slice I/O.
//!
//! Volumes are decoded from single-file NIFTI-1 (`.nii`) images, cut into
//! axial planes, padded to power-of-two dimensions and stored as grayscale
//! PNG files (16-bit for MR intensities, 8-bit for label masks).

mod nifti;
mod pngio;
mod slice;

use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use nifti::{read_nifti, read_nifti_bytes, write_nifti, NiftiDataType};
pub use pngio::{decode_png, encode_png, read_png, write_png};
pub use slice::{crop, pad_to_pow2, slice_axial, slice_filename, Padding};

#[derive(Debug, Error)]
pub enum VolioError {
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("lossy data: voxel {index} holds non-integer value {value}")]
    Lossy { index: usize, value: f64 },
    #[error("value {value} out of range for {kind}")]
    Range { value: i64, kind: SliceKind },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, VolioError>;

/// A decoded 3D scalar volume. Voxel `(x, y, z)` lives at
/// `x + nx * (y + ny * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: Vec<i32>,
    pub dims: (usize, usize, usize),
    pub voxel_size: (f32, f32, f32),
    pub source_id: String,
}

impl Volume {
    pub fn new(
        data: Vec<i32>,
        dims: (usize, usize, usize),
        voxel_size: (f32, f32, f32),
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let (nx, ny, nz) = dims;
        if nx * ny * nz != data.len() || nx == 0 || ny == 0 || nz == 0 {
            return Err(VolioError::Shape(format!(
                "dims {nx}x{ny}x{nz} do not match {} voxels",
                data.len()
            )));
        }
        Ok(Self {
            data,
            dims,
            voxel_size,
            source_id: source_id.into(),
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> i32 {
        let (nx, ny, _) = self.dims;
        self.data[x + nx * (y + ny * z)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SliceKind {
    /// MR intensities, unsigned 16-bit.
    Mr16,
    /// Label masks, unsigned 8-bit.
    Mask8,
}

impl SliceKind {
    pub fn max_value(self) -> u16 {
        match self {
            SliceKind::Mr16 => u16::MAX,
            SliceKind::Mask8 => u8::MAX as u16,
        }
    }
}

impl fmt::Display for SliceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SliceKind::Mr16 => f.write_str("MR16"),
            SliceKind::Mask8 => f.write_str("Mask8"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SliceOrigin {
    pub source_id: String,
    pub axial_index: usize,
}

/// A row-major 2D image. Pixel `(row, col)` lives at `row * width + col`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice2D {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u16>,
    pub kind: SliceKind,
    pub origin: Option<SliceOrigin>,
}

impl Slice2D {
    /// Builds a slice, checking extents and the value range of `kind`.
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u16>,
        kind: SliceKind,
        origin: Option<SliceOrigin>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || width * height != pixels.len() {
            return Err(VolioError::Shape(format!(
                "{width}x{height} slice with {} pixels",
                pixels.len()
            )));
        }
        if let Some(&v) = pixels.iter().find(|&&v| v > kind.max_value()) {
            return Err(VolioError::Range {
                value: i64::from(v),
                kind,
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            kind,
            origin,
        })
    }

    /// Converts arbitrary integers, failing on the first value outside the
    /// range of `kind`.
    pub fn from_values(
        width: usize,
        height: usize,
        values: &[i64],
        kind: SliceKind,
        origin: Option<SliceOrigin>,
    ) -> Result<Self> {
        let max = i64::from(kind.max_value());
        let pixels = values
            .iter()
            .map(|&v| {
                if (0..=max).contains(&v) {
                    Ok(v as u16)
                } else {
                    Err(VolioError::Range { value: v, kind })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(width, height, pixels, kind, origin)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}
