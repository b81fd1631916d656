//! Single-file NIFTI-1 subset: uint8, int16, uint16 and float32 payloads,
//! uncompressed, with trivial intensity scaling.

use std::fs;
use std::path::Path;

use super::{Result, Volume, VolioError};

const HEADER_SIZE: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDataType {
    UInt8,
    Int16,
    UInt16,
    Float32,
}

impl NiftiDataType {
    fn code(self) -> i16 {
        match self {
            NiftiDataType::UInt8 => 2,
            NiftiDataType::Int16 => 4,
            NiftiDataType::Float32 => 16,
            NiftiDataType::UInt16 => 512,
        }
    }

    fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(NiftiDataType::UInt8),
            4 => Some(NiftiDataType::Int16),
            16 => Some(NiftiDataType::Float32),
            512 => Some(NiftiDataType::UInt16),
            _ => None,
        }
    }

    fn bytes(self) -> usize {
        match self {
            NiftiDataType::UInt8 => 1,
            NiftiDataType::Int16 | NiftiDataType::UInt16 => 2,
            NiftiDataType::Float32 => 4,
        }
    }
}

#[derive(Clone, Copy)]
struct Reader<'a> {
    buf: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> Result<[u8; N]> {
        self.buf
            .get(at..at + N)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| VolioError::Parse {
                offset: at,
                msg: "unexpected end of file".into(),
            })
    }

    fn i16(&self, at: usize) -> Result<i16> {
        let b = self.bytes::<2>(at)?;
        Ok(if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        })
    }

    fn u16(&self, at: usize) -> Result<u16> {
        let b = self.bytes::<2>(at)?;
        Ok(if self.big_endian {
            u16::from_be_bytes(b)
        } else {
            u16::from_le_bytes(b)
        })
    }

    fn i32(&self, at: usize) -> Result<i32> {
        let b = self.bytes::<4>(at)?;
        Ok(if self.big_endian {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        })
    }

    fn f32(&self, at: usize) -> Result<f32> {
        let b = self.bytes::<4>(at)?;
        Ok(if self.big_endian {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        })
    }
}

/// Reads a `.nii` file. The subject identifier is the file name with the
/// `.nii` extension removed.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let source_id = name.strip_suffix(".nii").unwrap_or(&name).to_string();
    read_nifti_bytes(&bytes, source_id)
}

pub fn read_nifti_bytes(buf: &[u8], source_id: impl Into<String>) -> Result<Volume> {
    if buf.len() < HEADER_SIZE {
        return Err(VolioError::Parse {
            offset: buf.len(),
            msg: format!("header truncated ({} of {HEADER_SIZE} bytes)", buf.len()),
        });
    }
    let le = Reader {
        buf,
        big_endian: false,
    };
    let r = match le.i32(offsets::SIZEOF_HDR)? {
        348 => le,
        _ if i32::from_be_bytes(le.bytes::<4>(0)?) == 348 => Reader {
            buf,
            big_endian: true,
        },
        other => {
            return Err(VolioError::Parse {
                offset: offsets::SIZEOF_HDR,
                msg: format!("sizeof_hdr is {other}, expected 348"),
            })
        }
    };

    let magic = &buf[offsets::MAGIC..offsets::MAGIC + 4];
    if magic == b"ni1\0" {
        return Err(VolioError::Unsupported(
            "two-file (.hdr/.img) NIFTI pairs".into(),
        ));
    }
    if magic != b"n+1\0" {
        return Err(VolioError::Parse {
            offset: offsets::MAGIC,
            msg: format!("bad magic {magic:?}"),
        });
    }

    let ndim = r.i16(offsets::DIM)?;
    if !(1..=7).contains(&ndim) {
        return Err(VolioError::Parse {
            offset: offsets::DIM,
            msg: format!("dim[0] = {ndim} outside 1..=7"),
        });
    }
    let mut dims = [1usize; 7];
    for (i, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let at = offsets::DIM + 2 * (i + 1);
        let v = r.i16(at)?;
        if v < 1 {
            return Err(VolioError::Parse {
                offset: at,
                msg: format!("dim[{}] = {v}", i + 1),
            });
        }
        *d = v as usize;
    }
    if dims[3..].iter().any(|&d| d != 1) {
        return Err(VolioError::Unsupported(format!(
            "volumes with more than three non-singleton dimensions ({dims:?})"
        )));
    }

    let code = r.i16(offsets::DATATYPE)?;
    let dtype = NiftiDataType::from_code(code)
        .ok_or_else(|| VolioError::Unsupported(format!("NIFTI datatype code {code}")))?;
    let bitpix = r.i16(offsets::BITPIX)?;
    if bitpix as usize != dtype.bytes() * 8 {
        return Err(VolioError::Parse {
            offset: offsets::BITPIX,
            msg: format!("bitpix {bitpix} inconsistent with datatype {code}"),
        });
    }

    let slope = r.f32(offsets::SCL_SLOPE)?;
    let inter = r.f32(offsets::SCL_INTER)?;
    let trivial_slope = slope == 0.0 || slope == 1.0 || slope.is_nan();
    let trivial_inter = inter == 0.0 || inter.is_nan() || slope == 0.0;
    if !(trivial_slope && trivial_inter) {
        return Err(VolioError::Unsupported(format!(
            "intensity rescaling slope={slope} intercept={inter}"
        )));
    }

    let pixdim = (
        r.f32(offsets::PIXDIM + 4)?,
        r.f32(offsets::PIXDIM + 8)?,
        r.f32(offsets::PIXDIM + 12)?,
    );

    let vox_offset = r.f32(offsets::VOX_OFFSET)?;
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(VolioError::Parse {
            offset: offsets::VOX_OFFSET,
            msg: format!("vox_offset {vox_offset}"),
        });
    }
    let start = vox_offset as usize;
    let n = dims[0] * dims[1] * dims[2];
    let end = start + n * dtype.bytes();
    if buf.len() < end {
        return Err(VolioError::Parse {
            offset: buf.len(),
            msg: format!("voxel data truncated, need {end} bytes"),
        });
    }

    let mut data = Vec::with_capacity(n);
    match dtype {
        NiftiDataType::UInt8 => data.extend(buf[start..end].iter().map(|&b| i32::from(b))),
        NiftiDataType::Int16 => {
            for i in 0..n {
                data.push(i32::from(r.i16(start + 2 * i)?));
            }
        }
        NiftiDataType::UInt16 => {
            for i in 0..n {
                data.push(i32::from(r.u16(start + 2 * i)?));
            }
        }
        NiftiDataType::Float32 => {
            for i in 0..n {
                let v = r.f32(start + 4 * i)?;
                let exact = v.is_finite()
                    && v.fract() == 0.0
                    && (i32::MIN as f32..=i32::MAX as f32).contains(&v);
                if !exact {
                    return Err(VolioError::Lossy {
                        index: i,
                        value: f64::from(v),
                    });
                }
                data.push(v as i32);
            }
        }
    }

    Volume::new(data, (dims[0], dims[1], dims[2]), pixdim, source_id)
}

/// Writes a little-endian single-file NIFTI-1 image.
pub fn write_nifti(volume: &Volume, dtype: NiftiDataType, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_nifti(volume, dtype)?)?;
    Ok(())
}

fn encode_nifti(volume: &Volume, dtype: NiftiDataType) -> Result<Vec<u8>> {
    let (nx, ny, nz) = volume.dims;
    let mut buf = vec![0u8; DEFAULT_VOX_OFFSET];
    let put_i16 = |buf: &mut [u8], at: usize, v: i16| buf[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |buf: &mut [u8], at: usize, v: f32| buf[at..at + 4].copy_from_slice(&v.to_le_bytes());

    buf[0..4].copy_from_slice(&348i32.to_le_bytes());
    let dim: [i16; 8] = [3, dim_i16(nx)?, dim_i16(ny)?, dim_i16(nz)?, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut buf, offsets::DIM + 2 * i, *d);
    }
    put_i16(&mut buf, offsets::DATATYPE, dtype.code());
    put_i16(&mut buf, offsets::BITPIX, (dtype.bytes() * 8) as i16);
    let (dx, dy, dz) = volume.voxel_size;
    for (i, v) in [1.0, dx, dy, dz, 1.0, 1.0, 1.0, 1.0].iter().enumerate() {
        put_f32(&mut buf, offsets::PIXDIM + 4 * i, *v);
    }
    put_f32(&mut buf, offsets::VOX_OFFSET, DEFAULT_VOX_OFFSET as f32);
    put_f32(&mut buf, offsets::SCL_SLOPE, 1.0);
    buf[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");

    buf.reserve(volume.data.len() * dtype.bytes());
    for (i, &v) in volume.data.iter().enumerate() {
        let bad = || VolioError::Unsupported(format!("voxel {i} value {v} does not fit {dtype:?}"));
        match dtype {
            NiftiDataType::UInt8 => buf.push(u8::try_from(v).map_err(|_| bad())?),
            NiftiDataType::Int16 => {
                buf.extend_from_slice(&i16::try_from(v).map_err(|_| bad())?.to_le_bytes())
            }
            NiftiDataType::UInt16 => {
                buf.extend_from_slice(&u16::try_from(v).map_err(|_| bad())?.to_le_bytes())
            }
            NiftiDataType::Float32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    Ok(buf)
}

fn dim_i16(d: usize) -> Result<i16> {
    i16::try_from(d).map_err(|_| VolioError::Unsupported(format!("dimension {d} exceeds NIFTI-1 limits")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(data: Vec<i32>, dims: (usize, usize, usize)) -> Volume {
        Volume::new(data, dims, (1.0, 1.0, 1.0), "s").unwrap()
    }

    #[test]
    fn single_voxel_round_trips() {
        let v = vol(vec![7], (1, 1, 1));
        for dt in [
            NiftiDataType::UInt8,
            NiftiDataType::Int16,
            NiftiDataType::UInt16,
            NiftiDataType::Float32,
        ] {
            let bytes = encode_nifti(&v, dt).unwrap();
            let back = read_nifti_bytes(&bytes, "s").unwrap();
            assert_eq!(back.data, vec![7]);
            assert_eq!(back.dims, (1, 1, 1));
        }
    }

    #[test]
    fn full_brain_int16_volume_dims() {
        let n = 240 * 240 * 155;
        let data: Vec<i32> = (0..n).map(|i| (i % 3000) as i32).collect();
        let v = vol(data, (240, 240, 155));
        let back = read_nifti_bytes(&encode_nifti(&v, NiftiDataType::Int16).unwrap(), "s").unwrap();
        assert_eq!(back.dims, (240, 240, 155));
        assert_eq!(back.data, v.data);
    }

    #[test]
    fn wrong_magic_is_a_parse_error() {
        let mut bytes = encode_nifti(&vol(vec![1], (1, 1, 1)), NiftiDataType::UInt8).unwrap();
        bytes[344..348].copy_from_slice(b"xyz\0");
        match read_nifti_bytes(&bytes, "s") {
            Err(VolioError::Parse { offset, .. }) => assert_eq!(offset, 344),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_header_reports_offset() {
        match read_nifti_bytes(&[0u8; 100], "s") {
            Err(VolioError::Parse { offset, .. }) => assert_eq!(offset, 100),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_data_is_a_parse_error() {
        let bytes = encode_nifti(&vol(vec![1, 2, 3, 4], (2, 2, 1)), NiftiDataType::Int16).unwrap();
        let err = read_nifti_bytes(&bytes[..bytes.len() - 1], "s").unwrap_err();
        assert!(matches!(err, VolioError::Parse { .. }), "{err:?}");
    }

    #[test]
    fn non_integer_float_is_refused() {
        let mut bytes = encode_nifti(&vol(vec![1, 2], (2, 1, 1)), NiftiDataType::Float32).unwrap();
        bytes[356..360].copy_from_slice(&2.5f32.to_le_bytes());
        match read_nifti_bytes(&bytes, "s") {
            Err(VolioError::Lossy { index, value }) => {
                assert_eq!(index, 1);
                assert_eq!(value, 2.5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rescaling_is_unsupported() {
        let mut bytes = encode_nifti(&vol(vec![1], (1, 1, 1)), NiftiDataType::Int16).unwrap();
        bytes[offsets::SCL_SLOPE..offsets::SCL_SLOPE + 4].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(
            read_nifti_bytes(&bytes, "s"),
            Err(VolioError::Unsupported(_))
        ));
    }

    #[test]
    fn unsupported_datatype() {
        let mut bytes = encode_nifti(&vol(vec![1], (1, 1, 1)), NiftiDataType::Int16).unwrap();
        bytes[offsets::DATATYPE..offsets::DATATYPE + 2].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(
            read_nifti_bytes(&bytes, "s"),
            Err(VolioError::Unsupported(_))
        ));
    }

    #[test]
    fn big_endian_header_is_accepted() {
        let mut buf = vec![0u8; 352 + 4];
        buf[0..4].copy_from_slice(&348i32.to_be_bytes());
        for (i, d) in [3i16, 2, 1, 1, 1, 1, 1, 1].iter().enumerate() {
            buf[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_be_bytes());
        }
        buf[70..72].copy_from_slice(&4i16.to_be_bytes());
        buf[72..74].copy_from_slice(&16i16.to_be_bytes());
        buf[108..112].copy_from_slice(&352f32.to_be_bytes());
        buf[344..348].copy_from_slice(b"n+1\0");
        buf[352..354].copy_from_slice(&(-3i16).to_be_bytes());
        buf[354..356].copy_from_slice(&300i16.to_be_bytes());
        let v = read_nifti_bytes(&buf, "be").unwrap();
        assert_eq!(v.data, vec![-3, 300]);
    }
}
