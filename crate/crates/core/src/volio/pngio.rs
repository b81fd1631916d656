use std::fs;
use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use super::{Result, Slice2D, SliceKind, SliceOrigin, VolioError};

/// Encodes a slice as a grayscale PNG: 16-bit big-endian samples for
/// [`SliceKind::Mr16`], 8-bit for [`SliceKind::Mask8`].
pub fn encode_png(slice: &Slice2D) -> Result<Vec<u8>> {
    let max = slice.kind.max_value();
    if let Some(&v) = slice.pixels.iter().find(|&&v| v > max) {
        return Err(VolioError::Range {
            value: i64::from(v),
            kind: slice.kind,
        });
    }
    let (w, h) = (dim_u32(slice.width)?, dim_u32(slice.height)?);
    let mut out = Vec::new();
    {
        let mut enc = Encoder::new(&mut out, w, h);
        enc.set_color(ColorType::Grayscale);
        let samples = match slice.kind {
            SliceKind::Mr16 => {
                enc.set_depth(BitDepth::Sixteen);
                slice.pixels.iter().flat_map(|v| v.to_be_bytes()).collect::<Vec<u8>>()
            }
            SliceKind::Mask8 => {
                enc.set_depth(BitDepth::Eight);
                slice.pixels.iter().map(|&v| v as u8).collect()
            }
        };
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&samples).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Slice2D> {
    let mut dec = Decoder::new(Cursor::new(bytes));
    dec.set_transformations(Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| VolioError::Parse {
        offset: 0,
        msg: format!("png header: {e}"),
    })?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    let kind = match (info.color_type, info.bit_depth) {
        (ColorType::Grayscale, BitDepth::Sixteen) => SliceKind::Mr16,
        (ColorType::Grayscale, BitDepth::Eight) => SliceKind::Mask8,
        (c, d) => {
            return Err(VolioError::Unsupported(format!(
                "png with color type {c:?} and bit depth {d:?}"
            )))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| VolioError::Unsupported("png too large".into()))?;
    let mut buf = vec![0u8; size];
    reader.next_frame(&mut buf).map_err(|e| VolioError::Parse {
        offset: 0,
        msg: format!("png data: {e}"),
    })?;
    let pixels = match kind {
        SliceKind::Mr16 => buf[..2 * w * h]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect(),
        SliceKind::Mask8 => buf[..w * h].iter().map(|&b| u16::from(b)).collect(),
    };
    Slice2D::new(w, h, pixels, kind, None)
}

pub fn write_png(slice: &Slice2D, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_png(slice)?)?;
    Ok(())
}

/// Reads a grayscale PNG. When the file name follows the
/// `<source>_slice<k>.png` convention the origin is recovered from it.
pub fn read_png(path: impl AsRef<Path>) -> Result<Slice2D> {
    let path = path.as_ref();
    let mut slice = decode_png(&fs::read(path)?)?;
    slice.origin = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(parse_origin);
    Ok(slice)
}

fn parse_origin(stem: &str) -> Option<SliceOrigin> {
    let (source, idx) = stem.rsplit_once("_slice")?;
    Some(SliceOrigin {
        source_id: source.to_string(),
        axial_index: idx.parse().ok()?,
    })
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| VolioError::Shape(format!("dimension {d} too large for png")))
}

fn png_err(e: png::EncodingError) -> VolioError {
    VolioError::Png(e.to_string())
}
