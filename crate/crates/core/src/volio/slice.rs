use super::{Result, Slice2D, SliceKind, SliceOrigin, Volume, VolioError};

/// Cuts a volume into its axial planes, in ascending `z` order. Plane `k`
/// holds voxel `(x, y, k)` at row `y`, column `x`.
pub fn slice_axial(volume: &Volume, kind: SliceKind) -> Result<Vec<Slice2D>> {
    let (nx, ny, nz) = volume.dims;
    if volume.data.len() != nx * ny * nz {
        return Err(VolioError::Shape("volume data does not match dims".into()));
    }
    let plane = nx * ny;
    (0..nz)
        .map(|k| {
            let values: Vec<i64> = volume.data[k * plane..(k + 1) * plane]
                .iter()
                .map(|&v| i64::from(v))
                .collect();
            Slice2D::from_values(
                nx,
                ny,
                &values,
                kind,
                Some(SliceOrigin {
                    source_id: volume.source_id.clone(),
                    axial_index: k,
                }),
            )
        })
        .collect()
}

/// Zero padding added on each side of a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

fn split_pad(n: usize) -> (usize, usize) {
    let total = n.next_power_of_two() - n;
    (total / 2, total - total / 2)
}

/// Centers the slice in the smallest power-of-two canvas that holds it.
/// Odd padding puts the extra row/column at the bottom/right.
pub fn pad_to_pow2(slice: &Slice2D) -> (Slice2D, Padding) {
    let (top, bottom) = split_pad(slice.height);
    let (left, right) = split_pad(slice.width);
    let (h, w) = (slice.height + top + bottom, slice.width + left + right);
    let mut pixels = vec![0u16; h * w];
    for r in 0..slice.height {
        let dst = (r + top) * w + left;
        pixels[dst..dst + slice.width]
            .copy_from_slice(&slice.pixels[r * slice.width..(r + 1) * slice.width]);
    }
    let out = Slice2D {
        width: w,
        height: h,
        pixels,
        kind: slice.kind,
        origin: slice.origin.clone(),
    };
    (
        out,
        Padding {
            top,
            bottom,
            left,
            right,
        },
    )
}

/// Inverse of [`pad_to_pow2`] given the original `(height, width)`.
pub fn crop(slice: &Slice2D, dims: (usize, usize)) -> Result<Slice2D> {
    let (oh, ow) = dims;
    if oh == 0 || ow == 0 || oh > slice.height || ow > slice.width {
        return Err(VolioError::Shape(format!(
            "cannot crop {}x{} to {oh}x{ow}",
            slice.height, slice.width
        )));
    }
    let top = (slice.height - oh) / 2;
    let left = (slice.width - ow) / 2;
    let mut pixels = Vec::with_capacity(oh * ow);
    for r in top..top + oh {
        pixels.extend_from_slice(&slice.pixels[r * slice.width + left..r * slice.width + left + ow]);
    }
    Ok(Slice2D {
        width: ow,
        height: oh,
        pixels,
        kind: slice.kind,
        origin: slice.origin.clone(),
    })
}

pub fn slice_filename(source_id: &str, axial_index: usize) -> String {
    format!("{source_id}_slice{axial_index:03}.png")
}
