//! Resampling, intensity normalisation and cropping.

use super::volume::{index, voxel_count, Dims, Mask, Volume};
use crate::error::{Error, Result};

/// Output extent along an axis so that every sample point stays within the
/// input grid (no extrapolation).
fn resampled_len(n: usize, s_in: f64, s_out: f64) -> usize {
    (((n - 1) as f64 * s_in / s_out) + 1e-9).floor() as usize + 1
}

fn lerp_weights(pos: f64, n: usize) -> (usize, usize, f64) {
    let lo = (pos.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, pos - lo as f64)
}

fn trilinear(data: &[f32], dims: Dims, p: [f64; 3]) -> f64 {
    let (z0, z1, tz) = lerp_weights(p[0], dims[0]);
    let (y0, y1, ty) = lerp_weights(p[1], dims[1]);
    let (x0, x1, tx) = lerp_weights(p[2], dims[2]);
    let v = |z, y, x| f64::from(data[index(dims, z, y, x)]);
    let c00 = v(z0, y0, x0) * (1.0 - tx) + v(z0, y0, x1) * tx;
    let c01 = v(z0, y1, x0) * (1.0 - tx) + v(z0, y1, x1) * tx;
    let c10 = v(z1, y0, x0) * (1.0 - tx) + v(z1, y0, x1) * tx;
    let c11 = v(z1, y1, x0) * (1.0 - tx) + v(z1, y1, x1) * tx;
    let c0 = c00 * (1.0 - ty) + c01 * ty;
    let c1 = c10 * (1.0 - ty) + c11 * ty;
    c0 * (1.0 - tz) + c1 * tz
}

fn resample_field(data: &[f32], dims: Dims, spacing: [f64; 3], target: [f64; 3]) -> Result<(Vec<f64>, Dims)> {
    if dims.iter().any(|&n| n < 2) {
        return Err(Error::invalid(format!("cannot resample degenerate axis in {dims:?}")));
    }
    if target.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid(format!("target spacing must be positive, got {target:?}")));
    }
    let out_dims = [0, 1, 2].map(|a| resampled_len(dims[a], spacing[a], target[a]));
    let scale = [0, 1, 2].map(|a| target[a] / spacing[a]);
    let mut out = Vec::with_capacity(voxel_count(out_dims));
    for z in 0..out_dims[0] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[2] {
                let p = [z as f64 * scale[0], y as f64 * scale[1], x as f64 * scale[2]];
                out.push(trilinear(data, dims, p));
            }
        }
    }
    Ok((out, out_dims))
}

/// Trilinear resampling to `target` spacing (mm). Sample `i` along an axis
/// sits at physical position `i * target`, starting at the first voxel.
pub fn resample(volume: &Volume, target: [f64; 3]) -> Result<Volume> {
    let (data, dims) = resample_field(&volume.data, volume.dims, volume.spacing, target)?;
    Volume::new(volume.id.clone(), dims, target, data.into_iter().map(|v| v as f32).collect())
}

pub fn resample_isotropic(volume: &Volume, mm: f64) -> Result<Volume> {
    resample(volume, [mm; 3])
}

/// Mask resampled on the same grid as [`resample`]: interpolated and
/// thresholded at 0.5.
pub fn resample_mask(mask: &Mask, spacing: [f64; 3], target: [f64; 3]) -> Result<Mask> {
    let as_f32: Vec<f32> = mask.data.iter().map(|&v| f32::from(v)).collect();
    let (data, dims) = resample_field(&as_f32, mask.dims, spacing, target)?;
    Mask::new(mask.id.clone(), dims, data.into_iter().map(|v| u8::from(v >= 0.5)).collect())
}

/// Coarser grid with spacing multiplied by `factor`.
pub fn downsample(volume: &Volume, factor: usize) -> Result<Volume> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    resample(volume, volume.spacing.map(|s| s * factor as f64))
}

pub fn downsample_mask(mask: &Mask, spacing: [f64; 3], factor: usize) -> Result<Mask> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    resample_mask(mask, spacing, spacing.map(|s| s * factor as f64))
}

/// Affine map of `[min, max]` onto `[0, 255]`; a constant volume maps to 0.
pub fn normalize_intensity(volume: &Volume) -> Volume {
    let (lo, hi) = volume.min_max();
    let (lo, hi) = (f64::from(lo), f64::from(hi));
    let data = if hi > lo {
        volume
            .data
            .iter()
            .map(|&v| ((f64::from(v) - lo) / (hi - lo) * 255.0) as f32)
            .collect()
    } else {
        vec![0.0; volume.data.len()]
    };
    Volume {
        data,
        ..volume.clone()
    }
}

/// Sub-box `[offset, offset + size)` of a grid; positions outside the
/// source read `fill`.
fn crop_box<T: Copy>(data: &[T], dims: Dims, offset: [isize; 3], size: Dims, fill: T) -> Vec<T> {
    let mut out = Vec::with_capacity(voxel_count(size));
    for z in 0..size[0] {
        for y in 0..size[1] {
            for x in 0..size[2] {
                let p = [z, y, x];
                let q = [0, 1, 2].map(|a| offset[a] + p[a] as isize);
                let inside = (0..3).all(|a| q[a] >= 0 && (q[a] as usize) < dims[a]);
                out.push(if inside {
                    data[index(dims, q[0] as usize, q[1] as usize, q[2] as usize)]
                } else {
                    fill
                });
            }
        }
    }
    out
}

/// Tight bounding box of voxels strictly above `threshold`.
///
/// Returns the cropped volume and the offset of its first voxel in the
/// source grid.
pub fn crop_body(volume: &Volume, threshold: f32) -> Result<(Volume, Dims)> {
    let d = volume.dims;
    let mut lo = d;
    let mut hi = [0usize; 3];
    for z in 0..d[0] {
        for y in 0..d[1] {
            for x in 0..d[2] {
                if volume.at(z, y, x) > threshold {
                    for (a, v) in [z, y, x].into_iter().enumerate() {
                        lo[a] = lo[a].min(v);
                        hi[a] = hi[a].max(v + 1);
                    }
                }
            }
        }
    }
    if hi[0] == 0 {
        return Err(Error::invalid(format!(
            "no voxel above body threshold {threshold} in {}",
            volume.id
        )));
    }
    let size = [0, 1, 2].map(|a| hi[a] - lo[a]);
    let data = crop_box(&volume.data, d, lo.map(|v| v as isize), size, 0.0);
    Ok((Volume::new(volume.id.clone(), size, volume.spacing, data)?, lo))
}

/// Crop of a mask with the box a volume crop produced.
pub fn crop_mask(mask: &Mask, offset: Dims, size: Dims) -> Result<Mask> {
    let data = crop_box(&mask.data, mask.dims, offset.map(|v| v as isize), size, 0);
    Mask::new(mask.id.clone(), size, data)
}

/// Pastes `mask` (cropped at `offset`) back into a zero grid of `dims`.
pub fn uncrop_mask(mask: &Mask, offset: Dims, dims: Dims) -> Result<Mask> {
    let mut out = Mask::empty(mask.id.clone(), dims);
    for z in 0..mask.dims[0] {
        for y in 0..mask.dims[1] {
            for x in 0..mask.dims[2] {
                let q = [z + offset[0], y + offset[1], x + offset[2]];
                if (0..3).any(|a| q[a] >= dims[a]) {
                    return Err(Error::Index(format!("voxel {q:?} outside {dims:?}")));
                }
                out.data[index(dims, q[0], q[1], q[2])] = mask.at(z, y, x);
            }
        }
    }
    Ok(out)
}

/// Start of a `size` box centered on `center`, clipped so the box stays in
/// bounds. Axes shorter than the box start at 0 (the crop is then padded).
pub fn region_offset(dims: Dims, center: [f64; 3], size: Dims) -> Dims {
    [0, 1, 2].map(|a| {
        let start = (center[a] - size[a] as f64 / 2.0).round();
        let max_start = dims[a].saturating_sub(size[a]) as f64;
        start.clamp(0.0, max_start) as usize
    })
}

/// Fixed-size region around `center`, padded with `fill` where the volume
/// is smaller than the region. Returns the region and its offset.
pub fn crop_region(volume: &Volume, center: [f64; 3], size: Dims, fill: f32) -> Result<(Volume, Dims)> {
    if size.contains(&0) {
        return Err(Error::invalid("region size must be positive"));
    }
    let offset = region_offset(volume.dims, center, size);
    let data = crop_box(&volume.data, volume.dims, offset.map(|v| v as isize), size, fill);
    Ok((Volume::new(volume.id.clone(), size, volume.spacing, data)?, offset))
}
