//! Slice-stack patches: consecutive slices as channels, labelled by the
//! middle slice.

use rand::Rng;

use super::volume::{Dims, Mask, Volume};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Where a patch was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchOrigin {
    /// Index of the case in its dataset.
    pub case: usize,
    /// Middle slice.
    pub slice: usize,
    pub y: usize,
    pub x: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    /// `[channels, size, size]`.
    pub input: Vec<f32>,
    /// `[size, size]` labels of the middle slice.
    pub label: Vec<u8>,
    pub channels: usize,
    pub size: usize,
    pub origin: PatchOrigin,
}

fn check_channels(channels: usize) -> Result<()> {
    if channels.is_multiple_of(2) {
        return Err(Error::invalid(format!("slice stacks need an odd channel count, got {channels}")));
    }
    Ok(())
}

/// Full `[channels, ny, nx]` stack centered on `slice`; slices past either
/// end repeat the edge slice.
pub fn slice_stack(volume: &Volume, slice: usize, channels: usize) -> Result<Vec<f32>> {
    check_channels(channels)?;
    if slice >= volume.dims[0] {
        return Err(Error::Index(format!("slice {slice} of {}", volume.dims[0])));
    }
    let half = (channels / 2) as isize;
    let last = volume.dims[0] as isize - 1;
    let mut out = Vec::with_capacity(channels * volume.dims[1] * volume.dims[2]);
    for c in -half..=half {
        let z = (slice as isize + c).clamp(0, last) as usize;
        out.extend_from_slice(volume.slice(z));
    }
    Ok(out)
}

/// `count` random patch positions for one case. The middle slice is drawn
/// so the whole stack lies inside the volume.
pub fn sample_patch_origins(
    dims: Dims,
    case: usize,
    count: usize,
    size: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<PatchOrigin>> {
    check_channels(channels)?;
    if dims[0] < channels {
        return Err(Error::invalid(format!(
            "volume with {} slices is thinner than a {channels}-slice stack",
            dims[0]
        )));
    }
    if size == 0 || size > dims[1] || size > dims[2] {
        return Err(Error::invalid(format!(
            "patch size {size} does not fit a {}x{} plane",
            dims[1], dims[2]
        )));
    }
    let half = channels / 2;
    let mut rng = stream(seed, &[case as u64, 0x7061]);
    Ok((0..count)
        .map(|_| PatchOrigin {
            case,
            slice: rng.random_range(half..dims[0] - half),
            y: rng.random_range(0..=dims[1] - size),
            x: rng.random_range(0..=dims[2] - size),
        })
        .collect())
}

/// Cuts the patch at `origin`; stack slices past the ends are edge-replicated.
pub fn materialize(volume: &Volume, mask: &Mask, origin: PatchOrigin, size: usize, channels: usize) -> Result<PatchSample> {
    check_channels(channels)?;
    let [nz, ny, nx] = volume.dims;
    if mask.dims != volume.dims {
        return Err(Error::dim("patch", format!("mask {:?} vs volume {:?}", mask.dims, volume.dims)));
    }
    if origin.slice >= nz || origin.y + size > ny || origin.x + size > nx {
        return Err(Error::Index(format!("patch {origin:?} of size {size} outside {:?}", volume.dims)));
    }
    let half = (channels / 2) as isize;
    let mut input = Vec::with_capacity(channels * size * size);
    for c in -half..=half {
        let z = (origin.slice as isize + c).clamp(0, nz as isize - 1) as usize;
        let plane = volume.slice(z);
        for y in origin.y..origin.y + size {
            input.extend_from_slice(&plane[y * nx + origin.x..y * nx + origin.x + size]);
        }
    }
    let plane = mask.slice(origin.slice);
    let mut label = Vec::with_capacity(size * size);
    for y in origin.y..origin.y + size {
        label.extend_from_slice(&plane[y * nx + origin.x..y * nx + origin.x + size]);
    }
    Ok(PatchSample {
        input,
        label,
        channels,
        size,
        origin,
    })
}

/// `count` random patches of one case.
pub fn extract_patches(
    volume: &Volume,
    mask: &Mask,
    case: usize,
    count: usize,
    size: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<PatchSample>> {
    sample_patch_origins(volume.dims, case, count, size, channels, seed)?
        .into_iter()
        .map(|o| materialize(volume, mask, o, size, channels))
        .collect()
}
