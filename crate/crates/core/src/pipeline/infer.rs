//! Whole-plane inference over slice stacks.

use crate::data::volume::{index, voxel_count};
use crate::data::{slice_stack, Dims, Mask, Volume};
use crate::error::{Error, Result};
use crate::network::ModelState;
use crate::tensor::{Element, Tensor};

/// Slices per forward pass; eval-mode batch norm makes results independent
/// of the grouping.
const SLICES_PER_PASS: usize = 8;

/// Raw intensities are stored on 0..255; the networks see 0..1.
pub(crate) const INPUT_SCALE: f32 = 1.0 / 255.0;

/// Pads the bottom and right of every slice so both in-plane sizes are
/// multiples of `multiple` and at least `min_size`. The original grid stays
/// at offset zero.
pub fn pad_plane(volume: &Volume, multiple: usize, min_size: usize, fill: f32) -> Result<Volume> {
    let [nz, ny, nx] = volume.dims;
    let up = |n: usize| n.max(min_size).div_ceil(multiple) * multiple;
    let dims = [nz, up(ny), up(nx)];
    let mut data = vec![fill; voxel_count(dims)];
    for z in 0..nz {
        for y in 0..ny {
            let src = &volume.data[index(volume.dims, z, y, 0)..index(volume.dims, z, y, 0) + nx];
            let at = index(dims, z, y, 0);
            data[at..at + nx].copy_from_slice(src);
        }
    }
    Volume::new(volume.id.clone(), dims, volume.spacing, data)
}

/// Top-left `dims` corner of a mask produced on a padded grid.
pub fn unpad_mask(mask: &Mask, dims: Dims) -> Result<Mask> {
    if (0..3).any(|a| dims[a] > mask.dims[a]) {
        return Err(Error::dim("unpad", format!("{dims:?} exceeds {:?}", mask.dims)));
    }
    let mut data = Vec::with_capacity(voxel_count(dims));
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            let at = index(mask.dims, z, y, 0);
            data.extend_from_slice(&mask.data[at..at + dims[2]]);
        }
    }
    Mask::new(mask.id.clone(), dims, data)
}

/// Labels every voxel of `region` by the argmax of the network's logits.
///
/// Each slice is predicted from the stack centered on it, edge slices
/// repeating at the volume ends. Ties go to background.
pub fn infer<T: Element>(model: &ModelState<T>, region: &Volume) -> Result<Mask> {
    let [nz, ny, nx] = region.dims;
    let factor = 1usize << model.spec().depth();
    if ny % factor != 0 || nx % factor != 0 || ny == 0 || nx == 0 {
        return Err(Error::dim(
            "infer",
            format!(
                "in-plane size {ny}x{nx} must be a positive multiple of {factor}; pad the region first (pad_plane)"
            ),
        ));
    }
    let channels = model.spec().in_channels;
    let plane = ny * nx;
    let mut out = Vec::with_capacity(nz * plane);
    for start in (0..nz).step_by(SLICES_PER_PASS) {
        let end = (start + SLICES_PER_PASS).min(nz);
        let mut input = Vec::with_capacity((end - start) * channels * plane);
        for z in start..end {
            input.extend(slice_stack(region, z, channels)?.into_iter().map(|v| T::from_f64(f64::from(v * INPUT_SCALE))));
        }
        let x = Tensor::new(&[end - start, channels, ny, nx], input)?;
        let logits = model.predict(&x)?.logits;
        let l = logits.data();
        for n in 0..end - start {
            let (bg, fg) = (&l[(2 * n) * plane..(2 * n + 1) * plane], &l[(2 * n + 1) * plane..(2 * n + 2) * plane]);
            out.extend(bg.iter().zip(fg).map(|(b, f)| u8::from(f > b)));
        }
    }
    Mask::new(region.id.clone(), region.dims, out)
}

/// [`infer`] on a volume of any in-plane size: pads, predicts, crops back.
pub fn infer_padded<T: Element>(model: &ModelState<T>, volume: &Volume) -> Result<Mask> {
    let factor = 1usize << model.spec().depth();
    let padded = pad_plane(volume, factor, 0, 0.0)?;
    unpad_mask(&infer(model, &padded)?, volume.dims)
}
