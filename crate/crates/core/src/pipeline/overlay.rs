//! Grayscale overlays: one slice with the ground-truth and predicted
//! contours drawn in fixed gray levels.

use std::io::Write;
use std::path::Path;

use crate::data::{Mask, Volume};
use crate::error::{Error, Result};
use crate::sampling::{extract_contour, LabelMap};

/// Gray level of ground-truth contour pixels.
pub const GT_LEVEL: u8 = 255;
/// Gray level of predicted contour pixels.
pub const PRED_LEVEL: u8 = 0;
/// Gray level where both contours coincide.
pub const BOTH_LEVEL: u8 = 128;

/// The slice with the most ground-truth voxels (first on ties), or the
/// middle slice when the mask is empty.
pub fn pick_slice(gt: &Mask) -> usize {
    let plane = gt.dims[1] * gt.dims[2];
    let counts: Vec<usize> = (0..gt.dims[0])
        .map(|z| gt.data[z * plane..(z + 1) * plane].iter().filter(|&&v| v == 1).count())
        .collect();
    match counts.iter().max() {
        Some(&best) if best > 0 => counts.iter().position(|&c| c == best).unwrap_or(0),
        _ => gt.dims[0] / 2,
    }
}

/// 8-bit rendering of slice `z`: intensities clamped to 0..255, then the
/// 4-connected contours of both masks painted over them.
pub fn render_overlay(volume: &Volume, gt: &Mask, pred: &Mask, z: usize) -> Result<Vec<u8>> {
    if gt.dims != volume.dims || pred.dims != volume.dims {
        return Err(Error::dim("overlay", format!("masks {:?}/{:?} vs volume {:?}", gt.dims, pred.dims, volume.dims)));
    }
    if z >= volume.dims[0] {
        return Err(Error::Index(format!("slice {z} of {}", volume.dims[0])));
    }
    let [_, ny, nx] = volume.dims;
    let mut img: Vec<u8> = volume.slice(z).iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    let gt_c = extract_contour(&LabelMap::new(gt.slice(z), ny, nx)?);
    let pred_c = extract_contour(&LabelMap::new(pred.slice(z), ny, nx)?);
    for &(i, j) in &gt_c {
        img[i * nx + j] = GT_LEVEL;
    }
    for &(i, j) in &pred_c {
        let p = &mut img[i * nx + j];
        *p = if gt_c.binary_search(&(i, j)).is_ok() { BOTH_LEVEL } else { PRED_LEVEL };
    }
    Ok(img)
}

/// Binary (P5) PGM.
pub fn write_pgm<W: Write>(mut out: W, width: usize, height: usize, pixels: &[u8]) -> std::io::Result<()> {
    if pixels.len() != width * height {
        return Err(std::io::Error::other(format!("{} pixels for a {width}x{height} image", pixels.len())));
    }
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)
}

/// Renders the most informative slice of a case to `path`; returns the slice.
pub fn save_overlay(path: impl AsRef<Path>, volume: &Volume, gt: &Mask, pred: &Mask) -> Result<usize> {
    let path = path.as_ref();
    let z = pick_slice(gt);
    let img = render_overlay(volume, gt, pred, z)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_pgm(std::io::BufWriter::new(file), volume.dims[2], volume.dims[1], &img).map_err(|e| Error::io(path, e))?;
    Ok(z)
}
