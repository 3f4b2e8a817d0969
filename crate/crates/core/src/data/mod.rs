//! Volumes, synthetic scenes, preprocessing and patch extraction.

pub mod patch;
pub mod preprocess;
pub mod synth;
pub mod volume;

pub use patch::{extract_patches, materialize, sample_patch_origins, slice_stack, PatchOrigin, PatchSample};
pub use preprocess::{
    crop_body, crop_mask, crop_region, downsample, downsample_mask, normalize_intensity, region_offset,
    resample, resample_isotropic, resample_mask, uncrop_mask,
};
pub use synth::{generate_dataset, render_scene, Blob, Intensities, SceneDistribution, SceneSpec, Sphere};
pub use volume::{Dims, Manifest, ManifestEntry, Mask, Volume};
