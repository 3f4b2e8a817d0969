//! Case preparation (resample, normalize, body crop, landmark reference)
//! and the train/validation/test split.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::config::DatasetConfig;
use crate::data::volume::index;
use crate::data::{
    crop_body, crop_mask, generate_dataset, normalize_intensity, resample_isotropic, resample_mask, Dims, Manifest,
    ManifestEntry, Mask, Volume,
};
use crate::error::{Error, Result};
use crate::rng::stream;

/// A case ready for either stage: intensities on 0..255, cropped to the
/// body's bounding box.
#[derive(Debug, Clone)]
pub struct PreparedCase {
    pub id: String,
    pub volume: Volume,
    pub mask: Mask,
    /// Midpoint of the two landmark centroids, voxel coordinates.
    pub reference_center: [f64; 3],
    /// Position of the body crop in the (resampled) source grid.
    pub body_offset: Dims,
    /// Dimensions of the (resampled) source grid.
    pub source_dims: Dims,
}

/// Indices into the case list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub cases: Vec<PreparedCase>,
    pub split: Split,
}

/// Face-connected components of `keep`, largest first. Each component is
/// `(voxel count, centroid)`; ties keep scan order.
pub fn connected_components(keep: &[bool], dims: Dims) -> Vec<(usize, [f64; 3])> {
    let mut seen = vec![false; keep.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..keep.len() {
        if !keep[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut count = 0usize;
        let mut sum = [0.0f64; 3];
        while let Some(i) = stack.pop() {
            let p = [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]];
            count += 1;
            for a in 0..3 {
                sum[a] += p[a] as f64;
            }
            for a in 0..3 {
                for up in [false, true] {
                    let mut q = p;
                    if up {
                        if p[a] + 1 >= dims[a] {
                            continue;
                        }
                        q[a] += 1;
                    } else {
                        if p[a] == 0 {
                            continue;
                        }
                        q[a] -= 1;
                    }
                    let j = index(dims, q[0], q[1], q[2]);
                    if keep[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push((count, sum.map(|s| s / count as f64)));
    }
    out.sort_by(|a, b| b.0.cmp(&a.0));
    out
}

/// Midpoint of the centroids of the two largest bright components.
pub fn landmark_center(volume: &Volume, threshold: f32) -> Result<[f64; 3]> {
    let keep: Vec<bool> = volume.data.iter().map(|&v| v > threshold).collect();
    let comps = connected_components(&keep, volume.dims);
    match comps.as_slice() {
        [(_, a), (_, b), ..] => Ok([0, 1, 2].map(|i| 0.5 * (a[i] + b[i]))),
        _ => Err(Error::invalid(format!(
            "{}: found {} landmark component(s) above {threshold}, need two",
            volume.id,
            comps.len()
        ))),
    }
}

/// Resample (optional), normalize, crop to the body and locate the landmarks.
pub fn prepare_case(volume: &Volume, mask: &Mask, cfg: &DatasetConfig) -> Result<PreparedCase> {
    if volume.dims != mask.dims {
        return Err(Error::dim("prepare", format!("volume {:?} vs mask {:?}", volume.dims, mask.dims)));
    }
    let (volume, mask) = match cfg.target_spacing {
        Some(mm) if volume.spacing != [mm; 3] => (
            resample_isotropic(volume, mm)?,
            resample_mask(mask, volume.spacing, [mm; 3])?,
        ),
        _ => (volume.clone(), mask.clone()),
    };
    let normalized = normalize_intensity(&volume);
    let (cropped, offset) = crop_body(&normalized, cfg.body_threshold)?;
    let mask = crop_mask(&mask, offset, cropped.dims)?;
    let reference_center = landmark_center(&cropped, cfg.landmark_threshold)?;
    Ok(PreparedCase {
        id: volume.id.clone(),
        volume: cropped,
        mask,
        reference_center,
        body_offset: offset,
        source_dims: normalized.dims,
    })
}

/// Shuffled split; the train and validation sizes are rounded, the test
/// split takes the rest.
pub fn split_cases(n: usize, fractions: [f64; 3], seed: u64) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[0x73706c6974]));
    let n_train = ((n as f64 * fractions[0]).round() as usize).min(n);
    let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
    let sorted = |r: &[usize]| {
        let mut v = r.to_vec();
        v.sort_unstable();
        v
    };
    Split {
        train: sorted(&order[..n_train]),
        val: sorted(&order[n_train..n_train + n_val]),
        test: sorted(&order[n_train + n_val..]),
    }
}

impl PreparedData {
    /// Generates the synthetic dataset of `cfg` in memory.
    pub fn synthetic(cfg: &DatasetConfig) -> Result<Self> {
        let raw = generate_dataset(&cfg.synthetic, cfg.num_cases, cfg.seed)?;
        let cases = raw
            .iter()
            .map(|(_, v, m)| prepare_case(v, m, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_cases(cases, cfg))
    }

    pub fn from_manifest(manifest: &Manifest, cfg: &DatasetConfig) -> Result<Self> {
        let cases = (0..manifest.entries.len())
            .map(|i| {
                let (v, m) = manifest.load_case(i)?;
                prepare_case(&v, &m, cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_cases(cases, cfg))
    }

    pub fn from_cases(cases: Vec<PreparedCase>, cfg: &DatasetConfig) -> Self {
        let split = split_cases(cases.len(), cfg.split, cfg.split_seed);
        Self { cases, split }
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<&PreparedCase> {
        idx.iter().map(|&i| &self.cases[i]).collect()
    }
}

/// Writes the synthetic dataset as volume files plus `manifest.json` and
/// returns the manifest path.
pub fn write_synthetic(cfg: &DatasetConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(cfg.num_cases);
    let mut specs = Vec::with_capacity(cfg.num_cases);
    for (spec, v, m) in generate_dataset(&cfg.synthetic, cfg.num_cases, cfg.seed)? {
        let volume_path = PathBuf::from(format!("{}.vol.vvol", v.id));
        let mask_path = PathBuf::from(format!("{}.mask.vvol", v.id));
        v.save(dir.join(&volume_path))?;
        m.save(dir.join(&mask_path), v.spacing)?;
        entries.push(ManifestEntry {
            id: v.id.clone(),
            volume_path,
            mask_path,
        });
        specs.push(spec);
    }
    let scenes = dir.join("scenes.json");
    std::fs::write(&scenes, serde_json::to_string_pretty(&specs)?).map_err(|e| Error::io(&scenes, e))?;
    let path = dir.join("manifest.json");
    Manifest {
        root: dir.to_path_buf(),
        entries,
    }
    .save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{render_scene, SceneDistribution};

    #[test]
    fn components_by_size() {
        let dims = [3, 4, 5];
        let mut keep = vec![false; 60];
        // a 2-voxel bar and a 3-voxel L; diagonal contact does not join them
        for (z, y, x) in [(0, 0, 0), (0, 0, 1), (1, 2, 2), (1, 3, 2), (1, 3, 3), (2, 1, 4)] {
            keep[index(dims, z, y, x)] = true;
        }
        keep[index(dims, 0, 1, 2)] = true;
        let c = connected_components(&keep, dims);
        assert_eq!(c.iter().map(|c| c.0).collect::<Vec<_>>(), vec![3, 2, 1, 1]);
        assert_eq!(c[0].1, [1.0, 8.0 / 3.0, 7.0 / 3.0]);
        assert_eq!(c[1].1, [0.0, 0.0, 0.5]);
    }

    #[test]
    fn landmarks_found_near_truth() {
        let dist = SceneDistribution::desk();
        for case in 0..4 {
            let spec = dist.draw(11, case);
            let (v, m) = render_scene(&spec, "c").unwrap();
            let p = prepare_case(&v, &m, &DatasetConfig::default()).unwrap();
            // body crop keeps the full z range and shifts in-plane coordinates
            let (_, lo) = crop_body(&normalize_intensity(&v), 10.0).unwrap();
            assert_eq!(p.body_offset, lo);
            assert_eq!(p.source_dims, v.dims);
            let truth = spec.reference_center();
            for a in 0..3 {
                let got = p.reference_center[a] + lo[a] as f64;
                assert!((got - truth[a]).abs() < 0.5, "axis {a}: {got} vs {}", truth[a]);
            }
            assert_eq!(p.mask.count(), m.count());
            assert!(p.volume.data.iter().all(|&x| (0.0..=255.0).contains(&x)));
        }
    }

    #[test]
    fn split_is_a_partition() {
        let s = split_cases(100, [0.7, 0.1, 0.2], 4);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_cases(100, [0.7, 0.1, 0.2], 4));
        assert_ne!(s, split_cases(100, [0.7, 0.1, 0.2], 5));
        let s = split_cases(3, [0.7, 0.1, 0.2], 0);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 3);
    }

    #[test]
    fn manifest_round_trip_matches_in_memory() {
        let cfg = DatasetConfig {
            num_cases: 2,
            seed: 3,
            ..DatasetConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = write_synthetic(&cfg, dir.path()).unwrap();
        let disk = PreparedData::from_manifest(&Manifest::load(&path).unwrap(), &cfg).unwrap();
        let mem = PreparedData::synthetic(&cfg).unwrap();
        for (a, b) in disk.cases.iter().zip(&mem.cases) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.volume.data, b.volume.data);
            assert_eq!(a.mask.data, b.mask.data);
            assert_eq!(a.reference_center, b.reference_center);
        }
    }
}
