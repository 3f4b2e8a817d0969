//! Synthetic low-contrast scenes: an elliptic-cylinder body, one blurred
//! ellipsoidal target blob and two bright landmark spheres flanking it.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::volume::{index, voxel_count, Dims, Mask, Volume};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Intensity levels (HU-like units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Intensities {
    pub air: f32,
    pub tissue: f32,
    pub bone: f32,
}

impl Default for Intensities {
    fn default() -> Self {
        Self {
            air: -1000.0,
            tissue: 40.0,
            bone: 700.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// Voxel coordinates `[z, y, x]`.
    pub center: [f64; 3],
    /// Semi-axes in voxels `[z, y, x]` before the in-plane rotation.
    pub semi_axes: [f64; 3],
    /// Rotation in the `y-x` plane, radians.
    pub angle: f64,
    /// Gaussian boundary blur width in voxels (the kernel sigma is half of
    /// it); 0 disables blurring.
    pub blur: f64,
    /// Blob intensity above the surrounding tissue.
    pub contrast_gap: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Everything needed to render one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub volume_shape: Dims,
    pub spacing: [f64; 3],
    pub blob: Blob,
    pub landmarks: [Sphere; 2],
    pub noise_sigma: f64,
    pub intensities: Intensities,
    pub seed: u64,
}

impl Blob {
    /// Whether voxel center `p` lies inside the (rotated) ellipsoid.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let (s, c) = self.angle.sin_cos();
        let u = c * d[1] + s * d[2];
        let v = -s * d[1] + c * d[2];
        let [a, b, e] = self.semi_axes;
        (d[0] / a).powi(2) + (u / b).powi(2) + (v / e).powi(2) <= 1.0
    }

    /// Axis-aligned half-extent of the rotated ellipsoid.
    pub fn half_extent(&self) -> [f64; 3] {
        let (s, c) = self.angle.sin_cos();
        let [a, b, e] = self.semi_axes;
        [
            a,
            ((b * c).powi(2) + (e * s).powi(2)).sqrt(),
            ((b * s).powi(2) + (e * c).powi(2)).sqrt(),
        ]
    }

    pub fn analytic_volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.iter().product::<f64>()
    }
}

impl Sphere {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| (p[a] - self.center[a]).powi(2)).sum::<f64>() <= self.radius * self.radius
    }
}

impl SceneSpec {
    /// Blob inside the volume, landmarks inside the volume and disjoint from
    /// the blob's bounding box.
    pub fn validate(&self) -> Result<()> {
        let dims = self.volume_shape;
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::invalid(format!("volume shape {dims:?} too small")));
        }
        let b = &self.blob;
        if b.semi_axes.iter().any(|&a| !(a > 0.0)) || b.blur < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::invalid("blob axes must be positive; blur and noise non-negative"));
        }
        let he = b.half_extent();
        for a in 0..3 {
            if b.center[a] - he[a] < 0.0 || b.center[a] + he[a] > (dims[a] - 1) as f64 {
                return Err(Error::invalid(format!(
                    "blob exceeds the volume along axis {a}: center {:.1}, half extent {:.1}, size {}",
                    b.center[a], he[a], dims[a]
                )));
            }
        }
        for (k, s) in self.landmarks.iter().enumerate() {
            for a in 0..3 {
                if s.center[a] - s.radius < 0.0 || s.center[a] + s.radius > (dims[a] - 1) as f64 {
                    return Err(Error::invalid(format!("landmark {k} exceeds the volume")));
                }
            }
            // distance from sphere center to the blob's bounding box
            let gap: f64 = (0..3)
                .map(|a| ((s.center[a] - b.center[a]).abs() - he[a]).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt();
            if gap <= s.radius {
                return Err(Error::invalid(format!("landmark {k} overlaps the blob")));
            }
        }
        Ok(())
    }

    /// Midpoint of the two landmark centers.
    pub fn reference_center(&self) -> [f64; 3] {
        let [a, b] = self.landmarks;
        [0, 1, 2].map(|i| 0.5 * (a.center[i] + b.center[i]))
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with edge clamping.
fn blur3(field: &mut [f64], dims: Dims, sigma: f64) {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; field.len()];
    for axis in 0..3 {
        let n = dims[axis] as isize;
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    let p = [z, y, x];
                    let mut acc = 0.0;
                    for (t, &w) in k.iter().enumerate() {
                        let mut q = p;
                        q[axis] = (p[axis] as isize + t as isize - r).clamp(0, n - 1) as usize;
                        acc += w * field[index(dims, q[0], q[1], q[2])];
                    }
                    tmp[index(dims, z, y, x)] = acc;
                }
            }
        }
        field.copy_from_slice(&tmp);
    }
}

/// Renders one case. The mask is the exact blob support before blurring.
pub fn render_scene(spec: &SceneSpec, id: &str) -> Result<(Volume, Mask)> {
    spec.validate()?;
    let dims = spec.volume_shape;
    let n = voxel_count(dims);
    let lv = spec.intensities;
    let (cy, cx) = ((dims[1] - 1) as f64 / 2.0, (dims[2] - 1) as f64 / 2.0);
    let (ry, rx) = (0.45 * dims[1] as f64, 0.47 * dims[2] as f64);

    let mut mask = vec![0u8; n];
    let mut blob = vec![0.0f64; n];
    let mut base = vec![0.0f64; n];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let i = index(dims, z, y, x);
                let p = [z as f64, y as f64, x as f64];
                let in_body = ((p[1] - cy) / ry).powi(2) + ((p[2] - cx) / rx).powi(2) <= 1.0;
                base[i] = f64::from(if in_body { lv.tissue } else { lv.air });
                if spec.landmarks.iter().any(|s| s.contains(p)) {
                    base[i] = f64::from(lv.bone);
                }
                if spec.blob.contains(p) {
                    mask[i] = 1;
                    blob[i] = 1.0;
                }
            }
        }
    }
    if spec.blob.blur > 0.0 {
        blur3(&mut blob, dims, spec.blob.blur / 2.0);
    }
    let mut rng = stream(spec.seed, &[0x6e6f697365]);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let gap = f64::from(spec.blob.contrast_gap);
    let data = (0..n)
        .map(|i| {
            let eta = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (base[i] + gap * blob[i] + eta) as f32
        })
        .collect();
    Ok((
        Volume::new(id, dims, spec.spacing, data)?,
        Mask::new(id, dims, mask)?,
    ))
}

/// Randomised scene parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneDistribution {
    pub volume_shape: Dims,
    pub spacing: [f64; 3],
    /// Inclusive range of each blob semi-axis (voxels) as `[z, y, x]` pairs.
    pub semi_axis_range: [[f64; 2]; 3],
    /// Maximum blob center offset from the volume center, per axis.
    pub center_jitter: [f64; 3],
    pub landmark_radius: [f64; 2],
    /// Extra lateral clearance between blob and each landmark.
    pub landmark_clearance: [f64; 2],
    /// Maximum independent jitter of each landmark center, per axis.
    pub landmark_jitter: [f64; 3],
    pub blur: f64,
    pub contrast_gap: f32,
    pub noise_sigma: f64,
    pub intensities: Intensities,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        Self::desk()
    }
}

impl SceneDistribution {
    /// 64x96x96 volumes.
    pub fn desk() -> Self {
        Self {
            volume_shape: [64, 96, 96],
            spacing: [1.0, 1.0, 1.0],
            semi_axis_range: [[6.0, 10.0], [7.0, 12.0], [8.0, 13.0]],
            center_jitter: [5.0, 6.0, 6.0],
            landmark_radius: [4.0, 6.0],
            landmark_clearance: [6.0, 10.0],
            landmark_jitter: [3.0, 4.0, 3.0],
            blur: 3.0,
            contrast_gap: 20.0,
            noise_sigma: 8.0,
            intensities: Intensities::default(),
        }
    }

    /// Geometry scaled up so a 128^3 region and 64x64 patches make sense.
    pub fn paper() -> Self {
        let d = Self::desk();
        Self {
            volume_shape: [160, 256, 256],
            semi_axis_range: d.semi_axis_range.map(|[a, b]| [a * 2.5, b * 2.5]),
            center_jitter: d.center_jitter.map(|v| v * 2.5),
            landmark_radius: [10.0, 15.0],
            landmark_clearance: [15.0, 25.0],
            landmark_jitter: d.landmark_jitter.map(|v| v * 2.5),
            ..d
        }
    }

    fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    }

    /// Draws case `case` of a dataset seeded with `seed`.
    pub fn draw(&self, seed: u64, case: u64) -> SceneSpec {
        let mut rng = stream(seed, &[case]);
        let dims = self.volume_shape;
        let mid = dims.map(|n| (n - 1) as f64 / 2.0);
        let semi_axes = [0, 1, 2].map(|a| Self::uniform(&mut rng, self.semi_axis_range[a]));
        let angle = rng.random_range(-0.5..=0.5);
        let center = [0, 1, 2].map(|a| {
            let j = self.center_jitter[a];
            mid[a] + Self::uniform(&mut rng, [-j, j])
        });
        let blob = Blob {
            center,
            semi_axes,
            angle,
            blur: self.blur,
            contrast_gap: self.contrast_gap,
        };
        let he = blob.half_extent();
        let landmarks = [-1.0f64, 1.0].map(|side| {
            let radius = Self::uniform(&mut rng, self.landmark_radius);
            let clearance = Self::uniform(&mut rng, self.landmark_clearance);
            let jit = [0, 1, 2].map(|a| {
                let j = self.landmark_jitter[a];
                Self::uniform(&mut rng, [-j, j])
            });
            Sphere {
                center: [
                    center[0] + jit[0],
                    center[1] + jit[1],
                    center[2] + side * (he[2] + radius + clearance) + jit[2],
                ],
                radius,
            }
        });
        SceneSpec {
            volume_shape: dims,
            spacing: self.spacing,
            blob,
            landmarks,
            noise_sigma: self.noise_sigma,
            intensities: self.intensities,
            seed: crate::rng::derive_seed(seed, &[case, 1]),
        }
    }
}

/// `n` cases named `case000`, `case001`, ...; case `i` depends only on
/// `(seed, i)`.
pub fn generate_dataset(dist: &SceneDistribution, n: usize, seed: u64) -> Result<Vec<(SceneSpec, Volume, Mask)>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be > 0"));
    }
    (0..n)
        .map(|i| {
            let spec = dist.draw(seed, i as u64);
            let (v, m) = render_scene(&spec, &format!("case{i:03}"))?;
            Ok((spec, v, m))
        })
        .collect()
}
