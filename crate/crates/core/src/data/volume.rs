use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid extent in `[z, y, x]` order. Voxel `(z, y, x)` lives at
/// `(z * ny + y) * nx + x`.
pub type Dims = [usize; 3];

#[inline]
pub fn index(dims: Dims, z: usize, y: usize, x: usize) -> usize {
    (z * dims[1] + y) * dims[2] + x
}

pub fn voxel_count(dims: Dims) -> usize {
    dims.iter().product()
}

/// Scalar image with physical spacing (mm, `[z, y, x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub id: String,
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub data: Vec<f32>,
}

/// Binary label volume with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub id: String,
    pub dims: Dims,
    pub data: Vec<u8>,
}

fn check_len(dims: Dims, len: usize, what: &'static str) -> Result<()> {
    if voxel_count(dims) != len {
        return Err(Error::dim(
            what,
            format!("dims {dims:?} hold {} voxels, got {len}", voxel_count(dims)),
        ));
    }
    Ok(())
}

impl Volume {
    pub fn new(id: impl Into<String>, dims: Dims, spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        check_len(dims, data.len(), "volume")?;
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")));
        }
        Ok(Self {
            id: id.into(),
            dims,
            spacing,
            data,
        })
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[index(self.dims, z, y, x)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// One `[y, x]` plane.
    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims[1] * self.dims[2];
        &self.data[z * n..(z + 1) * n]
    }
}

impl Mask {
    pub fn new(id: impl Into<String>, dims: Dims, data: Vec<u8>) -> Result<Self> {
        check_len(dims, data.len(), "mask")?;
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("mask value {v} is not in {{0, 1}}")));
        }
        Ok(Self {
            id: id.into(),
            dims,
            data,
        })
    }

    pub fn empty(id: impl Into<String>, dims: Dims) -> Self {
        Self {
            id: id.into(),
            dims,
            data: vec![0; voxel_count(dims)],
        }
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> u8 {
        self.data[index(self.dims, z, y, x)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.dims[1] * self.dims[2];
        &self.data[z * n..(z + 1) * n]
    }

    /// Center of mass in voxel coordinates, `None` when empty.
    pub fn centroid(&self) -> Option<[f64; 3]> {
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for z in 0..self.dims[0] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[2] {
                    if self.at(z, y, x) == 1 {
                        acc[0] += z as f64;
                        acc[1] += y as f64;
                        acc[2] += x as f64;
                        n += 1;
                    }
                }
            }
        }
        (n > 0).then(|| acc.map(|a| a / n as f64))
    }

    /// Inclusive-exclusive bounding box `(lo, hi)`, `None` when empty.
    pub fn bounding_box(&self) -> Option<(Dims, Dims)> {
        let mut lo = self.dims;
        let mut hi = [0usize; 3];
        let mut any = false;
        for z in 0..self.dims[0] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[2] {
                    if self.at(z, y, x) == 1 {
                        any = true;
                        for (a, v) in [z, y, x].into_iter().enumerate() {
                            lo[a] = lo[a].min(v);
                            hi[a] = hi[a].max(v + 1);
                        }
                    }
                }
            }
        }
        any.then_some((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F32,
    U8,
}

struct Header {
    dims: Dims,
    spacing: [f64; 3],
    dtype: Dtype,
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn write_file(path: &Path, dims: Dims, spacing: [f64; 3], dtype: &str, body: &[u8]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let [nz, ny, nx] = dims;
    let [sz, sy, sx] = spacing;
    writeln!(w, "VVOL {nx} {ny} {nz} {sx} {sy} {sz} {dtype}")
        .and_then(|_| w.write_all(body))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<(Header, Vec<u8>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let fields: Vec<&str> = line.trim_end_matches('\n').split(' ').collect();
    if fields.len() != 8 || fields[0] != "VVOL" {
        return Err(format_err(path, format!("bad header {:?}", line.trim_end())));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad size {s:?}")));
    let real = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| *v > 0.0 && v.is_finite())
            .ok_or_else(|| format_err(path, format!("bad spacing {s:?}")))
    };
    let dims = [int(fields[3])?, int(fields[2])?, int(fields[1])?];
    let spacing = [real(fields[6])?, real(fields[5])?, real(fields[4])?];
    let dtype = match fields[7] {
        "f32" => Dtype::F32,
        "u8" => Dtype::U8,
        other => return Err(format_err(path, format!("unknown dtype {other:?}"))),
    };
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let width = if dtype == Dtype::F32 { 4 } else { 1 };
    if body.len() != voxel_count(dims) * width {
        return Err(format_err(
            path,
            format!("expected {} payload bytes, found {}", voxel_count(dims) * width, body.len()),
        ));
    }
    Ok((
        Header {
            dims,
            spacing,
            dtype,
        },
        body,
    ))
}

fn file_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl Volume {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let body: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_file(path.as_ref(), self.dims, self.spacing, "f32", &body)
    }

    /// Reads an `f32` or `u8` file; the id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (h, body) = read_file(path)?;
        let data = match h.dtype {
            Dtype::F32 => body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::U8 => body.into_iter().map(f32::from).collect(),
        };
        Volume::new(file_id(path), h.dims, h.spacing, data)
    }
}

impl Mask {
    /// Written as `u8` with the spacing of the paired volume.
    pub fn save(&self, path: impl AsRef<Path>, spacing: [f64; 3]) -> Result<()> {
        write_file(path.as_ref(), self.dims, spacing, "u8", &self.data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (h, body) = read_file(path)?;
        if h.dtype != Dtype::U8 {
            return Err(format_err(path, "masks must be stored as u8"));
        }
        Mask::new(file_id(path), h.dims, body)
            .map_err(|e| format_err(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub volume_path: PathBuf,
    pub mask_path: PathBuf,
}

/// Dataset index: a JSON list of entries. Relative paths resolve against
/// the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        Ok(Self {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.entries)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_case(&self, i: usize) -> Result<(Volume, Mask)> {
        let e = self
            .entries
            .get(i)
            .ok_or_else(|| Error::Index(format!("case {i} of {}", self.entries.len())))?;
        let mut v = Volume::load(self.resolve(&e.volume_path))?;
        let mut m = Mask::load(self.resolve(&e.mask_path))?;
        if v.dims != m.dims {
            return Err(Error::dim(
                "manifest",
                format!("case {}: volume {:?} vs mask {:?}", e.id, v.dims, m.dims),
            ));
        }
        v.id.clone_from(&e.id);
        m.id.clone_from(&e.id);
        Ok((v, m))
    }
}
