//! Online voxel tuple sampling for the metric-learning loss.
//!
//! Every sampler works on one image's 2-D label map and returns a
//! [`TupleBatch`]: up to `k` foreground anchors, each paired with `m`
//! foreground positives and `m` background negatives. The samplers differ
//! only in where anchors (and, for the contour sampler, positives) come from:
//!
//! * [`Strategy::Random`]: any foreground voxel.
//! * [`Strategy::FocalHard`]: foreground voxels whose predicted foreground
//!   probability is more than `tau` away from the label.
//! * [`Strategy::Contour`]: foreground voxels on the 4-connected boundary.
//!
//! Sampling is a pure function of its inputs and the configured seed.

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(row, column)` position in a 2-D map.
pub type Coord = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    FocalHard,
    Contour,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::FocalHard, Strategy::Contour];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::FocalHard => "focal_hard",
            Strategy::Contour => "contour",
        }
    }

    /// One-letter tag used in configuration names and log columns.
    pub fn tag(self) -> char {
        match self {
            Strategy::Random => 'r',
            Strategy::FocalHard => 'h',
            Strategy::Contour => 'c',
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown sampler {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    /// Anchors per image.
    pub k: usize,
    /// Positives and negatives per anchor.
    pub m: usize,
    /// Hard-sample threshold on `|prob - label|`.
    pub tau: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Random,
            k: 20,
            m: 1,
            tau: 0.1,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("sampling needs m >= 1"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

/// Borrowed binary label map of one image.
#[derive(Debug, Clone, Copy)]
pub struct LabelMap<'a> {
    pub height: usize,
    pub width: usize,
    pub data: &'a [u8],
}

impl<'a> LabelMap<'a> {
    pub fn new(data: &'a [u8], height: usize, width: usize) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(
                "label map",
                format!("{} labels for a {height}x{width} map", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("label value {v} is not in {{0, 1}}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, (i, j): Coord) -> u8 {
        self.data[i * self.width + j]
    }

    fn coord(&self, idx: usize) -> Coord {
        (idx / self.width, idx % self.width)
    }

    /// Voxels with the given label, row-major.
    pub fn with_label(&self, label: u8) -> Vec<Coord> {
        self.data
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v == label)
            .map(|(idx, _)| self.coord(idx))
            .collect()
    }
}

/// Sampled tuples for one image. `positives[a]` and `negatives[a]` belong to
/// `anchors[a]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TupleBatch {
    pub image_index: usize,
    pub anchors: Vec<Coord>,
    pub positives: Vec<Vec<Coord>>,
    pub negatives: Vec<Vec<Coord>>,
}

impl TupleBatch {
    pub fn empty(image_index: usize) -> Self {
        Self {
            image_index,
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Number of (anchor, positive, negative) triplets: `m * m` per anchor.
    pub fn triplet_count(&self) -> usize {
        self.positives
            .iter()
            .zip(&self.negatives)
            .map(|(p, n)| p.len() * n.len())
            .sum()
    }

    /// Number of (anchor, positive) pairs.
    pub fn pair_count(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    /// Every anchor and positive is foreground and every negative background.
    pub fn labels_valid(&self, labels: &LabelMap<'_>) -> bool {
        let inside = |&(i, j): &Coord| i < labels.height && j < labels.width;
        self.anchors.len() == self.positives.len()
            && self.anchors.len() == self.negatives.len()
            && self.anchors.iter().all(|c| inside(c) && labels.get(*c) == 1)
            && self.positives.iter().flatten().all(|c| inside(c) && labels.get(*c) == 1)
            && self.negatives.iter().flatten().all(|c| inside(c) && labels.get(*c) == 0)
    }
}

/// `data[i] == 1` exactly where `|prob - label| > tau`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardSampleMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

pub fn hard_sample_mask(prob: &[f64], labels: &LabelMap<'_>, tau: f64) -> Result<HardSampleMask> {
    if prob.len() != labels.data.len() {
        return Err(Error::dim(
            "hard_sample_mask",
            format!("{} probabilities for {} labels", prob.len(), labels.data.len()),
        ));
    }
    if let Some(p) = prob.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    let data = prob
        .iter()
        .zip(labels.data)
        .map(|(&p, &y)| u8::from((p - f64::from(y)).abs() > tau))
        .collect();
    Ok(HardSampleMask {
        height: labels.height,
        width: labels.width,
        data,
    })
}

/// Foreground voxels with at least one 4-neighbour that is background or
/// outside the map, row-major.
pub fn extract_contour(labels: &LabelMap<'_>) -> Vec<Coord> {
    let (h, w) = (labels.height, labels.width);
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if labels.get((i, j)) == 0 {
                continue;
            }
            let boundary = i == 0
                || j == 0
                || i + 1 == h
                || j + 1 == w
                || labels.get((i - 1, j)) == 0
                || labels.get((i + 1, j)) == 0
                || labels.get((i, j - 1)) == 0
                || labels.get((i, j + 1)) == 0;
            if boundary {
                out.push((i, j));
            }
        }
    }
    out
}

/// `n` items from `pool`: without replacement when the pool is large enough,
/// with replacement otherwise.
fn draw(rng: &mut ChaCha8Rng, pool: &[Coord], n: usize) -> Vec<Coord> {
    if pool.len() >= n {
        sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

/// Shared tuple assembly once anchor and positive pools are known.
fn assemble(
    image_index: usize,
    anchor_pool: &[Coord],
    positive_pool: &[Coord],
    negative_pool: &[Coord],
    cfg: &SamplingConfig,
) -> Result<TupleBatch> {
    cfg.validate()?;
    if anchor_pool.is_empty() || negative_pool.is_empty() || cfg.k == 0 {
        return Ok(TupleBatch::empty(image_index));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_anchors = cfg.k.min(anchor_pool.len());
    let anchors: Vec<Coord> = sample(&mut rng, anchor_pool.len(), n_anchors)
        .into_iter()
        .map(|i| anchor_pool[i])
        .collect();
    let mut positives = Vec::with_capacity(n_anchors);
    let mut negatives = Vec::with_capacity(n_anchors);
    for &a in &anchors {
        let candidates: Vec<Coord> = positive_pool.iter().copied().filter(|&p| p != a).collect();
        positives.push(if candidates.is_empty() {
            vec![a; cfg.m]
        } else {
            draw(&mut rng, &candidates, cfg.m)
        });
        negatives.push(draw(&mut rng, negative_pool, cfg.m));
    }
    Ok(TupleBatch {
        image_index,
        anchors,
        positives,
        negatives,
    })
}

/// Anchors and positives from all foreground voxels.
pub fn sample_random(
    labels: &LabelMap<'_>,
    image_index: usize,
    cfg: &SamplingConfig,
) -> Result<TupleBatch> {
    let fg = labels.with_label(1);
    assemble(image_index, &fg, &fg, &labels.with_label(0), cfg)
}

/// Foreground voxels that are hard samples under `tau`, row-major.
pub fn focal_anchor_pool(prob: &[f64], labels: &LabelMap<'_>, tau: f64) -> Result<Vec<Coord>> {
    let hard = hard_sample_mask(prob, labels, tau)?;
    Ok(labels
        .data
        .iter()
        .zip(&hard.data)
        .enumerate()
        .filter(|&(_, (&y, &s))| y == 1 && s == 1)
        .map(|(idx, _)| labels.coord(idx))
        .collect())
}

/// Anchors from hard foreground voxels; positives from all foreground voxels.
pub fn sample_focal_hard(
    prob: &[f64],
    labels: &LabelMap<'_>,
    image_index: usize,
    cfg: &SamplingConfig,
) -> Result<TupleBatch> {
    let pool = focal_anchor_pool(prob, labels, cfg.tau)?;
    assemble(
        image_index,
        &pool,
        &labels.with_label(1),
        &labels.with_label(0),
        cfg,
    )
}

/// Anchors and positives from the foreground contour.
pub fn sample_contour(
    labels: &LabelMap<'_>,
    image_index: usize,
    cfg: &SamplingConfig,
) -> Result<TupleBatch> {
    let contour = extract_contour(labels);
    assemble(image_index, &contour, &contour, &labels.with_label(0), cfg)
}

/// Dispatches on `cfg.strategy`. `prob` is only read by the focal sampler.
pub fn sample_tuples(
    prob: &[f64],
    labels: &LabelMap<'_>,
    image_index: usize,
    cfg: &SamplingConfig,
) -> Result<TupleBatch> {
    match cfg.strategy {
        Strategy::Random => sample_random(labels, image_index, cfg),
        Strategy::FocalHard => sample_focal_hard(prob, labels, image_index, cfg),
        Strategy::Contour => sample_contour(labels, image_index, cfg),
    }
}

/// Writes `image_index,i,j,role` rows for every sampled coordinate.
pub fn write_tuples_csv<W: Write>(mut out: W, batches: &[TupleBatch]) -> std::io::Result<()> {
    writeln!(out, "image_index,i,j,role")?;
    for b in batches {
        for (a, &(i, j)) in b.anchors.iter().enumerate() {
            writeln!(out, "{},{i},{j},anchor", b.image_index)?;
            for &(i, j) in &b.positives[a] {
                writeln!(out, "{},{i},{j},positive", b.image_index)?;
            }
            for &(i, j) in &b.negatives[a] {
                writeln!(out, "{},{i},{j},negative", b.image_index)?;
            }
        }
    }
    Ok(())
}
