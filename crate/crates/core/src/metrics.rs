//! Overlap and surface-distance metrics for binary volumes.
//!
//! Surfaces are foreground voxels with at least one background face
//! neighbour (6-connectivity; outside the grid counts as background).
//! Distances are Euclidean between voxel centers, scaled by the spacing, and
//! are computed with an exact separable squared distance transform.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::volume::{index, Dims, Mask};
use crate::error::{Error, Result};

/// Boundary voxels of a mask with the spacing they are measured in.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSet {
    pub points: Vec<[usize; 3]>,
    pub spacing: [f64; 3],
}

pub fn surface(mask: &Mask, spacing: [f64; 3]) -> SurfaceSet {
    let d = mask.dims;
    let mut points = Vec::new();
    for z in 0..d[0] {
        for y in 0..d[1] {
            for x in 0..d[2] {
                if mask.at(z, y, x) == 0 {
                    continue;
                }
                let p = [z, y, x];
                let exposed = (0..3).any(|a| {
                    if p[a] == 0 || p[a] + 1 == d[a] {
                        return true;
                    }
                    let mut lo = p;
                    let mut hi = p;
                    lo[a] -= 1;
                    hi[a] += 1;
                    mask.at(lo[0], lo[1], lo[2]) == 0 || mask.at(hi[0], hi[1], hi[2]) == 0
                });
                if exposed {
                    points.push(p);
                }
            }
        }
    }
    SurfaceSet { points, spacing }
}

fn same_shape(gt: &Mask, seg: &Mask) -> Result<()> {
    if gt.dims != seg.dims {
        return Err(Error::invalid(format!(
            "mask shapes differ: {:?} vs {:?}",
            gt.dims, seg.dims
        )));
    }
    Ok(())
}

fn counts(gt: &Mask, seg: &Mask) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut ng = 0;
    let mut ns = 0;
    for (&g, &s) in gt.data.iter().zip(&seg.data) {
        ng += usize::from(g);
        ns += usize::from(s);
        inter += usize::from(g & s);
    }
    (ng, ns, inter)
}

/// `2 |gt & seg| / (|gt| + |seg|)`; 1 when both masks are empty.
pub fn dsc(gt: &Mask, seg: &Mask) -> Result<f64> {
    same_shape(gt, seg)?;
    let (ng, ns, inter) = counts(gt, seg);
    Ok(if ng + ns == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (ng + ns) as f64
    })
}

pub fn ppv(gt: &Mask, seg: &Mask) -> Result<f64> {
    same_shape(gt, seg)?;
    let (_, ns, inter) = counts(gt, seg);
    if ns == 0 {
        return Err(Error::UndefinedMetric {
            metric: "ppv",
            reason: "segmentation is empty",
        });
    }
    Ok(inter as f64 / ns as f64)
}

pub fn sen(gt: &Mask, seg: &Mask) -> Result<f64> {
    same_shape(gt, seg)?;
    let (ng, _, inter) = counts(gt, seg);
    if ng == 0 {
        return Err(Error::UndefinedMetric {
            metric: "sen",
            reason: "ground truth is empty",
        });
    }
    Ok(inter as f64 / ng as f64)
}

pub fn ppv_sen(gt: &Mask, seg: &Mask) -> Result<(f64, f64)> {
    Ok((ppv(gt, seg)?, sen(gt, seg)?))
}

/// Absolute relative volume difference in percent.
pub fn arvd(gt: &Mask, seg: &Mask) -> Result<f64> {
    same_shape(gt, seg)?;
    let (ng, ns, _) = counts(gt, seg);
    if ng == 0 {
        return Err(Error::UndefinedMetric {
            metric: "arvd",
            reason: "ground truth is empty",
        });
    }
    Ok(100.0 * (ns as f64 - ng as f64).abs() / ng as f64)
}

/// Squared distance transform along one line: `out[q] = min_p (q-p)^2 s^2 + f[p]`.
fn edt_line(f: &[f64], s: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let pos = |q: usize| q as f64 * s;
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let mut boundary = f64::NEG_INFINITY;
        while let Some(&p) = v.last() {
            let b = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if b <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                boundary = b;
                break;
            }
        }
        v.push(q);
        z.push(boundary);
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = pos(q);
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let d = x - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest site.
pub fn squared_distance_transform(sites: &[[usize; 3]], dims: Dims, spacing: [f64; 3]) -> Vec<f64> {
    let mut g = vec![f64::INFINITY; dims.iter().product()];
    for p in sites {
        g[index(dims, p[0], p[1], p[2])] = 0.0;
    }
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in (0..3).rev() {
        let n = dims[axis];
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for a in 0..dims[o1] {
            for b in 0..dims[o2] {
                let at = |t: usize| {
                    let mut p = [0; 3];
                    p[axis] = t;
                    p[o1] = a;
                    p[o2] = b;
                    index(dims, p[0], p[1], p[2])
                };
                for (t, l) in line.iter_mut().enumerate() {
                    *l = g[at(t)];
                }
                edt_line(&line, spacing[axis], &mut out, &mut v, &mut z);
                for (t, &o) in out.iter().enumerate() {
                    g[at(t)] = o;
                }
            }
        }
    }
    g
}

/// Distances (mm) from each point of `from` to the nearest point of `to`.
fn directed(from: &SurfaceSet, to: &SurfaceSet, dims: Dims) -> Vec<f64> {
    let dt = squared_distance_transform(&to.points, dims, to.spacing);
    from.points
        .iter()
        .map(|p| dt[index(dims, p[0], p[1], p[2])].sqrt())
        .collect()
}

/// Value at nearest rank `ceil(q * n)` of the ascending order.
pub fn nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Directed surface distances in both directions (gt to seg, seg to gt).
pub fn surface_distances(gt: &Mask, seg: &Mask, spacing: [f64; 3]) -> Result<(Vec<f64>, Vec<f64>)> {
    same_shape(gt, seg)?;
    let sg = surface(gt, spacing);
    let ss = surface(seg, spacing);
    if sg.points.is_empty() || ss.points.is_empty() {
        return Err(Error::UndefinedMetric {
            metric: "surface distance",
            reason: "a mask is empty",
        });
    }
    Ok((directed(&sg, &ss, gt.dims), directed(&ss, &sg, gt.dims)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Average surface distance (mm): the mean of the two directed means.
pub fn asd(gt: &Mask, seg: &Mask, spacing: [f64; 3]) -> Result<f64> {
    let (a, b) = surface_distances(gt, seg, spacing)?;
    Ok(0.5 * (mean(&a) + mean(&b)))
}

/// Hausdorff distance and its 95th-percentile variant (mm).
pub fn hd_hd95(gt: &Mask, seg: &Mask, spacing: [f64; 3]) -> Result<(f64, f64)> {
    let (a, b) = surface_distances(gt, seg, spacing)?;
    Ok(hd_pair(&a, &b))
}

fn hd_pair(a: &[f64], b: &[f64]) -> (f64, f64) {
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let hd = max(a).max(max(b));
    let p95 = nearest_rank(a, 0.95)
        .unwrap_or(0.0)
        .max(nearest_rank(b, 0.95).unwrap_or(0.0));
    (hd, p95)
}

/// All metrics for one case. Undefined metrics are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dsc: f64,
    pub asd_mm: Option<f64>,
    pub sen: Option<f64>,
    pub ppv: Option<f64>,
    pub hd_mm: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub arvd_percent: Option<f64>,
}

pub fn evaluate(gt: &Mask, seg: &Mask, spacing: [f64; 3]) -> Result<MetricsReport> {
    same_shape(gt, seg)?;
    let (asd_mm, hd_mm, hd95_mm) = match surface_distances(gt, seg, spacing) {
        Ok((a, b)) => {
            let (hd, hd95) = hd_pair(&a, &b);
            (Some(0.5 * (mean(&a) + mean(&b))), Some(hd), Some(hd95))
        }
        Err(Error::UndefinedMetric { .. }) => (None, None, None),
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        dsc: dsc(gt, seg)?,
        asd_mm,
        sen: sen(gt, seg).ok(),
        ppv: ppv(gt, seg).ok(),
        hd_mm,
        hd95_mm,
        arvd_percent: arvd(gt, seg).ok(),
    })
}

/// Column names and accessors in report order.
pub const METRIC_COLUMNS: [&str; 7] = ["dsc", "asd_mm", "hd_mm", "hd95_mm", "sen", "ppv", "arvd"];

impl MetricsReport {
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            Some(self.dsc),
            self.asd_mm,
            self.hd_mm,
            self.hd95_mm,
            self.sen,
            self.ppv,
            self.arvd_percent,
        ]
    }
}

/// Mean, sample standard deviation and median of the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let m = mean(values);
    let std = if n > 1 {
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    Some(Summary {
        mean: m,
        std,
        median,
        count: n,
    })
}

/// One summary per metric column.
pub fn summarize_reports(reports: &[MetricsReport]) -> [Option<Summary>; 7] {
    std::array::from_fn(|c| {
        let v: Vec<f64> = reports.iter().filter_map(|r| r.values()[c]).collect();
        summarize(&v)
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

/// Per-case rows followed by a `mean±std` row and a `median` row.
pub fn write_eval_csv<W: Write>(mut out: W, rows: &[(String, MetricsReport)]) -> std::io::Result<()> {
    writeln!(out, "case_id,{}", METRIC_COLUMNS.join(","))?;
    for (id, r) in rows {
        let cells: Vec<String> = r.values().iter().map(|v| cell(*v)).collect();
        writeln!(out, "{id},{}", cells.join(","))?;
    }
    let reports: Vec<MetricsReport> = rows.iter().map(|(_, r)| *r).collect();
    let sums = summarize_reports(&reports);
    let fmt = |f: &dyn Fn(&Summary) -> String| -> String {
        sums.iter()
            .map(|s| s.as_ref().map_or_else(|| "undefined".to_string(), f))
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(out, "mean±std,{}", fmt(&|s| format!("{:.6}±{:.6}", s.mean, s.std)))?;
    writeln!(out, "median,{}", fmt(&|s| format!("{:.6}", s.median)))?;
    Ok(())
}

/// Paired t statistic and two-sided p-value for `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("paired t-test needs two equal-length samples of size >= 2"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = summarize(&d).expect("non-empty");
    if s.std == 0.0 {
        let p = if s.mean == 0.0 { 1.0 } else { 0.0 };
        return Ok((s.mean.signum() * f64::INFINITY, p));
    }
    let n = d.len() as f64;
    let t = s.mean / (s.std / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((t, 2.0 * (1.0 - dist.cdf(t.abs()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cube(dims: Dims, lo: [usize; 3], hi: [usize; 3]) -> Mask {
        let mut m = Mask::empty("c", dims);
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    m.data[index(dims, z, y, x)] = 1;
                }
            }
        }
        m
    }

    /// All-pairs surface distances written without the transform.
    fn brute(gt: &Mask, seg: &Mask, sp: [f64; 3]) -> (Vec<f64>, Vec<f64>) {
        let sg = surface(gt, sp).points;
        let ss = surface(seg, sp).points;
        let d = |a: &[usize; 3], b: &[usize; 3]| {
            (0..3)
                .map(|k| ((a[k] as f64 - b[k] as f64) * sp[k]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let dir = |from: &[[usize; 3]], to: &[[usize; 3]]| -> Vec<f64> {
            from.iter()
                .map(|a| to.iter().map(|b| d(a, b)).fold(f64::INFINITY, f64::min))
                .collect()
        };
        (dir(&sg, &ss), dir(&ss, &sg))
    }

    /// Surface by explicit neighbour offsets.
    fn surface_oracle(m: &Mask) -> Vec<[usize; 3]> {
        let d = m.dims.map(|v| v as i64);
        let mut out = Vec::new();
        for z in 0..d[0] {
            for y in 0..d[1] {
                for x in 0..d[2] {
                    if m.at(z as usize, y as usize, x as usize) == 0 {
                        continue;
                    }
                    let bg = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                        .iter()
                        .any(|&(a, b, c)| {
                            let (q0, q1, q2) = (z + a, y + b, x + c);
                            q0 < 0 || q1 < 0 || q2 < 0 || q0 >= d[0] || q1 >= d[1] || q2 >= d[2]
                                || m.at(q0 as usize, q1 as usize, q2 as usize) == 0
                        });
                    if bg {
                        out.push([z as usize, y as usize, x as usize]);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn overlap_arithmetic() {
        let dims = [1, 10, 20];
        let gt = cube(dims, [0, 0, 0], [1, 10, 10]); // 100
        let seg = cube(dims, [0, 0, 2], [1, 10, 12]); // 100, overlap 80
        assert!((dsc(&gt, &seg).unwrap() - 0.8).abs() < 1e-15);
        let gt = cube(dims, [0, 0, 0], [1, 10, 16]); // 160
        let seg = cube(dims, [0, 0, 8], [1, 10, 18]); // 100, overlap 80
        let (p, s) = ppv_sen(&gt, &seg).unwrap();
        assert!((p - 0.8).abs() < 1e-15 && (s - 0.5).abs() < 1e-15);
        assert_eq!(dsc(&seg, &seg).unwrap(), 1.0);
        let far = cube(dims, [0, 0, 15], [1, 10, 20]);
        assert_eq!(dsc(&cube(dims, [0, 0, 0], [1, 10, 10]), &far).unwrap(), 0.0);
        let e = Mask::empty("e", dims);
        assert_eq!(dsc(&e, &e).unwrap(), 1.0);
        assert_eq!(dsc(&e, &seg).unwrap(), 0.0);
        assert!(dsc(&e, &Mask::empty("x", [1, 1, 1])).is_err());
    }

    #[test]
    fn subset_and_volume_difference() {
        let dims = [4, 4, 10];
        let gt = cube(dims, [0, 0, 0], [4, 4, 10]);
        let seg = cube(dims, [0, 0, 0], [4, 4, 5]);
        let (p, s) = ppv_sen(&gt, &seg).unwrap();
        assert_eq!(p, 1.0);
        assert!(s < 1.0);
        assert_eq!(arvd(&gt, &gt).unwrap(), 0.0);
        let g10 = cube([1, 1, 20], [0, 0, 0], [1, 1, 10]);
        let s11 = cube([1, 1, 20], [0, 0, 0], [1, 1, 11]);
        assert!((arvd(&g10, &s11).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn empty_masks_are_undefined() {
        let dims = [3, 3, 3];
        let e = Mask::empty("e", dims);
        let m = cube(dims, [1, 1, 1], [2, 2, 2]);
        assert!(matches!(asd(&e, &m, [1.0; 3]), Err(Error::UndefinedMetric { .. })));
        assert!(matches!(hd_hd95(&m, &e, [1.0; 3]), Err(Error::UndefinedMetric { .. })));
        assert!(matches!(ppv(&m, &e), Err(Error::UndefinedMetric { .. })));
        assert!(matches!(sen(&e, &m), Err(Error::UndefinedMetric { .. })));
        assert!(matches!(arvd(&e, &m), Err(Error::UndefinedMetric { .. })));
        let r = evaluate(&m, &e, [1.0; 3]).unwrap();
        assert_eq!(r.dsc, 0.0);
        assert!(r.asd_mm.is_none() && r.ppv.is_none() && r.hd95_mm.is_none());
        assert_eq!(r.sen, Some(0.0));
    }

    #[test]
    fn shifted_cube_matches_oracle() {
        let dims = [8, 8, 8];
        let gt = cube(dims, [2, 2, 2], [5, 5, 5]);
        let seg = cube(dims, [2, 2, 3], [5, 5, 6]);
        assert_eq!(asd(&gt, &gt, [1.0; 3]).unwrap(), 0.0);
        let (a, b) = brute(&gt, &seg, [1.0; 3]);
        let want = 0.5 * (mean(&a) + mean(&b));
        assert!((asd(&gt, &seg, [1.0; 3]).unwrap() - want).abs() < 1e-12);
        let doubled = asd(&gt, &seg, [2.0; 3]).unwrap();
        assert!((doubled - 2.0 * want).abs() < 1e-12);
    }

    #[test]
    fn spike_moves_hd_not_hd95() {
        let dims = [12, 12, 40];
        let gt = cube(dims, [2, 2, 2], [10, 10, 10]);
        let mut seg = gt.clone();
        for x in 10..30 {
            seg.data[index(dims, 6, 6, x)] = 1;
        }
        let (hd, hd95) = hd_hd95(&gt, &seg, [1.0; 3]).unwrap();
        let (a, b) = brute(&gt, &seg, [1.0; 3]);
        let bh = a.iter().chain(&b).copied().fold(0.0, f64::max);
        assert!((hd - bh).abs() < 1e-12);
        assert!(hd >= 19.0);
        assert!(hd95 < hd);
        assert_eq!(hd_hd95(&gt, &gt, [1.0; 3]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn nearest_rank_percentile() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.95), Some(19.0));
        assert_eq!(nearest_rank(&v, 1.0), Some(20.0));
        assert_eq!(nearest_rank(&[3.0], 0.95), Some(3.0));
        assert_eq!(nearest_rank(&[], 0.95), None);
    }

    #[test]
    fn summary_and_csv() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let dims = [4, 4, 4];
        let gt = cube(dims, [1, 1, 1], [3, 3, 3]);
        let rows = vec![
            ("a".to_string(), evaluate(&gt, &gt, [1.0; 3]).unwrap()),
            ("b".to_string(), evaluate(&gt, &Mask::empty("e", dims), [1.0; 3]).unwrap()),
        ];
        let mut buf = Vec::new();
        write_eval_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "case_id,dsc,asd_mm,hd_mm,hd95_mm,sen,ppv,arvd");
        assert!(lines[2].contains("undefined"));
        assert!(lines[3].starts_with("mean±std,0.500000±0.707107,0.000000±0.000000"));
        assert!(lines[4].starts_with("median,0.500000"));
    }

    #[test]
    fn t_test() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.1, 1.9, 3.2, 3.8, 5.1];
        let (t, p) = paired_t_test(&a, &b).unwrap();
        assert!(t.abs() < 1.0 && p > 0.5 && p <= 1.0);
        let c = [2.0, 3.1, 3.9, 5.2, 6.0];
        let (_, p) = paired_t_test(&c, &a).unwrap();
        assert!(p < 0.01);
        assert!(paired_t_test(&a, &b[..3]).is_err());
    }

    fn mask_strategy(dims: Dims) -> impl Strategy<Value = Mask> {
        proptest::collection::vec(prop_oneof![2 => Just(0u8), 1 => Just(1u8)], dims.iter().product::<usize>())
            .prop_map(move |d| Mask::new("m", dims, d).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn surfaces_and_distances_match_brute_force(
            gt in mask_strategy([5, 6, 7]),
            seg in mask_strategy([5, 6, 7]),
            sp in proptest::array::uniform3(0.3f64..3.0),
        ) {
            prop_assert_eq!(surface(&gt, sp).points, surface_oracle(&gt));
            if gt.is_empty() || seg.is_empty() {
                return Ok(());
            }
            let (a, b) = brute(&gt, &seg, sp);
            let (ea, eb) = surface_distances(&gt, &seg, sp).unwrap();
            for (x, y) in a.iter().zip(&ea).chain(b.iter().zip(&eb)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let (hd, hd95) = hd_hd95(&gt, &seg, sp).unwrap();
            prop_assert!(hd95 <= hd);
            // symmetry
            prop_assert!((asd(&gt, &seg, sp).unwrap() - asd(&seg, &gt, sp).unwrap()).abs() < 1e-12);
            prop_assert_eq!(dsc(&gt, &seg).unwrap(), dsc(&seg, &gt).unwrap());
            prop_assert_eq!(ppv(&gt, &seg).unwrap(), sen(&seg, &gt).unwrap());
        }

        #[test]
        fn translation_invariance(gt in mask_strategy([4, 4, 4]), seg in mask_strategy([4, 4, 4]), shift in 0usize..3) {
            prop_assume!(!gt.is_empty() && !seg.is_empty());
            let dims = [4 + shift, 6, 4 + shift];
            // embed both masks away from the border so surfaces do not change
            let embed = |m: &Mask, off: usize| {
                let mut out = Mask::empty("e", [dims[0] + 2, dims[1] + 2, dims[2] + 2]);
                for z in 0..4 { for y in 0..4 { for x in 0..4 {
                    out.data[index(out.dims, z + off + 1, y + 1, x + off + 1)] = m.at(z, y, x);
                }}}
                out
            };
            let sp = [1.0, 0.5, 2.0];
            let r0 = evaluate(&embed(&gt, 0), &embed(&seg, 0), sp).unwrap();
            let r1 = evaluate(&embed(&gt, shift), &embed(&seg, shift), sp).unwrap();
            for (a, b) in r0.values().iter().zip(r1.values()) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                    (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
                }
            }
        }
    }
}
