//! Configuration grid (sampler/loss combinations) and hyperparameter sweeps.

use std::io::Write;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::stage2::{evaluate_regions, train_stage2, CaseRegion};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::{summarize_reports, Summary, METRIC_COLUMNS};
use crate::sampling::{SamplingConfig, Strategy};

/// One network configuration: which samplers run and which loss terms are
/// active. Cross-entropy is always on; the triplet term is on whenever a
/// sampler runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub name: &'static str,
    pub random: bool,
    pub hard: bool,
    pub contour: bool,
    pub pair: bool,
    pub sep: bool,
}

const fn variant(name: &'static str, random: bool, hard: bool, contour: bool, pair: bool, sep: bool) -> Variant {
    Variant {
        name,
        random,
        hard,
        contour,
        pair,
        sep,
    }
}

/// The ten configurations, baseline first.
pub const VARIANTS: [Variant; 10] = [
    variant("UNet", false, false, false, false, false),
    variant("MetricUNet-R-Sep", true, false, false, false, true),
    variant("MetricUNet-R", true, false, false, false, false),
    variant("MetricUNet-H", false, true, false, false, false),
    variant("MetricUNet-C", false, false, true, false, false),
    variant("MetricUNet-HR", true, true, false, false, false),
    variant("MetricUNet-HC", false, true, true, false, false),
    variant("MetricUNet-HP", false, true, false, true, false),
    variant("MetricUNet-HRP", true, true, false, true, false),
    variant("MetricUNet-HCP", false, true, true, true, false),
];

impl Variant {
    pub fn by_name(name: &str) -> Result<Self> {
        VARIANTS
            .into_iter()
            .find(|v| v.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown configuration {name:?}")))
    }

    pub fn cross_entropy(&self) -> bool {
        true
    }

    pub fn triplet(&self) -> bool {
        self.random || self.hard || self.contour
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        [(self.random, Strategy::Random), (self.hard, Strategy::FocalHard), (self.contour, Strategy::Contour)]
            .into_iter()
            .filter_map(|(on, s)| on.then_some(s))
            .collect()
    }

    /// `base` with this variant's samplers and loss switches. Sampler
    /// settings (k, m, tau, seed) come from the first matching entry of
    /// `base.strategies`, else from `template`.
    pub fn loss(&self, base: &LossConfig, template: &SamplingConfig) -> LossConfig {
        let strategies = self
            .strategies()
            .into_iter()
            .map(|s| {
                let src = base.strategies.iter().find(|c| c.strategy == s).unwrap_or(template);
                SamplingConfig {
                    strategy: s,
                    ..src.clone()
                }
            })
            .collect();
        LossConfig {
            strategies,
            use_pair_term: self.pair,
            sep_mode: self.sep,
            ..base.clone()
        }
    }
}

/// Settings of one grid point: what to train and where it came from.
#[derive(Debug, Clone)]
pub struct GridPoint {
    /// Leading CSV cells identifying the point.
    pub key: Vec<String>,
    pub loss: LossConfig,
}

/// Outcome of training and evaluating one grid point.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub key: Vec<String>,
    /// Per-metric summaries over the test regions, or the failure message.
    pub result: std::result::Result<[Option<Summary>; 7], String>,
}

/// Trains each point from the same initial weights and data order and
/// evaluates the test regions. A failing point is recorded and the run
/// moves on.
pub fn run_grid(
    points: &[GridPoint],
    train_regions: &[CaseRegion],
    val_regions: &[CaseRegion],
    test_regions: &[CaseRegion],
    cfg: &ExperimentConfig,
) -> Vec<GridRow> {
    points
        .iter()
        .map(|p| {
            let result = train_stage2(train_regions, val_regions, cfg, &p.loss)
                .and_then(|out| evaluate_regions(&out.model, test_regions))
                .map(|evals| summarize_reports(&evals.iter().map(|e| e.report).collect::<Vec<_>>()))
                .map_err(|e| e.to_string());
            GridRow {
                key: p.key.clone(),
                result,
            }
        })
        .collect()
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

/// The ten variants as grid points.
pub fn ablation_points(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let template = SamplingConfig::default();
    VARIANTS
        .iter()
        .map(|v| GridPoint {
            key: vec![
                v.name.to_string(),
                flag(v.random),
                flag(v.hard),
                flag(v.contour),
                flag(v.cross_entropy()),
                flag(v.pair),
                flag(v.triplet()),
                flag(v.sep),
            ],
            loss: v.loss(&cfg.loss, &template),
        })
        .collect()
}

pub const ABLATION_KEY: [&str; 8] = [
    "config",
    "random",
    "hard_negative",
    "contour_aware",
    "cross_entropy",
    "positive_pair",
    "triplet",
    "sep",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Lambda,
    Sigma,
    K,
}

impl SweepParam {
    pub const ALL: [SweepParam; 3] = [SweepParam::Lambda, SweepParam::Sigma, SweepParam::K];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Sigma => "sigma",
            SweepParam::K => "k",
        }
    }

    pub fn values(self) -> &'static [f64] {
        match self {
            SweepParam::Lambda => &[0.1, 0.01, 0.001],
            SweepParam::Sigma => &[0.1, 0.3, 0.5, 0.7, 1.0],
            SweepParam::K => &[20.0, 50.0, 100.0, 200.0],
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown sweep parameter {s:?} (lambda, sigma or k)")))
    }
}

/// Grid points for `params`, each varying one setting of `cfg.loss`.
pub fn sweep_points(cfg: &ExperimentConfig, params: &[SweepParam]) -> Result<Vec<GridPoint>> {
    if cfg.loss.strategies.is_empty() {
        return Err(Error::invalid("sweeps need at least one sampler in loss.strategies"));
    }
    let mut out = Vec::new();
    for &p in params {
        for &v in p.values() {
            let mut loss = cfg.loss.clone();
            match p {
                SweepParam::Lambda => loss.lambda = v,
                SweepParam::Sigma => loss.sigma = v,
                SweepParam::K => loss.strategies.iter_mut().for_each(|s| s.k = v as usize),
            }
            out.push(GridPoint {
                key: vec![p.name().to_string(), v.to_string()],
                loss,
            });
        }
    }
    Ok(out)
}

pub const SWEEP_KEY: [&str; 2] = ["param", "value"];

/// Key columns, `status`, then mean, std and median of every metric.
/// Undefined summaries are written as `undefined`.
pub fn write_grid_csv<W: Write>(mut out: W, key: &[&str], rows: &[GridRow]) -> std::io::Result<()> {
    let mut header: Vec<String> = key.iter().map(ToString::to_string).collect();
    header.push("status".into());
    for m in METRIC_COLUMNS {
        for s in ["mean", "std", "median"] {
            header.push(format!("{m}_{s}"));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        let mut cells = r.key.clone();
        match &r.result {
            Ok(summaries) => {
                cells.push("ok".into());
                for s in summaries {
                    match s {
                        Some(s) => cells.extend([s.mean, s.std, s.median].map(|v| format!("{v:.6}"))),
                        None => cells.extend(["undefined"; 3].map(String::from)),
                    }
                }
            }
            Err(e) => {
                cells.push(format!("error: {}", e.replace([',', '\n'], ";")));
                cells.extend(std::iter::repeat_n(String::new(), 3 * METRIC_COLUMNS.len()));
            }
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_matrix() {
        // name, random, hard, contour, pair, sep
        let expected = [
            ("UNet", [0, 0, 0, 0, 0]),
            ("MetricUNet-R-Sep", [1, 0, 0, 0, 1]),
            ("MetricUNet-R", [1, 0, 0, 0, 0]),
            ("MetricUNet-H", [0, 1, 0, 0, 0]),
            ("MetricUNet-C", [0, 0, 1, 0, 0]),
            ("MetricUNet-HR", [1, 1, 0, 0, 0]),
            ("MetricUNet-HC", [0, 1, 1, 0, 0]),
            ("MetricUNet-HP", [0, 1, 0, 1, 0]),
            ("MetricUNet-HRP", [1, 1, 0, 1, 0]),
            ("MetricUNet-HCP", [0, 1, 1, 1, 0]),
        ];
        for (v, (name, f)) in VARIANTS.iter().zip(expected) {
            assert_eq!(v.name, name);
            assert_eq!([v.random, v.hard, v.contour, v.pair, v.sep].map(u8::from), f.map(|x| x as u8));
            assert!(v.cross_entropy());
            assert_eq!(v.triplet(), name != "UNet");
        }
    }

    #[test]
    fn variant_losses() {
        let base = LossConfig {
            strategies: vec![SamplingConfig {
                k: 7,
                ..SamplingConfig::new(Strategy::Contour)
            }],
            lambda: 0.05,
            ..LossConfig::default()
        };
        let t = SamplingConfig::default();
        let hcp = Variant::by_name("MetricUNet-HCP").unwrap().loss(&base, &t);
        let kinds: Vec<Strategy> = hcp.strategies.iter().map(|s| s.strategy).collect();
        assert_eq!(kinds, vec![Strategy::FocalHard, Strategy::Contour]);
        assert_eq!(hcp.strategies[1].k, 7);
        assert_eq!(hcp.strategies[0].k, 20);
        assert!(hcp.use_pair_term && !hcp.sep_mode);
        assert_eq!(hcp.lambda, 0.05);
        let unet = Variant::by_name("UNet").unwrap().loss(&base, &t);
        assert!(unet.strategies.is_empty() && !unet.use_pair_term);
        assert!(Variant::by_name("MetricUNet-R-Sep").unwrap().loss(&base, &t).sep_mode);
        assert!(Variant::by_name("UNet++").is_err());
    }

    #[test]
    fn sweep_grid_sizes() {
        let cfg = ExperimentConfig::desk();
        let pts = sweep_points(&cfg, &SweepParam::ALL).unwrap();
        assert_eq!(pts.len(), 12);
        let k: Vec<usize> = pts[8..].iter().map(|p| p.loss.strategies[0].k).collect();
        assert_eq!(k, vec![20, 50, 100, 200]);
        assert_eq!(pts[0].key, vec!["lambda", "0.1"]);
        assert_eq!(pts[4].loss.sigma, 0.3);
        let mut bare = cfg.clone();
        bare.loss.strategies.clear();
        assert!(sweep_points(&bare, &[SweepParam::K]).is_err());
    }

    #[test]
    fn csv_rows_and_failures() {
        let s = Summary {
            mean: 0.5,
            std: 0.1,
            median: 0.5,
            count: 2,
        };
        let rows = [
            GridRow {
                key: vec!["a".into()],
                result: Ok([Some(s), None, None, None, None, None, None]),
            },
            GridRow {
                key: vec!["b".into()],
                result: Err("bad, very bad".into()),
            },
        ];
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &["config"], &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let width = lines[0].split(',').count();
        assert_eq!(width, 2 + 21);
        assert!(lines[1].starts_with("a,ok,0.500000,0.100000,0.500000,undefined"));
        assert!(lines[2].starts_with("b,error: bad; very bad,"));
        assert!(lines.iter().all(|l| l.split(',').count() == width));
    }
}
