//! The CLI's commands, working inside one output directory:
//!
//! ```text
//! out/config.json              resolved configuration of the last command
//! out/data/                    gen-data: volumes, masks, manifest.json
//! out/stage1/                  detector.ckpt, log.csv, localization.csv
//! out/stage2/                  model.ckpt, log.csv, validation.csv
//! out/eval/                    eval.csv, reports.json, regions/, predictions/
//! out/ablate.csv, out/sweep.csv
//! out/report/                  report.md, overlays/*.pgm
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::ablation::{ablation_points, run_grid, sweep_points, write_grid_csv, SweepParam, ABLATION_KEY, SWEEP_KEY};
use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{ExperimentConfig, RegionSource};
use super::dataset::{prepare_case, write_synthetic, PreparedData};
use super::infer::infer;
use super::overlay::save_overlay;
use super::stage1::{contains_mask, extract_region, localize, paste_clipped, train_stage1};
use super::stage2::{build_regions, evaluate_regions, train_stage2, CaseRegion};
use super::train::{write_log_csv, LogRow};
use crate::data::{Manifest, Mask, Volume};
use crate::error::{Error, Result};
use crate::metrics::{summarize_reports, write_eval_csv, MetricsReport, METRIC_COLUMNS};
use crate::network::ModelState;
use crate::sampling::SamplingConfig;

/// Commands bound to a configuration and an output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Stage1Summary {
    pub checkpoint: PathBuf,
    pub first_ce: f64,
    pub last_ce: f64,
    /// Fraction of test cases whose region holds the whole target.
    pub containment: f64,
}

#[derive(Debug, Clone)]
pub struct Stage2Summary {
    pub checkpoint: PathBuf,
    pub first_ce: f64,
    pub last_ce: f64,
    pub selected_iter: usize,
    pub mean_iter_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub csv: PathBuf,
    pub cases: usize,
    pub mean_dsc: f64,
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    ensure_parent(path)?;
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut out = create(path)?;
    f(&mut out).and_then(|()| out.flush()).map_err(|e| Error::io(path, e))
}

fn ce_span(log: &[LogRow]) -> (f64, f64) {
    (
        log.first().map_or(f64::NAN, |r| r.loss.ce),
        log.last().map_or(f64::NAN, |r| r.loss.ce),
    )
}

impl Workspace {
    /// Validates the configuration and records it in the output directory.
    pub fn new(config: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let out_dir = out_dir.into();
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        config.save(out_dir.join("config.json"))?;
        Ok(Self { config, out_dir })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    fn manifest_path(&self) -> PathBuf {
        self.config
            .dataset
            .manifest
            .clone()
            .unwrap_or_else(|| self.path("data/manifest.json"))
    }

    /// Writes the synthetic dataset; returns the manifest path.
    pub fn gen_data(&self) -> Result<PathBuf> {
        write_synthetic(&self.config.dataset, &self.path("data"))
    }

    pub fn load_data(&self) -> Result<PreparedData> {
        let path = self.manifest_path();
        if !path.exists() {
            return Err(Error::invalid(format!(
                "no dataset at {}; run gen-data or set dataset.manifest",
                path.display()
            )));
        }
        PreparedData::from_manifest(&Manifest::load(&path)?, &self.config.dataset)
    }

    fn detector(&self) -> Result<Option<ModelState<f32>>> {
        if self.config.region_source != RegionSource::Detector {
            return Ok(None);
        }
        let path = self.path("stage1/detector.ckpt");
        if !path.exists() {
            return Err(Error::invalid(format!(
                "region_source is detector but {} is missing; run train-stage1 first",
                path.display()
            )));
        }
        load_checkpoint(&path).map(Some)
    }

    fn regions(&self, data: &PreparedData, idx: &[usize], detector: Option<&ModelState<f32>>) -> Result<Vec<CaseRegion>> {
        build_regions(&data.subset(idx), &self.config, self.config.region_source, detector)
    }

    /// Trains the detector on the training split and reports region
    /// containment on the test split.
    pub fn train_stage1(&self) -> Result<Stage1Summary> {
        let data = self.load_data()?;
        let out = train_stage1(&data.subset(&data.split.train), &self.config)?;
        let checkpoint = self.path("stage1/detector.ckpt");
        ensure_parent(&checkpoint)?;
        save_checkpoint(&out.model, &checkpoint)?;
        write_with(&self.path("stage1/log.csv"), |w| write_log_csv(w, &out.log, &[]))?;

        let mut contained = 0;
        let test = data.subset(&data.split.test);
        write_with(&self.path("stage1/localization.csv"), |w| {
            writeln!(w, "case_id,predicted_z,predicted_y,predicted_x,final_z,final_y,final_x,offset_z,offset_y,offset_x,contained")?;
            for case in &test {
                let loc = localize(&out.model, case, &self.config).map_err(std::io::Error::other)?;
                let ok = contains_mask(&case.mask, loc.crop_offset, self.config.region_size);
                contained += usize::from(ok);
                let p = loc.predicted_centroid.map_or_else(
                    || vec!["none".to_string(); 3],
                    |p| p.iter().map(|v| format!("{v:.3}")).collect(),
                );
                let f: Vec<String> = loc.final_centroid.iter().map(|v| format!("{v:.3}")).collect();
                let o: Vec<String> = loc.crop_offset.iter().map(ToString::to_string).collect();
                writeln!(w, "{},{},{},{},{}", case.id, p.join(","), f.join(","), o.join(","), u8::from(ok))?;
            }
            Ok(())
        })?;
        let (first_ce, last_ce) = ce_span(&out.log);
        Ok(Stage1Summary {
            checkpoint,
            first_ce,
            last_ce,
            containment: contained as f64 / test.len().max(1) as f64,
        })
    }

    /// Trains the segmentation network on training-split regions, selecting
    /// the checkpoint on the validation split.
    pub fn train_stage2(&self) -> Result<Stage2Summary> {
        let data = self.load_data()?;
        let det = self.detector()?;
        let train_r = self.regions(&data, &data.split.train, det.as_ref())?;
        let val_r = self.regions(&data, &data.split.val, det.as_ref())?;
        let out = train_stage2(&train_r, &val_r, &self.config, &self.config.loss)?;
        let checkpoint = self.path("stage2/model.ckpt");
        ensure_parent(&checkpoint)?;
        save_checkpoint(&out.model, &checkpoint)?;
        write_with(&self.path("stage2/log.csv"), |w| write_log_csv(w, &out.log, &self.config.loss.strategies))?;
        write_with(&self.path("stage2/validation.csv"), |w| {
            writeln!(w, "iter,mean_dsc,selected")?;
            for &(it, d) in &out.validation {
                writeln!(w, "{it},{d:.6},{}", u8::from(it == out.selected_iter))?;
            }
            Ok(())
        })?;
        let (first_ce, last_ce) = ce_span(&out.log);
        Ok(Stage2Summary {
            checkpoint,
            first_ce,
            last_ce,
            selected_iter: out.selected_iter,
            mean_iter_seconds: out.iter_seconds.iter().sum::<f64>() / out.iter_seconds.len().max(1) as f64,
        })
    }

    fn model(&self) -> Result<ModelState<f32>> {
        let path = self.path("stage2/model.ckpt");
        if !path.exists() {
            return Err(Error::invalid(format!("{} is missing; run train-stage2 first", path.display())));
        }
        load_checkpoint(&path)
    }

    /// Segments one raw volume file and writes the mask on the volume's
    /// (resampled) grid.
    pub fn infer(&self, input: &Path, output: &Path) -> Result<Mask> {
        let volume = Volume::load(input)?;
        let case = prepare_case(&volume, &Mask::empty(volume.id.clone(), volume.dims), &self.config.dataset)?;
        let center = match self.config.region_source {
            RegionSource::Reference => case.reference_center,
            RegionSource::Detector => {
                let det = self.detector()?.ok_or_else(|| Error::invalid("no detector loaded"))?;
                localize(&det, &case, &self.config)?.final_centroid
            }
            RegionSource::GroundTruth => {
                return Err(Error::invalid("inference cannot center regions on ground truth"));
            }
        };
        let region = extract_region(&case, center, self.config.region_size)?;
        let pred = infer(&self.model()?, &region.volume)?;
        let in_body = paste_clipped(&pred, region.offset, case.volume.dims);
        let full = paste_clipped(&in_body, case.body_offset, case.source_dims);
        ensure_parent(output)?;
        full.save(output, case.volume.spacing)?;
        Ok(full)
    }

    /// Scores the test split and stores regions and predictions for
    /// `report`.
    pub fn eval(&self) -> Result<EvalSummary> {
        let data = self.load_data()?;
        let det = self.detector()?;
        let regions = self.regions(&data, &data.split.test, det.as_ref())?;
        let evals = evaluate_regions(&self.model()?, &regions)?;
        let rows: Vec<(String, MetricsReport)> = evals.iter().map(|e| (e.id.clone(), e.report)).collect();
        let csv = self.path("eval/eval.csv");
        write_with(&csv, |w| write_eval_csv(w, &rows))?;
        write_with(&self.path("eval/reports.json"), |w| {
            serde_json::to_writer_pretty(w, &rows).map_err(std::io::Error::other)
        })?;
        for (r, e) in regions.iter().zip(&evals) {
            let sp = r.region.volume.spacing;
            let vol = self.path(&format!("eval/regions/{}.vol.vvol", r.id));
            let pred = self.path(&format!("eval/predictions/{}.mask.vvol", r.id));
            ensure_parent(&vol)?;
            ensure_parent(&pred)?;
            r.region.volume.save(vol)?;
            r.region.mask.save(self.path(&format!("eval/regions/{}.gt.vvol", r.id)), sp)?;
            e.prediction.save(pred, sp)?;
        }
        let mean_dsc = rows.iter().map(|(_, r)| r.dsc).sum::<f64>() / rows.len().max(1) as f64;
        Ok(EvalSummary {
            csv,
            cases: rows.len(),
            mean_dsc,
        })
    }

    fn grid_regions(&self) -> Result<[Vec<CaseRegion>; 3]> {
        let data = self.load_data()?;
        let det = self.detector()?;
        let s = &data.split;
        Ok([
            self.regions(&data, &s.train, det.as_ref())?,
            self.regions(&data, &s.val, det.as_ref())?,
            self.regions(&data, &s.test, det.as_ref())?,
        ])
    }

    /// Trains and scores all ten configurations.
    pub fn ablate(&self) -> Result<PathBuf> {
        let [tr, va, te] = self.grid_regions()?;
        let rows = run_grid(&ablation_points(&self.config), &tr, &va, &te, &self.config);
        let path = self.path("ablate.csv");
        write_with(&path, |w| write_grid_csv(w, &ABLATION_KEY, &rows))?;
        Ok(path)
    }

    /// Trains and scores every value of each parameter in `params`.
    pub fn sweep(&self, params: &[SweepParam]) -> Result<PathBuf> {
        let points = sweep_points(&self.config, params)?;
        let [tr, va, te] = self.grid_regions()?;
        let rows = run_grid(&points, &tr, &va, &te, &self.config);
        let path = self.path("sweep.csv");
        write_with(&path, |w| write_grid_csv(w, &SWEEP_KEY, &rows))?;
        Ok(path)
    }

    /// Overlays of every evaluated case plus a markdown summary.
    pub fn report(&self) -> Result<PathBuf> {
        let reports_path = self.path("eval/reports.json");
        let text = std::fs::read_to_string(&reports_path).map_err(|e| Error::io(&reports_path, e))?;
        let rows: Vec<(String, MetricsReport)> = serde_json::from_str(&text)?;
        let mut overlays = Vec::with_capacity(rows.len());
        for (id, _) in &rows {
            let volume = Volume::load(self.path(&format!("eval/regions/{id}.vol.vvol")))?;
            let gt = Mask::load(self.path(&format!("eval/regions/{id}.gt.vvol")))?;
            let pred = Mask::load(self.path(&format!("eval/predictions/{id}.mask.vvol")))?;
            let name = format!("{id}.pgm");
            let path = self.path(&format!("report/overlays/{name}"));
            ensure_parent(&path)?;
            let z = save_overlay(&path, &volume, &gt, &pred)?;
            overlays.push((id.clone(), name, z));
        }
        let sums = summarize_reports(&rows.iter().map(|(_, r)| *r).collect::<Vec<_>>());
        let log = self.path("stage2/log.csv");
        let path = self.path("report/report.md");
        write_with(&path, |w| {
            writeln!(w, "# Segmentation report\n")?;
            writeln!(w, "Profile: {:?}. Test cases: {}.\n", self.config.profile, rows.len())?;
            let samplers: Vec<&str> = self.config.loss.strategies.iter().map(|s: &SamplingConfig| s.strategy.name()).collect();
            writeln!(
                w,
                "Samplers: {}. lambda = {}, sigma = {}, pair term: {}.\n",
                if samplers.is_empty() { "none".to_string() } else { samplers.join(", ") },
                self.config.loss.lambda,
                self.config.loss.sigma,
                self.config.loss.use_pair_term
            )?;
            writeln!(w, "| metric | mean | std | median |\n|---|---|---|---|")?;
            for (name, s) in METRIC_COLUMNS.iter().zip(&sums) {
                match s {
                    Some(s) => writeln!(w, "| {name} | {:.4} | {:.4} | {:.4} |", s.mean, s.std, s.median)?,
                    None => writeln!(w, "| {name} | undefined | | |")?,
                }
            }
            if log.exists() {
                writeln!(w, "\nTraining log: `{}`.", log.display())?;
            }
            writeln!(w, "\n## Overlays\n")?;
            writeln!(w, "Ground-truth contour in white (255), prediction in black (0), shared pixels mid-gray (128).\n")?;
            for (id, name, z) in &overlays {
                writeln!(w, "- {id}: `overlays/{name}` (slice {z})")?;
            }
            Ok(())
        })?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;
    use crate::pipeline::config::DatasetConfig;

    fn tiny_workspace(dir: &Path) -> Workspace {
        let mut cfg = ExperimentConfig::desk().with_seed(5);
        cfg.dataset = DatasetConfig {
            num_cases: 5,
            split: [0.6, 0.2, 0.2],
            ..cfg.dataset
        };
        cfg.network = NetworkSpec::default().with_base_width(2);
        cfg.train.max_iters = 2;
        cfg.train.batch_size = 2;
        cfg.train.patches_per_image = 4;
        cfg.train.val_interval = 1;
        cfg.stage1.detector = NetworkSpec::detection().with_base_width(2);
        cfg.stage1.train.max_iters = 2;
        cfg.stage1.train.batch_size = 2;
        cfg.stage1.train.patches_per_image = 4;
        Workspace::new(cfg, dir).unwrap()
    }

    #[test]
    fn commands_chain_through_the_output_directory() {
        let dir = tempfile::tempdir().unwrap();
        let ws = tiny_workspace(dir.path());
        assert!(ws.train_stage1().is_err());
        ws.gen_data().unwrap();
        assert!(ws.train_stage2().is_err(), "detector regions need stage 1");
        let s1 = ws.train_stage1().unwrap();
        assert!(s1.checkpoint.exists());
        let s2 = ws.train_stage2().unwrap();
        assert!(s2.checkpoint.exists());
        let v = std::fs::read_to_string(ws.path("stage2/validation.csv")).unwrap();
        assert_eq!(v.lines().count(), 3);
        let e = ws.eval().unwrap();
        assert_eq!(e.cases, 1);
        let report = ws.report().unwrap();
        assert!(std::fs::read_to_string(report).unwrap().contains("| dsc |"));
        let out = ws.path("pred.vvol");
        let m = ws.infer(&ws.path("data/case000.vol.vvol"), &out).unwrap();
        assert_eq!(m.dims, [64, 96, 96]);
        assert_eq!(Mask::load(&out).unwrap().data, m.data);
        assert!(ws.path("config.json").exists());
    }
}
