//! The ten-configuration grid and a sigma sweep on a tiny setup, written as
//! CSV into a scratch workspace.

use metricunet::network::NetworkSpec;
use metricunet::pipeline::{ExperimentConfig, RegionSource, SweepParam, Workspace, VARIANTS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::desk().with_seed(3);
    cfg.dataset.num_cases = 8;
    cfg.network = NetworkSpec::default().with_base_width(4);
    cfg.train.max_iters = 40;
    cfg.train.batch_size = 4;
    cfg.train.patches_per_image = 40;
    cfg.train.val_interval = 20;
    cfg.region_source = RegionSource::Reference;

    for v in VARIANTS {
        println!("{:<18} samplers {:?}, pair term {}, separated {}", v.name, v.strategies(), v.pair, v.sep);
    }
    let ws = Workspace::new(cfg, std::env::temp_dir().join("metricunet-grid"))?;
    ws.gen_data()?;
    let ablate = ws.ablate()?;
    let sweep = ws.sweep(&[SweepParam::Sigma])?;
    for path in [ablate, sweep] {
        let text = std::fs::read_to_string(&path)?;
        println!("\n{}", path.display());
        for line in text.lines() {
            // key columns, status and the DSC mean
            let cells: Vec<&str> = line.split(',').collect();
            let status = cells.iter().position(|c| *c == "status" || *c == "ok" || c.starts_with("error")).unwrap_or(0);
            println!("{}", cells[..(status + 2).min(cells.len())].join(","));
        }
    }
    Ok(())
}
