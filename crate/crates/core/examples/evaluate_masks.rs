//! Scores a shifted and a shrunk copy of a ground-truth mask.

use metricunet::data::volume::index;
use metricunet::data::Mask;
use metricunet::metrics::{evaluate, summarize_reports, write_eval_csv, METRIC_COLUMNS};

fn cube(dims: [usize; 3], lo: [usize; 3], size: usize) -> Mask {
    let mut m = Mask::empty("cube", dims);
    for z in lo[0]..lo[0] + size {
        for y in lo[1]..lo[1] + size {
            for x in lo[2]..lo[2] + size {
                m.data[index(dims, z, y, x)] = 1;
            }
        }
    }
    m
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dims = [24, 24, 24];
    let spacing = [2.0, 1.0, 1.0];
    let gt = cube(dims, [6, 6, 6], 10);
    let rows = vec![
        ("shifted".to_string(), evaluate(&gt, &cube(dims, [7, 6, 6], 10), spacing)?),
        ("shrunk".to_string(), evaluate(&gt, &cube(dims, [7, 7, 7], 8), spacing)?),
        ("empty".to_string(), evaluate(&gt, &Mask::empty("e", dims), spacing)?),
    ];
    write_eval_csv(std::io::stdout().lock(), &rows)?;
    for (name, s) in METRIC_COLUMNS.iter().zip(summarize_reports(&rows.iter().map(|r| r.1).collect::<Vec<_>>())) {
        match s {
            Some(s) => println!("{name}: mean {:.3} over {} cases", s.mean, s.count),
            None => println!("{name}: undefined for every case"),
        }
    }
    Ok(())
}
