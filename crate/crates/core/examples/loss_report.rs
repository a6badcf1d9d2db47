//! Write a training log, then turn it into per-classifier loss curves.

use msda::data::{generate_dataset, DatasetConfig};
use msda::harness::{report, train, RunConfig, LOG_FILE};

fn main() -> msda::Result<()> {
    let dir = std::env::temp_dir().join("msda-loss-report");
    let data = generate_dataset(&DatasetConfig {
        n_train: 64,
        n_val: 16,
        ..DatasetConfig::default()
    })?;
    let cfg = RunConfig {
        dan_variant: "baseline".parse()?,
        iterations: 40,
        out_dir: Some(dir.clone()),
        ..RunConfig::default()
    };
    train(&cfg, &data)?;
    let out = dir.join("curves.csv");
    let curves = report(dir.join(LOG_FILE), &out)?;
    println!("classifiers {:?}", curves.classifiers);
    for row in curves.rows.iter().step_by(10) {
        println!("{:>4}  mean {:.4}  dissimilarity {:.4}", row.iteration, row.mean, row.dissimilarity.unwrap_or(0.0));
    }
    println!("wrote {}", out.display());
    Ok(())
}
