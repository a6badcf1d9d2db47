//! Train a source-only detector briefly and score it on both domains.

use msda::adaptation::TrainMode;
use msda::data::{generate_dataset, DatasetConfig};
use msda::harness::{evaluate_split, train, RunConfig};

fn main() -> msda::Result<()> {
    let data = generate_dataset(&DatasetConfig {
        n_train: 200,
        n_val: 100,
        ..DatasetConfig::default()
    })?;
    let cfg = RunConfig {
        mode: TrainMode::SourceOnly,
        iterations: 300,
        ..RunConfig::default()
    };
    let out = train(&cfg, &data)?;
    let detector = out.detector()?;
    for split in ["source_val", "target_val"] {
        let result = evaluate_split(&detector, &out.params, data.split(split)?, &cfg.eval)?;
        println!("{split}");
        print!("{}", result.to_text_table(&data.config.scene.class_names()));
    }
    Ok(())
}
