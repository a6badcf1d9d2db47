//! Logistic domain probes on raw pixels and on frozen backbone features.

use msda::adaptation::TrainMode;
use msda::data::{generate_dataset, DatasetConfig};
use msda::harness::{domain_confusion_probe, pixel_probe, train, ProbeConfig, RunConfig};

fn main() -> msda::Result<()> {
    let data = generate_dataset(&DatasetConfig {
        n_train: 100,
        n_val: 100,
        ..DatasetConfig::default()
    })?;
    let (src, tgt) = (data.split("source_val")?, data.split("target_val")?);
    let probe = ProbeConfig::default();
    println!("pixels       {:.3}", pixel_probe(src, tgt, &probe)?);
    for mode in [TrainMode::SourceOnly, TrainMode::Adapt] {
        let out = train(
            &RunConfig {
                mode,
                iterations: 100,
                ..RunConfig::default()
            },
            &data,
        )?;
        let rep = domain_confusion_probe(&out.detector()?, &out.params, src, tgt, &probe)?;
        println!("{mode:<12} {:.3}  per scale {:?}", rep.mean, rep.per_scale);
    }
    Ok(())
}
