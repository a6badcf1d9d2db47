//! Save a trained adapted model, drop the DAN for inference, reload.

use msda::data::{generate_dataset, DatasetConfig};
use msda::detector::checkpoint::Checkpoint;
use msda::harness::{detector_from_checkpoint, train, RunConfig};

fn main() -> msda::Result<()> {
    let data = generate_dataset(&DatasetConfig {
        n_train: 64,
        n_val: 8,
        ..DatasetConfig::default()
    })?;
    let out = train(
        &RunConfig {
            iterations: 30,
            ..RunConfig::default()
        },
        &data,
    )?;
    let full = out.checkpoint();
    let lean = full.export_inference()?;
    println!("training checkpoint  {} scalars", full.params.num_scalars());
    println!("inference checkpoint {} scalars, dan group: {}", lean.params.num_scalars(), lean.has_group("dan"));

    let path = std::env::temp_dir().join("msda-export.msda");
    lean.save(&path)?;
    let back = Checkpoint::load(&path)?;
    let (_, detector) = detector_from_checkpoint(&back)?;
    let images = data.split("target_val")?.batch(&[0, 1, 2, 3]);
    let dets = detector.detect(&images, &back.params, 0.01, 0.5)?;
    for (i, d) in dets.iter().enumerate() {
        let best = d.iter().map(|x| x.confidence).fold(0.0, f64::max);
        println!("image {i}: {} detections, best confidence {best:.3}", d.len());
    }
    Ok(())
}
