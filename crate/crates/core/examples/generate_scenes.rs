//! Render a small clear/foggy dataset, write it to disk and read it back.
//!
//!     cargo run --example generate_scenes -- /tmp/scenes

use msda::data::{generate_dataset, Dataset, DatasetConfig};

fn main() -> msda::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "scenes".into());
    let cfg = DatasetConfig {
        n_train: 32,
        n_val: 16,
        ..DatasetConfig::default()
    };
    let ds = generate_dataset(&cfg)?;
    ds.write(&out)?;
    let back = Dataset::load(&out)?;
    for (name, split) in &back.splits {
        let objects: usize = split.boxes.iter().map(Vec::len).sum();
        println!("{name:<13} {:>3} images  {:>3} objects  ({})", split.len(), objects, split.domain);
    }
    println!("classes: {:?}", back.config.scene.class_names());
    Ok(())
}
