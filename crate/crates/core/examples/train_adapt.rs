//! Short adversarial training run with the integrated DAN on a tiny dataset.
//!
//!     cargo run --release --example train_adapt -- 200

use msda::adaptation::TrainMode;
use msda::data::{generate_dataset, DatasetConfig};
use msda::harness::{train, RunConfig};

fn main() -> msda::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let data = generate_dataset(&DatasetConfig {
        n_train: 200,
        n_val: 100,
        ..DatasetConfig::default()
    })?;
    let cfg = RunConfig {
        mode: TrainMode::Adapt,
        iterations,
        eval_every: iterations / 2,
        ..RunConfig::default()
    };
    let out = train(&cfg, &data)?;
    for r in out.log.records.iter().step_by((iterations / 10).max(1)) {
        println!(
            "{:>5}  L_det {:8.4}  L_dc {:?}  lr {:.4}",
            r.iteration,
            r.l_det,
            r.l_dc.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            r.lr
        );
    }
    for e in &out.log.evals {
        println!("iteration {:>5}: target mAP {:.2}", e.iteration, 100.0 * e.target_map);
    }
    Ok(())
}
