//! Baseline DAN on a few scale subsets; prints the ablation table.

use std::collections::BTreeSet;

use msda::adaptation::DanKind;
use msda::data::{generate_dataset, DatasetConfig};
use msda::detector::Scale;
use msda::harness::{run_ablation, RunConfig};

fn main() -> msda::Result<()> {
    let data = generate_dataset(&DatasetConfig {
        n_train: 100,
        n_val: 60,
        ..DatasetConfig::default()
    })?;
    let cfg = RunConfig {
        dan_variant: DanKind::Baseline,
        iterations: 60,
        ..RunConfig::default()
    };
    let subsets: Vec<BTreeSet<Scale>> = vec![[Scale::F1].into(), [Scale::F3].into(), Scale::ALL.into()];
    let rep = run_ablation(&cfg, &data, &subsets)?;
    print!("{}", rep.render());
    for r in &rep.rows {
        println!("{:?}: largest gradient on a detached branch {}", r.scales, r.inactive_branch_grad());
    }
    Ok(())
}
