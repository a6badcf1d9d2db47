//! Scale ablation: the baseline DAN attached to every subset of the taps.

use std::collections::{BTreeMap, BTreeSet};

use super::{evaluate_split, train, RunConfig, TrainOutcome};
use crate::adaptation::{DanKind, TrainMode};
use crate::data::Dataset;
use crate::detector::Scale;
use crate::error::{Error, Result};
use crate::evaluation::{EvalResult, Table};

/// All eight subsets of `{F1, F2, F3}`: the empty set, singletons, pairs,
/// then all three.
pub fn all_subsets() -> Vec<BTreeSet<Scale>> {
    let mut subsets: Vec<BTreeSet<Scale>> = (0u8..8)
        .map(|mask| Scale::ALL.into_iter().filter(|s| mask & (1 << s.index()) != 0).collect())
        .collect();
    subsets.sort_by_key(|s| (s.len(), s.iter().map(|x| x.index()).collect::<Vec<_>>()));
    subsets
}

pub fn subset_label(scales: &BTreeSet<Scale>) -> String {
    if scales.is_empty() {
        return "none".into();
    }
    scales.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+")
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub scales: BTreeSet<Scale>,
    /// Target-validation result.
    pub eval: EvalResult,
    pub outcome: TrainOutcome,
}

impl AblationRow {
    /// Largest gradient seen on any detached branch; 0 when all are active.
    pub fn inactive_branch_grad(&self) -> f64 {
        self.outcome.inactive_branch_grad.values().fold(0.0, |m, &v| m.max(v))
    }
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub class_names: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Check-mark columns for the adapted scales, AP per class and mAP in
    /// percent.
    pub fn table(&self) -> Table {
        let mut header: Vec<String> = Scale::ALL.iter().map(|s| s.to_string()).collect();
        header.extend(self.class_names.iter().cloned());
        header.push("mAP".into());
        let mut table = Table::new(header);
        for r in &self.rows {
            let mut row: Vec<String> = Scale::ALL
                .iter()
                .map(|s| if r.scales.contains(s) { "✓".into() } else { String::new() })
                .collect();
            row.extend((0..self.class_names.len()).map(|c| match r.eval.per_class_ap.get(&c) {
                Some(ap) => format!("{:.2}", 100.0 * ap),
                None => "excl".into(),
            }));
            row.push(format!("{:.2}", 100.0 * r.eval.map_score));
            table.push(row);
        }
        table
    }

    pub fn render(&self) -> String {
        self.table().render()
    }

    pub fn summary(&self) -> BTreeMap<String, f64> {
        self.rows
            .iter()
            .map(|r| (subset_label(&r.scales), r.eval.map_score))
            .collect()
    }
}

/// One adapted run per subset, with the no-adaptation row added when
/// missing. Each row trains from the same seeds; with `out_dir` set, row
/// outputs go to `out_dir/<label>`.
pub fn run_ablation(config: &RunConfig, dataset: &Dataset, subsets: &[BTreeSet<Scale>]) -> Result<AblationReport> {
    if subsets.is_empty() {
        return Err(Error::Config("ablation needs at least one scale subset".into()));
    }
    if config.dan_variant != DanKind::Baseline {
        return Err(Error::Config(format!(
            "the scale ablation uses the baseline DAN, not {}",
            config.dan_variant
        )));
    }
    if config.mode != TrainMode::Adapt {
        return Err(Error::Config("the scale ablation runs in adapt mode".into()));
    }
    let mut order: Vec<BTreeSet<Scale>> = Vec::new();
    if !subsets.iter().any(BTreeSet::is_empty) {
        order.push(BTreeSet::new());
    }
    for s in subsets {
        if !order.contains(s) {
            order.push(s.clone());
        }
    }
    let val = dataset.split("target_val")?;
    let mut rows = Vec::with_capacity(order.len());
    for scales in order {
        let label = subset_label(&scales);
        log::info!("ablation row {label}");
        let cfg = RunConfig {
            active_scales: scales.iter().copied().collect(),
            out_dir: config.out_dir.as_ref().map(|d| d.join(&label)),
            ..config.clone()
        };
        let outcome = train(&cfg, dataset)?;
        let eval = evaluate_split(&outcome.detector()?, &outcome.params, val, &cfg.eval)?;
        rows.push(AblationRow { scales, eval, outcome });
    }
    Ok(AblationReport {
        class_names: dataset.config.scene.class_names(),
        rows,
    })
}
