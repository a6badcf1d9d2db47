//! Domain-classifier loss curves from a training log.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainingLog;
use crate::adaptation::MapScale;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub per_classifier: Vec<f64>,
    pub mean: f64,
    /// Largest pairwise gap between classifier losses; only with two or
    /// more classifiers.
    pub dissimilarity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub classifiers: Vec<MapScale>,
    pub rows: Vec<CurveRow>,
    pub warnings: Vec<String>,
}

pub fn dissimilarity(losses: &[f64]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in losses.iter().enumerate() {
        for b in &losses[i + 1..] {
            d = d.max((a - b).abs());
        }
    }
    d
}

/// Curves for every record of `log`. `expected` is the configured number
/// of iterations; a shorter or gapped log yields warnings, not an error.
pub fn loss_curves(log: &TrainingLog, expected: Option<usize>) -> Result<LossCurves> {
    if log.classifiers.is_empty() {
        return Err(Error::Data("log has no domain-classifier losses".into()));
    }
    let multi = log.classifiers.len() > 1;
    let mut warnings = Vec::new();
    if let Some(n) = expected {
        if log.len() < n {
            warnings.push(format!("log is truncated: {} of {n} iterations", log.len()));
        }
    }
    let mut rows = Vec::with_capacity(log.len());
    for (k, r) in log.records.iter().enumerate() {
        if r.iteration != k && warnings.iter().all(|w| !w.starts_with("gap")) {
            warnings.push(format!("gap in iterations: record {k} is iteration {}", r.iteration));
        }
        let mean = r
            .l_dc_mean
            .unwrap_or_else(|| r.l_dc.iter().sum::<f64>() / r.l_dc.len() as f64);
        rows.push(CurveRow {
            iteration: r.iteration,
            per_classifier: r.l_dc.clone(),
            mean,
            dissimilarity: multi.then(|| dissimilarity(&r.l_dc)),
        });
    }
    if rows.is_empty() {
        warnings.push("log has no records".into());
    }
    Ok(LossCurves {
        classifiers: log.classifiers.clone(),
        rows,
        warnings,
    })
}

impl LossCurves {
    pub fn has_dissimilarity(&self) -> bool {
        self.classifiers.len() > 1
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["iteration".to_string()];
        header.extend(self.classifiers.iter().map(|c| format!("l_dc_{c}")));
        header.push("l_dc_mean".into());
        if self.has_dissimilarity() {
            header.push("dissimilarity".into());
        }
        w.write_record(&header).unwrap();
        for r in &self.rows {
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.per_classifier.iter().map(f64::to_string));
            row.push(r.mean.to_string());
            if let Some(d) = r.dissimilarity {
                row.push(d.to_string());
            }
            w.write_record(&row).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Reads `log.csv` (and `run.json` beside it, when present, for the
/// configured length), writes the curves to `out`, and any warnings to
/// `out` with a `.warnings.txt` extension.
pub fn report(log_path: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<LossCurves> {
    let log_path = log_path.as_ref();
    let out = out.as_ref();
    let (log, parse_warning) = TrainingLog::read_csv(log_path)?;
    let summary = log_path.with_file_name(super::SUMMARY_FILE);
    let expected = std::fs::read_to_string(&summary)
        .ok()
        .and_then(|t| serde_json::from_str::<super::RunSummary>(&t).ok())
        .map(|s| s.config.iterations);
    let mut curves = loss_curves(&log, expected)?;
    if let Some(w) = parse_warning {
        curves.warnings.insert(0, format!("stopped reading {}: {w}", log_path.display()));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(out, curves.to_csv()).map_err(|e| Error::io(out, e))?;
    let wp = out.with_extension("warnings.txt");
    if curves.warnings.is_empty() {
        let _ = std::fs::remove_file(&wp);
    } else {
        for w in &curves.warnings {
            log::warn!("{w}");
        }
        std::fs::write(&wp, curves.warnings.join("\n") + "\n").map_err(|e| Error::io(&wp, e))?;
    }
    Ok(curves)
}
