use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::MapScale;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub l_det: f64,
    /// One loss per domain classifier, in [`TrainingLog::classifiers`] order.
    pub l_dc: Vec<f64>,
    pub l_dc_mean: Option<f64>,
    /// `L_det + lambda * mean L_dc`.
    pub l_t: f64,
    pub lr: f64,
    /// Milliseconds since the start of training.
    pub elapsed_ms: f64,
}

impl LogRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_values(&self, other: &Self) -> bool {
        self.iteration == other.iteration
            && self.l_det.to_bits() == other.l_det.to_bits()
            && self.l_dc.len() == other.l_dc.len()
            && self.l_dc.iter().zip(&other.l_dc).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.l_dc_mean.map(f64::to_bits) == other.l_dc_mean.map(f64::to_bits)
            && self.l_t.to_bits() == other.l_t.to_bits()
            && self.lr.to_bits() == other.lr.to_bits()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub target_map: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub classifiers: Vec<MapScale>,
    pub records: Vec<LogRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainingLog {
    pub fn new(classifiers: Vec<MapScale>) -> Self {
        Self {
            classifiers,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn same_values(&self, other: &Self) -> bool {
        self.classifiers == other.classifiers
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.same_values(b))
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["iteration".to_string(), "l_det".into()];
        if !self.classifiers.is_empty() {
            h.extend(self.classifiers.iter().map(|c| format!("l_dc_{c}")));
            h.push("l_dc_mean".into());
        }
        h.extend(["l_t", "lr", "elapsed_ms"].map(String::from));
        h
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).unwrap();
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), r.l_det.to_string()];
            if !self.classifiers.is_empty() {
                row.extend(r.l_dc.iter().map(f64::to_string));
                row.push(r.l_dc_mean.map(|v| v.to_string()).unwrap_or_default());
            }
            row.extend([r.l_t.to_string(), r.lr.to_string(), format!("{:.3}", r.elapsed_ms)]);
            w.write_record(row).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses a log written by [`to_csv`](Self::to_csv). Reading stops at the
    /// first incomplete or malformed row; the second value describes why.
    /// A final line without its newline counts as incomplete.
    pub fn parse_csv(text: &str) -> Result<(Self, Option<String>)> {
        let (text, cut) = match text.rfind('\n') {
            Some(i) if i + 1 < text.len() => (&text[..=i], true),
            _ => (text, false),
        };
        let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::Data(format!("log header: {e}")))?
            .iter()
            .map(String::from)
            .collect();
        if header.len() < 5 || header[0] != "iteration" || header[1] != "l_det" {
            return Err(Error::Data(format!("not a training log header: {}", header.join(","))));
        }
        let mut classifiers = Vec::new();
        for h in &header[2..] {
            if let Some(name) = h.strip_prefix("l_dc_") {
                if name != "mean" {
                    classifiers.push(name.parse().map_err(|_| Error::Data(format!("unknown classifier column `{h}`")))?);
                }
            }
        }
        let mut log = Self::new(classifiers);
        let k = log.classifiers.len();
        let expected = header.len();
        let mut warning = None;
        for (i, row) in r.records().enumerate() {
            let row = match row {
                Ok(row) if row.len() == expected => row,
                Ok(row) => {
                    warning = Some(format!("row {} has {} of {expected} fields", i + 1, row.len()));
                    break;
                }
                Err(e) => {
                    warning = Some(format!("row {}: {e}", i + 1));
                    break;
                }
            };
            let num = |j: usize| row[j].parse::<f64>();
            let parsed = (|| -> std::result::Result<LogRecord, Box<dyn std::error::Error>> {
                let mut j = 2;
                let mut l_dc = Vec::with_capacity(k);
                let mut l_dc_mean = None;
                if k > 0 {
                    for _ in 0..k {
                        l_dc.push(num(j)?);
                        j += 1;
                    }
                    l_dc_mean = Some(num(j)?);
                    j += 1;
                }
                Ok(LogRecord {
                    iteration: row[0].parse()?,
                    l_det: num(1)?,
                    l_dc,
                    l_dc_mean,
                    l_t: num(j)?,
                    lr: num(j + 1)?,
                    elapsed_ms: num(j + 2)?,
                })
            })();
            match parsed {
                Ok(rec) => log.records.push(rec),
                Err(e) => {
                    warning = Some(format!("row {}: {e}", i + 1));
                    break;
                }
            }
        }
        if cut && warning.is_none() {
            warning = Some(format!("row {} is cut short", log.len() + 1));
        }
        Ok((log, warning))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<(Self, Option<String>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }
}
