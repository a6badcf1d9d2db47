//! Darknet-style label files: one `class_id cx cy w h` line per object,
//! coordinates normalized, six decimals.

use std::fmt::Write as _;
use std::path::Path;

use crate::detector::GroundTruthBox;
use crate::error::{Error, Result};

pub fn format_annotations(boxes: &[GroundTruthBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        writeln!(out, "{} {:.6} {:.6} {:.6} {:.6}", b.class_id, b.cx, b.cy, b.w, b.h).unwrap();
    }
    out
}

/// Parses label text. `source` names the input in errors. Blank lines are
/// skipped; `num_classes` bounds class ids when given.
pub fn parse_annotations(text: &str, source: &str, num_classes: Option<usize>) -> Result<Vec<GroundTruthBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.into(),
            line: line_no,
            message,
        };
        if fields.len() != 5 {
            return Err(parse_err(format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad class id `{}`", fields[0])))?;
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| parse_err(format!("bad number `{f}`")))?;
        }
        let b = GroundTruthBox {
            class_id,
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
        };
        b.validate(num_classes)
            .map_err(|e| Error::Validation(format!("{source}:{line_no}: {e}")))?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn write_annotations(boxes: &[GroundTruthBox], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_annotations(boxes)).map_err(|e| Error::io(path, e))
}

pub fn read_annotations(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Vec<GroundTruthBox>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string(), num_classes)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_annotations(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "");
        assert!(read_annotations(&p, None).unwrap().is_empty());
    }

    #[test]
    fn single_box_line() {
        let b = GroundTruthBox {
            class_id: 1,
            cx: 0.5,
            cy: 0.5,
            w: 0.25,
            h: 0.25,
        };
        let text = format_annotations(&[b]);
        assert_eq!(text, "1 0.500000 0.500000 0.250000 0.250000\n");
        assert_eq!(parse_annotations(&text, "x", Some(3)).unwrap(), vec![b]);
    }

    #[test]
    fn oversized_box_is_a_validation_error() {
        let err = parse_annotations("2 0.5 0.5 1.5 0.2\n", "x", None).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let err = parse_annotations("0 0.5 0.5 0.1 0.1\n\n1 0.5 zero 0.1 0.1\n", "f.txt", None).unwrap_err();
        match err {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 3);
                assert_eq!(path, std::path::PathBuf::from("f.txt"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_annotations("0 0.5 0.5 0.1\n", "f", None),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn class_bound_is_checked() {
        assert!(parse_annotations("3 0.5 0.5 0.1 0.1", "f", Some(3)).is_err());
    }

    fn unit_box() -> impl Strategy<Value = GroundTruthBox> {
        (0usize..5, 0.0..=1.0f64, 0.0..=1.0f64, 0.001..=1.0f64, 0.001..=1.0f64)
            .prop_map(|(class_id, cx, cy, w, h)| GroundTruthBox { class_id, cx, cy, w, h })
    }

    proptest! {
        #[test]
        fn round_trip_to_six_decimals(boxes in prop::collection::vec(unit_box(), 0..8)) {
            let back = parse_annotations(&format_annotations(&boxes), "p", None).unwrap();
            prop_assert_eq!(back.len(), boxes.len());
            for (a, b) in boxes.iter().zip(&back) {
                prop_assert_eq!(a.class_id, b.class_id);
                for (x, y) in [(a.cx, b.cx), (a.cy, b.cy), (a.w, b.w), (a.h, b.h)] {
                    prop_assert!((x - y).abs() <= 5e-7);
                }
            }
        }
    }
}
