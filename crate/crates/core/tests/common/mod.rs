#![allow(dead_code)]

use msda::data::{generate_dataset, Dataset, DatasetConfig};
use msda::detector::Detection;
use msda::evaluation::TruthBox;
use rand::Rng;

pub fn small_dataset(n_train: usize, n_val: usize) -> Dataset {
    generate_dataset(&DatasetConfig {
        n_train,
        n_val,
        ..DatasetConfig::default()
    })
    .unwrap()
}

/// Matching and AP by exhaustive search in integer arithmetic. Boxes must
/// have integer corners and the IoU threshold must be a dyadic fraction
/// `num / 2^k`, so every comparison below is exact.
pub mod brute {
    use super::*;

    fn area(b: [i64; 4]) -> i64 {
        (b[2] - b[0]).max(0) * (b[3] - b[1]).max(0)
    }

    /// IoU as `(intersection, union)`; `(0, 1)` for degenerate boxes.
    pub fn iou_fraction(a: [i64; 4], b: [i64; 4]) -> (i64, i64) {
        if area(a) == 0 || area(b) == 0 {
            return (0, 1);
        }
        let mut inter = 0;
        for _x in a[0].max(b[0])..a[2].min(b[2]) {
            for _y in a[1].max(b[1])..a[3].min(b[3]) {
                inter += 1;
            }
        }
        (inter, area(a) + area(b) - inter)
    }

    fn ints(r: [f64; 4]) -> [i64; 4] {
        r.map(|v| {
            assert_eq!(v.fract(), 0.0, "brute force needs integer corners");
            v as i64
        })
    }

    /// `(image, index)` of every detection, highest confidence first, ties
    /// by image then index.
    pub fn rank(dets: &[Vec<Detection>]) -> Vec<(usize, usize)> {
        let all: Vec<(usize, usize)> = dets
            .iter()
            .enumerate()
            .flat_map(|(i, d)| (0..d.len()).map(move |j| (i, j)))
            .collect();
        let mut out = vec![(0, 0); all.len()];
        for &(i, j) in &all {
            let c = dets[i][j].confidence;
            let place = all
                .iter()
                .filter(|&&(k, l)| {
                    let o = dets[k][l].confidence;
                    o > c || (o == c && (k, l) < (i, j))
                })
                .count();
            out[place] = (i, j);
        }
        out
    }

    /// TP flags; `threshold = num / den` with `den` a power of two.
    pub fn match_all(dets: &[Vec<Detection>], gts: &[Vec<TruthBox>], num: i64, den: i64) -> Vec<Vec<bool>> {
        let mut flags: Vec<Vec<bool>> = dets.iter().map(|d| vec![false; d.len()]).collect();
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        for (i, j) in rank(dets) {
            let d = &dets[i][j];
            let mut best: Option<(usize, (i64, i64))> = None;
            for (k, g) in gts[i].iter().enumerate() {
                if g.class_id != d.class_id || used[i][k] {
                    continue;
                }
                let f = iou_fraction(ints(d.corners()), ints(g.corners));
                // strictly greater keeps the earliest on ties
                if best.is_none_or(|(_, b)| f.0 * b.1 > b.0 * f.1) {
                    best = Some((k, f));
                }
            }
            if let Some((k, (inter, union))) = best {
                if inter * den >= num * union {
                    used[i][k] = true;
                    flags[i][j] = true;
                }
            }
        }
        flags
    }

    /// All-point AP: mean over true positives of the best precision at
    /// that rank or any later one.
    pub fn average_precision(ranked_flags: &[bool], num_gt: usize) -> Option<f64> {
        if num_gt == 0 {
            return None;
        }
        let precision: Vec<f64> = (0..ranked_flags.len())
            .map(|k| ranked_flags[..=k].iter().filter(|&&f| f).count() as f64 / (k + 1) as f64)
            .collect();
        let mut area = 0.0;
        for k in 0..ranked_flags.len() {
            if ranked_flags[k] {
                area += precision[k..].iter().cloned().fold(f64::MIN, f64::max);
            }
        }
        Some(area / num_gt as f64)
    }

    /// `(per-class AP, mAP)` with the `min_gt` exclusion rule.
    pub fn mean_ap(
        dets: &[Vec<Detection>],
        gts: &[Vec<TruthBox>],
        classes: usize,
        num: i64,
        den: i64,
        min_gt: usize,
    ) -> (Vec<Option<f64>>, f64) {
        let flags = match_all(dets, gts, num, den);
        let order = rank(dets);
        let mut aps = Vec::new();
        for c in 0..classes {
            let n = gts.iter().flatten().filter(|g| g.class_id == c).count();
            let f: Vec<bool> = order
                .iter()
                .filter(|&&(i, j)| dets[i][j].class_id == c)
                .map(|&(i, j)| flags[i][j])
                .collect();
            aps.push(if n >= min_gt.max(1) { average_precision(&f, n) } else { None });
        }
        let kept: Vec<f64> = aps.iter().flatten().copied().collect();
        let m = if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 };
        (aps, m)
    }
}

fn random_rect<R: Rng>(rng: &mut R) -> [f64; 4] {
    let x = rng.random_range(0..12) as f64;
    let y = rng.random_range(0..12) as f64;
    let w = rng.random_range(1..7) as f64;
    let h = rng.random_range(1..7) as f64;
    [x, y, x + w, y + h]
}

/// Up to three images with at most five detections and five ground-truth
/// boxes each, on a coarse integer grid with coarse confidences so that
/// overlaps and scores tie often.
pub fn random_instance<R: Rng>(rng: &mut R, classes: usize) -> (Vec<Vec<Detection>>, Vec<Vec<TruthBox>>) {
    let images = rng.random_range(1..=3);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..images {
        let g: Vec<TruthBox> = (0..rng.random_range(0..=5))
            .map(|_| TruthBox {
                class_id: rng.random_range(0..classes),
                corners: random_rect(rng),
            })
            .collect();
        let d: Vec<Detection> = (0..rng.random_range(0..=5))
            .map(|_| {
                // half the detections sit on a ground-truth box, slightly moved
                let (r, class_id) = match g.get(rng.random_range(0..g.len().max(1) * 2)) {
                    Some(t) => {
                        let s = rng.random_range(0..3) as f64;
                        let c = if rng.random_bool(0.8) { t.class_id } else { rng.random_range(0..classes) };
                        ([t.corners[0] + s, t.corners[1], t.corners[2] + s, t.corners[3]], c)
                    }
                    None => (random_rect(rng), rng.random_range(0..classes)),
                };
                Detection {
                    class_id,
                    confidence: rng.random_range(1..10) as f64 / 10.0,
                    x1: r[0],
                    y1: r[1],
                    x2: r[2],
                    y2: r[3],
                }
            })
            .collect();
        dets.push(d);
        gts.push(g);
    }
    (dets, gts)
}
