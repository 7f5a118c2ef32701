//! Detection metrics: AP at a fixed IoU, log-average miss rate over false
//! positives per image, and recall. All three share one greedy matcher.
//!
//! With no ground truth at all, AP and recall are reported as 0 and the miss
//! rate as 1.

use std::fmt::Write as _;

use serde::Serialize;

use crate::geometry::{iou_boxes, BoxXYXY};

/// Outcome of matching one image's detections against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Detection indices by descending score, ties by index.
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    /// Per detection (input order): matched ground-truth index.
    pub matched: Vec<Option<usize>>,
    /// Per ground-truth box.
    pub covered: Vec<bool>,
}

impl MatchResult {
    pub fn n_gt(&self) -> usize {
        self.covered.len()
    }

    pub fn n_det(&self) -> usize {
        self.scores.len()
    }
}

fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy matching: detections in descending score order each take the
/// unmatched ground-truth box of highest IoU, if that IoU is at least
/// `iou_threshold`. Equal IoUs go to the lower ground-truth index.
pub fn match_detections(
    dets: &[(BoxXYXY, f64)],
    gts: &[BoxXYXY],
    iou_threshold: f64,
) -> MatchResult {
    let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
    let order = score_order(&scores);
    let mut matched = vec![None; dets.len()];
    let mut covered = vec![false; gts.len()];
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if covered[g] {
                continue;
            }
            let iou = iou_boxes(&dets[d].0, gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            covered[g] = true;
            matched[d] = Some(g);
        }
    }
    MatchResult {
        order,
        scores,
        matched,
        covered,
    }
}

/// Every detection across images as (score, is true positive), sorted by
/// descending score; ties keep image order, then in-image order.
fn pooled(matches: &[MatchResult]) -> Vec<(f64, bool)> {
    let mut all: Vec<(f64, bool)> = Vec::new();
    for m in matches {
        all.extend(
            m.order
                .iter()
                .map(|&d| (m.scores[d], m.matched[d].is_some())),
        );
    }
    // stable sort keeps the tie order described above
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    all
}

fn total_gt(matches: &[MatchResult]) -> usize {
    matches.iter().map(MatchResult::n_gt).sum()
}

/// All-point interpolated area under the precision-recall curve.
pub fn average_precision(matches: &[MatchResult]) -> f64 {
    let n_gt = total_gt(matches);
    if n_gt == 0 {
        return 0.0;
    }
    let all = pooled(matches);
    let mut precision = Vec::with_capacity(all.len());
    let mut tp = 0usize;
    for (k, &(_, hit)) in all.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let area: f64 = all
        .iter()
        .zip(&precision)
        .filter(|((_, hit), _)| *hit)
        .map(|(_, p)| p)
        .sum();
    area / n_gt as f64
}

/// Fraction of ground-truth boxes matched by any detection.
pub fn recall(matches: &[MatchResult]) -> f64 {
    let n_gt = total_gt(matches);
    if n_gt == 0 {
        return 0.0;
    }
    let hit: usize = matches
        .iter()
        .map(|m| m.covered.iter().filter(|&&c| c).count())
        .sum();
    hit as f64 / n_gt as f64
}

/// The nine reference FPPI values, log-spaced over `[0.01, 1]`.
pub fn fppi_points() -> [f64; 9] {
    std::array::from_fn(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / 8.0))
}

/// Geometric mean of the lowest miss rate reachable at each reference FPPI.
/// Only score thresholds are considered, so tied detections enter together.
pub fn log_average_miss_rate(matches: &[MatchResult], n_images: usize) -> f64 {
    let n_gt = total_gt(matches);
    if n_gt == 0 {
        return 1.0;
    }
    let n_images = n_images.max(1) as f64;
    let all = pooled(matches);
    // (fppi, miss rate) at every threshold, starting with "keep nothing"
    let mut curve = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &(score, hit)) in all.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        if all.get(k + 1).is_none_or(|next| next.0 != score) {
            curve.push((fp as f64 / n_images, 1.0 - tp as f64 / n_gt as f64));
        }
    }
    let rates: Vec<f64> = fppi_points()
        .iter()
        .map(|&r| {
            let mr = curve
                .iter()
                .filter(|(f, _)| *f <= r)
                .map(|&(_, m)| m)
                .fold(1.0, f64::min);
            mr.max(1e-6)
        })
        .collect();
    let mean = (rates.iter().map(|m| m.ln()).sum::<f64>() / 9.0).exp();
    // a geometric mean lies between its extremes; keep rounding from
    // pushing it outside
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().copied().fold(0.0, f64::max);
    mean.clamp(lo, hi)
}

/// One image to evaluate.
#[derive(Debug, Clone, Default)]
pub struct EvalImage {
    pub detections: Vec<(BoxXYXY, f64)>,
    pub ground_truth: Vec<BoxXYXY>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub ap50: f64,
    pub mr2: f64,
    pub recall: f64,
    pub n_images: usize,
    pub n_gt: usize,
    pub n_det: usize,
}

impl Metrics {
    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ap50={}", self.ap50);
        let _ = writeln!(s, "mr2={}", self.mr2);
        let _ = writeln!(s, "recall={}", self.recall);
        let _ = writeln!(s, "n_images={}", self.n_images);
        let _ = writeln!(s, "n_gt={}", self.n_gt);
        let _ = writeln!(s, "n_det={}", self.n_det);
        s
    }
}

pub fn evaluate(images: &[EvalImage], iou_threshold: f64) -> Metrics {
    let matches: Vec<MatchResult> = images
        .iter()
        .map(|im| match_detections(&im.detections, &im.ground_truth, iou_threshold))
        .collect();
    Metrics {
        ap50: average_precision(&matches),
        mr2: log_average_miss_rate(&matches, images.len()),
        recall: recall(&matches),
        n_images: images.len(),
        n_gt: total_gt(&matches),
        n_det: matches.iter().map(MatchResult::n_det).sum(),
    }
}
