//! COCO-style detection evaluation: greedy IoU matching, 101-point
//! interpolated AP per (category, IoU threshold) and their mean.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::datamodel::{BBox, Dataset, Detection};
use crate::postprocess::iou;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error(
        "detection {index} uses category {category_id}, which the ground truth does not define"
    )]
    UnknownCategory { index: usize, category_id: u64 },
    #[error("IoU threshold {0} outside [0, 1]")]
    BadThreshold(f64),
}

/// `0.50, 0.55, ..., 0.95`.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Greedily matches detections (highest score first) to ground-truth boxes
/// of the same image and category. Each detection takes the still-unmatched
/// box with the highest IoU at or above `iou_thresh`.
///
/// Returns `(detection index, matched)` in descending-score order.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_thresh: f64) -> Vec<(usize, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou(&dets[d].bbox, gt);
                if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (d, best.is_some())
        })
        .collect()
}

/// 101-point interpolated average precision from score-ordered match flags.
/// `None` when there is no ground truth.
pub fn average_precision(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &f in flags {
        if f {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // Precision envelope: non-increasing from the right.
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Some(sum / 101.0)
}

/// One (category, IoU threshold) cell of the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalCell {
    pub category_id: u64,
    pub category: String,
    pub iou_threshold: f64,
    /// `None` when the category has no ground truth.
    pub ap: Option<f64>,
    pub n_gt: usize,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub cells: Vec<EvalCell>,
    /// Mean over categories, then over thresholds.
    pub map: Option<f64>,
    /// Mean over categories at IoU 0.5.
    pub ap50: Option<f64>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn cell(&self, category_id: u64, iou_threshold: f64) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.category_id == category_id && c.iou_threshold == iou_threshold)
    }

    /// Mean AP over categories with ground truth at one threshold.
    pub fn map_at(&self, iou_threshold: f64) -> Option<f64> {
        mean(
            self.cells
                .iter()
                .filter(|c| c.iou_threshold == iou_threshold)
                .filter_map(|c| c.ap),
        )
    }

    /// Aligned plain-text table: one row per category, one column per
    /// threshold, followed by the summary lines.
    pub fn to_table(&self) -> String {
        let fmt_ap = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
        let mut cats: Vec<(u64, &str)> = Vec::new();
        for c in &self.cells {
            if !cats.iter().any(|(id, _)| *id == c.category_id) {
                cats.push((c.category_id, &c.category));
            }
        }
        let name_w = cats
            .iter()
            .map(|(_, n)| n.len())
            .chain(["category".len(), "mean".len()])
            .max()
            .unwrap_or(8);

        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}  {:>5}", "category", "gt");
        for t in &self.thresholds {
            let _ = write!(out, "  {:>6}", format!("AP{:.0}", t * 100.0));
        }
        out.push('\n');
        for (id, name) in &cats {
            let n_gt = self
                .cells
                .iter()
                .find(|c| c.category_id == *id)
                .map_or(0, |c| c.n_gt);
            let _ = write!(out, "{name:<name_w$}  {n_gt:>5}");
            for t in &self.thresholds {
                let ap = self.cell(*id, *t).and_then(|c| c.ap);
                let _ = write!(out, "  {:>6}", fmt_ap(ap));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<name_w$}  {:>5}", "mean", "");
        for t in &self.thresholds {
            let _ = write!(out, "  {:>6}", fmt_ap(self.map_at(*t)));
        }
        out.push('\n');
        let _ = writeln!(out, "mAP  {}", fmt_ap(self.map));
        let _ = writeln!(out, "AP50 {}", fmt_ap(self.ap50));
        out
    }
}

struct CellStats {
    ap: Option<f64>,
    n_gt: usize,
    tp: usize,
    fp: usize,
}

/// Ground truth and detections keyed by (category, image).
type Groups = BTreeMap<(u64, u64), (Vec<BBox>, Vec<Detection>)>;

fn evaluate_cell(groups: &Groups, category_id: u64, iou_thresh: f64) -> CellStats {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut n_gt = 0;
    for (_, (gts, dets)) in groups.range((category_id, 0)..=(category_id, u64::MAX)) {
        n_gt += gts.len();
        for (d, matched) in match_detections(dets, gts, iou_thresh) {
            scored.push((dets[d].score, matched));
        }
    }
    // Stable: equal scores keep image order, then per-image match order.
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let flags: Vec<bool> = scored.iter().map(|s| s.1).collect();
    let tp = flags.iter().filter(|&&f| f).count();
    CellStats {
        ap: average_precision(&flags, n_gt),
        n_gt,
        tp,
        fp: flags.len() - tp,
    }
}

/// Evaluates detections against a ground-truth dataset at each threshold.
/// Detections on images absent from the ground truth count as false
/// positives.
pub fn evaluate(
    dets: &[Detection],
    gt: &Dataset,
    thresholds: &[f64],
) -> Result<EvalReport, EvalError> {
    for &t in thresholds {
        if !(0.0..=1.0).contains(&t) {
            return Err(EvalError::BadThreshold(t));
        }
    }
    let known: HashSet<u64> = gt.categories.iter().map(|c| c.id).collect();
    if let Some((index, d)) = dets
        .iter()
        .enumerate()
        .find(|(_, d)| !known.contains(&d.category_id))
    {
        return Err(EvalError::UnknownCategory {
            index,
            category_id: d.category_id,
        });
    }

    // Keyed by (category, image) so a category's groups are contiguous.
    let mut groups: Groups = BTreeMap::new();
    for a in &gt.annotations {
        groups
            .entry((a.category_id, a.image_id))
            .or_default()
            .0
            .push(a.bbox);
    }
    for d in dets {
        groups
            .entry((d.category_id, d.image_id))
            .or_default()
            .1
            .push(*d);
    }

    let mut cats: Vec<(u64, &str)> = gt
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    cats.sort_by_key(|c| c.0);

    let mut all_thresholds: Vec<f64> = thresholds.to_vec();
    if !all_thresholds.contains(&0.5) {
        all_thresholds.push(0.5);
    }
    let jobs: Vec<(u64, f64)> = cats
        .iter()
        .flat_map(|&(id, _)| all_thresholds.iter().map(move |&t| (id, t)))
        .collect();
    let stats: HashMap<(u64, u64), CellStats> = jobs
        .par_iter()
        .map(|&(id, t)| ((id, t.to_bits()), evaluate_cell(&groups, id, t)))
        .collect();

    let cell = |id: u64, name: &str, t: f64| {
        let s = &stats[&(id, t.to_bits())];
        EvalCell {
            category_id: id,
            category: name.to_string(),
            iou_threshold: t,
            ap: s.ap,
            n_gt: s.n_gt,
            tp: s.tp,
            fp: s.fp,
        }
    };
    let cells: Vec<EvalCell> = cats
        .iter()
        .flat_map(|&(id, name)| thresholds.iter().map(move |&t| cell(id, name, t)))
        .collect();

    let map = mean(thresholds.iter().filter_map(|&t| {
        mean(
            cells
                .iter()
                .filter(|c| c.iou_threshold == t)
                .filter_map(|c| c.ap),
        )
    }));
    let ap50 = mean(
        cats.iter()
            .filter_map(|&(id, _)| stats[&(id, 0.5f64.to_bits())].ap),
    );

    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        cells,
        map,
        ap50,
    })
}
