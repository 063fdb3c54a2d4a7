//! Score-free evaluation of predicted boxes against ground truth.
//!
//! Boxes carry no confidence, so AP at IoU 0.5 is the single operating
//! point `precision × recall` of a greedy one-to-one matching.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::geometry::{angle_diff_mod_pi, rotated_iou, RBox};

pub const MATCH_IOU: f64 = 0.5;
/// Only GT boxes at least this elongated contribute to the angle error.
pub const ANGLE_MIN_ASPECT: f64 = 1.2;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBox {
    pub rbox: RBox,
    pub category: String,
}

impl LabeledBox {
    pub fn new(rbox: RBox, category: impl Into<String>) -> Self {
        Self { rbox, category: category.into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassReport {
    pub gt: usize,
    pub predicted: usize,
    /// Pairs matched at IoU ≥ 0.5.
    pub matched: usize,
    /// Mean over GT of the IoU with its greedily assigned prediction
    /// (0 when unassigned).
    pub mean_iou: f64,
    pub median_iou: f64,
    pub ap50: f64,
    /// Mean π-wrapped angle error in degrees over matched pairs whose GT
    /// aspect is at least 1.2; `None` when there are no such pairs.
    pub angle_error_deg: Option<f64>,
    pub angle_pairs: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub classes: BTreeMap<String, ClassReport>,
    /// Pooled statistics; `ap50` is the mean over classes.
    pub overall: ClassReport,
}

/// Greedy one-to-one matching in descending IoU among pairs with
/// IoU > `min_iou` (or ≥ when `inclusive`). Ties keep the lower
/// `(gt, pred)` index pair first.
pub fn greedy_match(pred: &[RBox], gt: &[RBox], min_iou: f64, inclusive: bool) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for (g, gb) in gt.iter().enumerate() {
        for (p, pb) in pred.iter().enumerate() {
            let iou = rotated_iou(pb, gb);
            if iou > min_iou || (inclusive && iou == min_iou) {
                pairs.push((g, p, iou));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut out = Vec::new();
    for (g, p, iou) in pairs {
        if !gt_used[g] && !pred_used[p] {
            gt_used[g] = true;
            pred_used[p] = true;
            out.push((g, p, iou));
        }
    }
    out
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Default)]
struct Accum {
    gt: usize,
    predicted: usize,
    matched: usize,
    ious: Vec<f64>,
    angle_sum: f64,
    angle_pairs: usize,
}

impl Accum {
    fn add_class(&mut self, pred: &[RBox], gt: &[RBox]) {
        self.gt += gt.len();
        self.predicted += pred.len();
        let mut best = vec![0.0; gt.len()];
        for (g, _, iou) in greedy_match(pred, gt, 0.0, false) {
            best[g] = iou;
        }
        self.ious.extend(best);
        for (g, p, _) in greedy_match(pred, gt, MATCH_IOU, true) {
            self.matched += 1;
            let gb = &gt[g];
            if gb.w.max(gb.h) >= ANGLE_MIN_ASPECT * gb.w.min(gb.h) {
                self.angle_sum += angle_diff_mod_pi(pred[p].theta, gb.theta).abs().to_degrees();
                self.angle_pairs += 1;
            }
        }
    }

    fn finish(mut self) -> ClassReport {
        let precision = if self.predicted == 0 { 0.0 } else { self.matched as f64 / self.predicted as f64 };
        let recall = if self.gt == 0 { 0.0 } else { self.matched as f64 / self.gt as f64 };
        let mean_iou = if self.ious.is_empty() { 0.0 } else { self.ious.iter().sum::<f64>() / self.ious.len() as f64 };
        ClassReport {
            gt: self.gt,
            predicted: self.predicted,
            matched: self.matched,
            mean_iou,
            median_iou: median(&mut self.ious),
            ap50: precision * recall,
            angle_error_deg: (self.angle_pairs > 0).then(|| self.angle_sum / self.angle_pairs as f64),
            angle_pairs: self.angle_pairs,
        }
    }
}

pub fn evaluate(pred: &[LabeledBox], gt: &[LabeledBox]) -> EvalReport {
    let mut names: Vec<&str> = pred.iter().chain(gt).map(|b| b.category.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let mut overall = Accum::default();
    let mut classes = BTreeMap::new();
    for name in names {
        let p: Vec<RBox> = pred.iter().filter(|b| b.category == name).map(|b| b.rbox).collect();
        let g: Vec<RBox> = gt.iter().filter(|b| b.category == name).map(|b| b.rbox).collect();
        let mut acc = Accum::default();
        acc.add_class(&p, &g);
        overall.add_class(&p, &g);
        classes.insert(name.to_string(), acc.finish());
    }
    let mut overall = overall.finish();
    overall.ap50 = if classes.is_empty() {
        0.0
    } else {
        classes.values().map(|c| c.ap50).sum::<f64>() / classes.len() as f64
    };
    EvalReport { classes, overall }
}

fn report_line(out: &mut String, name: &str, c: &ClassReport) {
    let _ = write!(
        out,
        "class={name} gt={} pred={} matched={} ap50={:.6} mean_iou={:.6} median_iou={:.6}",
        c.gt, c.predicted, c.matched, c.ap50, c.mean_iou, c.median_iou
    );
    match c.angle_error_deg {
        Some(a) => {
            let _ = writeln!(out, " angle_err_deg={a:.6} angle_pairs={}", c.angle_pairs);
        }
        None => {
            let _ = writeln!(out, " angle_err_deg=na angle_pairs=0");
        }
    }
}

/// Line-oriented `key=value` rendering: one line per class, then `all`.
pub fn format_report(r: &EvalReport) -> String {
    let mut out = String::new();
    for (name, c) in &r.classes {
        report_line(&mut out, name, c);
    }
    report_line(&mut out, "all", &r.overall);
    out
}
