//! Overlap-aware instance evaluation: IoU matching, per-threshold average
//! precision and its mean over a threshold grid.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::Mask;
use crate::error::{Error, Result};

/// Thresholds 0.5, 0.55, ..., 0.95.
pub fn thresholds_fine() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Thresholds 0.5, 0.6, ..., 0.9.
pub fn thresholds_coarse() -> Vec<f64> {
    (0..5).map(|i| (50 + 10 * i) as f64 / 100.0).collect()
}

/// Resolves a named threshold grid (`fine` or `coarse`).
pub fn threshold_preset(name: &str) -> Option<Vec<f64>> {
    match name {
        "fine" => Some(thresholds_fine()),
        "coarse" => Some(thresholds_coarse()),
        _ => None,
    }
}

fn check_shapes(a: &Mask, b: &Mask) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::ShapeMismatch(format!(
            "masks of shape {:?} and {:?}",
            a.grid().shape(),
            b.grid().shape()
        )));
    }
    Ok(())
}

/// Intersection over union; 0 when both masks are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    check_shapes(a, b)?;
    let inter = a.intersection_count(b);
    let union = a.count() + b.count() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Pairwise IoU, `matrix[g][p]`, between ground-truth and predicted masks.
pub fn iou_matrix(pred: &[Mask], gt: &[Mask]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = gt.first().or(pred.first()) else {
        return Ok(Vec::new());
    };
    for m in gt.iter().chain(pred) {
        check_shapes(first, m)?;
    }
    let n = first.grid().len();
    // CSR of predicted ids per pixel
    let mut start = vec![0usize; n + 1];
    for m in pred {
        for q in m.pixels() {
            start[q + 1] += 1;
        }
    }
    for i in 0..n {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut ids = vec![0usize; start[n]];
    for (j, m) in pred.iter().enumerate() {
        for q in m.pixels() {
            ids[fill[q]] = j;
            fill[q] += 1;
        }
    }
    let pred_sizes: Vec<usize> = pred.iter().map(Mask::count).collect();
    Ok(gt
        .iter()
        .map(|g| {
            let mut inter = vec![0usize; pred.len()];
            let mut size = 0usize;
            for q in g.pixels() {
                size += 1;
                for &j in &ids[start[q]..start[q + 1]] {
                    inter[j] += 1;
                }
            }
            inter
                .iter()
                .zip(&pred_sizes)
                .map(|(&i, &s)| {
                    let union = size + s - i;
                    if union == 0 {
                        0.0
                    } else {
                        i as f64 / union as f64
                    }
                })
                .collect()
        })
        .collect())
}

/// Counts and precision at one IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ap: f64,
}

/// One-to-one matching of pairs with IoU strictly above `threshold`, taken
/// greedily by descending IoU; ties go to the lower (gt, pred) index pair.
/// Returns the matched `(gt, pred)` pairs.
pub fn greedy_match(matrix: &[Vec<f64>], n_pred: usize, threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (g, row) in matrix.iter().enumerate() {
        for (p, &v) in row.iter().enumerate() {
            if v > threshold {
                pairs.push((v, g, p));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut gt_used = vec![false; matrix.len()];
    let mut pred_used = vec![false; n_pred];
    let mut matches = Vec::new();
    for (_, g, p) in pairs {
        if !gt_used[g] && !pred_used[p] {
            gt_used[g] = true;
            pred_used[p] = true;
            matches.push((g, p));
        }
    }
    matches
}

fn row_from_matrix(matrix: &[Vec<f64>], n_gt: usize, n_pred: usize, threshold: f64) -> ApRow {
    let tp = greedy_match(matrix, n_pred, threshold).len();
    let fp = n_pred - tp;
    let fn_ = n_gt - tp;
    let denom = tp + fp + fn_;
    let ap = if denom == 0 { 1.0 } else { tp as f64 / denom as f64 };
    ApRow { threshold, tp, fp, fn_, ap }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidThreshold(format!(
            "IoU threshold {threshold} not in (0, 1)"
        )));
    }
    Ok(())
}

/// TP, FP, FN and `AP = TP / (TP + FP + FN)` at one IoU threshold. Two empty
/// sets score AP = 1.
pub fn ap_dsb(pred: &[Mask], gt: &[Mask], threshold: f64) -> Result<ApRow> {
    check_threshold(threshold)?;
    let m = iou_matrix(pred, gt)?;
    Ok(row_from_matrix(&m, gt.len(), pred.len(), threshold))
}

/// Mean AP over `thresholds`.
pub fn av_ap(pred: &[Mask], gt: &[Mask], thresholds: &[f64]) -> Result<f64> {
    Ok(evaluate(pred, gt, thresholds)?.avap)
}

/// Best IoU of a ground-truth instance against any prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub gt: usize,
    pub best_pred: Option<usize>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ApRow>,
    pub avap: f64,
    pub thresholds: Vec<f64>,
    pub gt_instances: usize,
    pub pred_instances: usize,
    pub per_instance: Vec<InstanceScore>,
}

/// Full report over a threshold grid.
pub fn evaluate(pred: &[Mask], gt: &[Mask], thresholds: &[f64]) -> Result<EvalReport> {
    if thresholds.is_empty() {
        return Err(Error::InvalidThreshold("threshold list is empty".into()));
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    let matrix = iou_matrix(pred, gt)?;
    let rows: Vec<ApRow> = thresholds
        .par_iter()
        .map(|&t| row_from_matrix(&matrix, gt.len(), pred.len(), t))
        .collect();
    let avap = rows.iter().map(|r| r.ap).sum::<f64>() / rows.len() as f64;
    let per_instance = matrix
        .iter()
        .enumerate()
        .map(|(g, row)| {
            let best = row
                .iter()
                .enumerate()
                .fold(None::<(usize, f64)>, |acc, (p, &v)| match acc {
                    Some((_, b)) if b >= v => acc,
                    _ => Some((p, v)),
                });
            InstanceScore {
                gt: g,
                best_pred: best.filter(|b| b.1 > 0.0).map(|b| b.0),
                iou: best.map_or(0.0, |b| b.1),
            }
        })
        .collect();
    Ok(EvalReport {
        rows,
        avap,
        thresholds: thresholds.to_vec(),
        gt_instances: gt.len(),
        pred_instances: pred.len(),
        per_instance,
    })
}

impl EvalReport {
    /// Tab-separated table: one row per threshold, then an `avap` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("threshold\ttp\tfp\tfn\tap\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.6}\n",
                r.threshold, r.tp, r.fp, r.fn_, r.ap
            ));
        }
        out.push_str(&format!("avap\t\t\t\t{:.6}\n", self.avap));
        out
    }

    /// Per-instance best-IoU table.
    pub fn instances_tsv(&self) -> String {
        let mut out = String::from("gt\tbest_pred\tiou\n");
        for s in &self.per_instance {
            let pred = s.best_pred.map_or_else(|| "-".to_string(), |p| p.to_string());
            out.push_str(&format!("{}\t{}\t{:.6}\n", s.gt, pred, s.iou));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, threshold: f64) -> Option<&ApRow> {
        self.rows.iter().find(|r| (r.threshold - threshold).abs() < 1e-12)
    }
}
