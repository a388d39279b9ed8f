//! Binary panoptic quality and centroid-radius detection metrics.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::InstanceLabelMap;

/// Result of IoU-based instance matching.
#[derive(Debug, Clone)]
pub struct MatchResult {
    /// (pred id, gt id, IoU), sorted by (pred, gt).
    pub matches: Vec<(u32, u32, f64)>,
    /// Pred ids with no match (false positives), ascending.
    pub unmatched_pred: Vec<u32>,
    /// Gt ids with no match (false negatives), ascending.
    pub unmatched_gt: Vec<u32>,
}

/// Pixel-set IoU matching between two label maps: all pairs with
/// IoU strictly above `threshold`. For threshold ≥ 0.5 the matching is
/// one-to-one by a standard counting argument.
pub fn iou_matching(
    pred: &InstanceLabelMap,
    gt: &InstanceLabelMap,
    threshold: f64,
) -> Result<MatchResult> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Shape {
            context: "iou_matching",
            expected: format!("{}x{}", gt.height(), gt.width()),
            got: format!("{}x{}", pred.height(), pred.width()),
        });
    }
    let mut pred_area: HashMap<u32, u64> = HashMap::new();
    let mut gt_area: HashMap<u32, u64> = HashMap::new();
    let mut inter: HashMap<(u32, u32), u64> = HashMap::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if p != 0 {
            *pred_area.entry(p).or_insert(0) += 1;
        }
        if g != 0 {
            *gt_area.entry(g).or_insert(0) += 1;
        }
        if p != 0 && g != 0 {
            *inter.entry((p, g)).or_insert(0) += 1;
        }
    }
    let mut matches: Vec<(u32, u32, f64)> = inter
        .iter()
        .filter_map(|(&(p, g), &i)| {
            let union = pred_area[&p] + gt_area[&g] - i;
            let iou = i as f64 / union as f64;
            (iou > threshold).then_some((p, g, iou))
        })
        .collect();
    matches.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let matched_pred: Vec<u32> = matches.iter().map(|m| m.0).collect();
    let matched_gt: Vec<u32> = matches.iter().map(|m| m.1).collect();
    let mut unmatched_pred: Vec<u32> = pred_area
        .keys()
        .copied()
        .filter(|p| !matched_pred.contains(p))
        .collect();
    let mut unmatched_gt: Vec<u32> = gt_area
        .keys()
        .copied()
        .filter(|g| !matched_gt.contains(g))
        .collect();
    unmatched_pred.sort_unstable();
    unmatched_gt.sort_unstable();
    Ok(MatchResult {
        matches,
        unmatched_pred,
        unmatched_gt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanopticQuality {
    pub bpq: f64,
    pub sq: f64,
    pub dq: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Binary panoptic quality at the conventional IoU > 0.5 matching.
pub fn panoptic_quality(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<PanopticQuality> {
    panoptic_quality_at(pred, gt, 0.5)
}

/// Binary panoptic quality with an explicit IoU threshold (≥ 0.5 keeps the
/// matching one-to-one).
///
/// SQ is the mean IoU over true positives, DQ = TP/(TP + ½FP + ½FN), and
/// bPQ = SQ·DQ. Two empty maps agree perfectly and score 1.
pub fn panoptic_quality_at(
    pred: &InstanceLabelMap,
    gt: &InstanceLabelMap,
    threshold: f64,
) -> Result<PanopticQuality> {
    let m = iou_matching(pred, gt, threshold)?;
    let tp = m.matches.len();
    let fp = m.unmatched_pred.len();
    let fn_ = m.unmatched_gt.len();
    if tp == 0 && fp == 0 && fn_ == 0 {
        return Ok(PanopticQuality {
            bpq: 1.0,
            sq: 1.0,
            dq: 1.0,
            tp,
            fp,
            fn_,
        });
    }
    let sq = if tp > 0 {
        m.matches.iter().map(|m| m.2).sum::<f64>() / tp as f64
    } else {
        0.0
    };
    let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
    let dq = if denom > 0.0 { tp as f64 / denom } else { 0.0 };
    Ok(PanopticQuality {
        bpq: sq * dq,
        sq,
        dq,
        tp,
        fp,
        fn_,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentroidMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub n_pred: usize,
    pub n_gt: usize,
}

/// Arithmetic-mean centroids of every instance, keyed by id.
pub fn centroids(labels: &InstanceLabelMap) -> Vec<(u32, f64, f64)> {
    let mut acc: HashMap<u32, (f64, f64, u64)> = HashMap::new();
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            let id = labels.get(y, x);
            if id != 0 {
                let e = acc.entry(id).or_insert((0.0, 0.0, 0));
                e.0 += y as f64;
                e.1 += x as f64;
                e.2 += 1;
            }
        }
    }
    let mut out: Vec<(u32, f64, f64)> = acc
        .into_iter()
        .map(|(id, (sy, sx, n))| (id, sy / n as f64, sx / n as f64))
        .collect();
    out.sort_by_key(|c| c.0);
    out
}

/// Centroid-based detection metrics: a prediction is a true positive when
/// its centroid lies within `radius` pixels of an unmatched ground-truth
/// centroid. Matching is one-to-one, greedy by ascending distance (ties
/// broken by ids for determinism).
pub fn centroid_metrics(
    pred: &InstanceLabelMap,
    gt: &InstanceLabelMap,
    radius: f64,
) -> Result<CentroidMetrics> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Shape {
            context: "centroid_metrics",
            expected: format!("{}x{}", gt.height(), gt.width()),
            got: format!("{}x{}", pred.height(), pred.width()),
        });
    }
    let pc = centroids(pred);
    let gc = centroids(gt);
    let n_pred = pc.len();
    let n_gt = gc.len();
    if n_pred == 0 && n_gt == 0 {
        return Ok(CentroidMetrics {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            tp: 0,
            n_pred,
            n_gt,
        });
    }

    let mut candidates: Vec<(f64, u32, u32)> = Vec::new();
    for &(pid, py, px) in &pc {
        for &(gid, gy, gx) in &gc {
            let d = ((py - gy).powi(2) + (px - gx).powi(2)).sqrt();
            if d <= radius {
                candidates.push((d, pid, gid));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
    });
    let mut used_pred: Vec<u32> = Vec::new();
    let mut used_gt: Vec<u32> = Vec::new();
    let mut tp = 0usize;
    for (_, pid, gid) in candidates {
        if !used_pred.contains(&pid) && !used_gt.contains(&gid) {
            used_pred.push(pid);
            used_gt.push(gid);
            tp += 1;
        }
    }
    let precision = if n_pred > 0 { tp as f64 / n_pred as f64 } else { 0.0 };
    let recall = if n_gt > 0 { tp as f64 / n_gt as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(CentroidMetrics {
        precision,
        recall,
        f1,
        tp,
        n_pred,
        n_gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels_from(rows: &[&str]) -> InstanceLabelMap {
        let h = rows.len();
        let w = rows[0].len();
        let mut m = InstanceLabelMap::zeros(h, w);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.bytes().enumerate() {
                if ch != b'.' {
                    m.set(y, x, (ch - b'0') as u32);
                }
            }
        }
        m
    }

    #[test]
    fn identical_maps_match_perfectly() {
        let m = labels_from(&["11..", "11.2", "...2"]);
        let r = iou_matching(&m, &m, 0.5).unwrap();
        assert_eq!(r.matches.len(), 2);
        assert!(r.matches.iter().all(|&(p, g, iou)| p == g && iou == 1.0));
        assert!(r.unmatched_pred.is_empty() && r.unmatched_gt.is_empty());
        let pq = panoptic_quality(&m, &m).unwrap();
        assert_eq!(pq.bpq, 1.0);
    }

    #[test]
    fn disjoint_maps_are_all_fp_fn() {
        let a = labels_from(&["1...", "...."]);
        let b = labels_from(&["....", "...1"]);
        let r = iou_matching(&a, &b, 0.5).unwrap();
        assert!(r.matches.is_empty());
        assert_eq!(r.unmatched_pred, vec![1]);
        assert_eq!(r.unmatched_gt, vec![1]);
        let pq = panoptic_quality(&a, &b).unwrap();
        assert_eq!(pq.bpq, 0.0);
        assert_eq!(pq.dq, 0.0);
    }

    #[test]
    fn three_quarter_overlap_hand_case() {
        // GT is a 2×2 square; pred covers 3 of its 4 pixels and nothing else.
        let gt = labels_from(&["11.", "11.", "..."]);
        let pred = labels_from(&["11.", "1..", "..."]);
        let pq = panoptic_quality(&pred, &gt).unwrap();
        assert!((pq.sq - 0.75).abs() < 1e-12);
        assert_eq!(pq.dq, 1.0);
        assert!((pq.bpq - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_gt_means_zero_dq() {
        let gt = InstanceLabelMap::zeros(3, 3);
        let pred = labels_from(&["1..", "...", "..."]);
        let pq = panoptic_quality(&pred, &gt).unwrap();
        assert_eq!(pq.dq, 0.0);
        assert_eq!(pq.bpq, 0.0);
        assert_eq!(pq.fp, 1);
    }

    #[test]
    fn empty_vs_empty_scores_one() {
        let empty = InstanceLabelMap::zeros(3, 3);
        let pq = panoptic_quality(&empty, &empty).unwrap();
        assert_eq!(pq.bpq, 1.0);
        let cm = centroid_metrics(&empty, &empty, 12.0).unwrap();
        assert_eq!(cm.f1, 1.0);
    }

    #[test]
    fn dq_symmetric_under_swap() {
        let a = labels_from(&["11..", "..2.", "..2."]);
        let b = labels_from(&["11..", "....", "...."]);
        let ab = panoptic_quality(&a, &b).unwrap();
        let ba = panoptic_quality(&b, &a).unwrap();
        assert_eq!(ab.dq, ba.dq);
        assert_eq!(ab.fp, ba.fn_);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = InstanceLabelMap::zeros(2, 2);
        let b = InstanceLabelMap::zeros(2, 3);
        assert!(iou_matching(&a, &b, 0.5).is_err());
        assert!(centroid_metrics(&a, &b, 12.0).is_err());
    }

    #[test]
    fn centroid_exact_match() {
        let m = labels_from(&["11..", "11.2", "...2"]);
        let cm = centroid_metrics(&m, &m, 12.0).unwrap();
        assert_eq!((cm.precision, cm.recall, cm.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn centroid_outside_radius_scores_zero() {
        // Single-pixel instances 13 px apart with radius 12.
        let mut pred = InstanceLabelMap::zeros(1, 20);
        pred.set(0, 0, 1);
        let mut gt = InstanceLabelMap::zeros(1, 20);
        gt.set(0, 13, 1);
        let cm = centroid_metrics(&pred, &gt, 12.0).unwrap();
        assert_eq!((cm.precision, cm.recall, cm.f1), (0.0, 0.0, 0.0));
        // Exactly at the radius counts (inclusive rule).
        let mut gt2 = InstanceLabelMap::zeros(1, 20);
        gt2.set(0, 12, 1);
        let cm2 = centroid_metrics(&pred, &gt2, 12.0).unwrap();
        assert_eq!(cm2.tp, 1);
    }

    #[test]
    fn greedy_prefers_closest_pair() {
        // Two preds near one gt: the closer pred takes it, the other is FP.
        let mut pred = InstanceLabelMap::zeros(1, 10);
        pred.set(0, 2, 1);
        pred.set(0, 6, 2);
        let mut gt = InstanceLabelMap::zeros(1, 10);
        gt.set(0, 5, 1);
        let cm = centroid_metrics(&pred, &gt, 12.0).unwrap();
        assert_eq!(cm.tp, 1);
        assert!((cm.precision - 0.5).abs() < 1e-12);
        assert_eq!(cm.recall, 1.0);
    }
}
