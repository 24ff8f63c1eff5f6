//! Mask average precision over the IoU ladder 0.50, 0.55, ..., 0.95.
//!
//! IoUs are kept as exact `(intersection, union)` pixel counts; a pair meets
//! threshold `k` iff `100·inter >= (50 + 5k)·union`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::coco::CocoData;
use crate::error::{Error, Result};
use crate::imaging::mask_overlap;
use crate::labeler::InstanceAnnotation;

pub const IOU_THRESHOLDS: usize = 10;

/// IoU threshold `k` as a fraction.
pub fn iou_threshold(k: usize) -> f64 {
    (50 + 5 * k) as f64 / 100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Overlap {
    inter: u64,
    union: u64,
}

impl Overlap {
    fn meets(self, k: usize) -> bool {
        self.union > 0 && self.inter as u128 * 100 >= (50 + 5 * k as u128) * self.union as u128
    }

    fn cmp_iou(self, other: Overlap) -> Ordering {
        let a = self.inter as u128 * other.union.max(1) as u128;
        let b = other.inter as u128 * self.union.max(1) as u128;
        a.cmp(&b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    /// AP at each threshold of the ladder.
    pub ap: Vec<f64>,
    pub mean: f64,
    pub gts: usize,
    pub predictions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_ap: BTreeMap<u32, ClassAp>,
    pub map: f64,
    pub images: usize,
    pub gts: usize,
    pub predictions: usize,
}

/// Greedy assignment for one class at one threshold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    pub class_id: u32,
    pub threshold_index: usize,
    /// `(prediction id, matched gt id)` in processing order.
    pub pairs: Vec<(u64, Option<u64>)>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

struct ClassData<'a> {
    gts: Vec<&'a InstanceAnnotation>,
    /// Predictions by score descending, id ascending.
    preds: Vec<&'a InstanceAnnotation>,
    /// Per prediction, overlaps with the same-image gts as `(gt index, overlap)`.
    overlaps: Vec<Vec<(usize, Overlap)>>,
}

fn class_data<'a>(gt: &'a CocoData, pred: &'a CocoData, class_id: u32) -> Result<ClassData<'a>> {
    let gts: Vec<&InstanceAnnotation> = gt.annotations.iter().filter(|a| a.category_id() == class_id).collect();
    let mut preds: Vec<&InstanceAnnotation> = pred
        .annotations
        .iter()
        .filter(|a| a.category_id() == class_id)
        .collect();
    preds.sort_by(|a, b| b.score().total_cmp(&a.score()).then(a.id().cmp(&b.id())));
    let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id()).or_default().push(i);
    }
    let mut overlaps = Vec::with_capacity(preds.len());
    for p in &preds {
        let mut row = Vec::new();
        for &gi in by_image.get(&p.image_id()).map(Vec::as_slice).unwrap_or(&[]) {
            let (inter, union) = mask_overlap(p.mask(), gts[gi].mask())?;
            row.push((gi, Overlap { inter, union }));
        }
        overlaps.push(row);
    }
    Ok(ClassData { gts, preds, overlaps })
}

fn greedy(data: &ClassData<'_>, k: usize) -> Vec<Option<usize>> {
    let mut taken = vec![false; data.gts.len()];
    data.overlaps
        .iter()
        .map(|row| {
            let mut best: Option<(usize, Overlap)> = None;
            for &(gi, o) in row {
                if taken[gi] {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bi, bo)) => match o.cmp_iou(bo) {
                        Ordering::Greater => true,
                        Ordering::Equal => data.gts[gi].id() < data.gts[bi].id(),
                        Ordering::Less => false,
                    },
                };
                if better {
                    best = Some((gi, o));
                }
            }
            let hit = best.filter(|&(_, o)| o.meets(k)).map(|(gi, _)| gi);
            if let Some(gi) = hit {
                taken[gi] = true;
            }
            hit
        })
        .collect()
}

/// 101-point interpolated AP from the ordered hit list.
fn interpolated_ap(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut curve: Vec<(usize, f64)> = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        curve.push((tp, tp as f64 / (i + 1) as f64));
    }
    // running max from the end gives max precision at recall >= r
    let mut best = vec![0.0f64; curve.len() + 1];
    for i in (0..curve.len()).rev() {
        best[i] = best[i + 1].max(curve[i].1);
    }
    let mut sum = 0.0;
    let mut j = 0;
    for r in 0..=100usize {
        while j < curve.len() && curve[j].0 * 100 < r * n_gt {
            j += 1;
        }
        sum += if j < curve.len() { best[j] } else { 0.0 };
    }
    sum / 101.0
}

fn check_compatible(gt: &CocoData, pred: &CocoData) -> Result<()> {
    let gc: BTreeSet<(u32, &str)> = gt.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    let pc: BTreeSet<(u32, &str)> = pred.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    if gc != pc {
        return Err(Error::CategoryMismatch(format!(
            "ground truth has {} categories, predictions {}; tables differ",
            gc.len(),
            pc.len()
        )));
    }
    let gi: BTreeSet<(u64, usize, usize)> = gt.images.iter().map(|i| (i.id, i.width, i.height)).collect();
    let pi: BTreeSet<(u64, usize, usize)> = pred.images.iter().map(|i| (i.id, i.width, i.height)).collect();
    if gi != pi {
        let missing = gi.symmetric_difference(&pi).next().map(|i| i.0);
        return Err(Error::ImageSetMismatch(format!(
            "image sets differ (first difference at image {})",
            missing.unwrap_or_default()
        )));
    }
    Ok(())
}

/// Greedy matching of one class at threshold index `k`.
pub fn match_predictions(gt: &CocoData, pred: &CocoData, class_id: u32, k: usize) -> Result<MatchResult> {
    check_compatible(gt, pred)?;
    let data = class_data(gt, pred, class_id)?;
    let hits = greedy(&data, k);
    let pairs: Vec<(u64, Option<u64>)> = data
        .preds
        .iter()
        .zip(&hits)
        .map(|(p, h)| (p.id(), h.map(|gi| data.gts[gi].id())))
        .collect();
    let tp = hits.iter().filter(|h| h.is_some()).count();
    Ok(MatchResult {
        class_id,
        threshold_index: k,
        tp,
        fp: pairs.len() - tp,
        fn_: data.gts.len() - tp,
        pairs,
    })
}

pub fn evaluate_map(gt: &CocoData, pred: &CocoData) -> Result<EvalReport> {
    check_compatible(gt, pred)?;
    let classes: BTreeSet<u32> = gt.categories.iter().map(|c| c.id).collect();
    let mut per_class_ap = BTreeMap::new();
    for &c in &classes {
        let data = class_data(gt, pred, c)?;
        if data.gts.is_empty() && data.preds.is_empty() {
            continue;
        }
        let ap: Vec<f64> = (0..IOU_THRESHOLDS)
            .map(|k| {
                let hits: Vec<bool> = greedy(&data, k).iter().map(Option::is_some).collect();
                interpolated_ap(&hits, data.gts.len())
            })
            .collect();
        let mean = ap.iter().sum::<f64>() / IOU_THRESHOLDS as f64;
        per_class_ap.insert(
            c,
            ClassAp {
                ap,
                mean,
                gts: data.gts.len(),
                predictions: data.preds.len(),
            },
        );
    }
    let map = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().map(|c| c.mean).sum::<f64>() / per_class_ap.len() as f64
    };
    Ok(EvalReport {
        per_class_ap,
        map,
        images: gt.images.len(),
        gts: gt.annotations.len(),
        predictions: pred.annotations.len(),
    })
}
