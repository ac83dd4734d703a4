//! Detection scoring: ground truth from metadata planes, greedy IoU
//! matching, all-point interpolated average precision and AP by distance.
//!
//! Boxes are `(x0, y0, x1, y1)` with area `(x1 − x0)(y1 − y0)`. Boxes
//! extracted from metadata span pixel indices inclusively, so a 10×10 block
//! starting at the origin has box `(0, 0, 9, 9)`.

mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    ap_csv, parse_detections, parse_ground_truth, read_detections, read_ground_truth, write_detections,
    write_ground_truth,
};

use crate::sceneformat::ClassLabel;
use crate::spectral::MetadataPlanes;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const MIN_INSTANCE_PIXELS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("instance {instance_id} carries class ids {first} and {second}")]
    InconsistentClass { instance_id: u32, first: u32, second: u32 },
    #[error("instance {instance_id}: {msg}")]
    Instance { instance_id: u32, msg: String },
    #[error("metadata planes hold {got} pixels, expected {expected}")]
    Size { expected: usize, got: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("bin edges must be strictly increasing with at least two entries")]
    Bins,
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let w = (self.x1.min(o.x1) - self.x0.max(o.x0)).max(0.0);
        let h = (self.y1.min(o.y1) - self.y0.max(o.y0)).max(0.0);
        let inter = w * h;
        let union = self.area() + o.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub image_id: String,
    pub class_label: ClassLabel,
    pub bbox: BBox,
    /// Nearest depth over the instance's pixels, m.
    pub distance: f64,
    /// 0 when read from a text file.
    #[serde(default)]
    pub instance_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_label: ClassLabel,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthSet {
    pub objects: Vec<GroundTruthObject>,
    /// `(instance_id, pixel count)` of instances below the size cut.
    pub discarded: Vec<(u32, usize)>,
}

/// One object per nonzero instance id with at least `min_pixels` pixels,
/// ordered by instance id.
pub fn extract_ground_truth(
    image_id: &str,
    meta: &MetadataPlanes,
    width: usize,
    min_pixels: usize,
) -> Result<GroundTruthSet, EvalError> {
    let n = meta.instance_id.len();
    if width == 0 || !n.is_multiple_of(width) || meta.class_id.len() != n || meta.depth.len() != n {
        return Err(EvalError::Size {
            expected: n,
            got: meta.class_id.len().min(meta.depth.len()),
        });
    }
    struct Acc {
        class: u32,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        depth: f32,
        count: usize,
    }
    let mut acc: BTreeMap<u32, Acc> = BTreeMap::new();
    for i in 0..n {
        let id = meta.instance_id[i];
        if id == 0 {
            continue;
        }
        let (x, y) = (i % width, i / width);
        let (c, d) = (meta.class_id[i], meta.depth[i]);
        let a = acc.entry(id).or_insert(Acc {
            class: c,
            x0: x,
            y0: y,
            x1: x,
            y1: y,
            depth: d,
            count: 0,
        });
        if a.class != c {
            return Err(EvalError::InconsistentClass {
                instance_id: id,
                first: a.class,
                second: c,
            });
        }
        a.x0 = a.x0.min(x);
        a.y0 = a.y0.min(y);
        a.x1 = a.x1.max(x);
        a.y1 = a.y1.max(y);
        a.depth = a.depth.min(d);
        a.count += 1;
    }
    let mut out = GroundTruthSet::default();
    for (id, a) in acc {
        if a.count < min_pixels {
            out.discarded.push((id, a.count));
            continue;
        }
        let class_label = ClassLabel::from_id(a.class).ok_or_else(|| EvalError::Instance {
            instance_id: id,
            msg: format!("unknown class id {}", a.class),
        })?;
        if !(a.depth > 0.0) {
            return Err(EvalError::Instance {
                instance_id: id,
                msg: format!("non-positive depth {}", a.depth),
            });
        }
        out.objects.push(GroundTruthObject {
            image_id: image_id.into(),
            class_label,
            bbox: BBox::new(a.x0 as f64, a.y0 as f64, a.x1 as f64, a.y1 as f64),
            distance: f64::from(a.depth),
            instance_id: id,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    /// Index into the input detections.
    pub det: usize,
    pub tp: bool,
    /// Matched ground truth.
    pub gt: Option<usize>,
    /// Ground truth of highest IoU (> 0), matched or not.
    pub nearest_gt: Option<usize>,
}

/// Score order used everywhere: descending score, ties by input order.
fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Greedy matching for one image and class. Results are in score order.
pub fn match_detections(dets: &[(BBox, f64)], gts: &[BBox], iou_threshold: f64) -> Vec<MatchResult> {
    let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
    let mut used = vec![false; gts.len()];
    score_order(&scores)
        .into_iter()
        .map(|k| {
            let b = &dets[k].0;
            let mut best: Option<(usize, f64)> = None;
            let mut nearest: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                let iou = b.iou(gt);
                if iou > 0.0 && nearest.is_none_or(|n| iou > n.1) {
                    nearest = Some((g, iou));
                }
                if !used[g] && iou >= iou_threshold && best.is_none_or(|m| iou > m.1) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            MatchResult {
                det: k,
                tp: best.is_some(),
                gt: best.map(|b| b.0),
                nearest_gt: nearest.map(|n| n.0),
            }
        })
        .collect()
}

/// All-point interpolated AP over score-ordered TP flags. `None` when there
/// is no ground truth.
pub fn average_precision(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut points = Vec::new();
    for (k, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
            points.push(tp as f64 / (k + 1) as f64);
        }
    }
    let mut envelope = 0.0f64;
    let mut area = 0.0;
    for p in points.iter().rev() {
        envelope = envelope.max(*p);
        area += envelope;
    }
    Some((area / n_gt as f64).min(1.0))
}

fn group<'a, T>(items: &'a [T], key: impl Fn(&'a T) -> (&'a str, ClassLabel)) -> BTreeMap<(&'a str, ClassLabel), Vec<usize>> {
    let mut m: BTreeMap<(&str, ClassLabel), Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        m.entry(key(it)).or_default().push(i);
    }
    m
}

/// Matches every detection against the ground truth of its image and
/// class. Returns `(score, tp, matched or nearest gt index)` per detection
/// in input order.
fn match_all(dets: &[Detection], gts: &[GroundTruthObject], thr: f64) -> Vec<(f64, bool, Option<usize>)> {
    let gt_groups = group(gts, |g| (g.image_id.as_str(), g.class_label));
    let det_groups = group(dets, |d| (d.image_id.as_str(), d.class_label));
    let mut out = vec![(0.0, false, None); dets.len()];
    for (key, di) in det_groups {
        let gi = gt_groups.get(&key).cloned().unwrap_or_default();
        let boxes: Vec<BBox> = gi.iter().map(|&g| gts[g].bbox).collect();
        let ds: Vec<(BBox, f64)> = di.iter().map(|&d| (dets[d].bbox, dets[d].score)).collect();
        for m in match_detections(&ds, &boxes, thr) {
            let d = di[m.det];
            out[d] = (dets[d].score, m.tp, m.gt.or(m.nearest_gt).map(|g| gi[g]));
        }
    }
    out
}

fn pooled_ap(mut scored: Vec<(f64, bool)>, n_gt: usize) -> Option<f64> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let flags: Vec<bool> = scored.iter().map(|s| s.1).collect();
    average_precision(&flags, n_gt)
}

/// Plain AP per class over all images.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruthObject], iou_threshold: f64) -> BTreeMap<ClassLabel, Option<f64>> {
    let matched = match_all(dets, gts, iou_threshold);
    classes(dets, gts)
        .into_iter()
        .map(|c| {
            let scored = dets
                .iter()
                .zip(&matched)
                .filter(|(d, _)| d.class_label == c)
                .map(|(_, m)| (m.0, m.1))
                .collect();
            let n_gt = gts.iter().filter(|g| g.class_label == c).count();
            (c, pooled_ap(scored, n_gt))
        })
        .collect()
}

fn classes(dets: &[Detection], gts: &[GroundTruthObject]) -> Vec<ClassLabel> {
    let mut cs: Vec<ClassLabel> = dets.iter().map(|d| d.class_label).chain(gts.iter().map(|g| g.class_label)).collect();
    cs.sort();
    cs.dedup();
    cs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinResult {
    pub ap: Option<f64>,
    pub n_gt: usize,
    pub n_det: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApByDistance {
    pub iou_threshold: f64,
    pub bin_edges: Vec<f64>,
    pub classes: BTreeMap<ClassLabel, Vec<BinResult>>,
    /// Unmatched detections overlapping no ground truth, per class.
    pub unassigned_fp: BTreeMap<ClassLabel, usize>,
    /// Ground truth outside the bin range, per class.
    pub out_of_range_gt: BTreeMap<ClassLabel, usize>,
}

impl ApByDistance {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
    }
}

/// Default bins: 0 to 150 m in 10 m steps.
pub fn default_bin_edges() -> Vec<f64> {
    (0..=15).map(|k| f64::from(k) * 10.0).collect()
}

fn bin_of(edges: &[f64], d: f64) -> Option<usize> {
    if d < edges[0] || d >= edges[edges.len() - 1] {
        return None;
    }
    Some(edges.partition_point(|&e| e <= d) - 1)
}

/// AP per class and distance bin. Detections take the bin of their matched
/// ground truth, or of the highest-IoU ground truth when unmatched; those
/// overlapping nothing are only counted in `unassigned_fp`.
pub fn ap_by_distance(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    bin_edges: &[f64],
    iou_threshold: f64,
) -> Result<ApByDistance, EvalError> {
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(EvalError::Bins);
    }
    let nbins = bin_edges.len() - 1;
    let matched = match_all(dets, gts, iou_threshold);
    let mut result = ApByDistance {
        iou_threshold,
        bin_edges: bin_edges.to_vec(),
        classes: BTreeMap::new(),
        unassigned_fp: BTreeMap::new(),
        out_of_range_gt: BTreeMap::new(),
    };
    for c in classes(dets, gts) {
        let mut n_gt = vec![0usize; nbins];
        let mut out_of_range = 0;
        for g in gts.iter().filter(|g| g.class_label == c) {
            match bin_of(bin_edges, g.distance) {
                Some(b) => n_gt[b] += 1,
                None => out_of_range += 1,
            }
        }
        let mut scored: Vec<Vec<(f64, bool)>> = vec![Vec::new(); nbins];
        let mut unassigned = 0;
        for (_, m) in dets.iter().zip(&matched).filter(|(d, _)| d.class_label == c) {
            match m.2 {
                Some(g) => {
                    if let Some(b) = bin_of(bin_edges, gts[g].distance) {
                        scored[b].push((m.0, m.1));
                    }
                }
                None => unassigned += 1,
            }
        }
        let bins = scored
            .into_iter()
            .zip(n_gt)
            .map(|(s, n)| BinResult {
                n_det: s.len(),
                ap: pooled_ap(s, n),
                n_gt: n,
            })
            .collect();
        result.classes.insert(c, bins);
        result.unassigned_fp.insert(c, unassigned);
        result.out_of_range_gt.insert(c, out_of_range);
    }
    Ok(result)
}

#[cfg(test)]
mod tests;
