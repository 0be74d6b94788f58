//! WIDER FACE annotations, detection matching, and COCO-style mAP(.5:.95).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::detect::{iou, BBox, Detection};
use crate::error::{Error, Result};

/// Number of IoU thresholds in the .50:.05:.95 sweep.
pub const THRESHOLD_COUNT: usize = 10;

/// IoU threshold `k` of the sweep, `0.50 + 0.05·k`.
pub fn iou_threshold(k: usize) -> f32 {
    (50 + 5 * k) as f32 / 100.0
}

/// Per-box attribute flags from the annotation file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FaceFlags {
    pub blur: u8,
    pub expression: u8,
    pub illumination: u8,
    pub invalid: bool,
    pub occlusion: u8,
    pub pose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruthBox {
    pub bbox: BBox,
    pub flags: FaceFlags,
}

impl GroundTruthBox {
    /// Whether the box takes part in matching and in the ground-truth count.
    pub fn usable(&self) -> bool {
        !self.flags.invalid && self.bbox.w > 0.0 && self.bbox.h > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct GroundTruthSet {
    pub entries: BTreeMap<String, Vec<GroundTruthBox>>,
}

impl GroundTruthSet {
    pub fn usable_boxes(&self, image: &str) -> Vec<BBox> {
        self.entries
            .get(image)
            .map(|v| v.iter().filter(|g| g.usable()).map(|g| g.bbox).collect())
            .unwrap_or_default()
    }

    pub fn usable_count(&self) -> usize {
        self.entries
            .values()
            .map(|v| v.iter().filter(|g| g.usable()).count())
            .sum()
    }

    pub fn excluded_count(&self) -> usize {
        self.entries
            .values()
            .map(|v| v.iter().filter(|g| !g.usable()).count())
            .sum()
    }
}

/// Parses the `wider_face_*_bbx_gt.txt` layout: path, count, then one
/// `x y w h blur expression illumination invalid occlusion pose` line per
/// face. A zero count is followed by a single placeholder line.
pub fn parse_widerface(text: &str) -> Result<GroundTruthSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut set = GroundTruthSet::default();
    while let Some((path_line, path)) = lines.next() {
        let (count_line, count) = lines.next().ok_or_else(|| Error::Annotations {
            line: path_line,
            message: format!("record '{path}' has no face count"),
        })?;
        let count: usize = count.parse().map_err(|_| Error::Annotations {
            line: count_line,
            message: format!("malformed face count '{count}'"),
        })?;
        let mut boxes = Vec::with_capacity(count);
        for _ in 0..count.max(1) {
            let (line, text) = lines.next().ok_or_else(|| Error::Annotations {
                line: count_line,
                message: format!("record '{path}' ends before its {count} boxes"),
            })?;
            let fields = text
                .split_whitespace()
                .map(|f| f.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Annotations {
                    line,
                    message: format!("non-numeric box line '{text}'"),
                })?;
            if fields.len() < 4 {
                return Err(Error::Annotations {
                    line,
                    message: format!("box line has {} fields, need at least 4", fields.len()),
                });
            }
            if count == 0 {
                continue;
            }
            let flag = |i: usize| fields.get(i).copied().unwrap_or(0.0) as u8;
            boxes.push(GroundTruthBox {
                bbox: BBox::from_corner(fields[0], fields[1], fields[2], fields[3]),
                flags: FaceFlags {
                    blur: flag(4),
                    expression: flag(5),
                    illumination: flag(6),
                    invalid: flag(7) != 0,
                    occlusion: flag(8),
                    pose: flag(9),
                },
            });
        }
        set.entries.entry(path.to_string()).or_default().extend(boxes);
    }
    Ok(set)
}

/// Greedy matching in the given (confidence-descending) order: each detection
/// claims its best-overlapping unclaimed truth if that IoU reaches the threshold.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_threshold: f32) -> Vec<(Detection, bool)> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let best = gts
                .iter()
                .enumerate()
                .filter(|(g, _)| !taken[*g])
                .map(|(g, gt)| (g, iou(&d.bbox, gt)))
                .fold(None::<(usize, f32)>, |best, (g, v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((g, v)),
                });
            match best {
                Some((g, v)) if v >= iou_threshold => {
                    taken[g] = true;
                    (*d, true)
                }
                _ => (*d, false),
            }
        })
        .collect()
}

/// 101-point interpolated average precision.
///
/// `matches` are `(confidence, is_true_positive)`; they are ranked by
/// descending confidence (stable for ties).
pub fn average_precision(matches: &[(f32, bool)], num_gt: usize) -> f64 {
    if num_gt == 0 || matches.is_empty() {
        return 0.0;
    }
    let mut ranked: Vec<&(f32, bool)> = matches.iter().collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    for (n, (_, is_tp)) in ranked.iter().enumerate() {
        tp += usize::from(*is_tp);
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (n + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let idx = recall.partition_point(|&rc| rc < level);
        if let Some(p) = precision.get(idx) {
            sum += p;
        }
    }
    sum / 101.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EvalCounts {
    pub detections: usize,
    pub ground_truths: usize,
    /// True positives at IoU 0.50.
    pub matched: usize,
    pub excluded_ground_truths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// AP at IoU 0.50, 0.55, …, 0.95.
    pub ap_per_iou: [f64; THRESHOLD_COUNT],
    pub map_5095: f64,
    pub counts: EvalCounts,
}

impl EvalReport {
    /// `{"ap50": …, …, "ap95": …, "map_5095": …, "counts": {…}}`
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (k, ap) in self.ap_per_iou.iter().enumerate() {
            obj.insert(format!("ap{}", 50 + 5 * k), serde_json::json!(ap));
        }
        obj.insert("map_5095".into(), serde_json::json!(self.map_5095));
        obj.insert(
            "counts".into(),
            serde_json::to_value(self.counts).expect("counts serialize"),
        );
        serde_json::Value::Object(obj)
    }
}

/// Dataset-level AP at each of the ten IoU thresholds, pooled over images.
///
/// Detections on images without annotations are false positives.
pub fn map_5095(dets_per_image: &[(String, Vec<Detection>)], gts: &GroundTruthSet) -> EvalReport {
    let num_gt = gts.usable_count();
    let prepared: Vec<(Vec<Detection>, Vec<BBox>)> = dets_per_image
        .iter()
        .map(|(image, dets)| {
            let mut sorted = dets.clone();
            sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
            (sorted, gts.usable_boxes(image))
        })
        .collect();

    let mut ap_per_iou = [0.0; THRESHOLD_COUNT];
    let mut matched = 0;
    for (k, ap) in ap_per_iou.iter_mut().enumerate() {
        let threshold = iou_threshold(k);
        let pooled: Vec<(f32, bool)> = prepared
            .iter()
            .flat_map(|(dets, boxes)| {
                match_detections(dets, boxes, threshold)
                    .into_iter()
                    .map(|(d, tp)| (d.confidence, tp))
            })
            .collect();
        if k == 0 {
            matched = pooled.iter().filter(|(_, tp)| *tp).count();
        }
        *ap = average_precision(&pooled, num_gt);
    }
    EvalReport {
        map_5095: ap_per_iou.iter().sum::<f64>() / THRESHOLD_COUNT as f64,
        ap_per_iou,
        counts: EvalCounts {
            detections: dets_per_image.iter().map(|(_, d)| d.len()).sum(),
            ground_truths: num_gt,
            matched,
            excluded_ground_truths: gts.excluded_count(),
        },
    }
}
