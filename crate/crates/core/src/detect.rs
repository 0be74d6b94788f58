//! Head decoding, suppression, and mapping boxes back to the source image.

use serde::{Deserialize, Serialize};

use crate::config::{NetworkSpec, YoloHeadConfig};
use crate::engine::{BoxMapping, ForwardResult, PreprocessedImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_CONF_THRESHOLD: f32 = 0.25;
pub const DEFAULT_NMS_THRESHOLD: f32 = 0.45;

/// Center-size box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    pub fn from_corner(left: f32, top: f32, w: f32, h: f32) -> Self {
        BBox {
            cx: left + w / 2.0,
            cy: top + h / 2.0,
            w,
            h,
        }
    }

    pub fn left(&self) -> f32 {
        self.cx - self.w / 2.0
    }

    pub fn top(&self) -> f32 {
        self.cy - self.h / 2.0
    }

    pub fn right(&self) -> f32 {
        self.cx + self.w / 2.0
    }

    pub fn bottom(&self) -> f32 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f32 {
        self.w * self.h
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let iw = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub objectness: f32,
    pub class_prob: f32,
    pub confidence: f32,
}

impl Detection {
    pub fn new(bbox: BBox, objectness: f32, class_prob: f32) -> Self {
        Detection {
            bbox,
            objectness,
            class_prob,
            confidence: objectness * class_prob,
        }
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Decodes every cell and masked anchor of one square head.
///
/// Per anchor the channels are `[tx, ty, tw, th, to, tc]`, anchor blocks are
/// contiguous, and detections come out ordered by row, column, then anchor.
pub fn decode_head(head: &Tensor, cfg: &YoloHeadConfig, input_dim: usize) -> Result<Vec<Detection>> {
    let per_anchor = cfg.values_per_anchor();
    if head.channels() != cfg.channels() {
        return Err(Error::Shape(format!(
            "head has {} channels, expected {} ({} anchors x {})",
            head.channels(),
            cfg.channels(),
            cfg.mask.len(),
            per_anchor
        )));
    }
    if head.height() != head.width() {
        return Err(Error::Shape(format!("head {} is not square", head.shape())));
    }
    let grid = head.height();
    let stride = input_dim as f32 / grid as f32;
    let anchors = cfg.masked_anchors();
    let mut out = Vec::with_capacity(grid * grid * anchors.len());
    for i in 0..grid {
        for j in 0..grid {
            let cell = head.cell(i, j);
            for (a, &(aw, ah)) in anchors.iter().enumerate() {
                let t = &cell[a * per_anchor..(a + 1) * per_anchor];
                let bbox = BBox {
                    cx: (j as f32 + sigmoid(t[0])) * stride,
                    cy: (i as f32 + sigmoid(t[1])) * stride,
                    w: aw * t[2].exp(),
                    h: ah * t[3].exp(),
                };
                out.push(Detection::new(bbox, sigmoid(t[4]), sigmoid(t[5])));
            }
        }
    }
    Ok(out)
}

/// Greedy class-agnostic suppression; output sorted by descending confidence.
pub fn nms(dets: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[rank] {
            continue;
        }
        keep.push(dets[i]);
        for (later, &j) in order.iter().enumerate().skip(rank + 1) {
            if !suppressed[later] && iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[later] = true;
            }
        }
    }
    keep
}

impl BoxMapping {
    pub fn apply(&self, b: &BBox) -> BBox {
        BBox {
            cx: (b.cx - self.offset_x) * self.scale_x,
            cy: (b.cy - self.offset_y) * self.scale_y,
            w: b.w * self.scale_x,
            h: b.h * self.scale_y,
        }
    }
}

/// Decode all heads, keep `confidence > conf_threshold`, suppress, and map to
/// source-image pixels.
pub fn postprocess(
    result: &ForwardResult,
    spec: &NetworkSpec,
    image: &PreprocessedImage,
    conf_threshold: f32,
    nms_threshold: f32,
) -> Result<Vec<Detection>> {
    let candidates = candidates(result, spec, conf_threshold)?;
    Ok(nms(&candidates, nms_threshold)
        .into_iter()
        .map(|d| Detection {
            bbox: image.mapping.apply(&d.bbox),
            ..d
        })
        .collect())
}

/// Decoded detections above the confidence threshold, before suppression,
/// in network-input pixels.
pub fn candidates(result: &ForwardResult, spec: &NetworkSpec, conf_threshold: f32) -> Result<Vec<Detection>> {
    let input_dim = spec.input.width;
    let mut all = Vec::new();
    for (layer, head) in &result.heads {
        let cfg = spec
            .yolo_layers()
            .find(|(i, _)| i == layer)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::Network(format!("layer {layer} is not a yolo layer")))?;
        all.extend(
            decode_head(head, cfg, input_dim)?
                .into_iter()
                .filter(|d| d.confidence > conf_threshold),
        );
    }
    Ok(all)
}

/// One detection in the interchange JSON: top-left corner, original pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsonBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image: String,
    pub detections: Vec<JsonBox>,
}

fn round4(v: f32) -> f64 {
    (v as f64 * 1e4).round() / 1e4
}

impl JsonBox {
    pub fn from_detection(d: &Detection) -> Self {
        JsonBox {
            x: round4(d.bbox.left()),
            y: round4(d.bbox.top()),
            w: round4(d.bbox.w),
            h: round4(d.bbox.h),
            confidence: round4(d.confidence),
        }
    }

    pub fn to_detection(&self) -> Detection {
        let c = self.confidence as f32;
        Detection {
            bbox: BBox::from_corner(self.x as f32, self.y as f32, self.w as f32, self.h as f32),
            objectness: c,
            class_prob: 1.0,
            confidence: c,
        }
    }
}

/// Parses the detection JSON: an array of `{image, detections}` records (a
/// single record object is also accepted).
pub fn parse_detections_json(text: &str) -> Result<Vec<ImageDetections>> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Detections(format!("invalid JSON: {e}")))?;
    let records = match value {
        serde_json::Value::Array(items) => items,
        obj @ serde_json::Value::Object(_) => vec![obj],
        _ => return Err(Error::Detections("expected an array of image records".into())),
    };
    records
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let image = rec
                .get("image")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Detections(format!("record {i}: missing string field \"image\"")))?
                .to_string();
            let dets = rec
                .get("detections")
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::Detections(format!("record {i}: missing array field \"detections\"")))?;
            let detections = dets
                .iter()
                .enumerate()
                .map(|(k, d)| {
                    let field = |name: &str| {
                        d.get(name).and_then(|v| v.as_f64()).ok_or_else(|| {
                            Error::Detections(format!("record {i} detection {k}: missing numeric field \"{name}\""))
                        })
                    };
                    Ok(JsonBox {
                        x: field("x")?,
                        y: field("y")?,
                        w: field("w")?,
                        h: field("h")?,
                        confidence: field("confidence")?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ImageDetections { image, detections })
        })
        .collect()
}
