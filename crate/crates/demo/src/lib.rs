//! Browser bindings for the swiftface playground page.
//!
//! Each export takes and returns JSON text. Failures come back as
//! `{"error": "..."}` rather than exceptions, so the page has one code path.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use swiftface::config::{builtin_swiftface, infer_shapes, parse_config, shape_rows};
use swiftface::detect::{decode_head, iou, nms, BBox, Detection, JsonBox};
use swiftface::eval::{map_5095, match_detections, FaceFlags, GroundTruthBox, GroundTruthSet};
use swiftface::Tensor;
use wasm_bindgen::prelude::*;

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

/// Layer table for `config` (config text, or `builtin`).
#[wasm_bindgen]
pub fn shape_table(config: &str) -> String {
    respond((|| {
        let spec = if config.trim() == "builtin" {
            builtin_swiftface()
        } else {
            parse_config(config).map_err(|e| e.to_string())?
        };
        let rows = shape_rows(&spec).map_err(|e| e.to_string())?;
        let text: Vec<String> = rows.iter().map(|r| r.render()).collect();
        Ok(json!({ "rows": rows, "text": text }))
    })())
}

fn default_logit() -> f32 {
    6.0
}

/// A face planted into one head cell as raw logits.
#[derive(Debug, Clone, Deserialize)]
pub struct PlantedFace {
    /// 0 for the 16x16 head, 1 for the 32x32 head.
    pub head: usize,
    pub row: usize,
    pub col: usize,
    pub anchor: usize,
    #[serde(default)]
    pub tx: f32,
    #[serde(default)]
    pub ty: f32,
    #[serde(default)]
    pub tw: f32,
    #[serde(default)]
    pub th: f32,
    #[serde(default = "default_logit")]
    pub objectness: f32,
    #[serde(default = "default_logit")]
    pub class: f32,
}

fn default_background() -> f32 {
    -8.0
}

#[derive(Debug, Clone, Deserialize)]
pub struct DecodeRequest {
    pub faces: Vec<PlantedFace>,
    pub conf: f32,
    pub nms: f32,
    /// Objectness logit everywhere nothing is planted.
    #[serde(default = "default_background")]
    pub background: f32,
}

#[derive(Debug, Clone, Serialize)]
struct DecodedBox {
    #[serde(flatten)]
    bbox: JsonBox,
    head: usize,
    kept: bool,
}

fn decode_request(req: &DecodeRequest) -> Result<Value, String> {
    let spec = builtin_swiftface();
    let shapes = infer_shapes(&spec).map_err(|e| e.to_string())?;
    let input_dim = spec.input.width;
    let mut candidates: Vec<(usize, Detection)> = Vec::new();
    for (head_no, (layer, cfg)) in spec.yolo_layers().enumerate() {
        let shape = shapes[layer];
        let per_anchor = cfg.values_per_anchor();
        let mut head = Tensor::zeros(shape.height, shape.width, shape.channels);
        for y in 0..shape.height {
            for x in 0..shape.width {
                for a in 0..cfg.mask.len() {
                    head.set(y, x, a * per_anchor + 4, req.background);
                }
            }
        }
        for f in req.faces.iter().filter(|f| f.head == head_no) {
            if f.row >= shape.height || f.col >= shape.width || f.anchor >= cfg.mask.len() {
                return Err(format!(
                    "face at head {} cell ({}, {}) anchor {} is outside the {}x{} grid",
                    f.head, f.row, f.col, f.anchor, shape.height, shape.width
                ));
            }
            let base = f.anchor * per_anchor;
            for (k, v) in [f.tx, f.ty, f.tw, f.th, f.objectness, f.class].into_iter().enumerate() {
                head.set(f.row, f.col, base + k, v);
            }
        }
        let decoded = decode_head(&head, cfg, input_dim).map_err(|e| e.to_string())?;
        candidates.extend(
            decoded
                .into_iter()
                .filter(|d| d.confidence > req.conf)
                .map(|d| (head_no, d)),
        );
    }
    let dets: Vec<Detection> = candidates.iter().map(|(_, d)| *d).collect();
    let kept = nms(&dets, req.nms);
    let boxes: Vec<DecodedBox> = candidates
        .iter()
        .map(|(head, d)| DecodedBox {
            bbox: JsonBox::from_detection(d),
            head: *head,
            kept: kept.contains(d),
        })
        .collect();
    Ok(json!({ "candidates": boxes.len(), "kept": kept.len(), "boxes": boxes }))
}

/// Decodes both heads with planted faces, then thresholds and suppresses.
/// Boxes are in 512x512 network pixels, top-left corner.
#[wasm_bindgen]
pub fn decode_boxes(request: &str) -> String {
    respond(
        serde_json::from_str::<DecodeRequest>(request)
            .map_err(|e| e.to_string())
            .and_then(|r| decode_request(&r)),
    )
}

#[derive(Debug, Clone, Deserialize)]
pub struct CornerBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScoreRequest {
    pub truths: Vec<CornerBox>,
    pub detections: Vec<JsonBox>,
}

fn score_request(req: &ScoreRequest) -> Value {
    let truths: Vec<BBox> = req
        .truths
        .iter()
        .map(|b| BBox::from_corner(b.x, b.y, b.w, b.h))
        .collect();
    let mut dets: Vec<Detection> = req.detections.iter().map(JsonBox::to_detection).collect();
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    let best_iou: Vec<f32> = dets
        .iter()
        .map(|d| truths.iter().map(|t| iou(&d.bbox, t)).fold(0.0, f32::max))
        .collect();
    let matched: Vec<bool> = match_detections(&dets, &truths, 0.5).into_iter().map(|m| m.1).collect();

    let mut gts = GroundTruthSet::default();
    gts.entries.insert(
        "canvas".into(),
        truths
            .iter()
            .map(|&bbox| GroundTruthBox {
                bbox,
                flags: FaceFlags::default(),
            })
            .collect(),
    );
    let report = map_5095(&[("canvas".to_string(), dets.clone())], &gts);
    let ranked: Vec<JsonBox> = dets.iter().map(JsonBox::from_detection).collect();
    json!({
        "ranked": ranked,
        "best_iou": best_iou,
        "matched_at_50": matched,
        "report": report.to_json(),
    })
}

/// Per-detection best IoU, matches at IoU 0.50, and AP over the ten
/// thresholds for one image's worth of boxes.
#[wasm_bindgen]
pub fn score_boxes(request: &str) -> String {
    respond(
        serde_json::from_str::<ScoreRequest>(request)
            .map_err(|e| e.to_string())
            .map(|r| score_request(&r)),
    )
}
