//! Network description: layer specs, the built-in detector graph, a sectioned
//! `key=value` text format, and shape inference.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Shape};

pub const INPUT_SIZE: usize = 512;

/// The six anchor priors shared by both heads, in input-image pixels.
pub const ANCHORS: [(f32, f32); 6] = [
    (10.0, 14.0),
    (23.0, 27.0),
    (37.0, 58.0),
    (81.0, 82.0),
    (135.0, 169.0),
    (344.0, 319.0),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub size: usize,
    pub stride: usize,
    pub activation: Activation,
    pub batchnorm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YoloHeadConfig {
    pub mask: Vec<usize>,
    pub anchors: Vec<(f32, f32)>,
    pub classes: usize,
    pub num: usize,
    // Training-only; kept so configs survive a round trip.
    pub jitter: f32,
    pub ignore_thresh: f32,
    pub truth_thresh: f32,
    pub random: i32,
}

impl YoloHeadConfig {
    pub fn with_mask(mask: Vec<usize>) -> Self {
        YoloHeadConfig {
            mask,
            anchors: ANCHORS.to_vec(),
            classes: 1,
            num: ANCHORS.len(),
            jitter: 0.3,
            ignore_thresh: 0.7,
            truth_thresh: 1.0,
            random: 1,
        }
    }

    /// Values predicted per anchor: four box terms, objectness, class scores.
    pub fn values_per_anchor(&self) -> usize {
        self.classes + 5
    }

    pub fn channels(&self) -> usize {
        self.mask.len() * self.values_per_anchor()
    }

    /// Anchors selected by the mask, in mask order.
    pub fn masked_anchors(&self) -> Vec<(f32, f32)> {
        self.mask.iter().map(|&i| self.anchors[i]).collect()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.classes != 1 {
            return Err(format!("yolo head must have classes=1, got {}", self.classes));
        }
        if self.anchors.len() != self.num {
            return Err(format!(
                "yolo head declares num={} but lists {} anchors",
                self.num,
                self.anchors.len()
            ));
        }
        if self.mask.is_empty() {
            return Err("yolo head has an empty mask".into());
        }
        if let Some(bad) = self.mask.iter().find(|&&m| m >= self.num) {
            return Err(format!("yolo mask index {bad} out of range for num={}", self.num));
        }
        if self.anchors.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0)) {
            return Err("yolo anchors must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv(ConvSpec),
    MaxPool { size: usize, stride: usize },
    Upsample { factor: usize },
    Route { sources: Vec<usize> },
    Yolo(YoloHeadConfig),
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "conv",
            LayerKind::MaxPool { .. } => "max",
            LayerKind::Upsample { .. } => "upsample",
            LayerKind::Route { .. } => "route",
            LayerKind::Yolo(_) => "yolo",
        }
    }

    fn section(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "convolutional",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Upsample { .. } => "upsample",
            LayerKind::Route { .. } => "route",
            LayerKind::Yolo(_) => "yolo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
}

/// Training schedule recorded alongside the graph. Never read by inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingMeta {
    pub max_batches: u32,
    pub steps: (u32, u32),
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub training: Option<TrainingMeta>,
}

impl NetworkSpec {
    pub fn new(input: Shape, kinds: Vec<LayerKind>) -> Self {
        NetworkSpec {
            input,
            layers: kinds
                .into_iter()
                .enumerate()
                .map(|(index, kind)| LayerSpec { index, kind })
                .collect(),
            training: None,
        }
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = (usize, &ConvSpec)> {
        self.layers.iter().filter_map(|l| match &l.kind {
            LayerKind::Conv(c) => Some((l.index, c)),
            _ => None,
        })
    }

    pub fn yolo_layers(&self) -> impl Iterator<Item = (usize, &YoloHeadConfig)> {
        self.layers.iter().filter_map(|l| match &l.kind {
            LayerKind::Yolo(y) => Some((l.index, y)),
            _ => None,
        })
    }
}

fn conv(filters: usize, size: usize, activation: Activation, batchnorm: bool) -> LayerKind {
    LayerKind::Conv(ConvSpec {
        filters,
        size,
        stride: 1,
        activation,
        batchnorm,
    })
}

fn leaky(filters: usize, size: usize) -> LayerKind {
    conv(filters, size, Activation::Leaky, true)
}

fn head_conv(filters: usize) -> LayerKind {
    conv(filters, 1, Activation::Linear, false)
}

fn pool() -> LayerKind {
    LayerKind::MaxPool { size: 2, stride: 2 }
}

/// The 20-entry detector graph: the 19 tabulated layers plus the fine-scale
/// yolo head that consumes layer 18.
pub fn builtin_swiftface() -> NetworkSpec {
    let mut spec = NetworkSpec::new(
        Shape::new(INPUT_SIZE, INPUT_SIZE, 3),
        vec![
            leaky(16, 3),
            pool(),
            leaky(32, 3),
            pool(),
            leaky(64, 3),
            pool(),
            leaky(128, 3),
            pool(),
            leaky(256, 3),
            pool(),
            leaky(512, 3),
            head_conv(18),
            LayerKind::Yolo(YoloHeadConfig::with_mask(vec![3, 4, 5])),
            LayerKind::Route { sources: vec![9] },
            leaky(128, 1),
            LayerKind::Upsample { factor: 2 },
            LayerKind::Route { sources: vec![15, 8] },
            leaky(256, 3),
            head_conv(18),
            LayerKind::Yolo(YoloHeadConfig::with_mask(vec![1, 2, 3])),
        ],
    );
    spec.training = Some(TrainingMeta {
        max_batches: 15000,
        steps: (12000, 13500),
        dataset: "WIDERFACE".into(),
    });
    spec
}

/// Checks per-layer structural rules that do not depend on shapes.
fn check_layer(layer: &LayerSpec) -> std::result::Result<(), String> {
    match &layer.kind {
        LayerKind::Conv(c) => {
            if c.filters == 0 {
                return Err("conv needs at least one filter".into());
            }
            if c.size == 0 || c.size % 2 == 0 {
                return Err(format!("conv size must be odd, got {}", c.size));
            }
            if c.stride != 1 {
                return Err(format!("only stride-1 convolution is supported, got {}", c.stride));
            }
        }
        LayerKind::MaxPool { size, stride } => {
            if (*size, *stride) != (2, 2) {
                return Err(format!(
                    "only 2x2/2 max pooling is supported, got {size}x{size}/{stride}"
                ));
            }
        }
        LayerKind::Upsample { factor } => {
            if *factor != 2 {
                return Err(format!("only 2x upsampling is supported, got {factor}x"));
            }
        }
        LayerKind::Route { sources } => {
            if sources.is_empty() {
                return Err("route lists no layers".into());
            }
            if let Some(s) = sources.iter().find(|&&s| s >= layer.index) {
                return Err(format!(
                    "route references layer {s}, which does not precede layer {}",
                    layer.index
                ));
            }
        }
        LayerKind::Yolo(y) => y.validate()?,
    }
    Ok(())
}

/// Output shape of every layer, in order.
pub fn infer_shapes(spec: &NetworkSpec) -> Result<Vec<Shape>> {
    if spec.layers.is_empty() {
        return Err(Error::Network("network has no layers".into()));
    }
    if spec.input.is_empty() {
        return Err(Error::Network(format!("input shape {} is empty", spec.input)));
    }
    let mut shapes: Vec<Shape> = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        if layer.index != i {
            return Err(Error::Network(format!(
                "layer at position {i} is numbered {}",
                layer.index
            )));
        }
        check_layer(layer).map_err(|m| Error::Network(format!("layer {i}: {m}")))?;
        let input = shapes.last().copied().unwrap_or(spec.input);
        let output = match &layer.kind {
            LayerKind::Conv(c) => Shape::new(input.height, input.width, c.filters),
            LayerKind::MaxPool { .. } => {
                if input.height % 2 != 0 || input.width % 2 != 0 {
                    return Err(Error::layer_shape(
                        i,
                        "max pool needs even spatial dims",
                        "even height and width",
                        input,
                    ));
                }
                Shape::new(input.height / 2, input.width / 2, input.channels)
            }
            LayerKind::Upsample { .. } => Shape::new(input.height * 2, input.width * 2, input.channels),
            LayerKind::Route { sources } => {
                let first = shapes[sources[0]];
                let mut channels = 0;
                for &s in sources {
                    let src = shapes[s];
                    if (src.height, src.width) != (first.height, first.width) {
                        return Err(Error::layer_shape(
                            i,
                            "route sources differ spatially",
                            format!("{}x{}xC (layer {})", first.height, first.width, sources[0]),
                            src,
                        ));
                    }
                    channels += src.channels;
                }
                Shape::new(first.height, first.width, channels)
            }
            LayerKind::Yolo(y) => {
                if input.channels != y.channels() {
                    return Err(Error::layer_shape(
                        i,
                        "yolo head channel count",
                        format!("{}x{}x{}", input.height, input.width, y.channels()),
                        input,
                    ));
                }
                if input.height != input.width {
                    return Err(Error::layer_shape(
                        i,
                        "yolo head must be square",
                        format!("{0}x{0}x{1}", input.height, input.channels),
                        input,
                    ));
                }
                input
            }
        };
        shapes.push(output);
    }
    Ok(shapes)
}

/// One row of the human-readable layer table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeRow {
    pub index: usize,
    pub kind: &'static str,
    pub filters: String,
    pub size_stride: String,
    pub input: Option<Shape>,
    pub output: Shape,
}

impl ShapeRow {
    pub fn render(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.index,
            self.kind,
            self.filters,
            self.size_stride,
            self.input.map_or_else(|| "-".to_string(), |s| s.to_string()),
            self.output
        )
    }
}

pub fn shape_rows(spec: &NetworkSpec) -> Result<Vec<ShapeRow>> {
    let shapes = infer_shapes(spec)?;
    Ok(spec
        .layers
        .iter()
        .map(|layer| {
            let i = layer.index;
            let input = if i == 0 { spec.input } else { shapes[i - 1] };
            let dash = || "-".to_string();
            let (filters, size_stride, input) = match &layer.kind {
                LayerKind::Conv(c) => (
                    c.filters.to_string(),
                    format!("{0}x{0}/{1}", c.size, c.stride),
                    Some(input),
                ),
                LayerKind::MaxPool { size, stride } => (dash(), format!("{size}x{size}/{stride}"), Some(input)),
                LayerKind::Upsample { factor } => (dash(), format!("{factor}x/1"), Some(input)),
                LayerKind::Route { sources } => (join(sources), dash(), None),
                LayerKind::Yolo(_) => (dash(), dash(), Some(input)),
            };
            ShapeRow {
                index: i,
                kind: layer.kind.name(),
                filters,
                size_stride,
                input,
                output: shapes[i],
            }
        })
        .collect())
}

pub fn shape_table(spec: &NetworkSpec) -> Result<String> {
    let mut out = String::new();
    for row in shape_rows(spec)? {
        out.push_str(&row.render());
        out.push('\n');
    }
    Ok(out)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Canonical text form. Route sources are written as absolute indices.
pub fn serialize_config(spec: &NetworkSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[net]");
    let _ = writeln!(out, "height={}", spec.input.height);
    let _ = writeln!(out, "width={}", spec.input.width);
    let _ = writeln!(out, "channels={}", spec.input.channels);
    if let Some(t) = &spec.training {
        let _ = writeln!(out, "max_batches={}", t.max_batches);
        let _ = writeln!(out, "steps={},{}", t.steps.0, t.steps.1);
        let _ = writeln!(out, "dataset={}", t.dataset);
    }
    for layer in &spec.layers {
        let _ = writeln!(out, "\n[{}]", layer.kind.section());
        match &layer.kind {
            LayerKind::Conv(c) => {
                let _ = writeln!(out, "batch_normalize={}", u8::from(c.batchnorm));
                let _ = writeln!(out, "filters={}", c.filters);
                let _ = writeln!(out, "size={}", c.size);
                let _ = writeln!(out, "stride={}", c.stride);
                let _ = writeln!(out, "pad=1");
                let _ = writeln!(out, "activation={}", c.activation.as_str());
            }
            LayerKind::MaxPool { size, stride } => {
                let _ = writeln!(out, "size={size}");
                let _ = writeln!(out, "stride={stride}");
            }
            LayerKind::Upsample { factor } => {
                let _ = writeln!(out, "stride={factor}");
            }
            LayerKind::Route { sources } => {
                let _ = writeln!(out, "layers={}", join(sources));
            }
            LayerKind::Yolo(y) => {
                let anchors: Vec<String> = y.anchors.iter().map(|(w, h)| format!("{w},{h}")).collect();
                let _ = writeln!(out, "mask={}", join(&y.mask));
                let _ = writeln!(out, "anchors={}", anchors.join(","));
                let _ = writeln!(out, "classes={}", y.classes);
                let _ = writeln!(out, "num={}", y.num);
                let _ = writeln!(out, "jitter={}", y.jitter);
                let _ = writeln!(out, "ignore_thresh={}", y.ignore_thresh);
                let _ = writeln!(out, "truth_thresh={}", y.truth_thresh);
                let _ = writeln!(out, "random={}", y.random);
            }
        }
    }
    out
}

struct Section {
    name: String,
    line: usize,
    entries: Vec<(usize, String, String)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        let pos = self.entries.iter().position(|(_, k, _)| k == key)?;
        let (line, _, value) = self.entries.remove(pos);
        Some((line, value))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Config {
                line,
                message: format!("invalid value '{v}' for {key}"),
            }),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.parse(key)?.ok_or_else(|| Error::Config {
            line: self.line,
            message: format!("[{}] is missing {key}", self.name),
        })
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<(usize, Vec<T>)>> {
        let Some((line, v)) = self.take(key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| Error::Config {
                    line,
                    message: format!("invalid list item '{s}' for {key}"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(Some((line, items)))
    }

    /// Rejects keys left over after a layer section was interpreted.
    fn finish(self) -> Result<()> {
        match self.entries.first() {
            None => Ok(()),
            Some((line, key, _)) => Err(Error::Config {
                line: *line,
                message: format!("unknown key '{key}' in [{}]", self.name),
            }),
        }
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("unterminated section header '{line}'"),
            })?;
            sections.push(Section {
                name: name.trim().to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: line_no,
            message: format!("expected key=value, got '{line}'"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config {
                line: line_no,
                message: "empty key".into(),
            });
        }
        let section = sections.last_mut().ok_or_else(|| Error::Config {
            line: line_no,
            message: "key=value before the first section".into(),
        })?;
        if section.entries.iter().any(|(_, k, _)| k == key) {
            return Err(Error::Config {
                line: line_no,
                message: format!("duplicate key '{key}'"),
            });
        }
        section
            .entries
            .push((line_no, key.to_string(), value.trim().to_string()));
    }
    Ok(sections)
}

fn parse_activation(section: &mut Section) -> Result<Activation> {
    match section.take("activation") {
        Some((_, v)) if v == "leaky" => Ok(Activation::Leaky),
        Some((_, v)) if v == "linear" => Ok(Activation::Linear),
        Some((line, v)) => Err(Error::Config {
            line,
            message: format!("unsupported activation '{v}'"),
        }),
        None => Err(Error::Config {
            line: section.line,
            message: "convolution is missing activation".into(),
        }),
    }
}

fn parse_layer(index: usize, mut s: Section) -> Result<LayerSpec> {
    let header = s.line;
    let kind = match s.name.as_str() {
        "convolutional" | "conv" => {
            let batchnorm = s.parse::<u8>("batch_normalize")?.unwrap_or(0) != 0;
            let filters = s.require("filters")?;
            let size: usize = s.require("size")?;
            let stride = s.parse("stride")?.unwrap_or(1);
            let pad = s.parse::<u8>("pad")?.unwrap_or(0);
            if size > 1 && pad == 0 {
                return Err(Error::Config {
                    line: header,
                    message: "only same-padded convolution (pad=1) is supported".into(),
                });
            }
            let activation = parse_activation(&mut s)?;
            LayerKind::Conv(ConvSpec {
                filters,
                size,
                stride,
                activation,
                batchnorm,
            })
        }
        "maxpool" => {
            let size = s.parse("size")?.unwrap_or(2);
            let stride = s.parse("stride")?.unwrap_or(size);
            LayerKind::MaxPool { size, stride }
        }
        "upsample" => LayerKind::Upsample {
            factor: s.parse("stride")?.unwrap_or(2),
        },
        "route" => {
            let (line, raw) = s.list::<i64>("layers")?.ok_or_else(|| Error::Config {
                line: header,
                message: "route is missing layers".into(),
            })?;
            let sources = raw
                .into_iter()
                .map(|r| {
                    let abs = if r < 0 { index as i64 + r } else { r };
                    if abs < 0 || abs >= index as i64 {
                        Err(Error::Config {
                            line,
                            message: format!("layer {index}: route {r} does not resolve to an earlier layer"),
                        })
                    } else {
                        Ok(abs as usize)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if sources.is_empty() {
                return Err(Error::Config {
                    line,
                    message: "route lists no layers".into(),
                });
            }
            LayerKind::Route { sources }
        }
        "yolo" => {
            let (anchor_line, flat) = s.list::<f32>("anchors")?.ok_or_else(|| Error::Config {
                line: header,
                message: "yolo is missing anchors".into(),
            })?;
            if flat.len() % 2 != 0 {
                return Err(Error::Config {
                    line: anchor_line,
                    message: "anchors must come in width,height pairs".into(),
                });
            }
            let anchors: Vec<(f32, f32)> = flat.chunks(2).map(|p| (p[0], p[1])).collect();
            let num = s.parse("num")?.unwrap_or(anchors.len());
            let mask = match s.list::<usize>("mask")? {
                Some((_, m)) => m,
                None => (0..num).collect(),
            };
            let head = YoloHeadConfig {
                mask,
                anchors,
                classes: s.require("classes")?,
                num,
                jitter: s.parse("jitter")?.unwrap_or(0.2),
                ignore_thresh: s.parse("ignore_thresh")?.unwrap_or(0.5),
                truth_thresh: s.parse("truth_thresh")?.unwrap_or(1.0),
                random: s.parse("random")?.unwrap_or(0),
            };
            head.validate()
                .map_err(|message| Error::Config { line: header, message })?;
            LayerKind::Yolo(head)
        }
        other => {
            return Err(Error::Config {
                line: header,
                message: format!("unknown section [{other}]"),
            })
        }
    };
    s.finish()?;
    let layer = LayerSpec { index, kind };
    check_layer(&layer).map_err(|message| Error::Config {
        line: header,
        message: format!("layer {index}: {message}"),
    })?;
    Ok(layer)
}

pub fn parse_config(text: &str) -> Result<NetworkSpec> {
    let mut sections = split_sections(text)?.into_iter();
    let mut net = match sections.next() {
        Some(s) if s.name == "net" || s.name == "network" => s,
        Some(s) => {
            return Err(Error::Config {
                line: s.line,
                message: format!("expected [net] first, found [{}]", s.name),
            })
        }
        None => {
            return Err(Error::Config {
                line: 1,
                message: "no [net] section".into(),
            })
        }
    };
    let input = Shape::new(
        net.parse("height")?.unwrap_or(INPUT_SIZE),
        net.parse("width")?.unwrap_or(INPUT_SIZE),
        net.parse("channels")?.unwrap_or(3),
    );
    let max_batches = net.parse::<u32>("max_batches")?;
    let steps = net.list::<u32>("steps")?;
    let dataset = net.take("dataset").map(|(_, v)| v);
    let training = match (max_batches, steps) {
        (None, None) => None,
        (Some(max_batches), Some((line, steps))) => {
            let [a, b] = steps[..] else {
                return Err(Error::Config {
                    line,
                    message: format!("expected two steps, got {}", steps.len()),
                });
            };
            Some(TrainingMeta {
                max_batches,
                steps: (a, b),
                dataset: dataset.unwrap_or_default(),
            })
        }
        _ => {
            return Err(Error::Config {
                line: net.line,
                message: "max_batches and steps must be given together".into(),
            })
        }
    };
    // Other [net] keys are training hyper-parameters this engine does not use.

    let layers = sections
        .enumerate()
        .map(|(index, s)| parse_layer(index, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkSpec {
        input,
        layers,
        training,
    })
}
