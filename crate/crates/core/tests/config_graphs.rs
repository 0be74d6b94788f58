mod common;

use rand::seq::SliceRandom;
use rand::Rng;
use swiftface::config::{
    builtin_swiftface, infer_shapes, parse_config, serialize_config, shape_table, ConvSpec, LayerKind, NetworkSpec,
    TrainingMeta, YoloHeadConfig,
};
use swiftface::tensor::{Activation, Shape};

/// Builds a random graph that passes shape inference by tracking shapes as it goes.
fn random_graph(r: &mut impl Rng) -> NetworkSpec {
    let side = 4 << r.gen_range(0..4);
    let input = Shape::new(side, side, r.gen_range(1..=4));
    let mut kinds: Vec<LayerKind> = Vec::new();
    let mut shapes: Vec<Shape> = Vec::new();
    let n = r.gen_range(1..=14);
    for _ in 0..n {
        let cur = shapes.last().copied().unwrap_or(input);
        let kind = match r.gen_range(0..6) {
            0 if cur.height % 2 == 0 && cur.height > 1 => LayerKind::MaxPool { size: 2, stride: 2 },
            1 if cur.height < 64 => LayerKind::Upsample { factor: 2 },
            2 if !shapes.is_empty() => {
                let same: Vec<usize> = (0..shapes.len())
                    .filter(|&j| (shapes[j].height, shapes[j].width) == (cur.height, cur.width))
                    .collect();
                let take = r.gen_range(1..=same.len().min(3));
                let mut sources: Vec<usize> = same.choose_multiple(r, take).copied().collect();
                sources.shuffle(r);
                LayerKind::Route { sources }
            }
            3 => {
                let mut head = YoloHeadConfig::with_mask(vec![0, 1, 2]);
                let mask: Vec<usize> = (0..6).filter(|_| r.gen_bool(0.5)).collect();
                head.mask = if mask.is_empty() { vec![r.gen_range(0..6)] } else { mask };
                head.jitter = r.gen_range(0.0..1.0);
                head.ignore_thresh = r.gen_range(0.0..1.0);
                head.random = r.gen_range(0..2);
                kinds.push(LayerKind::Conv(ConvSpec {
                    filters: head.channels(),
                    size: 1,
                    stride: 1,
                    activation: Activation::Linear,
                    batchnorm: false,
                }));
                shapes.push(Shape::new(cur.height, cur.width, head.channels()));
                LayerKind::Yolo(head)
            }
            _ => LayerKind::Conv(ConvSpec {
                filters: r.gen_range(1..=32),
                size: if r.gen_bool(0.5) { 3 } else { 1 },
                stride: 1,
                activation: if r.gen_bool(0.7) {
                    Activation::Leaky
                } else {
                    Activation::Linear
                },
                batchnorm: r.gen_bool(0.7),
            }),
        };
        kinds.push(kind);
        let spec = NetworkSpec::new(input, kinds.clone());
        shapes = infer_shapes(&spec).expect("generator produced an invalid graph");
    }
    let mut spec = NetworkSpec::new(input, kinds);
    if r.gen_bool(0.5) {
        spec.training = Some(TrainingMeta {
            max_batches: r.gen_range(1000..100000),
            steps: (r.gen_range(0..1000), r.gen_range(1000..2000)),
            dataset: "faces".into(),
        });
    }
    spec
}

#[test]
fn round_trip_random_graphs() {
    let mut r = common::rng(99);
    for case in 0..100 {
        let spec = random_graph(&mut r);
        let text = serialize_config(&spec);
        assert_eq!(text, serialize_config(&spec));
        let back = parse_config(&text).unwrap_or_else(|e| panic!("case {case}: {e}\n{text}"));
        assert_eq!(back, spec, "case {case}\n{text}");
        assert_eq!(infer_shapes(&back).unwrap(), infer_shapes(&spec).unwrap());
    }
}

#[test]
fn round_trip_builtin() {
    let spec = builtin_swiftface();
    assert_eq!(parse_config(&serialize_config(&spec)).unwrap(), spec);
}

/// The full corrected shape chain, one row per layer.
#[test]
fn builtin_shape_chain() {
    let s = |h, w, c| Shape::new(h, w, c);
    let expected = [
        s(512, 512, 16),
        s(256, 256, 16),
        s(256, 256, 32),
        s(128, 128, 32),
        s(128, 128, 64),
        s(64, 64, 64),
        s(64, 64, 128),
        s(32, 32, 128),
        s(32, 32, 256),
        s(16, 16, 256),
        s(16, 16, 512),
        s(16, 16, 18),
        s(16, 16, 18),
        s(16, 16, 256),
        s(16, 16, 128),
        s(32, 32, 128),
        s(32, 32, 384),
        s(32, 32, 256),
        s(32, 32, 18),
        s(32, 32, 18),
    ];
    assert_eq!(infer_shapes(&builtin_swiftface()).unwrap(), expected);
    let spec = builtin_swiftface();
    assert_eq!(spec.layers[16].kind, LayerKind::Route { sources: vec![15, 8] });
}

#[test]
fn table_rows() {
    let table = shape_table(&builtin_swiftface()).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[0], "0 conv 16 3x3/1 512x512x3 512x512x16");
    assert_eq!(rows[16], "16 route 15,8 - - 32x32x384");
    assert!(rows[12].starts_with("12 yolo"));
}

#[test]
fn darknet_style_text_parses() {
    // Written the way hand-maintained configs usually look.
    let text = "\
[net]
# Testing
batch=1
subdivisions=1
width=32
height=32
channels=3
max_batches = 15000
steps=12000,13500

[convolutional]
batch_normalize=1
filters=8
size=3
stride=1
pad=1
activation=leaky

[maxpool]
size=2
stride=2

[convolutional]
size=1
stride=1
pad=1
filters=18
activation=linear

[yolo]
mask = 3,4,5
anchors = 10,14,  23,27,  37,58,  81,82,  135,169,  344,319
classes=1
num=6
jitter=.3
ignore_thresh = .7
truth_thresh = 1
random=1

[route]
layers = -3

[upsample]
stride=2

[route]
layers = -1, 0
";
    let spec = parse_config(text).unwrap();
    let shapes = infer_shapes(&spec).unwrap();
    assert_eq!(spec.layers.len(), 7);
    assert_eq!(spec.layers[4].kind, LayerKind::Route { sources: vec![1] });
    assert_eq!(spec.layers[6].kind, LayerKind::Route { sources: vec![5, 0] });
    assert_eq!(shapes[6], Shape::new(32, 32, 16));
    assert_eq!(spec.training.as_ref().unwrap().steps, (12000, 13500));
}
