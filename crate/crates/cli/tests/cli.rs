mod common;

use common::*;
use swiftface::config::builtin_swiftface;
use swiftface::detect::{parse_detections_json, JsonBox};
use swiftface::image::{decode_pnm, encode_ppm, RgbImage};
use swiftface::weights::{count_params, save_weights, zero_init};

const BIN: &str = env!("CARGO_BIN_EXE_swiftface");

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shapes_matches_golden_table() {
    let (code, out, _) = cli(&["shapes"]);
    assert_eq!(code, 0);
    assert_eq!(out, include_str!("golden/builtin_shapes.txt"));
    assert!(out.lines().any(|l| l == "0 conv 16 3x3/1 512x512x3 512x512x16"));
    assert!(out
        .lines()
        .any(|l| l.starts_with("16 route") && l.ends_with(" 32x32x384")));
}

#[test]
fn shapes_json_rows() {
    let (code, out, _) = cli(&["shapes", "--json"]);
    assert_eq!(code, 0);
    let rows: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 20);
    assert_eq!(rows[18]["output"]["channels"], 18);
}

#[test]
fn route_to_future_layer_is_a_data_error_citing_the_layer() {
    let dir = tmp();
    let cfg = dir.path().join("bad.cfg");
    let text = swiftface::config::serialize_config(&builtin_swiftface()).replacen("layers=9", "layers=14", 1);
    std::fs::write(&cfg, text).unwrap();
    let (code, _, err) = cli(&["shapes", "--model", s(&cfg)]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("13"), "{err}");
}

#[test]
fn init_weights_is_deterministic_and_sized() {
    let dir = tmp();
    let a = dir.path().join("a.weights");
    let b = dir.path().join("b.weights");
    assert_eq!(cli(&["init-weights", "--seed", "9", "--out", s(&a)]).0, 0);
    assert_eq!(cli(&["init-weights", "--seed", "9", "--out", s(&b)]).0, 0);
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.len(), 20 + 4 * count_params(&builtin_swiftface()).unwrap());
    assert_eq!(a.len(), 10_034_788);
}

#[test]
fn detect_runs_on_initialized_weights() {
    let dir = tmp();
    let weights = dir.path().join("w.weights");
    let image = dir.path().join("one.ppm");
    std::fs::write(&image, encode_ppm(&RgbImage::new(512, 512))).unwrap();
    assert_eq!(cli(&["init-weights", "--seed", "3", "--out", s(&weights)]).0, 0);
    let (code, out, err) = cli(&[
        "detect",
        "--weights",
        s(&weights),
        "--input",
        s(&image),
        "--threads",
        "1",
    ]);
    assert_eq!(code, 0, "{err}");
    let records = parse_detections_json(&out).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].image, s(&image));
}

#[test]
fn zero_weights_give_empty_detections_above_boundary() {
    let dir = tmp();
    let weights = dir.path().join("zero.weights");
    std::fs::write(&weights, save_weights(&zero_init(&builtin_swiftface()).unwrap())).unwrap();
    write_corpus(dir.path(), 3, 1);
    let (code, out, err) = cli(&[
        "detect",
        "--weights",
        s(&weights),
        "--input",
        s(dir.path()),
        "--conf",
        "0.3",
    ]);
    assert_eq!(code, 0, "{err}");
    let records = parse_detections_json(&out).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.detections.is_empty()));
}

#[test]
fn planted_weights_give_one_box_and_matching_drawing() {
    let dir = tmp();
    let weights = dir.path().join("planted.weights");
    let image = dir.path().join("face.ppm");
    let json = dir.path().join("out.json");
    std::fs::write(&weights, save_weights(&planted_params())).unwrap();
    std::fs::write(&image, encode_ppm(&planted_image())).unwrap();
    let (code, _, err) = cli(&[
        "detect",
        "--weights",
        s(&weights),
        "--input",
        s(&image),
        "--out",
        s(&json),
        "--draw",
    ]);
    assert_eq!(code, 0, "{err}");
    let records = parse_detections_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(records.len(), 1);
    let dets = &records[0].detections;
    assert_eq!(dets.len(), 1, "{dets:?}");
    let expected = JsonBox {
        x: PLANTED_CX - PLANTED_W / 2.0,
        y: PLANTED_CY - PLANTED_H / 2.0,
        w: PLANTED_W,
        h: PLANTED_H,
        confidence: 1.0,
    };
    assert_eq!(dets[0], expected);

    let drawn = decode_pnm(&std::fs::read(dir.path().join("face_det.ppm")).unwrap()).unwrap();
    let red = [255, 0, 0];
    // 167.5 rounds to 168; right edge 167.5 + 81 = 248.5 → 249, last pixel 248.
    for (x, y) in [(168, 71), (169, 72), (248, 152), (247, 151), (208, 71), (168, 112)] {
        assert_eq!(drawn.pixel(x, y), red, "({x}, {y})");
    }
    for (x, y) in [(167, 71), (170, 73), (249, 152), (208, 112)] {
        assert_ne!(drawn.pixel(x, y), red, "({x}, {y})");
    }
}

#[test]
fn undecodable_images_are_skipped_and_counted() {
    let dir = tmp();
    write_corpus(dir.path(), 2, 5);
    std::fs::write(dir.path().join("broken.ppm"), b"P6\n10 10\n255\nshort").unwrap();
    let (code, out, err) = cli(&["detect", "--seed", "1", "--input", s(dir.path()), "--threads", "2"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(parse_detections_json(&out).unwrap().len(), 2);
    assert!(err.contains("skipping") && err.contains("broken.ppm"), "{err}");
    assert!(err.contains("1 skipped"), "{err}");
}

#[test]
fn list_file_input_preserves_order() {
    let dir = tmp();
    write_corpus(dir.path(), 3, 2);
    let list = dir.path().join("list.txt");
    std::fs::write(&list, "# reversed\nimg02.ppm\nimg00.ppm\n\nimg01.ppm\n").unwrap();
    let (code, out, err) = cli(&["detect", "--seed", "4", "--input", s(&list), "--threads", "3"]);
    assert_eq!(code, 0, "{err}");
    let names: Vec<String> = parse_detections_json(&out)
        .unwrap()
        .into_iter()
        .map(|r| r.image)
        .collect();
    assert_eq!(names, ["img02.ppm", "img00.ppm", "img01.ppm"]);
}

#[test]
fn bench_reports_counts() {
    let dir = tmp();
    write_corpus(dir.path(), 2, 8);
    let (code, out, err) = cli(&[
        "bench",
        "--seed",
        "1",
        "--input",
        s(dir.path()),
        "--json",
        "--threads",
        "1",
    ]);
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["n_images"], 2);
    assert_eq!(report["threads"], 1);
    let (fps, t) = (
        report["fps"].as_f64().unwrap(),
        report["total_time_s"].as_f64().unwrap(),
    );
    assert!((fps * t - 2.0).abs() <= 1e-6 * 2.0);
}

fn write_eval_fixture(dir: &std::path::Path, dets: &str) -> (String, String) {
    let ann = dir.join("gt.txt");
    std::fs::write(
        &ann,
        "a.jpg\n1\n0 0 10 10 0 0 0 0 0 0\nb.jpg\n1\n100 50 10 10 0 0 0 0 0 0\n",
    )
    .unwrap();
    let det = dir.join("dets.json");
    std::fs::write(&det, dets).unwrap();
    (s(&det).to_string(), s(&ann).to_string())
}

#[test]
fn eval_iou_06_fixture_scores_03() {
    let dir = tmp();
    let (det, ann) = write_eval_fixture(
        dir.path(),
        r#"[{"image":"a.jpg","detections":[{"x":2.5,"y":0,"w":10,"h":10,"confidence":0.9}]},
            {"image":"b.jpg","detections":[{"x":102.5,"y":50,"w":10,"h":10,"confidence":0.8}]}]"#,
    );
    let (code, out, err) = cli(&["eval", "--input", &det, "--annotations", &ann, "--json"]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["map_5095"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(v["ap60"], 1.0);
    assert_eq!(v["ap65"], 0.0);

    let (_, text, _) = cli(&["eval", "--input", &det, "--annotations", &ann]);
    assert!(text.lines().any(|l| l == "map_5095 0.3000"), "{text}");
}

#[test]
fn eval_perfect_and_empty() {
    let dir = tmp();
    let (det, ann) = write_eval_fixture(
        dir.path(),
        r#"[{"image":"a.jpg","detections":[{"x":0,"y":0,"w":10,"h":10,"confidence":0.9}]},
            {"image":"b.jpg","detections":[{"x":100,"y":50,"w":10,"h":10,"confidence":0.8}]}]"#,
    );
    let (_, out, _) = cli(&["eval", "--input", &det, "--annotations", &ann, "--json"]);
    assert_eq!(
        serde_json::from_str::<serde_json::Value>(&out).unwrap()["map_5095"],
        1.0
    );

    let (det, ann) = write_eval_fixture(dir.path(), "[]");
    let (_, out, _) = cli(&["eval", "--input", &det, "--annotations", &ann, "--json"]);
    assert_eq!(
        serde_json::from_str::<serde_json::Value>(&out).unwrap()["map_5095"],
        0.0
    );
}

#[test]
fn eval_schema_error_names_the_field() {
    let dir = tmp();
    let (det, ann) = write_eval_fixture(
        dir.path(),
        r#"[{"image":"a.jpg","detections":[{"x":0,"y":0,"w":10,"confidence":0.9}]}]"#,
    );
    let (code, _, err) = cli(&["eval", "--input", &det, "--annotations", &ann]);
    assert_eq!(code, 2);
    assert!(err.contains("\"h\""), "{err}");
}

#[test]
fn exit_codes_from_the_binary() {
    let run = |args: &[&str]| std::process::Command::new(BIN).args(args).output().unwrap();
    assert_eq!(run(&["shapes"]).status.code(), Some(0));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        run(&["detect", "--input", "x.ppm"]).status.code(),
        Some(1),
        "weights or seed required"
    );
    assert_eq!(
        run(&["detect", "--seed", "1", "--weights", "w", "--input", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(&["detect", "--seed", "1", "--input", "x", "--conf", "1.5"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(&["detect", "--seed", "1", "--input", "x", "--threads", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(&["detect", "--seed", "1", "--input", "x", "--draw"]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(&["detect", "--seed", "1", "--input", "/nonexistent/x.ppm"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["detect", "--weights", "/nonexistent/w", "--input", "x"])
            .status
            .code(),
        Some(2)
    );
    let dir = tmp();
    let empty = run(&["bench", "--seed", "1", "--input", s(dir.path())]);
    assert_eq!(empty.status.code(), Some(2));
    let truncated = dir.path().join("short.weights");
    std::fs::write(
        &truncated,
        &save_weights(&zero_init(&builtin_swiftface()).unwrap())[..1000],
    )
    .unwrap();
    std::fs::write(dir.path().join("a.ppm"), encode_ppm(&RgbImage::new(8, 8))).unwrap();
    let out = run(&["detect", "--weights", s(&truncated), "--input", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("short.weights"));
}
