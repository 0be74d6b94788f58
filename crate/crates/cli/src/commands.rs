use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use swiftface::bench::{BenchReport, StageTimes};
use swiftface::config::{builtin_swiftface, parse_config, shape_rows, shape_table};
use swiftface::detect::{parse_detections_json, postprocess, ImageDetections, JsonBox};
use swiftface::engine::{preprocess, ResizeMode};
use swiftface::eval::{map_5095, parse_widerface, GroundTruthSet};
use swiftface::image::{decode_pnm, encode_ppm, RgbImage};
use swiftface::weights::{count_params, load_weights, random_init, save_weights};
use swiftface::{Detection, Network, NetworkSpec};

use crate::input::{resolve_inputs, InputImage};
use crate::{CliError, CliResult, DetectArgs, EvalArgs, InitWeightsArgs, RunArgs, ShapesArgs};

const BOX_COLOR: [u8; 3] = [255, 0, 0];
const BOX_THICKNESS: i64 = 2;

pub fn load_spec(model: &str) -> CliResult<NetworkSpec> {
    if model == "builtin" {
        return Ok(builtin_swiftface());
    }
    let path = Path::new(model);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub struct Model {
    pub network: Network,
    pub mode: ResizeMode,
}

pub fn load_model(model: &str, weights: Option<&Path>, seed: Option<u64>, letterbox: bool) -> CliResult<Model> {
    let spec = load_spec(model)?;
    let params = match (weights, seed) {
        (Some(path), _) => {
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            load_weights(&bytes, &spec).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        (None, Some(seed)) => random_init(&spec, seed)?,
        (None, None) => return Err(CliError::Usage("one of --weights or --seed is required".into())),
    };
    Ok(Model {
        network: Network::new(spec, &params)?,
        mode: if letterbox {
            ResizeMode::Letterbox
        } else {
            ResizeMode::Stretch
        },
    })
}

#[derive(Debug, Clone)]
pub struct ImageResult {
    pub name: String,
    pub detections: Vec<Detection>,
    pub times: StageTimes,
    /// The decoded source image, kept only when drawing.
    pub image: Option<RgbImage>,
}

#[derive(Debug, Clone)]
pub struct DetectionRun {
    pub results: Vec<ImageResult>,
    pub skipped: usize,
    pub wall_s: f64,
    pub threads: usize,
}

impl DetectionRun {
    pub fn to_json(&self) -> String {
        let records: Vec<ImageDetections> = self
            .results
            .iter()
            .map(|r| ImageDetections {
                image: r.name.clone(),
                detections: r.detections.iter().map(JsonBox::from_detection).collect(),
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&records).expect("detections serialize");
        text.push('\n');
        text
    }
}

enum ImageFailure {
    /// Unreadable or undecodable file: warn and carry on.
    Skip(String),
    Fatal(swiftface::Error),
}

fn process_image(
    model: &Model,
    input: &InputImage,
    conf: f32,
    nms: f32,
    keep_image: bool,
) -> Result<ImageResult, ImageFailure> {
    let t0 = Instant::now();
    let bytes = std::fs::read(&input.path).map_err(|e| ImageFailure::Skip(e.to_string()))?;
    let image = decode_pnm(&bytes).map_err(|e| ImageFailure::Skip(e.to_string()))?;
    let spec = model.network.spec();
    let pre = preprocess(&image, spec, model.mode).map_err(ImageFailure::Fatal)?;
    let t1 = Instant::now();
    let result = model.network.forward(&pre).map_err(ImageFailure::Fatal)?;
    let t2 = Instant::now();
    let detections = postprocess(&result, spec, &pre, conf, nms).map_err(ImageFailure::Fatal)?;
    let t3 = Instant::now();
    Ok(ImageResult {
        name: input.name.clone(),
        detections,
        times: StageTimes {
            preprocess_s: (t1 - t0).as_secs_f64(),
            forward_s: (t2 - t1).as_secs_f64(),
            postprocess_s: (t3 - t2).as_secs_f64(),
        },
        image: keep_image.then_some(image),
    })
}

/// Runs the pipeline over `inputs` on a pool of `threads` workers and
/// returns results in input order. Only the parallel region is timed.
pub fn run_images(
    model: &Model,
    inputs: &[InputImage],
    conf: f32,
    nms: f32,
    threads: Option<usize>,
    keep_images: bool,
    stderr: &mut dyn Write,
) -> CliResult<DetectionRun> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Data(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let outcomes: Vec<_> = pool.install(|| {
        inputs
            .par_iter()
            .map(|input| process_image(model, input, conf, nms, keep_images))
            .collect()
    });
    let wall_s = start.elapsed().as_secs_f64();

    let mut results = Vec::with_capacity(outcomes.len());
    let mut skipped = 0;
    for (input, outcome) in inputs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(ImageFailure::Skip(msg)) => {
                let _ = writeln!(stderr, "warning: skipping {}: {msg}", input.name);
                skipped += 1;
            }
            Err(ImageFailure::Fatal(e)) => return Err(CliError::Data(format!("{}: {e}", input.name))),
        }
    }
    Ok(DetectionRun {
        results,
        skipped,
        wall_s,
        threads: pool.current_num_threads(),
    })
}

fn write_output(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}

/// Draws each detection as a red outline, rounding the JSON box to pixels.
pub fn draw_detections(image: &mut RgbImage, detections: &[Detection]) {
    for d in detections {
        let b = JsonBox::from_detection(d);
        let left = b.x.round() as i64;
        let top = b.y.round() as i64;
        let right = (b.x + b.w).round() as i64 - 1;
        let bottom = (b.y + b.h).round() as i64 - 1;
        image.draw_rect(left, top, right, bottom, BOX_THICKNESS, BOX_COLOR);
    }
}

fn drawn_path(out: &Path, name: &str) -> PathBuf {
    let stem = Path::new(name)
        .file_stem()
        .map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
    out.parent().unwrap_or(Path::new("")).join(format!("{stem}_det.ppm"))
}

pub fn detect(args: &DetectArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let run = &args.run;
    let model = load_model(&run.model, run.weights.as_deref(), run.seed, run.letterbox)?;
    let inputs = resolve_inputs(&run.input)?;
    let result = run_images(&model, &inputs, run.conf, run.nms, run.threads, args.draw, stderr)?;
    write_output(run.out.as_deref(), &result.to_json(), stdout)?;

    if args.draw {
        let out = run.out.as_deref().expect("clap enforces --out with --draw");
        for r in &result.results {
            let mut image = r.image.clone().expect("images kept when drawing");
            draw_detections(&mut image, &r.detections);
            let path = drawn_path(out, &r.name);
            std::fs::write(&path, encode_ppm(&image)).map_err(|e| CliError::io(&path, e))?;
        }
    }
    let found: usize = result.results.iter().map(|r| r.detections.len()).sum();
    let _ = writeln!(
        stderr,
        "{} images, {} detections, {} skipped",
        result.results.len(),
        found,
        result.skipped
    );
    Ok(())
}

pub fn bench(args: &RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let model = load_model(&args.model, args.weights.as_deref(), args.seed, args.letterbox)?;
    let inputs = resolve_inputs(&args.input)?;
    let result = run_images(&model, &inputs, args.conf, args.nms, args.threads, false, stderr)?;
    if result.results.is_empty() {
        return Err(CliError::Data("no decodable images to benchmark".into()));
    }
    let mut stages = StageTimes::default();
    for r in &result.results {
        stages += r.times;
    }
    let mut report = BenchReport::new(result.results.len(), result.wall_s, stages);
    report.skipped = result.skipped;
    report.threads = result.threads;

    if let Some(out) = &args.out {
        std::fs::write(out, result.to_json()).map_err(|e| CliError::io(out, e))?;
    }
    let text = if args.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        report.summary() + "\n"
    };
    write_output(None, &text, stdout)
}

fn strip_extension(name: &str) -> &str {
    match name.rfind('.') {
        Some(i) if !name[i..].contains('/') => &name[..i],
        _ => name,
    }
}

fn annotation_key(image: &str, gts: &GroundTruthSet) -> Option<String> {
    if gts.entries.contains_key(image) {
        return Some(image.to_string());
    }
    let stem = strip_extension(image);
    let mut hits = gts.entries.keys().filter(|k| {
        let k = strip_extension(k);
        stem == k || stem.ends_with(&format!("/{k}"))
    });
    match (hits.next(), hits.next()) {
        (Some(k), None) => Some(k.clone()),
        _ => None,
    }
}

/// Pairs detection records with annotation entries.
///
/// An exact name match wins. Otherwise a record matches the single
/// annotation whose extensionless path is a suffix of the record's, so
/// `out/0--Parade/x.ppm` scores against `0--Parade/x.jpg`. Records for the
/// same image are merged.
pub fn align_to_annotations(records: Vec<ImageDetections>, gts: &GroundTruthSet) -> Vec<(String, Vec<Detection>)> {
    let mut merged: Vec<(String, Vec<Detection>)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for rec in records {
        let key = annotation_key(&rec.image, gts).unwrap_or(rec.image);
        let dets = rec.detections.iter().map(JsonBox::to_detection);
        match slot.get(&key) {
            Some(&i) => merged[i].1.extend(dets),
            None => {
                slot.insert(key.clone(), merged.len());
                merged.push((key, dets.collect()));
            }
        }
    }
    merged
}

pub fn eval(args: &EvalArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    let records = parse_detections_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let ann = std::fs::read_to_string(&args.annotations).map_err(|e| CliError::io(&args.annotations, e))?;
    let gts = parse_widerface(&ann).map_err(|e| CliError::Data(format!("{}: {e}", args.annotations.display())))?;
    let report = map_5095(&align_to_annotations(records, &gts), &gts);

    let text = if args.json {
        serde_json::to_string_pretty(&report.to_json()).expect("report serializes") + "\n"
    } else {
        let mut s = String::new();
        for (k, ap) in report.ap_per_iou.iter().enumerate() {
            s += &format!("ap{} {:.4}\n", 50 + 5 * k, ap);
        }
        s += &format!("map_5095 {:.4}\n", report.map_5095);
        let c = report.counts;
        s += &format!(
            "{} detections, {} ground truths ({} excluded), {} matched at IoU 0.50\n",
            c.detections, c.ground_truths, c.excluded_ground_truths, c.matched
        );
        s
    };
    write_output(args.out.as_deref(), &text, stdout)
}

pub fn shapes(args: &ShapesArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let spec = load_spec(&args.model)?;
    let text = if args.json {
        serde_json::to_string_pretty(&shape_rows(&spec)?).expect("rows serialize") + "\n"
    } else {
        shape_table(&spec)?
    };
    write_output(None, &text, stdout)
}

pub fn init_weights(args: &InitWeightsArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let spec = load_spec(&args.model)?;
    let bytes = save_weights(&random_init(&spec, args.seed)?);
    std::fs::write(&args.out, &bytes).map_err(|e| CliError::io(&args.out, e))?;
    let line = format!(
        "wrote {} ({} parameters, {} bytes)\n",
        args.out.display(),
        count_params(&spec)?,
        bytes.len()
    );
    write_output(None, &line, stdout)
}
