#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swiftface::config::builtin_swiftface;
use swiftface::image::{encode_ppm, RgbImage};
use swiftface::tensor::BN_EPSILON;
use swiftface::weights::{zero_init, ModelParams};

/// Runs the CLI in-process and returns (exit code, stdout, stderr).
pub fn cli(args: &[&str]) -> (u8, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("swiftface").chain(args.iter().copied());
    let code = swiftface_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Where the planted box lands: 16x16 grid cell (row 3, col 6), anchor 81x82.
pub const PLANTED_CX: f64 = 6.5 * 32.0;
pub const PLANTED_CY: f64 = 3.5 * 32.0;
pub const PLANTED_W: f64 = 81.0;
pub const PLANTED_H: f64 = 82.0;

/// Weights that carry input channel 0 unchanged down the backbone (centre
/// tap 1, batch norm an identity) and turn it into a single confident
/// prediction for the first anchor of the coarse head wherever it is lit.
pub fn planted_params() -> ModelParams {
    let spec = builtin_swiftface();
    let mut params = zero_init(&spec).unwrap();
    for layer in [0, 2, 4, 6, 8, 10] {
        let p = params.layer_mut(layer).unwrap();
        let k = p.size;
        p.weights[k * k / 2] = 1.0; // output 0, input 0, centre tap
        let norm = p.norm.as_mut().unwrap();
        norm.variance.fill(1.0 - BN_EPSILON);
    }
    let coarse = params.layer_mut(11).unwrap();
    let cin = coarse.in_channels;
    coarse.weights[4 * cin] = 40.0; // objectness of anchor 0 from channel 0
    coarse.bias[4] = -20.0;
    coarse.bias[5] = 20.0;
    coarse.bias[10] = -20.0;
    coarse.bias[16] = -20.0;
    let fine = params.layer_mut(18).unwrap();
    for a in 0..3 {
        fine.bias[6 * a + 4] = -20.0;
    }
    params
}

/// 512x512 black image with a white 9x9 patch inside grid cell (3, 6).
pub fn planted_image() -> RgbImage {
    RgbImage::from_fn(512, 512, |x, y| {
        if (100..=108).contains(&y) && (200..=208).contains(&x) {
            [255, 255, 255]
        } else {
            [0, 0, 0]
        }
    })
}

/// Writes `n` random-content PPMs of assorted sizes into `dir`.
pub fn write_corpus(dir: &Path, n: usize, seed: u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let (w, h) = (r.gen_range(40..700), r.gen_range(40..700));
        let img = RgbImage::from_fn(w, h, |_, _| [r.gen(), r.gen(), r.gen()]);
        std::fs::write(dir.join(format!("img{i:02}.ppm")), encode_ppm(&img)).unwrap();
    }
}
