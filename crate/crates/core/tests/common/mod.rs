#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swiftface::tensor::{Activation, BatchNorm, ConvKernel};
use swiftface::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> Tensor {
    Tensor::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
}

pub fn random_kernel(rng: &mut impl Rng, out: usize, cin: usize, size: usize, bn: bool) -> ConvKernel {
    let weights = (0..out * cin * size * size).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bias = (0..out).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let batchnorm = bn.then(|| BatchNorm {
        scale: (0..out).map(|_| rng.gen_range(0.5..2.0)).collect(),
        shift: (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        mean: (0..out).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        variance: (0..out).map(|_| rng.gen_range(0.1..2.0)).collect(),
    });
    let activation = if rng.gen_bool(0.5) {
        Activation::Leaky
    } else {
        Activation::Linear
    };
    ConvKernel::new(out, cin, size, weights, bias, activation, batchnorm).unwrap()
}

/// `|a - b| <= rel * max(1, |b|)` elementwise.
pub fn assert_close(actual: &[f32], expected: &[f32], rel: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length");
    for (i, (a, b)) in actual.iter().zip(expected).enumerate() {
        let (a, b) = (*a as f64, *b as f64);
        let tol = rel * b.abs().max(1.0);
        assert!((a - b).abs() <= tol, "{what}[{i}]: {a} vs {b} (tol {tol})");
    }
}
