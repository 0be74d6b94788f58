//! Dense HWC tensors and the layer kernels the detector is built from.
//!
//! Every kernel is a pure function of its inputs. Convolution accumulates in
//! `f32` with a fixed per-output reduction order, so results are bitwise
//! reproducible regardless of how many threads rayon hands it.

mod conv;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conv::{conv2d, conv2d_naive};

/// Slope of the negative branch of the leaky activation.
pub const LEAKY_SLOPE: f32 = 0.1;

/// Batch-norm epsilon, fixed for every layer.
pub const BN_EPSILON: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Row-major `(h, w, c)` tensor of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        let shape = Shape::new(height, width, channels);
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(height, width, channels);
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} tensor needs {} values, got {}",
                shape,
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Tensor {
            shape: Shape::new(height, width, channels),
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.offset(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        let i = self.offset(y, x, c);
        self.data[i] = value;
    }

    /// The channel vector at one spatial cell.
    pub fn cell(&self, y: usize, x: usize) -> &[f32] {
        let start = self.offset(y, x, 0);
        &self.data[start..start + self.shape.channels]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Leaky,
    Linear,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Leaky => "leaky",
            Activation::Linear => "linear",
        }
    }
}

#[inline]
pub fn activate(x: f32, kind: Activation) -> f32 {
    match kind {
        Activation::Linear => x,
        Activation::Leaky => {
            if x > 0.0 {
                x
            } else {
                LEAKY_SLOPE * x
            }
        }
    }
}

/// Per-output-channel normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
    pub mean: Vec<f32>,
    pub variance: Vec<f32>,
}

impl BatchNorm {
    /// γ=1, β=0, μ=0, σ²=1.
    pub fn unit(channels: usize) -> Self {
        BatchNorm {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            mean: vec![0.0; channels],
            variance: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// `γ / √(σ² + ε)` per channel.
    pub fn multipliers(&self) -> Vec<f32> {
        self.scale
            .iter()
            .zip(&self.variance)
            .map(|(g, v)| g / (v + BN_EPSILON).sqrt())
            .collect()
    }
}

/// A stride-1 "same"-padded convolution with optional batch norm.
///
/// The output at channel `o` is
/// `act(norm_o(Σ w·x) + bias[o])` where `norm_o` is the batch-norm affine map
/// when present and the identity otherwise. Weights are laid out
/// `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub size: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
    pub batchnorm: Option<BatchNorm>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        size: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
        batchnorm: Option<BatchNorm>,
    ) -> Result<Self> {
        let kernel = ConvKernel {
            out_channels,
            in_channels,
            size,
            weights,
            bias,
            activation,
            batchnorm,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn pad(&self) -> usize {
        (self.size - 1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "kernel size must be odd for same padding, got {}",
                self.size
            )));
        }
        let expected = self.out_channels * self.in_channels * self.size * self.size;
        if self.weights.len() != expected {
            return Err(Error::Shape(format!(
                "{}x{}x{}x{} kernel needs {} weights, got {}",
                self.out_channels,
                self.in_channels,
                self.size,
                self.size,
                expected,
                self.weights.len()
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::Shape(format!(
                "bias has {} entries for {} filters",
                self.bias.len(),
                self.out_channels
            )));
        }
        if let Some(bn) = &self.batchnorm {
            let n = self.out_channels;
            if bn.scale.len() != n || bn.shift.len() != n || bn.mean.len() != n || bn.variance.len() != n {
                return Err(Error::Shape(format!("batch-norm statistics do not cover {n} filters")));
            }
            if bn.variance.iter().any(|v| *v < 0.0) {
                return Err(Error::Shape("negative batch-norm variance".into()));
            }
        }
        Ok(())
    }

    /// Per-channel `(multiplier, offset)` applied to the raw sum, so that the
    /// pre-activation value is `(sum - mean) * multiplier + offset`.
    pub(crate) fn epilogue(&self) -> Vec<(f32, f32, f32)> {
        match &self.batchnorm {
            None => self.bias.iter().map(|b| (0.0, 1.0, *b)).collect(),
            Some(bn) => bn
                .multipliers()
                .into_iter()
                .enumerate()
                .map(|(o, m)| (bn.mean[o], m, bn.shift[o] + self.bias[o]))
                .collect(),
        }
    }
}

/// Absorbs the batch-norm statistics into weights and bias.
///
/// Kernels without batch norm are returned unchanged.
pub fn fold_batchnorm(kernel: &ConvKernel) -> ConvKernel {
    let Some(bn) = &kernel.batchnorm else {
        return kernel.clone();
    };
    let per_filter = kernel.in_channels * kernel.size * kernel.size;
    let multipliers = bn.multipliers();
    let mut weights = kernel.weights.clone();
    for (filter, m) in weights.chunks_mut(per_filter.max(1)).zip(&multipliers) {
        for w in filter {
            *w *= m;
        }
    }
    let bias = (0..kernel.out_channels)
        .map(|o| kernel.bias[o] + bn.shift[o] - multipliers[o] * bn.mean[o])
        .collect();
    ConvKernel {
        weights,
        bias,
        batchnorm: None,
        ..kernel.clone()
    }
}

/// 2x2 max pooling with stride 2.
pub fn maxpool2x2(input: &Tensor) -> Result<Tensor> {
    let Shape {
        height,
        width,
        channels,
    } = input.shape();
    if height % 2 != 0 || width % 2 != 0 {
        return Err(Error::Shape(format!(
            "2x2/2 max pool needs even spatial dims, got {}",
            input.shape()
        )));
    }
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Tensor::zeros(oh, ow, channels);
    for y in 0..oh {
        for x in 0..ow {
            let a = input.cell(2 * y, 2 * x);
            let b = input.cell(2 * y, 2 * x + 1);
            let c = input.cell(2 * y + 1, 2 * x);
            let d = input.cell(2 * y + 1, 2 * x + 1);
            let start = out.offset(y, x, 0);
            let dst = &mut out.data[start..start + channels];
            for ch in 0..channels {
                dst[ch] = a[ch].max(b[ch]).max(c[ch].max(d[ch]));
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x(input: &Tensor) -> Tensor {
    let Shape {
        height,
        width,
        channels,
    } = input.shape();
    let mut data = Vec::with_capacity(4 * input.data.len());
    for y in 0..2 * height {
        for x in 0..2 * width {
            data.extend_from_slice(input.cell(y / 2, x / 2));
        }
    }
    Tensor {
        shape: Shape::new(2 * height, 2 * width, channels),
        data,
    }
}

/// Concatenates along channels, `a` first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    concat_many(&[a, b])
}

pub(crate) fn concat_many(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
    let (height, width) = (first.height(), first.width());
    if let Some(bad) = parts.iter().find(|t| t.height() != height || t.width() != width) {
        return Err(Error::Shape(format!(
            "cannot concatenate {} with {}: spatial dims differ",
            first.shape(),
            bad.shape()
        )));
    }
    let channels = parts.iter().map(|t| t.channels()).sum();
    let mut data = Vec::with_capacity(height * width * channels);
    for y in 0..height {
        for x in 0..width {
            for t in parts {
                data.extend_from_slice(t.cell(y, x));
            }
        }
    }
    Ok(Tensor {
        shape: Shape::new(height, width, channels),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_branches() {
        assert_eq!(activate(-7.5, Activation::Linear), -7.5);
        assert_eq!(activate(4.0, Activation::Leaky), 4.0);
        assert!((activate(-1.0, Activation::Leaky) - (-0.1)).abs() < 1e-7);
        assert_eq!(activate(0.0, Activation::Leaky), 0.0);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(Tensor::from_vec(2, 2, 2, vec![0.0; 8]).is_ok());
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let t = Tensor::zeros(3, 4, 1);
        assert!(matches!(maxpool2x2(&t), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_constant_tensor() {
        let t = Tensor::filled(6, 8, 3, 2.5);
        let p = maxpool2x2(&t).unwrap();
        assert_eq!(p.shape(), Shape::new(3, 4, 3));
        assert!(p.data().iter().all(|v| *v == 2.5));
    }

    #[test]
    fn upsample_single_cell() {
        let t = Tensor::filled(1, 1, 1, 3.0);
        let u = upsample2x(&t);
        assert_eq!(u.shape(), Shape::new(2, 2, 1));
        assert_eq!(u.data(), &[3.0; 4]);
    }

    #[test]
    fn concat_with_empty_channels_is_neutral() {
        let t = Tensor::from_fn(3, 2, 2, |y, x, c| (y * 10 + x * 2 + c) as f32);
        let empty = Tensor::zeros(3, 2, 0);
        assert_eq!(concat_channels(&t, &empty).unwrap(), t);
        assert_eq!(concat_channels(&empty, &t).unwrap(), t);
    }

    #[test]
    fn concat_spatial_mismatch() {
        let a = Tensor::zeros(4, 4, 1);
        let b = Tensor::zeros(4, 2, 1);
        assert!(concat_channels(&a, &b).is_err());
    }

    #[test]
    fn fold_identity_statistics() {
        let mut bn = BatchNorm::unit(2);
        bn.variance = vec![1.0 - BN_EPSILON; 2];
        let w: Vec<f32> = (0..2 * 3 * 9).map(|i| i as f32 * 0.1 - 2.0).collect();
        let k = ConvKernel::new(2, 3, 3, w.clone(), vec![0.0; 2], Activation::Leaky, Some(bn)).unwrap();
        let folded = fold_batchnorm(&k);
        assert!(folded.batchnorm.is_none());
        for (a, b) in folded.weights.iter().zip(&w) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        assert!(folded.bias.iter().all(|b| b.abs() < 1e-7));
    }

    #[test]
    fn fold_scale_and_shift() {
        let bn = BatchNorm {
            scale: vec![2.0],
            shift: vec![3.0],
            mean: vec![0.0],
            variance: vec![1.0 - BN_EPSILON],
        };
        let k = ConvKernel::new(1, 1, 1, vec![1.0], vec![0.0], Activation::Linear, Some(bn)).unwrap();
        let folded = fold_batchnorm(&k);
        assert!((folded.weights[0] - 2.0).abs() < 1e-6);
        assert!((folded.bias[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn kernel_validation() {
        assert!(ConvKernel::new(2, 1, 3, vec![0.0; 17], vec![0.0; 2], Activation::Linear, None).is_err());
        assert!(ConvKernel::new(2, 1, 2, vec![0.0; 8], vec![0.0; 2], Activation::Linear, None).is_err());
        let mut bn = BatchNorm::unit(1);
        bn.variance[0] = -1.0;
        assert!(ConvKernel::new(1, 1, 1, vec![0.0], vec![0.0], Activation::Linear, Some(bn)).is_err());
    }
}
