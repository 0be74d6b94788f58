//! Convolution: a direct reference loop and an im2col + blocked GEMM path.
//!
//! Both paths reduce each output cell in the same order (input channel, then
//! ky, then kx, starting from zero) and share the epilogue, so they produce
//! bitwise-identical results. Out-of-bounds taps read as zero in the GEMM path
//! and are skipped in the direct path; adding a signed zero to a running sum
//! that started at `+0.0` never changes it.

use rayon::prelude::*;

use super::{activate, ConvKernel, Shape, Tensor};
use crate::error::{Error, Result};

/// Pixels handled together by the GEMM micro-kernel.
const PIXEL_TILE: usize = 8;
/// Output channels handled together by the GEMM micro-kernel.
const CHANNEL_TILE: usize = 64;

fn check(input: &Tensor, kernel: &ConvKernel) -> Result<()> {
    kernel.validate()?;
    if input.channels() != kernel.in_channels {
        return Err(Error::Shape(format!(
            "conv {}x{}/1 with {} filters expects {} input channels, input is {}",
            kernel.size,
            kernel.size,
            kernel.out_channels,
            kernel.in_channels,
            input.shape()
        )));
    }
    Ok(())
}

/// Direct convolution. Slow; kept as the reference path.
pub fn conv2d_naive(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    check(input, kernel)?;
    let Shape { height, width, .. } = input.shape();
    let (k, pad, cin) = (kernel.size, kernel.pad() as isize, kernel.in_channels);
    let epilogue = kernel.epilogue();
    let mut out = Tensor::zeros(height, width, kernel.out_channels);
    for y in 0..height {
        for x in 0..width {
            for (o, &(mean, mult, offset)) in epilogue.iter().enumerate() {
                let filter = &kernel.weights[o * cin * k * k..(o + 1) * cin * k * k];
                let mut sum = 0.0f32;
                for c in 0..cin {
                    for dy in 0..k {
                        let sy = y as isize + dy as isize - pad;
                        if sy < 0 || sy >= height as isize {
                            continue;
                        }
                        for dx in 0..k {
                            let sx = x as isize + dx as isize - pad;
                            if sx < 0 || sx >= width as isize {
                                continue;
                            }
                            sum += filter[(c * k + dy) * k + dx] * input.get(sy as usize, sx as usize, c);
                        }
                    }
                }
                let v = (sum - mean) * mult + offset;
                out.set(y, x, o, activate(v, kernel.activation));
            }
        }
    }
    Ok(out)
}

/// Convolution via per-row im2col and a blocked matrix multiply.
///
/// Rows are distributed over the current rayon pool; every output cell is
/// reduced by exactly one thread in a fixed order.
pub fn conv2d(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    check(input, kernel)?;
    let Shape { height, width, .. } = input.shape();
    let (k, cin, cout) = (kernel.size, kernel.in_channels, kernel.out_channels);
    let depth = cin * k * k;
    let packed = pack_weights(kernel);
    let epilogue = kernel.epilogue();
    let mut out = Tensor::zeros(height, width, cout);
    if cout == 0 {
        return Ok(out);
    }

    out.data_mut().par_chunks_mut(width * cout).enumerate().for_each_init(
        || vec![0.0f32; width * depth],
        |patches, (y, row)| {
            im2col_row(input, k, y, patches);
            gemm_row(patches, depth, &packed, cout, row);
            for cell in row.chunks_mut(cout) {
                for (v, &(mean, mult, offset)) in cell.iter_mut().zip(&epilogue) {
                    *v = activate((*v - mean) * mult + offset, kernel.activation);
                }
            }
        },
    );
    Ok(out)
}

/// `[out][in][ky][kx]` → `[in·ky·kx][out]`.
fn pack_weights(kernel: &ConvKernel) -> Vec<f32> {
    let depth = kernel.in_channels * kernel.size * kernel.size;
    let cout = kernel.out_channels;
    let mut packed = vec![0.0f32; depth * cout];
    for o in 0..cout {
        for d in 0..depth {
            packed[d * cout + o] = kernel.weights[o * depth + d];
        }
    }
    packed
}

/// Fills `patches` (`width × depth`) with the receptive fields of output row `y`.
fn im2col_row(input: &Tensor, k: usize, y: usize, patches: &mut [f32]) {
    let Shape {
        height,
        width,
        channels,
    } = input.shape();
    let pad = (k - 1) / 2;
    let depth = channels * k * k;
    for x in 0..width {
        let patch = &mut patches[x * depth..(x + 1) * depth];
        for dy in 0..k {
            let sy = (y + dy).wrapping_sub(pad);
            for dx in 0..k {
                let sx = (x + dx).wrapping_sub(pad);
                let inside = sy < height && sx < width;
                for c in 0..channels {
                    patch[(c * k + dy) * k + dx] = if inside { input.get(sy, sx, c) } else { 0.0 };
                }
            }
        }
    }
}

/// `row[p][o] = Σ_d patches[p][d] · packed[d][o]`, accumulated in `d` order.
fn gemm_row(patches: &[f32], depth: usize, packed: &[f32], cout: usize, row: &mut [f32]) {
    let pixels = row.len() / cout;
    let mut acc = [[0.0f32; CHANNEL_TILE]; PIXEL_TILE];
    for p0 in (0..pixels).step_by(PIXEL_TILE) {
        let np = PIXEL_TILE.min(pixels - p0);
        for o0 in (0..cout).step_by(CHANNEL_TILE) {
            let no = CHANNEL_TILE.min(cout - o0);
            for a in acc.iter_mut().take(np) {
                a[..no].fill(0.0);
            }
            for d in 0..depth {
                let w = &packed[d * cout + o0..d * cout + o0 + no];
                for (i, a) in acc.iter_mut().enumerate().take(np) {
                    let v = patches[(p0 + i) * depth + d];
                    for (dst, wv) in a[..no].iter_mut().zip(w) {
                        *dst += v * wv;
                    }
                }
            }
            for (i, a) in acc.iter().enumerate().take(np) {
                let start = (p0 + i) * cout + o0;
                row[start..start + no].copy_from_slice(&a[..no]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, BatchNorm};

    fn ramp_kernel(out: usize, cin: usize, k: usize) -> ConvKernel {
        let weights = (0..out * cin * k * k)
            .map(|i| ((i * 37 % 17) as f32 - 8.0) / 8.0)
            .collect();
        let bias = (0..out).map(|o| o as f32 * 0.25 - 0.5).collect();
        ConvKernel::new(out, cin, k, weights, bias, Activation::Leaky, None).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let input = Tensor::filled(3, 3, 1, 1.0);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let k = ConvKernel::new(1, 1, 3, w, vec![0.0], Activation::Linear, None).unwrap();
        assert_eq!(conv2d(&input, &k).unwrap(), input);
        assert_eq!(conv2d_naive(&input, &k).unwrap(), input);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let input = Tensor::zeros(4, 4, 2);
        let k = ramp_kernel(3, 5, 3);
        let err = conv2d(&input, &k).unwrap_err().to_string();
        assert!(err.contains("expects 5 input channels"), "{err}");
        assert!(err.contains("4x4x2"), "{err}");
    }

    #[test]
    fn gemm_and_direct_paths_are_bitwise_equal() {
        // 70 output channels spans two channel tiles; width 11 spans two pixel tiles.
        let input = Tensor::from_fn(9, 11, 5, |y, x, c| ((y * 31 + x * 7 + c * 3) % 13) as f32 - 6.0);
        let mut k = ramp_kernel(70, 5, 3);
        let mut bn = BatchNorm::unit(70);
        bn.mean = (0..70).map(|o| o as f32 * 0.01).collect();
        bn.variance = (0..70).map(|o| 0.5 + o as f32 * 0.02).collect();
        k.batchnorm = Some(bn);
        assert_eq!(conv2d(&input, &k).unwrap(), conv2d_naive(&input, &k).unwrap());

        let k1 = ramp_kernel(18, 5, 1);
        assert_eq!(conv2d(&input, &k1).unwrap(), conv2d_naive(&input, &k1).unwrap());
    }

    #[test]
    fn output_shape() {
        let input = Tensor::zeros(32, 32, 3);
        let out = conv2d(&input, &ramp_kernel(16, 3, 3)).unwrap();
        assert_eq!(out.shape(), Shape::new(32, 32, 16));
    }
}
