//! Image preprocessing and graph execution.

use std::collections::BTreeMap;

use crate::config::{infer_shapes, LayerKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::tensor::{
    concat_many, conv2d, conv2d_naive, fold_batchnorm, maxpool2x2, upsample2x, ConvKernel, Shape, Tensor,
};
use crate::weights::{conv_geometry, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResizeMode {
    /// Scale each axis independently to the network input.
    #[default]
    Stretch,
    /// Preserve aspect ratio and pad with mid-gray.
    Letterbox,
}

/// Maps network-input pixel coordinates back onto the source image:
/// `orig = (net - offset) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxMapping {
    pub scale_x: f32,
    pub scale_y: f32,
    pub offset_x: f32,
    pub offset_y: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    pub tensor: Tensor,
    pub original_width: usize,
    pub original_height: usize,
    pub mapping: BoxMapping,
}

/// Sample position in the source for output index `o` under half-pixel
/// alignment, clamped to the valid range.
fn source_coord(o: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let s = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

/// Bilinear resize of an RGB image into a `[0,1]` tensor.
fn resize_bilinear(image: &RgbImage, out_h: usize, out_w: usize) -> Tensor {
    let xs: Vec<_> = (0..out_w).map(|x| source_coord(x, image.width, out_w)).collect();
    let value = |x: usize, y: usize, c: usize| image.data[(y * image.width + x) * 3 + c] as f32 / 255.0;
    let mut out = Tensor::zeros(out_h, out_w, 3);
    for y in 0..out_h {
        let (y0, y1, fy) = source_coord(y, image.height, out_h);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let (a, b) = (value(x0, y0, c), value(x1, y0, c));
                let (d, e) = (value(x0, y1, c), value(x1, y1, c));
                let top = a + (b - a) * fx;
                let bottom = d + (e - d) * fx;
                out.set(y, x, c, top + (bottom - top) * fy);
            }
        }
    }
    out
}

pub fn preprocess(image: &RgbImage, spec: &NetworkSpec, mode: ResizeMode) -> Result<PreprocessedImage> {
    if image.width == 0 || image.height == 0 {
        return Err(Error::Image(format!(
            "zero-sized image {}x{}",
            image.width, image.height
        )));
    }
    if spec.input.channels != 3 {
        return Err(Error::Network(format!(
            "network expects {} input channels; images are RGB",
            spec.input.channels
        )));
    }
    let (net_h, net_w) = (spec.input.height, spec.input.width);
    let (tensor, mapping) = match mode {
        ResizeMode::Stretch => (
            resize_bilinear(image, net_h, net_w),
            BoxMapping {
                scale_x: image.width as f32 / net_w as f32,
                scale_y: image.height as f32 / net_h as f32,
                offset_x: 0.0,
                offset_y: 0.0,
            },
        ),
        ResizeMode::Letterbox => {
            let s = (net_w as f64 / image.width as f64).min(net_h as f64 / image.height as f64);
            let new_w = ((image.width as f64 * s).round() as usize).clamp(1, net_w);
            let new_h = ((image.height as f64 * s).round() as usize).clamp(1, net_h);
            let (ox, oy) = ((net_w - new_w) / 2, (net_h - new_h) / 2);
            let inner = resize_bilinear(image, new_h, new_w);
            let mut canvas = Tensor::filled(net_h, net_w, 3, 0.5);
            for y in 0..new_h {
                for x in 0..new_w {
                    for c in 0..3 {
                        canvas.set(y + oy, x + ox, c, inner.get(y, x, c));
                    }
                }
            }
            (
                canvas,
                BoxMapping {
                    scale_x: image.width as f32 / new_w as f32,
                    scale_y: image.height as f32 / new_h as f32,
                    offset_x: ox as f32,
                    offset_y: oy as f32,
                },
            )
        }
    };
    Ok(PreprocessedImage {
        tensor,
        original_width: image.width,
        original_height: image.height,
        mapping,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvPath {
    /// im2col + blocked GEMM.
    #[default]
    Gemm,
    /// Direct nested loops; the slow reference.
    Direct,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub conv: ConvPath,
    /// Keep every layer's output in [`ForwardResult::outputs`].
    pub keep_outputs: bool,
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// `(layer index, tensor)` for each yolo layer, in graph order.
    pub heads: Vec<(usize, Tensor)>,
    pub outputs: Option<Vec<Tensor>>,
    /// Tensors alive (route cache plus the current output) after each layer.
    pub live_tensors: Vec<usize>,
}

/// A network ready to run: spec, inferred shapes and per-layer kernels.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    kernels: Vec<Option<ConvKernel>>,
    /// Last route layer that reads each layer's output.
    last_route_use: Vec<Option<usize>>,
}

impl Network {
    /// Builds the network with batch norm folded into the conv weights.
    pub fn new(spec: NetworkSpec, params: &ModelParams) -> Result<Self> {
        Self::build(spec, params, true)
    }

    /// Builds the network applying batch norm at run time.
    pub fn unfolded(spec: NetworkSpec, params: &ModelParams) -> Result<Self> {
        Self::build(spec, params, false)
    }

    fn build(spec: NetworkSpec, params: &ModelParams, fold: bool) -> Result<Self> {
        let shapes = infer_shapes(&spec)?;
        let geometry = conv_geometry(&spec)?;
        if geometry.len() != params.layers.len() {
            return Err(Error::ParamMismatch(format!(
                "network has {} conv layers, parameters cover {}",
                geometry.len(),
                params.layers.len()
            )));
        }
        let mut kernels = vec![None; spec.layers.len()];
        for ((layer, cin, conv), p) in geometry.into_iter().zip(&params.layers) {
            if p.layer != layer
                || p.in_channels != cin
                || p.out_channels != conv.filters
                || p.size != conv.size
                || p.norm.is_some() != conv.batchnorm
            {
                return Err(Error::ParamMismatch(format!(
                    "layer {layer} expects {}x{}x{}x{} conv (batchnorm {}), parameters are for layer {} {}x{}x{}x{} (batchnorm {})",
                    conv.filters, cin, conv.size, conv.size, conv.batchnorm,
                    p.layer, p.out_channels, p.in_channels, p.size, p.size, p.norm.is_some()
                )));
            }
            let kernel = p
                .kernel(conv)
                .map_err(|e| Error::ParamMismatch(format!("layer {layer}: {e}")))?;
            kernels[layer] = Some(if fold { fold_batchnorm(&kernel) } else { kernel });
        }
        let mut last_route_use = vec![None; spec.layers.len()];
        for layer in &spec.layers {
            if let LayerKind::Route { sources } = &layer.kind {
                for &s in sources {
                    last_route_use[s] = Some(layer.index);
                }
            }
        }
        Ok(Network {
            spec,
            shapes,
            kernels,
            last_route_use,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn forward(&self, image: &PreprocessedImage) -> Result<ForwardResult> {
        self.forward_tensor(&image.tensor, ForwardOptions::default())
    }

    pub fn forward_tensor(&self, input: &Tensor, options: ForwardOptions) -> Result<ForwardResult> {
        if input.shape() != self.spec.input {
            return Err(Error::Shape(format!(
                "network input is {}, got {}",
                self.spec.input,
                input.shape()
            )));
        }
        let n = self.spec.layers.len();
        let mut heads = Vec::new();
        let mut outputs = options.keep_outputs.then(|| Vec::with_capacity(n));
        let mut live_tensors = Vec::with_capacity(n);
        let mut cache: BTreeMap<usize, Tensor> = BTreeMap::new();
        let mut current: Option<Tensor> = None;

        for layer in &self.spec.layers {
            let i = layer.index;
            let prev = current.as_ref().unwrap_or(input);
            let out = match &layer.kind {
                LayerKind::Conv(_) => {
                    let kernel = self.kernels[i].as_ref().expect("conv layer without kernel");
                    match options.conv {
                        ConvPath::Gemm => conv2d(prev, kernel)?,
                        ConvPath::Direct => conv2d_naive(prev, kernel)?,
                    }
                }
                LayerKind::MaxPool { .. } => maxpool2x2(prev)?,
                LayerKind::Upsample { .. } => upsample2x(prev),
                LayerKind::Route { sources } => {
                    let parts = sources
                        .iter()
                        .map(|s| cache.get(s).expect("route source evicted"))
                        .collect::<Vec<_>>();
                    if parts.len() == 1 {
                        parts[0].clone()
                    } else {
                        concat_many(&parts)?
                    }
                }
                LayerKind::Yolo(_) => {
                    heads.push((i, prev.clone()));
                    prev.clone()
                }
            };
            if out.shape() != self.shapes[i] {
                return Err(Error::layer_shape(
                    i,
                    "executed output differs from inferred shape",
                    self.shapes[i],
                    out.shape(),
                ));
            }
            cache.retain(|&s, _| self.last_route_use[s].is_some_and(|last| last > i));
            if self.last_route_use[i].is_some() {
                cache.insert(i, out.clone());
            }
            live_tensors.push(cache.len() + 1);
            if let Some(all) = outputs.as_mut() {
                all.push(out.clone());
            }
            current = Some(out);
        }
        Ok(ForwardResult {
            heads,
            outputs,
            live_tensors,
        })
    }
}
