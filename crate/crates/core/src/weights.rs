//! Binary parameter container.
//!
//! Layout, all little-endian: `i32 major, i32 minor, i32 revision, i64 seen`,
//! then for each conv layer in graph order either `β γ μ σ²` (batch-normed
//! layers) or `bias`, each `filters` floats long, followed by the
//! `[out][in][ky][kx]` weights. No padding, no footer.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{infer_shapes, ConvSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{BatchNorm, ConvKernel};

pub const HEADER_BYTES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightsHeader {
    pub major: i32,
    pub minor: i32,
    pub revision: i32,
    pub seen: i64,
}

impl Default for WeightsHeader {
    fn default() -> Self {
        WeightsHeader {
            major: 0,
            minor: 2,
            revision: 0,
            seen: 0,
        }
    }
}

impl WeightsHeader {
    /// Versions whose `seen` counter is 64 bits wide.
    fn supported(&self) -> bool {
        (0..1000).contains(&self.major) && (0..1000).contains(&self.minor) && self.major * 10 + self.minor >= 2
    }
}

/// Scale, mean and variance of a batch-normed layer. The shift lives in
/// [`LayerParams::bias`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub scale: Vec<f32>,
    pub mean: Vec<f32>,
    pub variance: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub layer: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub size: usize,
    /// β for batch-normed layers, the plain bias otherwise.
    pub bias: Vec<f32>,
    pub norm: Option<NormStats>,
    pub weights: Vec<f32>,
}

impl LayerParams {
    pub fn kernel(&self, spec: &ConvSpec) -> Result<ConvKernel> {
        let (bias, batchnorm) = match &self.norm {
            None => (self.bias.clone(), None),
            Some(n) => (
                vec![0.0; self.out_channels],
                Some(BatchNorm {
                    scale: n.scale.clone(),
                    shift: self.bias.clone(),
                    mean: n.mean.clone(),
                    variance: n.variance.clone(),
                }),
            ),
        };
        ConvKernel::new(
            self.out_channels,
            self.in_channels,
            self.size,
            self.weights.clone(),
            bias,
            spec.activation,
            batchnorm,
        )
    }

    pub fn param_count(&self) -> usize {
        self.bias.len() + self.weights.len() + self.norm.as_ref().map_or(0, |n| 3 * n.scale.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub header: WeightsHeader,
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    pub fn layer(&self, index: usize) -> Option<&LayerParams> {
        self.layers.iter().find(|l| l.layer == index)
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut LayerParams> {
        self.layers.iter_mut().find(|l| l.layer == index)
    }
}

/// `(layer index, input channels, conv spec)` for every conv layer.
pub(crate) fn conv_geometry(spec: &NetworkSpec) -> Result<Vec<(usize, usize, &ConvSpec)>> {
    if spec.layers.is_empty() {
        return Ok(Vec::new());
    }
    let shapes = infer_shapes(spec)?;
    Ok(spec
        .conv_layers()
        .map(|(i, c)| {
            let input = if i == 0 { spec.input } else { shapes[i - 1] };
            (i, input.channels, c)
        })
        .collect())
}

fn layer_count(in_channels: usize, c: &ConvSpec) -> usize {
    let out = c.filters;
    out * in_channels * c.size * c.size + out + if c.batchnorm { 3 * out } else { 0 }
}

/// Number of stored floats for `spec`.
pub fn count_params(spec: &NetworkSpec) -> Result<usize> {
    Ok(conv_geometry(spec)?
        .into_iter()
        .map(|(_, cin, c)| layer_count(cin, c))
        .sum())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let chunk = self.bytes.get(self.pos..self.pos + N)?;
        self.pos += N;
        chunk.try_into().ok()
    }

    fn floats(&mut self, n: usize, layer: usize, field: &'static str) -> Result<Vec<f32>> {
        let end = self.pos + 4 * n;
        if end > self.bytes.len() {
            return Err(Error::WeightsTruncated {
                offset: self.bytes.len(),
                layer,
                field,
            });
        }
        let out = self.bytes[self.pos..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        self.pos = end;
        Ok(out)
    }
}

pub fn load_weights(bytes: &[u8], spec: &NetworkSpec) -> Result<ModelParams> {
    let geometry = conv_geometry(spec)?;
    let mut r = Reader { bytes, pos: 0 };
    let truncated_header = || Error::WeightsTruncated {
        offset: bytes.len(),
        layer: 0,
        field: "header",
    };
    let major = i32::from_le_bytes(r.take().ok_or_else(truncated_header)?);
    let minor = i32::from_le_bytes(r.take().ok_or_else(truncated_header)?);
    let revision = i32::from_le_bytes(r.take().ok_or_else(truncated_header)?);
    let probe = WeightsHeader {
        major,
        minor,
        revision,
        seen: 0,
    };
    if !probe.supported() {
        return Err(Error::WeightsVersion { major, minor, revision });
    }
    let seen = i64::from_le_bytes(r.take().ok_or_else(truncated_header)?);
    let header = WeightsHeader { seen, ..probe };

    let mut layers = Vec::with_capacity(geometry.len());
    for (layer, cin, c) in geometry {
        let out = c.filters;
        let bias = r.floats(out, layer, if c.batchnorm { "shift" } else { "bias" })?;
        let norm = if c.batchnorm {
            Some(NormStats {
                scale: r.floats(out, layer, "scale")?,
                mean: r.floats(out, layer, "mean")?,
                variance: r.floats(out, layer, "variance")?,
            })
        } else {
            None
        };
        let weights = r.floats(out * cin * c.size * c.size, layer, "weights")?;
        layers.push(LayerParams {
            layer,
            in_channels: cin,
            out_channels: out,
            size: c.size,
            bias,
            norm,
            weights,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightsTrailing(bytes.len() - r.pos));
    }
    Ok(ModelParams { header, layers })
}

pub fn save_weights(params: &ModelParams) -> Vec<u8> {
    let floats: usize = params.layers.iter().map(LayerParams::param_count).sum();
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * floats);
    let h = params.header;
    out.extend_from_slice(&h.major.to_le_bytes());
    out.extend_from_slice(&h.minor.to_le_bytes());
    out.extend_from_slice(&h.revision.to_le_bytes());
    out.extend_from_slice(&h.seen.to_le_bytes());
    let mut put = |values: &[f32]| {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for layer in &params.layers {
        put(&layer.bias);
        if let Some(n) = &layer.norm {
            put(&n.scale);
            put(&n.mean);
            put(&n.variance);
        }
        put(&layer.weights);
    }
    out
}

/// Weights uniform in ±√(2 / fan_in), zero biases, unit batch-norm statistics.
pub fn random_init(spec: &NetworkSpec, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = conv_geometry(spec)?
        .into_iter()
        .map(|(layer, cin, c)| {
            let fan_in = cin * c.size * c.size;
            let bound = (2.0 / fan_in as f32).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let out = c.filters;
            LayerParams {
                layer,
                in_channels: cin,
                out_channels: out,
                size: c.size,
                bias: vec![0.0; out],
                norm: c.batchnorm.then(|| NormStats {
                    scale: vec![1.0; out],
                    mean: vec![0.0; out],
                    variance: vec![1.0; out],
                }),
                weights: (0..out * fan_in).map(|_| dist.sample(&mut rng)).collect(),
            }
        })
        .collect();
    Ok(ModelParams {
        header: WeightsHeader::default(),
        layers,
    })
}

/// All-zero parameters (unit variance where batch-normed).
pub fn zero_init(spec: &NetworkSpec) -> Result<ModelParams> {
    let mut params = random_init(spec, 0)?;
    for layer in &mut params.layers {
        layer.weights.fill(0.0);
    }
    Ok(params)
}
