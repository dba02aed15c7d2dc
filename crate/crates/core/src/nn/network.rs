use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Dims, ImageTensor};

/// 3×3 convolution with circular padding.
///
/// Weights are stored as `[out][in][ky][kx]`. An optional scalar
/// `time_bias` is added to every output channel's bias; it carries the
/// fixed-timestep conditioning of a backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub time_bias: Option<f64>,
}

impl Conv3x3 {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: vec![0.0; 9 * in_channels * out_channels],
            bias: vec![0.0; out_channels],
            time_bias: None,
        }
    }

    /// He-normal weights, zero bias.
    pub fn he(in_channels: usize, out_channels: usize, rng: &mut SeededRng) -> Self {
        let std = (2.0 / (9 * in_channels) as f64).sqrt();
        Self {
            weights: rng.normal_vec(9 * in_channels * out_channels, std),
            ..Self::zeros(in_channels, out_channels)
        }
    }

    /// Identity kernel (center tap 1 on the matching channel).
    pub fn identity(channels: usize) -> Self {
        let mut c = Self::zeros(channels, channels);
        for k in 0..channels {
            c.weights[(k * channels + k) * 9 + 4] = 1.0;
        }
        c
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len() + usize::from(self.time_bias.is_some())
    }

    fn patch_len(&self) -> usize {
        9 * self.in_channels
    }

    /// Gathers the circular 3×3 neighbourhood of `(i, j)` as `[in][ky][kx]`.
    fn gather(&self, x: &ImageTensor, i: usize, j: usize, patch: &mut [f64]) {
        let (h, w, c) = (x.height(), x.width(), x.channels());
        let data = x.as_slice();
        for ky in 0..3 {
            let ii = (i + h + ky - 1) % h;
            for kx in 0..3 {
                let jj = (j + w + kx - 1) % w;
                let base = (ii * w + jj) * c;
                for ci in 0..c {
                    patch[ci * 9 + ky * 3 + kx] = data[base + ci];
                }
            }
        }
    }

    fn forward(&self, x: &ImageTensor) -> ImageTensor {
        let (h, w) = (x.height(), x.width());
        let oc = self.out_channels;
        let pl = self.patch_len();
        let tb = self.time_bias.unwrap_or(0.0);
        let mut out = vec![0.0; h * w * oc];
        let mut patch = vec![0.0; pl];
        for i in 0..h {
            for j in 0..w {
                self.gather(x, i, j, &mut patch);
                let o_base = (i * w + j) * oc;
                for o in 0..oc {
                    let wrow = &self.weights[o * pl..(o + 1) * pl];
                    out[o_base + o] = self.bias[o] + tb + dot(wrow, &patch);
                }
            }
        }
        ImageTensor::from_raw(Dims::new(h, w, oc), out)
    }

    /// Returns the input gradient and writes parameter gradients into `grad`
    /// (layout: weights, bias, time bias).
    fn backward(&self, x: &ImageTensor, dout: &ImageTensor, grad: &mut [f64]) -> ImageTensor {
        let (h, w, ic) = (x.height(), x.width(), x.channels());
        let oc = self.out_channels;
        let pl = self.patch_len();
        let nw = self.weights.len();
        let (gw, rest) = grad.split_at_mut(nw);
        let (gb, gt) = rest.split_at_mut(oc);
        let mut dx = vec![0.0; h * w * ic];
        let mut patch = vec![0.0; pl];
        let mut dpatch = vec![0.0; pl];
        let d = dout.as_slice();
        let mut total = 0.0;
        for i in 0..h {
            for j in 0..w {
                self.gather(x, i, j, &mut patch);
                dpatch.iter_mut().for_each(|v| *v = 0.0);
                let o_base = (i * w + j) * oc;
                for o in 0..oc {
                    let g = d[o_base + o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    total += g;
                    let wrow = &self.weights[o * pl..(o + 1) * pl];
                    let gwrow = &mut gw[o * pl..(o + 1) * pl];
                    for p in 0..pl {
                        gwrow[p] += g * patch[p];
                        dpatch[p] += g * wrow[p];
                    }
                }
                for ky in 0..3 {
                    let ii = (i + h + ky - 1) % h;
                    for kx in 0..3 {
                        let jj = (j + w + kx - 1) % w;
                        let base = (ii * w + jj) * ic;
                        for ci in 0..ic {
                            dx[base + ci] += dpatch[ci * 9 + ky * 3 + kx];
                        }
                    }
                }
            }
        }
        if let Some(t) = gt.first_mut() {
            *t += total;
        }
        ImageTensor::from_raw(x.dims(), dx)
    }
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut s = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            s[k] += x[k] * y[k];
        }
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// One stage of a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv3x3),
    Relu,
    /// 2×2 average pooling.
    Downsample,
    /// 2× nearest-neighbour upsampling.
    Upsample,
    /// Adds the output of layer `from` (an earlier index).
    SkipAdd { from: usize },
}

impl Layer {
    pub fn num_params(&self) -> usize {
        match self {
            Layer::Conv(c) => c.num_params(),
            _ => 0,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::Downsample => "downsample",
            Layer::Upsample => "upsample",
            Layer::SkipAdd { .. } => "skip_add",
        }
    }
}

/// Activations recorded by [`Network::forward_cached`]: the input followed by
/// the output of every layer.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    activations: Vec<ImageTensor>,
}

impl ForwardCache {
    pub fn output(&self) -> Option<&ImageTensor> {
        self.activations.last()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same layout as [`Network::params`].
    pub params: Vec<f64>,
    pub input: ImageTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_channels: usize,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_channels: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Self {
            input_channels,
            layers,
        };
        // Validate wiring on a small even probe.
        net.output_dims(Dims::new(4, 4, input_channels))?;
        Ok(net)
    }

    /// Input reducer: conv(in→16)-ReLU-conv(16→16)-ReLU-conv(16→out).
    pub fn reducer(input_channels: usize, output_channels: usize, rng: &mut SeededRng) -> Self {
        Self::new(
            input_channels,
            vec![
                Layer::Conv(Conv3x3::he(input_channels, 16, rng)),
                Layer::Relu,
                Layer::Conv(Conv3x3::he(16, 16, rng)),
                Layer::Relu,
                Layer::Conv(Conv3x3::he(16, output_channels, rng)),
            ],
        )
        .expect("reducer recipe is well formed")
    }

    /// Two-level UNet with 16/32 channels and one skip connection.
    ///
    /// With `zero_output` the final convolution starts at zero, so the
    /// network initially outputs zeros. `time_bias` enables the scalar
    /// timestep bias on the first convolution.
    pub fn unet2(
        input_channels: usize,
        output_channels: usize,
        rng: &mut SeededRng,
        zero_output: bool,
        time_bias: Option<f64>,
    ) -> Self {
        let mut first = Conv3x3::he(input_channels, 16, rng);
        first.time_bias = time_bias;
        let last = if zero_output {
            Conv3x3::zeros(16, output_channels)
        } else {
            let mut c = Conv3x3::he(16, output_channels, rng);
            c.weights.iter_mut().for_each(|v| *v *= 0.1);
            c
        };
        Self::new(
            input_channels,
            vec![
                Layer::Conv(first),                         // 0
                Layer::Relu,                                // 1
                Layer::Conv(Conv3x3::he(16, 16, rng)),      // 2
                Layer::Relu,                                // 3  skip source
                Layer::Downsample,                          // 4
                Layer::Conv(Conv3x3::he(16, 32, rng)),      // 5
                Layer::Relu,                                // 6
                Layer::Upsample,                            // 7
                Layer::Conv(Conv3x3::he(32, 16, rng)),      // 8
                Layer::Relu,                                // 9
                Layer::SkipAdd { from: 3 },                 // 10
                Layer::Conv(last),                          // 11
            ],
        )
        .expect("unet recipe is well formed")
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Output shape for an input of shape `input`, validating every layer.
    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        let mut shapes = vec![input];
        let mut cur = input;
        if cur.channels != self.input_channels {
            return Err(Error::Shape {
                layer: 0,
                message: format!(
                    "input has {} channels, network expects {}",
                    cur.channels, self.input_channels
                ),
            });
        }
        for (l, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Conv(c) => {
                    if cur.channels != c.in_channels {
                        return Err(Error::Shape {
                            layer: l,
                            message: format!(
                                "conv expects {} channels, got {}",
                                c.in_channels, cur.channels
                            ),
                        });
                    }
                    cur.with_channels(c.out_channels)
                }
                Layer::Relu => cur,
                Layer::Downsample => {
                    if cur.height % 2 != 0 || cur.width % 2 != 0 {
                        return Err(Error::Shape {
                            layer: l,
                            message: format!("downsample needs even spatial dims, got {cur}"),
                        });
                    }
                    Dims::new(cur.height / 2, cur.width / 2, cur.channels)
                }
                Layer::Upsample => Dims::new(cur.height * 2, cur.width * 2, cur.channels),
                Layer::SkipAdd { from } => {
                    if *from >= l {
                        return Err(Error::Shape {
                            layer: l,
                            message: format!("skip source {from} is not an earlier layer"),
                        });
                    }
                    let src = shapes[*from + 1];
                    if src != cur {
                        return Err(Error::Shape {
                            layer: l,
                            message: format!("skip from layer {from} has shape {src}, got {cur}"),
                        });
                    }
                    cur
                }
            };
            shapes.push(cur);
        }
        Ok(cur)
    }

    fn run_layer(layer: &Layer, x: &ImageTensor, acts: &[ImageTensor]) -> ImageTensor {
        match layer {
            Layer::Conv(c) => c.forward(x),
            Layer::Relu => x.map(|v| v.max(0.0)),
            Layer::Downsample => {
                let (h, w, c) = (x.height() / 2, x.width() / 2, x.channels());
                let mut out = vec![0.0; h * w * c];
                for i in 0..h {
                    for j in 0..w {
                        for k in 0..c {
                            out[(i * w + j) * c + k] = 0.25
                                * (x.get(2 * i, 2 * j, k)
                                    + x.get(2 * i, 2 * j + 1, k)
                                    + x.get(2 * i + 1, 2 * j, k)
                                    + x.get(2 * i + 1, 2 * j + 1, k));
                        }
                    }
                }
                ImageTensor::from_raw(Dims::new(h, w, c), out)
            }
            Layer::Upsample => {
                let (h, w, c) = (x.height() * 2, x.width() * 2, x.channels());
                let mut out = vec![0.0; h * w * c];
                for i in 0..h {
                    for j in 0..w {
                        for k in 0..c {
                            out[(i * w + j) * c + k] = x.get(i / 2, j / 2, k);
                        }
                    }
                }
                ImageTensor::from_raw(Dims::new(h, w, c), out)
            }
            Layer::SkipAdd { from } => x.add(&acts[from + 1]).expect("validated skip shape"),
        }
    }

    /// Inference-only forward pass.
    pub fn forward(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &ImageTensor) -> Result<(ImageTensor, ForwardCache)> {
        self.output_dims(x.dims())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = Self::run_layer(layer, acts.last().expect("nonempty"), &acts);
            acts.push(next);
        }
        let out = acts.last().expect("nonempty").clone();
        Ok((out, ForwardCache { activations: acts }))
    }

    /// Backpropagates `dout` through the activations recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, dout: &ImageTensor) -> Result<Gradients> {
        let acts = &cache.activations;
        if acts.len() != self.layers.len() + 1 {
            return Err(Error::State(format!(
                "forward cache holds {} activations, network needs {}",
                acts.len(),
                self.layers.len() + 1
            )));
        }
        let out = acts.last().expect("nonempty");
        if out.dims() != dout.dims() {
            return Err(Error::Shape {
                layer: self.layers.len().saturating_sub(1),
                message: format!("upstream gradient {} vs output {}", dout.dims(), out.dims()),
            });
        }
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.num_params();
                Some(o)
            })
            .collect();
        let mut grads = vec![0.0; self.num_params()];
        // pending[k] accumulates the gradient w.r.t. activation k
        let mut pending: Vec<Option<ImageTensor>> = vec![None; acts.len()];
        pending[acts.len() - 1] = Some(dout.clone());
        for l in (0..self.layers.len()).rev() {
            let g = pending[l + 1].take().ok_or_else(|| {
                Error::State(format!("no gradient reached layer {l}"))
            })?;
            let x = &acts[l];
            let dx = match &self.layers[l] {
                Layer::Conv(c) => {
                    let n = c.num_params();
                    c.backward(x, &g, &mut grads[offsets[l]..offsets[l] + n])
                }
                Layer::Relu => x.zip_map(&g, |xv, gv| if xv > 0.0 { gv } else { 0.0 })?,
                Layer::Downsample => {
                    let (h, w, c) = (x.height(), x.width(), x.channels());
                    let mut dx = vec![0.0; h * w * c];
                    for i in 0..h {
                        for j in 0..w {
                            for k in 0..c {
                                dx[(i * w + j) * c + k] = 0.25 * g.get(i / 2, j / 2, k);
                            }
                        }
                    }
                    ImageTensor::from_raw(x.dims(), dx)
                }
                Layer::Upsample => {
                    let (h, w, c) = (x.height(), x.width(), x.channels());
                    let mut dx = vec![0.0; h * w * c];
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            for k in 0..c {
                                dx[((i / 2) * w + j / 2) * c + k] += g.get(i, j, k);
                            }
                        }
                    }
                    ImageTensor::from_raw(x.dims(), dx)
                }
                Layer::SkipAdd { from } => {
                    let k = from + 1;
                    pending[k] = Some(match pending[k].take() {
                        Some(p) => p.add(&g)?,
                        None => g.clone(),
                    });
                    g
                }
            };
            pending[l] = Some(match pending[l].take() {
                Some(p) => p.add(&dx)?,
                None => dx,
            });
        }
        let input = pending[0].take().expect("input gradient");
        Ok(Gradients {
            params: grads,
            input,
        })
    }

    /// Flattened parameters: per conv layer, weights then bias then time bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            if let Layer::Conv(c) = layer {
                out.extend_from_slice(&c.weights);
                out.extend_from_slice(&c.bias);
                out.extend(c.time_bias);
            }
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, network has {}",
                p.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            if let Layer::Conv(c) = layer {
                let nw = c.weights.len();
                c.weights.copy_from_slice(&p[off..off + nw]);
                off += nw;
                let nb = c.bias.len();
                c.bias.copy_from_slice(&p[off..off + nb]);
                off += nb;
                if let Some(t) = c.time_bias.as_mut() {
                    *t = p[off];
                    off += 1;
                }
            }
        }
        Ok(())
    }

    pub(crate) fn layer_name(layer: &Layer) -> &'static str {
        layer.name()
    }
}
