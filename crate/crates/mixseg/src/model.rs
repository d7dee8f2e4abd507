//! Reference segmentation network with exact analytic gradients.
//!
//! The architecture is a small fully-convolutional stack: 3x3 conv (3 -> 16)
//! + ReLU, 3x3 conv (16 -> 16) + ReLU, 1x1 conv (16 -> C) producing logits at
//! input resolution. Student and teacher share one [`ReferenceNet`]
//! description and hold separate [`ModelParams`]. Everything runs in f64 on
//! the CPU; gradients are exact, which the finite-difference test suites rely
//! on.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Image, ProbMap};
use crate::rng::Rng;

/// One convolution layer: `kernel x kernel`, stride 1, zero padding
/// `kernel / 2` (so output resolution equals input resolution).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub relu: bool,
}

/// Architecture description shared by student and teacher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceNet {
    layers: Vec<ConvSpec>,
    num_classes: usize,
}

impl ReferenceNet {
    /// The standard 3-layer reference network with `num_classes` output
    /// channels.
    pub fn standard(num_classes: usize) -> Self {
        let mk = |name: &str, in_ch, out_ch, kernel, relu| ConvSpec {
            name: name.to_string(),
            in_ch,
            out_ch,
            kernel,
            relu,
        };
        ReferenceNet {
            layers: vec![
                mk("conv1", 3, 16, 3, true),
                mk("conv2", 16, 16, 3, true),
                mk("head", 16, num_classes, 1, false),
            ],
            num_classes,
        }
    }

    /// Custom layer stack. The last layer's `out_ch` is the class count.
    pub fn with_layers(layers: Vec<ConvSpec>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::invalid("network needs at least one layer"))?;
        let num_classes = last.out_ch;
        for pair in layers.windows(2) {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::invalid(format!(
                    "layer {} out_ch {} != layer {} in_ch {}",
                    pair[0].name, pair[0].out_ch, pair[1].name, pair[1].in_ch
                )));
            }
        }
        Ok(ReferenceNet {
            layers,
            num_classes,
        })
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_ch
    }

    /// Fresh parameters: Kaiming-style fan-in scaled uniform weights
    /// (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases, zero gradient and
    /// momentum buffers. Deterministic in the rng.
    pub fn init_params(&self, rng: &mut Rng) -> ModelParams {
        let mut tensors = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            let fan_in = layer.in_ch * layer.kernel * layer.kernel;
            let bound = (6.0 / fan_in as f64).sqrt();
            let wlen = layer.out_ch * fan_in;
            let values: Vec<f64> = (0..wlen).map(|_| rng.range_f64(-bound, bound)).collect();
            tensors.push(ParamTensor::new(
                format!("{}.weight", layer.name),
                vec![layer.out_ch, layer.in_ch, layer.kernel, layer.kernel],
                values,
                true,
            ));
            tensors.push(ParamTensor::new(
                format!("{}.bias", layer.name),
                vec![layer.out_ch],
                vec![0.0; layer.out_ch],
                false,
            ));
        }
        ModelParams { tensors }
    }
}

/// One named parameter tensor with its gradient and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub momentum: Vec<f64>,
    /// Weight decay applies to weights, not biases.
    pub decay: bool,
}

impl ParamTensor {
    pub fn new(name: String, shape: Vec<usize>, values: Vec<f64>, decay: bool) -> Self {
        let len = values.len();
        debug_assert_eq!(len, shape.iter().product::<usize>());
        ParamTensor {
            name,
            shape,
            values,
            grad: vec![0.0; len],
            momentum: vec![0.0; len],
            decay,
        }
    }
}

/// Flat parameter collection for one model (student or teacher).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<ParamTensor>,
}

impl ModelParams {
    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn values_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    /// Bit-exact equality of parameter values (ignores grad/momentum).
    pub fn values_bits_equal(&self, other: &ModelParams) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.name == b.name
                    && a.shape == b.shape
                    && a.values.len() == b.values.len()
                    && a.values
                        .iter()
                        .zip(&b.values)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    fn layer_pair(&self, layer_idx: usize) -> (&ParamTensor, &ParamTensor) {
        (&self.tensors[2 * layer_idx], &self.tensors[2 * layer_idx + 1])
    }
}

/// Raw class-major logits, same layout as [`ProbMap`] but unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn zeros(num_classes: usize, height: usize, width: usize) -> Self {
        Logits {
            num_classes,
            height,
            width,
            data: vec![0.0; num_classes * height * width],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }
}

/// Activations recorded by [`forward`]: the input planes of every layer.
/// `planes[0]` is the image, `planes[i]` the post-ReLU output of layer `i-1`.
pub struct ForwardCache {
    planes: Vec<Vec<f64>>,
    height: usize,
    width: usize,
}

/// Run the network. Returns logits and the cache needed by [`backward`].
pub fn forward(net: &ReferenceNet, params: &ModelParams, img: &Image) -> Result<(Logits, ForwardCache)> {
    if img.channels() != net.input_channels() {
        return Err(Error::ShapeMismatch {
            context: "forward input channels",
            expected: net.input_channels().to_string(),
            actual: img.channels().to_string(),
        });
    }
    let (h, w) = (img.height(), img.width());
    let mut planes: Vec<Vec<f64>> = vec![img.data().to_vec()];
    for (idx, layer) in net.layers.iter().enumerate() {
        let (weight, bias) = params.layer_pair(idx);
        let mut out = conv_forward(&planes[idx], layer, &weight.values, &bias.values, h, w);
        if layer.relu {
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        planes.push(out);
    }
    let logits_data = planes.pop().expect("at least one layer");
    if logits_data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "forward logits".to_string(),
        });
    }
    Ok((
        Logits {
            num_classes: net.num_classes,
            height: h,
            width: w,
            data: logits_data,
        },
        ForwardCache {
            planes,
            height: h,
            width: w,
        },
    ))
}

/// Accumulate exact gradients of a scalar loss into `params.grad`, given the
/// loss gradient w.r.t. the logits. Gradients add onto whatever is already in
/// the buffers, so batches accumulate naturally; call
/// [`ModelParams::zero_grads`] (or [`sgd_step`], which clears them) between
/// optimization steps.
pub fn backward(
    net: &ReferenceNet,
    params: &mut ModelParams,
    cache: &ForwardCache,
    grad_logits: &Logits,
) -> Result<()> {
    let (h, w) = (cache.height, cache.width);
    if grad_logits.height != h || grad_logits.width != w || grad_logits.num_classes != net.num_classes {
        return Err(Error::ShapeMismatch {
            context: "backward grad_logits",
            expected: format!("{}x{}x{}", net.num_classes, h, w),
            actual: format!(
                "{}x{}x{}",
                grad_logits.num_classes, grad_logits.height, grad_logits.width
            ),
        });
    }
    if cache.planes.len() != net.layers.len() {
        return Err(Error::invalid("forward cache does not match network"));
    }

    // grad_out always holds the gradient at the current layer's raw
    // (pre-ReLU-of-next-layer) output; the ReLU gate is applied when the
    // gradient crosses back over a ReLU boundary below.
    let mut grad_out = grad_logits.data.clone();
    for (idx, layer) in net.layers.iter().enumerate().rev() {
        let input = &cache.planes[idx];
        {
            let weight = &mut params.tensors[2 * idx];
            conv_backward_weights(input, &grad_out, layer, &mut weight.grad, h, w);
        }
        {
            let bias = &mut params.tensors[2 * idx + 1];
            let hw = h * w;
            for oc in 0..layer.out_ch {
                bias.grad[oc] += grad_out[oc * hw..(oc + 1) * hw].iter().sum::<f64>();
            }
        }
        if idx > 0 {
            let weight = &params.tensors[2 * idx];
            let mut grad_in = conv_backward_input(&weight.values, &grad_out, layer, h, w);
            if net.layers[idx - 1].relu {
                // This layer's input is the previous ReLU's output, which is
                // positive exactly where that ReLU passed its input through.
                for (g, &a) in grad_in.iter_mut().zip(input.iter()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            grad_out = grad_in;
        }
    }
    Ok(())
}

fn conv_forward(
    input: &[f64],
    layer: &ConvSpec,
    weights: &[f64],
    bias: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let hw = h * w;
    let k = layer.kernel;
    let pad = k / 2;
    let mut out = vec![0.0; layer.out_ch * hw];
    for oc in 0..layer.out_ch {
        out[oc * hw..(oc + 1) * hw].fill(bias[oc]);
        for ic in 0..layer.in_ch {
            let in_plane = &input[ic * hw..(ic + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                for kx in 0..k {
                    let dx = kx as isize - pad as isize;
                    let wv = weights[((oc * layer.in_ch + ic) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    accumulate_shifted(&mut out[oc * hw..(oc + 1) * hw], in_plane, wv, dy, dx, h, w);
                }
            }
        }
    }
    out
}

/// `out[y][x] += wv * src[y + dy][x + dx]` over in-bounds positions.
#[inline]
fn accumulate_shifted(out: &mut [f64], src: &[f64], wv: f64, dy: isize, dx: isize, h: usize, w: usize) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize) as usize;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let dst = &mut out[y * w + x0..y * w + x1];
        let src_row = &src[sy * w + (x0 as isize + dx) as usize..];
        for (d, s) in dst.iter_mut().zip(src_row) {
            *d += wv * s;
        }
    }
}

/// `acc += sum over in-bounds positions of a[y][x] * b[y + dy][x + dx]`.
#[inline]
fn dot_shifted(a: &[f64], b: &[f64], dy: isize, dx: isize, h: usize, w: usize) -> f64 {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize) as usize;
    let mut acc = 0.0;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let ra = &a[y * w + x0..y * w + x1];
        let rb = &b[sy * w + (x0 as isize + dx) as usize..sy * w + (x0 as isize + dx) as usize + (x1 - x0)];
        for (va, vb) in ra.iter().zip(rb) {
            acc += va * vb;
        }
    }
    acc
}

fn conv_backward_weights(
    input: &[f64],
    grad_out: &[f64],
    layer: &ConvSpec,
    grad_w: &mut [f64],
    h: usize,
    w: usize,
) {
    let hw = h * w;
    let k = layer.kernel;
    let pad = k / 2;
    for oc in 0..layer.out_ch {
        let gout = &grad_out[oc * hw..(oc + 1) * hw];
        for ic in 0..layer.in_ch {
            let in_plane = &input[ic * hw..(ic + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                for kx in 0..k {
                    let dx = kx as isize - pad as isize;
                    grad_w[((oc * layer.in_ch + ic) * k + ky) * k + kx] +=
                        dot_shifted(gout, in_plane, dy, dx, h, w);
                }
            }
        }
    }
}

fn conv_backward_input(
    weights: &[f64],
    grad_out: &[f64],
    layer: &ConvSpec,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let hw = h * w;
    let k = layer.kernel;
    let pad = k / 2;
    let mut grad_in = vec![0.0; layer.in_ch * hw];
    for oc in 0..layer.out_ch {
        let gout = &grad_out[oc * hw..(oc + 1) * hw];
        for ic in 0..layer.in_ch {
            let gin = &mut grad_in[ic * hw..(ic + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                for kx in 0..k {
                    let dx = kx as isize - pad as isize;
                    let wv = weights[((oc * layer.in_ch + ic) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    // grad_in[y][x] += wv * gout[y - dy][x - dx]
                    accumulate_shifted(gin, gout, wv, -dy, -dx, h, w);
                }
            }
        }
    }
    grad_in
}

/// Numerically stable per-pixel softmax over classes.
pub fn softmax(logits: &Logits) -> Result<ProbMap> {
    let hw = logits.height * logits.width;
    let c = logits.num_classes;
    let mut data = vec![0.0; c * hw];
    for px in 0..hw {
        let mut max = f64::NEG_INFINITY;
        for ch in 0..c {
            max = max.max(logits.data[ch * hw + px]);
        }
        if !max.is_finite() {
            return Err(Error::NonFinite {
                context: "softmax input".to_string(),
            });
        }
        let mut sum = 0.0;
        for ch in 0..c {
            let e = (logits.data[ch * hw + px] - max).exp();
            data[ch * hw + px] = e;
            sum += e;
        }
        for ch in 0..c {
            data[ch * hw + px] /= sum;
        }
    }
    ProbMap::new(c, logits.height, logits.width, data)
}

/// SGD with momentum and decoupled-from-biases weight decay:
/// `v <- momentum * v + grad + weight_decay * w; w <- w - lr * v`.
/// Gradient buffers are cleared afterwards.
pub fn sgd_step(params: &mut ModelParams, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    for t in &mut params.tensors {
        let wd = if t.decay { weight_decay } else { 0.0 };
        for i in 0..t.values.len() {
            let g = t.grad[i] + wd * t.values[i];
            t.momentum[i] = momentum * t.momentum[i] + g;
            t.values[i] -= lr * t.momentum[i];
        }
        t.grad.fill(0.0);
    }
    if !params.values_finite() {
        return Err(Error::NonFinite {
            context: "sgd_step parameters".to_string(),
        });
    }
    Ok(())
}

/// Polynomial learning-rate decay: `lr0 * (1 - iter/total)^power`.
pub fn poly_lr(iter: usize, total: usize, lr0: f64, power: f64) -> f64 {
    debug_assert!(iter <= total);
    if iter >= total {
        return 0.0;
    }
    lr0 * (1.0 - iter as f64 / total as f64).powf(power)
}

const CHECKPOINT_MAGIC: &str = "mixseg-checkpoint v1";

/// Write parameters: plain-text manifest of `tensor <name> <shape...>` lines,
/// a `data` separator, then all values as little-endian f64 in manifest
/// order. Round-trips bit-exactly.
pub fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        let mut out = BufWriter::new(file);
        let werr = |e| Error::io(tmp.display().to_string(), e);
        writeln!(out, "{CHECKPOINT_MAGIC}").map_err(werr)?;
        for t in &params.tensors {
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            writeln!(out, "tensor {} {}", t.name, dims.join(" ")).map_err(werr)?;
        }
        writeln!(out, "data").map_err(werr)?;
        for t in &params.tensors {
            for v in &t.values {
                out.write_all(&v.to_le_bytes()).map_err(werr)?;
            }
        }
        out.flush().map_err(werr)?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a checkpoint written by [`write_checkpoint`]. Gradient and momentum
/// buffers come back zeroed; the weight-decay flag is recovered from the
/// `.bias` name suffix.
pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let loc = || path.display().to_string();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(loc(), e))?;

    // Header is ASCII lines up to and including "data\n".
    let mut offset = 0usize;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(loc(), "unterminated header"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::parse(loc(), "non-utf8 header"))?
            .to_string();
        offset += nl + 1;
        if line == "data" {
            break;
        }
        lines.push(line);
        if lines.len() > 10_000 {
            return Err(Error::parse(loc(), "header too large"));
        }
    }
    if lines.first().map(String::as_str) != Some(CHECKPOINT_MAGIC) {
        return Err(Error::parse(loc(), "bad magic line"));
    }

    let mut tensors = Vec::new();
    for line in &lines[1..] {
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(Error::parse(loc(), format!("unexpected line: {line}")));
        }
        let name = parts
            .next()
            .ok_or_else(|| Error::parse(loc(), "tensor line missing name"))?
            .to_string();
        let shape: Vec<usize> = parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::parse(loc(), format!("bad dim {p}")))
            })
            .collect::<Result<_>>()?;
        if shape.is_empty() {
            return Err(Error::parse(loc(), format!("tensor {name} has no shape")));
        }
        tensors.push((name, shape));
    }

    let total: usize = tensors
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    let payload = &bytes[offset..];
    if payload.len() != total * 8 {
        return Err(Error::parse(
            loc(),
            format!("payload {} bytes, expected {}", payload.len(), total * 8),
        ));
    }
    let mut cursor = 0usize;
    let mut out = Vec::with_capacity(tensors.len());
    for (name, shape) in tensors {
        let len: usize = shape.iter().product();
        let values: Vec<f64> = payload[cursor..cursor + len * 8]
            .chunks_exact(8)
            .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("chunk of 8")))
            .collect();
        cursor += len * 8;
        let decay = !name.ends_with(".bias");
        out.push(ParamTensor::new(name, shape, values, decay));
    }
    Ok(ModelParams { tensors: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::argmax_labels;

    fn small_image(rng: &mut Rng, h: usize, w: usize) -> Image {
        Image::new(3, h, w, (0..3 * h * w).map(|_| rng.next_f64()).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_zero_logits_and_uniform_softmax() {
        let net = ReferenceNet::standard(4);
        let mut params = net.init_params(&mut Rng::new(0));
        for t in &mut params.tensors {
            t.values.fill(0.0);
        }
        let img = small_image(&mut Rng::new(1), 5, 6);
        let (logits, _) = forward(&net, &params, &img).unwrap();
        assert!(logits.data.iter().all(|&v| v == 0.0));
        let probs = softmax(&logits).unwrap();
        assert!(probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn forward_preserves_resolution() {
        let net = ReferenceNet::standard(4);
        let params = net.init_params(&mut Rng::new(0));
        let img = small_image(&mut Rng::new(2), 32, 32);
        let (logits, _) = forward(&net, &params, &img).unwrap();
        assert_eq!((logits.num_classes, logits.height, logits.width), (4, 32, 32));
    }

    #[test]
    fn hand_computed_single_pixel_forward() {
        let net = ReferenceNet::with_layers(vec![
            ConvSpec { name: "conv1".into(), in_ch: 3, out_ch: 2, kernel: 3, relu: true },
            ConvSpec { name: "conv2".into(), in_ch: 2, out_ch: 2, kernel: 3, relu: true },
            ConvSpec { name: "head".into(), in_ch: 2, out_ch: 2, kernel: 1, relu: false },
        ])
        .unwrap();
        let mut params = net.init_params(&mut Rng::new(0));
        for t in &mut params.tensors {
            t.values.fill(0.0);
        }
        // On a 1x1 image only the center tap (ky=kx=1) of a 3x3 kernel sees
        // the pixel; index of w[oc][ic][1][1] is (oc*in_ch + ic)*9 + 4.
        let center = |oc: usize, ic: usize, in_ch: usize| (oc * in_ch + ic) * 9 + 4;
        // conv1: ch0 = 1*x0 + 2*x1 + 3*x2 + 0.5, ch1 = -x0 (ReLU kills it).
        params.tensors[0].values[center(0, 0, 3)] = 1.0;
        params.tensors[0].values[center(0, 1, 3)] = 2.0;
        params.tensors[0].values[center(0, 2, 3)] = 3.0;
        params.tensors[0].values[center(1, 0, 3)] = -1.0;
        params.tensors[1].values[0] = 0.5;
        // conv2: ch0 = 2*a0, ch1 = -5*a0 (ReLU kills it).
        params.tensors[2].values[center(0, 0, 2)] = 2.0;
        params.tensors[2].values[center(1, 0, 2)] = -5.0;
        // head 1x1: logit0 = a0 + 0.1, logit1 = -a0 + 0.2.
        params.tensors[4].values[0] = 1.0; // w[0][0]
        params.tensors[4].values[2] = -1.0; // w[1][0]
        params.tensors[5].values[0] = 0.1;
        params.tensors[5].values[1] = 0.2;

        let img = Image::new(3, 1, 1, vec![0.2, 0.4, 0.6]).unwrap();
        let (logits, _) = forward(&net, &params, &img).unwrap();
        let a0 = 0.5 + 1.0 * 0.2 + 2.0 * 0.4 + 3.0 * 0.6; // 3.3
        let a2 = 2.0 * a0; // 6.6
        assert!((logits.get(0, 0, 0) - (a2 + 0.1)).abs() < 1e-12);
        assert!((logits.get(1, 0, 0) - (-a2 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = ReferenceNet::standard(3);
        let params = net.init_params(&mut Rng::new(7));
        let img = small_image(&mut Rng::new(8), 9, 11);
        let (a, _) = forward(&net, &params, &img).unwrap();
        let (b, _) = forward(&net, &params, &img).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn forward_reports_non_finite() {
        let net = ReferenceNet::standard(2);
        let mut params = net.init_params(&mut Rng::new(0));
        params.tensors[0].values[0] = f64::INFINITY;
        let img = small_image(&mut Rng::new(1), 3, 3);
        assert!(matches!(
            forward(&net, &params, &img),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn softmax_basics() {
        let l = Logits { num_classes: 2, height: 1, width: 1, data: vec![0.0, 0.0] };
        let p = softmax(&l).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);

        let shifted = Logits { num_classes: 2, height: 1, width: 1, data: vec![3.7, 3.7] };
        let ps = softmax(&shifted).unwrap();
        assert_eq!(ps.data(), &[0.5, 0.5]);

        let extreme = Logits { num_classes: 2, height: 1, width: 1, data: vec![1000.0, 0.0] };
        let pe = softmax(&extreme).unwrap();
        assert_eq!(pe.data()[0], 1.0);
        assert_eq!(pe.data()[1], 0.0);
    }

    #[test]
    fn softmax_shift_invariance_random() {
        let mut rng = Rng::new(3);
        let data: Vec<f64> = (0..3 * 4).map(|_| rng.range_f64(-1e3, 1e3)).collect();
        let l = Logits { num_classes: 3, height: 2, width: 2, data: data.clone() };
        let lk = Logits {
            num_classes: 3,
            height: 2,
            width: 2,
            data: data.iter().map(|v| v + 123.456).collect(),
        };
        let (p, pk) = (softmax(&l).unwrap(), softmax(&lk).unwrap());
        for (a, b) in p.data().iter().zip(pk.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Valid ProbMap even at magnitude 1e3: construction already checked.
        let labels = argmax_labels(&p);
        assert!(labels.data().iter().all(|&v| v < 3));
    }

    #[test]
    fn backward_zero_grad_logits_gives_zero_grads() {
        let net = ReferenceNet::standard(2);
        let mut params = net.init_params(&mut Rng::new(5));
        let img = small_image(&mut Rng::new(6), 4, 4);
        let (logits, cache) = forward(&net, &params, &img).unwrap();
        let zero = Logits::zeros(logits.num_classes, 4, 4);
        backward(&net, &mut params, &cache, &zero).unwrap();
        assert!(params.tensors.iter().all(|t| t.grad.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn backward_is_linear_in_grad_logits() {
        let net = ReferenceNet::standard(2);
        let mut params = net.init_params(&mut Rng::new(5));
        let img = small_image(&mut Rng::new(6), 4, 4);
        let (_, cache) = forward(&net, &params, &img).unwrap();
        let mut g_rng = Rng::new(7);
        let g = Logits {
            num_classes: 2,
            height: 4,
            width: 4,
            data: (0..32).map(|_| g_rng.range_f64(-1.0, 1.0)).collect(),
        };
        let g2 = Logits {
            num_classes: 2,
            height: 4,
            width: 4,
            data: g.data.iter().map(|v| 2.0 * v).collect(),
        };
        backward(&net, &mut params, &cache, &g).unwrap();
        let grads1: Vec<Vec<f64>> = params.tensors.iter().map(|t| t.grad.clone()).collect();
        params.zero_grads();
        backward(&net, &mut params, &cache, &g2).unwrap();
        for (t, g1) in params.tensors.iter().zip(&grads1) {
            for (a, b) in t.grad.iter().zip(g1) {
                assert_eq!(a.to_bits(), (2.0 * b).to_bits());
            }
        }
    }

    /// Central finite differences of a linear functional of the logits,
    /// checked against `backward`. Loss = sum(g .* logits).
    #[test]
    fn backward_matches_finite_differences() {
        let net = ReferenceNet::standard(2);
        let eps = 1e-5;
        for seed in [11, 22, 33] {
            let mut params = net.init_params(&mut Rng::new(seed));
            let img = small_image(&mut Rng::new(seed + 100), 4, 4);
            let mut g_rng = Rng::new(seed + 200);
            let g = Logits {
                num_classes: 2,
                height: 4,
                width: 4,
                data: (0..32).map(|_| g_rng.range_f64(-1.0, 1.0)).collect(),
            };
            let (_, cache) = forward(&net, &params, &img).unwrap();
            backward(&net, &mut params.clone(), &cache, &g).unwrap();
            let mut analytic = params.clone();
            analytic.zero_grads();
            backward(&net, &mut analytic, &cache, &g).unwrap();

            let loss = |p: &ModelParams| -> f64 {
                let (l, _) = forward(&net, p, &img).unwrap();
                l.data.iter().zip(&g.data).map(|(a, b)| a * b).sum()
            };
            let mut max_rel = 0.0f64;
            for ti in 0..params.tensors.len() {
                for vi in 0..params.tensors[ti].values.len() {
                    let mut plus = params.clone();
                    plus.tensors[ti].values[vi] += eps;
                    let mut minus = params.clone();
                    minus.tensors[ti].values[vi] -= eps;
                    let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                    let exact = analytic.tensors[ti].grad[vi];
                    let denom = exact.abs().max(numeric.abs()).max(1e-8);
                    max_rel = max_rel.max((numeric - exact).abs() / denom);
                }
            }
            assert!(max_rel < 1e-4, "seed {seed}: max rel err {max_rel}");
        }
    }

    #[test]
    fn sgd_zero_lr_is_noop_on_weights() {
        let net = ReferenceNet::standard(2);
        let mut params = net.init_params(&mut Rng::new(1));
        let before = params.clone();
        for t in &mut params.tensors {
            t.grad.fill(0.3);
        }
        sgd_step(&mut params, 0.0, 0.9, 5e-4).unwrap();
        assert!(params.values_bits_equal(&before));
    }

    #[test]
    fn sgd_plain_arithmetic() {
        let mut params = ModelParams {
            tensors: vec![ParamTensor::new("w".into(), vec![1], vec![1.0], true)],
        };
        params.tensors[0].grad[0] = 0.5;
        sgd_step(&mut params, 0.1, 0.0, 0.0).unwrap();
        assert!((params.tensors[0].values[0] - 0.95).abs() < 1e-15);
        assert_eq!(params.tensors[0].grad[0], 0.0);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut params = ModelParams {
            tensors: vec![ParamTensor::new("w".into(), vec![1], vec![0.0], true)],
        };
        let g = 0.25;
        params.tensors[0].grad[0] = g;
        sgd_step(&mut params, 0.0, 0.9, 0.0).unwrap();
        params.tensors[0].grad[0] = g;
        sgd_step(&mut params, 0.0, 0.9, 0.0).unwrap();
        // v2 = 0.9 * g + g = 1.9 g
        assert!((params.tensors[0].momentum[0] - 1.9 * g).abs() < 1e-15);
    }

    #[test]
    fn sgd_weight_decay_skips_biases() {
        let mut params = ModelParams {
            tensors: vec![
                ParamTensor::new("l.weight".into(), vec![1], vec![2.0], true),
                ParamTensor::new("l.bias".into(), vec![1], vec![2.0], false),
            ],
        };
        sgd_step(&mut params, 1.0, 0.0, 0.1).unwrap();
        assert!((params.tensors[0].values[0] - 1.8).abs() < 1e-15);
        assert_eq!(params.tensors[1].values[0], 2.0);
    }

    #[test]
    fn sgd_reports_non_finite_update() {
        let mut params = ModelParams {
            tensors: vec![ParamTensor::new("w".into(), vec![1], vec![1.0], true)],
        };
        params.tensors[0].grad[0] = f64::MAX;
        assert!(matches!(
            sgd_step(&mut params, f64::MAX, 0.0, 0.0),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn poly_lr_schedule() {
        assert_eq!(poly_lr(0, 100, 2.5e-4, 0.9), 2.5e-4);
        assert_eq!(poly_lr(100, 100, 2.5e-4, 0.9), 0.0);
        assert_eq!(poly_lr(50, 100, 1.0, 1.0), 0.5);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = ReferenceNet::standard(4);
        let params = net.init_params(&mut Rng::new(99));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&params, &path).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert!(params.values_bits_equal(&loaded));
        assert_eq!(
            loaded.tensors.iter().map(|t| t.decay).collect::<Vec<_>>(),
            params.tensors.iter().map(|t| t.decay).collect::<Vec<_>>()
        );
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let net = ReferenceNet::standard(2);
        let params = net.init_params(&mut Rng::new(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&params, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        let truncated = dir.path().join("trunc.ckpt");
        std::fs::write(&truncated, &bytes).unwrap();
        assert!(matches!(
            read_checkpoint(&truncated),
            Err(Error::Parse { .. })
        ));

        let garbled = dir.path().join("garbled.ckpt");
        std::fs::write(&garbled, b"not a checkpoint\ndata\n").unwrap();
        assert!(read_checkpoint(&garbled).is_err());
    }
}
