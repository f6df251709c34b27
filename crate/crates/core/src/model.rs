//! Fully-convolutional network over the 360-ray ring.
//!
//! Seven hidden layers, each a dilated circular 1D convolution followed by
//! layer normalization across channels (independently at every ray) and a
//! rectifier. A 1×1 projection maps the last hidden layer to four outputs
//! per ray: presence logit, distance logit, bearing sine and bearing cosine.
//!
//! Ranges enter the first layer through a fixed encoding (inverse range by
//! default).
//!
//! Activations are stored channel-major (`channels × len`), and convolutions
//! are lowered to GEMM through a circular im2col. Because padding wraps and
//! normalization never mixes positions, the network commutes exactly with
//! rotations of the ring.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{rotate_into, ScanWindow};
use crate::lidar::{BINS, D_MAX, D_MIN};

/// Outputs per ray of the head.
pub const OUTPUTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// How ranges are presented to the first layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputEncoding {
    /// Meters, as measured.
    Range,
    /// `1 / r`: near returns stand out and empty bins sit close to zero.
    InverseRange,
}

impl InputEncoding {
    #[inline]
    pub fn encode(self, r: f64) -> f64 {
        match self {
            InputEncoding::Range => r,
            InputEncoding::InverseRange => 1.0 / r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub kernel_sizes: Vec<usize>,
    pub dilations: Vec<usize>,
    pub activation: Activation,
    pub input_encoding: InputEncoding,
    pub layer_norm_eps: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl ModelConfig {
    /// The reference architecture: 7 layers × 32 channels, 43-ray receptive field.
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            hidden_channels: 32,
            kernel_sizes: vec![3, 3, 5, 5, 5, 7, 7],
            dilations: vec![1, 2, 2, 2, 2, 1, 1],
            activation: Activation::Relu,
            input_encoding: InputEncoding::InverseRange,
            layer_norm_eps: 1e-5,
            d_min: D_MIN,
            d_max: D_MAX,
        }
    }

    pub fn layers(&self) -> usize {
        self.kernel_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.in_channels == 0 || self.hidden_channels == 0 {
            return bad("channel counts must be positive");
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.len() != self.dilations.len() {
            return bad("kernel_sizes and dilations must be non-empty and of equal length");
        }
        if self.kernel_sizes.iter().any(|&k| k == 0 || k % 2 == 0) || self.dilations.contains(&0) {
            return bad("kernels must be odd and dilations positive");
        }
        if !(self.d_min < self.d_max) || !(self.layer_norm_eps > 0.0) {
            return bad("invalid distance range or normalization epsilon");
        }
        Ok(())
    }

    /// Rays of input seen by one output ray.
    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.kernel_sizes, &self.dilations)
    }

    fn layer_in(&self, l: usize) -> usize {
        if l == 0 { self.in_channels } else { self.hidden_channels }
    }

    pub fn param_count(&self) -> usize {
        ParamLayout::new(self).total
    }
}

/// `1 + Σ (k_i − 1)·d_i`.
pub fn receptive_field(kernel_sizes: &[usize], dilations: &[usize]) -> usize {
    1 + kernel_sizes.iter().zip(dilations).map(|(&k, &d)| (k - 1) * d).sum::<usize>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub weight: (usize, usize),
    pub bias: (usize, usize),
    pub gain: (usize, usize),
    pub shift: (usize, usize),
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub layers: Vec<LayerSlots>,
    pub head_weight: (usize, usize),
    pub head_bias: (usize, usize),
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let r = (off, off + n);
            off += n;
            r
        };
        let h = cfg.hidden_channels;
        let layers = (0..cfg.layers())
            .map(|l| LayerSlots {
                weight: take(h * cfg.layer_in(l) * cfg.kernel_sizes[l]),
                bias: take(h),
                gain: take(h),
                shift: take(h),
            })
            .collect();
        let head_weight = take(OUTPUTS * h);
        let head_bias = take(OUTPUTS);
        ParamLayout { layers, head_weight, head_bias, total: off }
    }

    /// Named tensors with their shapes, in storage order.
    pub fn tensors(&self, cfg: &ModelConfig) -> Vec<(alloc::string::String, (usize, usize), Vec<usize>)> {
        use alloc::format;
        let h = cfg.hidden_channels;
        let mut out = Vec::new();
        for (l, s) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.weight"), s.weight, vec![h, cfg.layer_in(l), cfg.kernel_sizes[l]]));
            out.push((format!("layer{l}.bias"), s.bias, vec![h]));
            out.push((format!("layer{l}.norm_gain"), s.gain, vec![h]));
            out.push((format!("layer{l}.norm_shift"), s.shift, vec![h]));
        }
        out.push(("head.weight".into(), self.head_weight, vec![OUTPUTS, h]));
        out.push(("head.bias".into(), self.head_bias, vec![OUTPUTS]));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl ModelParams {
    /// All weights and biases zero, normalization gain one and shift zero.
    pub fn zeros(config: ModelConfig) -> Self {
        let layout = ParamLayout::new(&config);
        let mut data = vec![0.0; layout.total];
        for s in &layout.layers {
            data[s.gain.0..s.gain.1].fill(1.0);
        }
        Self { config, layout, data }
    }

    pub fn from_data(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if data.len() != layout.total {
            return Err(Error::Shape { what: "parameter vector", expected: layout.total, actual: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter"));
        }
        Ok(Self { config, layout, data })
    }

    pub fn slice(&self, r: (usize, usize)) -> &[f64] {
        &self.data[r.0..r.1]
    }
}

/// Uniform fan-in initialization `U(−√(6/fan_in), √(6/fan_in))` for every
/// weight; biases and shifts zero, gains one. Deterministic in `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut p = ModelParams::zeros(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..config.layers() {
        let s = p.layout.layers[l].weight;
        let bound = libm::sqrt(6.0 / (config.layer_in(l) * config.kernel_sizes[l]) as f64);
        for w in &mut p.data[s.0..s.1] {
            *w = rng.random_range(-bound..bound);
        }
    }
    let s = p.layout.head_weight;
    let bound = libm::sqrt(6.0 / config.hidden_channels as f64);
    for w in &mut p.data[s.0..s.1] {
        *w = rng.random_range(-bound..bound);
    }
    Ok(p)
}

/// Per-ray network outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTensor {
    pub presence: Vec<f64>,
    pub distance: Vec<f64>,
    pub bearing_sin: Vec<f64>,
    pub bearing_cos: Vec<f64>,
}

impl PredictionTensor {
    pub fn len(&self) -> usize {
        self.presence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.presence.is_empty()
    }

    pub fn rotated(&self, k: usize) -> PredictionTensor {
        let r = |v: &[f64]| {
            let mut out = vec![0.0; v.len()];
            rotate_into(v, &mut out, k);
            out
        };
        PredictionTensor {
            presence: r(&self.presence),
            distance: r(&self.distance),
            bearing_sin: r(&self.bearing_sin),
            bearing_cos: r(&self.bearing_cos),
        }
    }

    pub fn mirrored(&self) -> PredictionTensor {
        let len = self.len();
        let m = |v: &[f64], s: f64| (0..len).map(|i| s * v[(len - i) % len]).collect::<Vec<_>>();
        PredictionTensor {
            presence: m(&self.presence, 1.0),
            distance: m(&self.distance, 1.0),
            bearing_sin: m(&self.bearing_sin, -1.0),
            bearing_cos: m(&self.bearing_cos, 1.0),
        }
    }

    pub fn max_abs_diff(&self, other: &PredictionTensor) -> f64 {
        let pairs = [
            (&self.presence, &other.presence),
            (&self.distance, &other.distance),
            (&self.bearing_sin, &other.bearing_sin),
            (&self.bearing_cos, &other.bearing_cos),
        ];
        pairs
            .iter()
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| libm::fabs(x - y)))
            .fold(0.0, f64::max)
    }
}

struct LayerCache {
    /// im2col of the layer input, `(in·k) × len`.
    cols: Vec<f64>,
    /// Normalized pre-activations, `out × len`.
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Rectified output, `out × len`.
    act: Vec<f64>,
}

/// Intermediate values kept by [`forward_cached`] for [`backward`].
pub struct ForwardCache {
    len: usize,
    layers: Vec<LayerCache>,
    prediction: PredictionTensor,
}

impl ForwardCache {
    pub fn prediction(&self) -> &PredictionTensor {
        &self.prediction
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// `c = op(a)·op(b) + beta·c` on row-major buffers; `op(a)` is `m × k`,
/// `op(b)` is `k × n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[inline]
fn shift_of(j: usize, k: usize, d: usize, len: usize) -> usize {
    let off = (j as isize - (k / 2) as isize) * d as isize;
    off.rem_euclid(len as isize) as usize
}

/// Circular im2col: row `c·k + j` holds channel `c` advanced by `(j − k/2)·d`.
fn im2col(x: &[f64], channels: usize, len: usize, k: usize, d: usize) -> Vec<f64> {
    let mut cols = vec![0.0; channels * k * len];
    for c in 0..channels {
        let src = &x[c * len..(c + 1) * len];
        for j in 0..k {
            let s = shift_of(j, k, d, len);
            let row = &mut cols[(c * k + j) * len..(c * k + j + 1) * len];
            row[..len - s].copy_from_slice(&src[s..]);
            row[len - s..].copy_from_slice(&src[..s]);
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(dcols: &[f64], channels: usize, len: usize, k: usize, d: usize) -> Vec<f64> {
    let mut dx = vec![0.0; channels * len];
    for c in 0..channels {
        let dst = &mut dx[c * len..(c + 1) * len];
        for j in 0..k {
            let s = shift_of(j, k, d, len);
            let row = &dcols[(c * k + j) * len..(c * k + j + 1) * len];
            for (o, v) in dst[s..].iter_mut().zip(&row[..len - s]) {
                *o += v;
            }
            for (o, v) in dst[..s].iter_mut().zip(&row[len - s..]) {
                *o += v;
            }
        }
    }
    dx
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Runs the network on a scan window.
pub fn forward(params: &ModelParams, window: &ScanWindow) -> Result<PredictionTensor> {
    if window.n != params.config.in_channels {
        return Err(Error::Shape { what: "window channels", expected: params.config.in_channels, actual: window.n });
    }
    Ok(forward_cached(params, &window.channels, BINS)?.prediction)
}

/// Runs the network on a raw `in_channels × len` input and keeps what
/// [`backward`] needs.
pub fn forward_cached(params: &ModelParams, input: &[f64], len: usize) -> Result<ForwardCache> {
    let cfg = &params.config;
    let expected = cfg.in_channels * len;
    if input.len() != expected || len == 0 {
        return Err(Error::Shape { what: "model input", expected, actual: input.len() });
    }
    if input.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NonFinite("model input (ranges must be positive and finite)"));
    }
    let encoded: Vec<f64> = input.iter().map(|&r| cfg.input_encoding.encode(r)).collect();
    let h = cfg.hidden_channels;
    let mut layers: Vec<LayerCache> = Vec::with_capacity(cfg.layers());
    for l in 0..cfg.layers() {
        let slots = params.layout.layers[l];
        let (cin, k, d) = (cfg.layer_in(l), cfg.kernel_sizes[l], cfg.dilations[l]);
        let x = if l == 0 { &encoded[..] } else { &layers[l - 1].act[..] };
        let cols = im2col(x, cin, len, k, d);

        let mut z = vec![0.0; h * len];
        for (o, row) in z.chunks_exact_mut(len).enumerate() {
            row.fill(params.data[slots.bias.0 + o]);
        }
        gemm(h, cin * k, len, params.slice(slots.weight), false, &cols, false, 1.0, &mut z);

        // normalization across channels at each position
        let mut mean = vec![0.0; len];
        for row in z.chunks_exact(len) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let inv_h = 1.0 / h as f64;
        mean.iter_mut().for_each(|m| *m *= inv_h);
        let mut var = vec![0.0; len];
        for row in z.chunks_exact_mut(len) {
            for ((v, m), s) in row.iter_mut().zip(&mean).zip(var.iter_mut()) {
                *v -= m;
                *s += *v * *v;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / libm::sqrt(s * inv_h + cfg.layer_norm_eps)).collect();
        let mut act = vec![0.0; h * len];
        for (o, (zr, ar)) in z.chunks_exact_mut(len).zip(act.chunks_exact_mut(len)).enumerate() {
            let g = params.data[slots.gain.0 + o];
            let b = params.data[slots.shift.0 + o];
            for ((zv, av), is) in zr.iter_mut().zip(ar.iter_mut()).zip(&inv_std) {
                *zv *= is;
                let y = g * *zv + b;
                *av = if y > 0.0 { y } else { 0.0 };
            }
        }
        if act.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation { layer: l });
        }
        layers.push(LayerCache { cols, xhat: z, inv_std, act });
    }

    let last = &layers[layers.len() - 1].act;
    let mut raw = vec![0.0; OUTPUTS * len];
    for (o, row) in raw.chunks_exact_mut(len).enumerate() {
        row.fill(params.data[params.layout.head_bias.0 + o]);
    }
    gemm(OUTPUTS, h, len, params.slice(params.layout.head_weight), false, last, false, 1.0, &mut raw);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation { layer: cfg.layers() });
    }

    let span = cfg.d_max - cfg.d_min;
    let prediction = PredictionTensor {
        presence: raw[..len].iter().map(|&v| sigmoid(v)).collect(),
        distance: raw[len..2 * len].iter().map(|&v| cfg.d_min + sigmoid(v) * span).collect(),
        bearing_sin: raw[2 * len..3 * len].to_vec(),
        bearing_cos: raw[3 * len..].to_vec(),
    };
    Ok(ForwardCache { len, layers, prediction })
}

/// Gradient of a scalar loss with respect to every parameter, given its
/// gradient `d_out` with respect to the four per-ray outputs
/// (presence, distance, sine, cosine; `4 × len`, after the output
/// nonlinearities).
pub fn backward(params: &ModelParams, cache: &ForwardCache, d_out: &[f64]) -> Result<Vec<f64>> {
    let cfg = &params.config;
    let len = cache.len;
    if d_out.len() != OUTPUTS * len {
        return Err(Error::Shape { what: "output gradient", expected: OUTPUTS * len, actual: d_out.len() });
    }
    let h = cfg.hidden_channels;
    let mut grads = vec![0.0; params.layout.total];
    let pred = &cache.prediction;
    let span = cfg.d_max - cfg.d_min;

    // through the output nonlinearities
    let mut d_raw = d_out.to_vec();
    for i in 0..len {
        let p = pred.presence[i];
        d_raw[i] *= p * (1.0 - p);
        let s = (pred.distance[i] - cfg.d_min) / span;
        d_raw[len + i] *= span * s * (1.0 - s);
    }

    // head
    let last = &cache.layers[cfg.layers() - 1].act;
    let hw = params.layout.head_weight;
    gemm(OUTPUTS, len, h, &d_raw, false, last, true, 0.0, &mut grads[hw.0..hw.1]);
    for (o, row) in d_raw.chunks_exact(len).enumerate() {
        grads[params.layout.head_bias.0 + o] = row.iter().sum();
    }
    let mut d_act = vec![0.0; h * len];
    gemm(h, OUTPUTS, len, params.slice(hw), true, &d_raw, false, 0.0, &mut d_act);

    for l in (0..cfg.layers()).rev() {
        let slots = params.layout.layers[l];
        let lc = &cache.layers[l];
        let (cin, k, d) = (cfg.layer_in(l), cfg.kernel_sizes[l], cfg.dilations[l]);

        // rectifier, then the affine part of the normalization
        let mut d_xhat = d_act;
        for (o, (dr, (ar, xr))) in
            d_xhat.chunks_exact_mut(len).zip(lc.act.chunks_exact(len).zip(lc.xhat.chunks_exact(len))).enumerate()
        {
            let g = params.data[slots.gain.0 + o];
            let (mut dg, mut ds) = (0.0, 0.0);
            for ((dv, &a), &xh) in dr.iter_mut().zip(ar).zip(xr) {
                let dy = if a > 0.0 { *dv } else { 0.0 };
                dg += dy * xh;
                ds += dy;
                *dv = dy * g;
            }
            grads[slots.gain.0 + o] = dg;
            grads[slots.shift.0 + o] = ds;
        }

        // normalization statistics
        let mut sum_d = vec![0.0; len];
        let mut sum_dx = vec![0.0; len];
        for (dr, xr) in d_xhat.chunks_exact(len).zip(lc.xhat.chunks_exact(len)) {
            for i in 0..len {
                sum_d[i] += dr[i];
                sum_dx[i] += dr[i] * xr[i];
            }
        }
        let inv_h = 1.0 / h as f64;
        let mut dz = d_xhat;
        for (dr, xr) in dz.chunks_exact_mut(len).zip(lc.xhat.chunks_exact(len)) {
            for i in 0..len {
                dr[i] = lc.inv_std[i] * (dr[i] - inv_h * (sum_d[i] + xr[i] * sum_dx[i]));
            }
        }

        // convolution
        let ws = slots.weight;
        gemm(h, len, cin * k, &dz, false, &lc.cols, true, 0.0, &mut grads[ws.0..ws.1]);
        for (o, row) in dz.chunks_exact(len).enumerate() {
            grads[slots.bias.0 + o] = row.iter().sum();
        }
        if l > 0 {
            let mut dcols = vec![0.0; cin * k * len];
            gemm(cin * k, h, len, params.slice(ws), true, &dz, false, 0.0, &mut dcols);
            d_act = col2im(&dcols, cin, len, k, d);
        } else {
            d_act = Vec::new();
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient("model parameters"));
    }
    Ok(grads)
}
