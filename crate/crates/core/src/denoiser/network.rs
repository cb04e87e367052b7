//! A small residual convolutional noise predictor with hand-written
//! reverse-mode gradients.
//!
//! ```text
//! e   = sinusoidal(base timestep)                      (2·freqs features)
//! h1  = relu(conv3x3(x) + W1·e + b1)
//! h2  = relu(conv3x3(h1) + W2·e + b2)
//! r   = h1 + conv3x3(h2) + b3
//! out = (conv3x3(r) + b4 + (Wg·e + bg) ⊙ s·P) / √(1−ᾱ)  (P: learned C×H×W map, s fixed)
//! ```
//!
//! All activations are channel-planar (`[c][y][x]`); the public interface
//! takes and returns interleaved [`ImageTensor`]s.

use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::StepInfo;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::{ImageTensor, Shape};

use super::{NoisePredictor, PredictorKind};

const MAGIC: &[u8; 4] = b"WMF1";
const MAX_PARAMS: usize = 200_000;

/// Architecture hyper-parameters, serialised in the weight file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub hidden: usize,
    pub freqs: usize,
}

impl ArchDescriptor {
    pub fn square(image_size: usize, channels: usize) -> Self {
        ArchDescriptor {
            height: image_size,
            width: image_size,
            channels,
            hidden: 16,
            freqs: 16,
        }
    }

    fn embed_dim(&self) -> usize {
        2 * self.freqs
    }

    /// Fixed multiplier on the positional map, `√(H·W)/4`. It lets the
    /// per-pixel map learn at a rate independent of image size despite the
    /// loss being averaged over pixels.
    fn pos_scale(&self) -> f64 {
        ((self.height * self.width) as f64).sqrt() / 4.0
    }
}

/// Parameter groups, in declaration (and serialisation) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    Conv1W,
    Time1W,
    Time1B,
    Conv2W,
    Time2W,
    Time2B,
    Conv3W,
    Conv3B,
    Conv4W,
    Conv4B,
    PosMap,
    GateW,
    GateB,
}

const GROUPS: [Group; 13] = [
    Group::Conv1W,
    Group::Time1W,
    Group::Time1B,
    Group::Conv2W,
    Group::Time2W,
    Group::Time2B,
    Group::Conv3W,
    Group::Conv3B,
    Group::Conv4W,
    Group::Conv4B,
    Group::PosMap,
    Group::GateW,
    Group::GateB,
];

/// Coarse layer family a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Dense,
    PositionalMap,
}

impl Group {
    fn kind(self) -> LayerKind {
        match self {
            Group::Conv1W | Group::Conv2W | Group::Conv3W | Group::Conv3B | Group::Conv4W | Group::Conv4B => LayerKind::Conv,
            Group::Time1W | Group::Time1B | Group::Time2W | Group::Time2B | Group::GateW | Group::GateB => LayerKind::Dense,
            Group::PosMap => LayerKind::PositionalMap,
        }
    }

    fn len(self, a: &ArchDescriptor) -> usize {
        let (c, f, e) = (a.channels, a.hidden, a.embed_dim());
        match self {
            Group::Conv1W => f * c * 9,
            Group::Time1W | Group::Time2W => f * e,
            Group::Time1B | Group::Time2B | Group::Conv3B => f,
            Group::Conv2W | Group::Conv3W => f * f * 9,
            Group::Conv4W => c * f * 9,
            Group::Conv4B | Group::GateB => c,
            Group::PosMap => c * a.height * a.width,
            Group::GateW => c * e,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    ranges: Vec<Range<usize>>,
    total: usize,
}

impl Layout {
    fn new(a: &ArchDescriptor) -> Self {
        let mut start = 0;
        let ranges = GROUPS
            .iter()
            .map(|g| {
                let r = start..start + g.len(a);
                start = r.end;
                r
            })
            .collect();
        Layout { ranges, total: start }
    }

    fn range(&self, g: Group) -> Range<usize> {
        self.ranges[g as usize].clone()
    }
}

/// Trainable predictor. Parameters are one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet<S> {
    arch: ArchDescriptor,
    layout: Layout,
    params: Vec<S>,
}

/// Flat gradient vector aligned with [`TinyNet::params`].
pub type Gradients<S> = Vec<S>;

/// Activations kept for the backward pass, plus scratch space. Reusing one
/// cache across calls avoids reallocating the large unrolled buffers.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    arch: ArchDescriptor,
    cols_x: Vec<S>,
    embed: Vec<S>,
    a1: Vec<S>,
    h1: Vec<S>,
    cols_h1: Vec<S>,
    a2: Vec<S>,
    h2: Vec<S>,
    cols_h2: Vec<S>,
    r: Vec<S>,
    cols_r: Vec<S>,
    gate: Vec<S>,
    out_scale: S,
    output: Vec<S>,
    d_a: Vec<S>,
    d_b: Vec<S>,
    d_cols: Vec<S>,
    wt_t: Vec<S>,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn new(arch: &ArchDescriptor) -> Self {
        let (c, f, hw) = (arch.channels, arch.hidden, arch.height * arch.width);
        let z = |n: usize| vec![S::zero(); n];
        ForwardCache {
            arch: *arch,
            cols_x: z(9 * c * hw),
            embed: z(arch.embed_dim()),
            a1: z(f * hw),
            h1: z(f * hw),
            cols_h1: z(9 * f * hw),
            a2: z(f * hw),
            h2: z(f * hw),
            cols_h2: z(9 * f * hw),
            r: z(f * hw),
            cols_r: z(9 * f * hw),
            gate: z(c),
            out_scale: S::one(),
            output: z(c * hw),
            d_a: z(f * hw),
            d_b: z(f * hw),
            d_cols: z(9 * f * hw),
            wt_t: z(9 * f * f.max(c)),
        }
    }
}

impl<S> ForwardCache<S> {
    /// Planar network output.
    pub fn output(&self) -> &[S] {
        &self.output
    }
}

impl<S: Scalar> TinyNet<S> {
    /// Deterministically initialised network for `image_size`² inputs.
    pub fn build(image_size: usize, channels: usize, seed: u64) -> Result<Self> {
        Self::with_arch(ArchDescriptor::square(image_size, channels), seed)
    }

    pub fn with_arch(arch: ArchDescriptor, seed: u64) -> Result<Self> {
        if arch.height < 8 || arch.width < 8 {
            return Err(Error::invalid(format!(
                "network input must be at least 8x8, got {}x{}",
                arch.height, arch.width
            )));
        }
        if arch.channels != 1 && arch.channels != 3 {
            return Err(Error::invalid("network channels must be 1 or 3"));
        }
        if arch.hidden == 0 || arch.freqs == 0 {
            return Err(Error::invalid("hidden width and frequency count must be positive"));
        }
        let layout = Layout::new(&arch);
        if layout.total > MAX_PARAMS {
            return Err(Error::invalid(format!(
                "{} parameters exceeds the {MAX_PARAMS} budget",
                layout.total
            )));
        }
        let mut rng = RngStream::new(seed).child("tiny-net-init").rng();
        let mut params = vec![S::zero(); layout.total];
        let (c, f, e) = (arch.channels as f64, arch.hidden as f64, arch.embed_dim() as f64);
        for g in GROUPS {
            let std = match g {
                Group::Conv1W => (2.0 / (9.0 * c)).sqrt(),
                Group::Conv2W => (2.0 / (9.0 * f)).sqrt(),
                // Residual branch and output start small so the untrained
                // predictor is close to zero.
                Group::Conv3W => 0.1 * (2.0 / (9.0 * f)).sqrt(),
                Group::Conv4W => 0.01 * (1.0 / (9.0 * f)).sqrt(),
                Group::Time1W | Group::Time2W => (1.0 / e).sqrt(),
                Group::GateW => 0.1 * (1.0 / e).sqrt(),
                Group::PosMap => 0.0,
                Group::Time1B | Group::Time2B | Group::Conv3B | Group::Conv4B | Group::GateB => 0.0,
            };
            for p in &mut params[layout.range(g)] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = S::of(std * z);
            }
        }
        params[layout.range(Group::GateB)].fill(S::one());
        Ok(TinyNet { arch, layout, params })
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    /// Layer family of parameter `i`.
    pub fn layer_kind(&self, i: usize) -> LayerKind {
        GROUPS
            .iter()
            .zip(&self.layout.ranges)
            .find(|(_, r)| r.contains(&i))
            .map(|(g, _)| g.kind())
            .expect("parameter index in range")
    }

    pub fn input_shape(&self) -> Shape {
        Shape {
            height: self.arch.height,
            width: self.arch.width,
            channels: self.arch.channels,
        }
    }

    fn p(&self, g: Group) -> &[S] {
        &self.params[self.layout.range(g)]
    }

    /// Sinusoidal embedding of a base-grid timestep.
    pub fn embed(&self, base_t: usize) -> Vec<S> {
        let n = self.arch.freqs;
        let mut e = Vec::with_capacity(2 * n);
        for k in 0..n {
            let freq = (-(10_000f64.ln()) * k as f64 / n as f64).exp();
            let arg = base_t as f64 * freq;
            e.push(S::of(arg.sin()));
            e.push(S::of(arg.cos()));
        }
        e
    }

    /// Forward pass on a planar input into a fresh cache.
    pub fn forward(&self, input: &[S], step: &StepInfo) -> ForwardCache<S> {
        let mut cache = ForwardCache::new(&self.arch);
        self.forward_into(input, step, &mut cache);
        cache
    }

    /// Forward pass reusing the buffers of `cache`.
    pub fn forward_into(&self, input: &[S], step: &StepInfo, cache: &mut ForwardCache<S>) {
        let a = &self.arch;
        assert_eq!(cache.arch, *a, "cache built for a different architecture");
        let (c, f, hw) = (a.channels, a.hidden, a.height * a.width);
        let (h, w) = (a.height, a.width);
        assert_eq!(input.len(), c * hw, "network input length");
        let k = cache;
        k.embed = self.embed(step.base);
        k.out_scale = S::of(output_scale(step.alpha_bar));

        im2col(input, c, h, w, &mut k.cols_x);
        let t1 = dense(self.p(Group::Time1W), self.p(Group::Time1B), &k.embed);
        broadcast(&t1, hw, &mut k.a1);
        conv3x3(self.p(Group::Conv1W), &k.cols_x, c, f, hw, &mut k.a1);
        relu(&k.a1, &mut k.h1);

        let t2 = dense(self.p(Group::Time2W), self.p(Group::Time2B), &k.embed);
        broadcast(&t2, hw, &mut k.a2);
        im2col(&k.h1, f, h, w, &mut k.cols_h1);
        conv3x3(self.p(Group::Conv2W), &k.cols_h1, f, f, hw, &mut k.a2);
        relu(&k.a2, &mut k.h2);

        broadcast(self.p(Group::Conv3B), hw, &mut k.r);
        im2col(&k.h2, f, h, w, &mut k.cols_h2);
        conv3x3(self.p(Group::Conv3W), &k.cols_h2, f, f, hw, &mut k.r);
        for (ri, &hi) in k.r.iter_mut().zip(&k.h1) {
            *ri += hi;
        }

        k.gate = dense(self.p(Group::GateW), self.p(Group::GateB), &k.embed);
        broadcast(self.p(Group::Conv4B), hw, &mut k.output);
        im2col(&k.r, f, h, w, &mut k.cols_r);
        conv3x3(self.p(Group::Conv4W), &k.cols_r, f, c, hw, &mut k.output);
        let pos = self.p(Group::PosMap);
        let s = S::of(a.pos_scale());
        for ch in 0..c {
            let g = k.gate[ch] * s;
            for (o, &pv) in k.output[ch * hw..(ch + 1) * hw].iter_mut().zip(&pos[ch * hw..(ch + 1) * hw]) {
                *o += g * pv;
            }
        }
        for o in &mut k.output {
            *o *= k.out_scale;
        }
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂output` (planar). The
    /// cache's scratch buffers are overwritten; its activations are not.
    pub fn backward(&self, cache: &mut ForwardCache<S>, d_out: &[S], grads: &mut [S]) {
        let a = &self.arch;
        let (c, f, hw) = (a.channels, a.hidden, a.height * a.width);
        let (h, w) = (a.height, a.width);
        let lay = &self.layout;
        let k = cache;
        let e = &k.embed;
        let scaled: Vec<S> = d_out.iter().map(|&d| d * k.out_scale).collect();
        let d_out = &scaled[..];

        // Output conv, bias and positional head.
        {
            let gb = &mut grads[lay.range(Group::Conv4B)];
            for ch in 0..c {
                gb[ch] += d_out[ch * hw..(ch + 1) * hw].iter().copied().sum::<S>();
            }
        }
        conv3x3_grad_w(&k.cols_r, d_out, f, c, hw, &mut grads[lay.range(Group::Conv4W)]);
        let pos = self.p(Group::PosMap);
        let s = S::of(a.pos_scale());
        let mut d_gate = vec![S::zero(); c];
        {
            let gp = &mut grads[lay.range(Group::PosMap)];
            for (ch, dg) in d_gate.iter_mut().enumerate() {
                let g = k.gate[ch] * s;
                let mut acc = S::zero();
                for i in ch * hw..(ch + 1) * hw {
                    gp[i] += g * d_out[i];
                    acc += pos[i] * d_out[i];
                }
                *dg = acc * s;
            }
        }
        dense_grad(&d_gate, e, lay.range(Group::GateW), lay.range(Group::GateB), grads);
        let d_r = &mut k.d_a;
        d_r.fill(S::zero());
        conv3x3_grad_x(self.p(Group::Conv4W), d_out, f, c, h, w, &mut k.wt_t, &mut k.d_cols, d_r);

        // Residual branch.
        {
            let gb = &mut grads[lay.range(Group::Conv3B)];
            for ch in 0..f {
                gb[ch] += d_r[ch * hw..(ch + 1) * hw].iter().copied().sum::<S>();
            }
        }
        conv3x3_grad_w(&k.cols_h2, d_r, f, f, hw, &mut grads[lay.range(Group::Conv3W)]);
        let d_a2 = &mut k.d_b;
        d_a2.fill(S::zero());
        conv3x3_grad_x(self.p(Group::Conv3W), d_r, f, f, h, w, &mut k.wt_t, &mut k.d_cols, d_a2);
        relu_grad_in_place(&k.a2, d_a2);
        let d_t2 = channel_sums(d_a2, f, hw);
        dense_grad(&d_t2, e, lay.range(Group::Time2W), lay.range(Group::Time2B), grads);
        conv3x3_grad_w(&k.cols_h1, d_a2, f, f, hw, &mut grads[lay.range(Group::Conv2W)]);
        // d_h1 = d_r (skip connection) + conv2 input gradient.
        let d_h1 = d_r;
        conv3x3_grad_x(self.p(Group::Conv2W), d_a2, f, f, h, w, &mut k.wt_t, &mut k.d_cols, d_h1);

        // Input block.
        relu_grad_in_place(&k.a1, d_h1);
        let d_a1 = d_h1;
        let d_t1 = channel_sums(d_a1, f, hw);
        dense_grad(&d_t1, e, lay.range(Group::Time1W), lay.range(Group::Time1B), grads);
        conv3x3_grad_w(&k.cols_x, d_a1, c, f, hw, &mut grads[lay.range(Group::Conv1W)]);
    }

    /// Serialises to the `WMF1` format: magic, five little-endian `u32`
    /// architecture fields (height, width, channels, hidden, freqs), a `u32`
    /// parameter count, then the parameters as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = &self.arch;
        let mut out = Vec::with_capacity(28 + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        for v in [a.height, a.width, a.channels, a.hidden, a.freqs, self.params.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&(p.to_f64_lossy() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, message: &str| Error::Format {
            offset,
            message: message.to_string(),
        };
        if bytes.len() < 28 {
            return Err(fmt(bytes.len(), "truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt(0, "bad magic, expected WMF1"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let arch = ArchDescriptor {
            height: word(0),
            width: word(1),
            channels: word(2),
            hidden: word(3),
            freqs: word(4),
        };
        let count = word(5);
        let mut net = Self::with_arch(arch, 0).map_err(|e| fmt(4, &e.to_string()))?;
        if count != net.params.len() {
            return Err(fmt(24, "parameter count does not match architecture"));
        }
        if bytes.len() != 28 + 4 * count {
            return Err(fmt(bytes.len(), "payload length does not match parameter count"));
        }
        for (i, p) in net.params.iter_mut().enumerate() {
            let at = 28 + 4 * i;
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(fmt(at, "non-finite parameter"));
            }
            *p = S::of(v as f64);
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl<S: Scalar> NoisePredictor<S> for TinyNet<S> {
    fn predict(&self, x_t: &ImageTensor<S>, step: &StepInfo) -> ImageTensor<S> {
        assert_eq!(x_t.shape(), self.input_shape(), "network input shape");
        let planar = to_planar(x_t);
        with_pooled_cache(&self.arch, |cache| {
            self.forward_into(&planar, step, cache);
            from_planar(&cache.output, x_t.shape())
        })
    }

    fn kind(&self) -> PredictorKind {
        PredictorKind::TrainedNetwork
    }
}

pub(crate) fn to_planar<S: Scalar>(t: &ImageTensor<S>) -> Vec<S> {
    let c = t.channels();
    if c == 1 {
        return t.data().to_vec();
    }
    let hw = t.shape().pixels();
    let mut out = vec![S::zero(); t.len()];
    for (i, px) in t.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[ch * hw + i] = v;
        }
    }
    out
}

pub(crate) fn from_planar<S: Scalar>(data: &[S], shape: Shape) -> ImageTensor<S> {
    let c = shape.channels;
    if c == 1 {
        return ImageTensor::from_raw(shape, data.to_vec());
    }
    let hw = shape.pixels();
    let mut out = vec![S::zero(); data.len()];
    for i in 0..hw {
        for ch in 0..c {
            out[i * c + ch] = data[ch * hw + i];
        }
    }
    ImageTensor::from_raw(shape, out)
}

/// `1/√(1 − ᾱ + 10⁻⁴)`: the body predicts noise in pixel units and this
/// converts it to unit-variance noise, keeping the body's required gain
/// roughly constant across noise levels.
fn output_scale(alpha_bar: f64) -> f64 {
    1.0 / (1.0 - alpha_bar + 1e-4).sqrt()
}

fn dense<S: Scalar>(w: &[S], b: &[S], x: &[S]) -> Vec<S> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * n..(o + 1) * n].iter().zip(x).map(|(&a, &v)| a * v).sum::<S>())
        .collect()
}

fn dense_grad<S: Scalar>(d_out: &[S], x: &[S], w_range: Range<usize>, b_range: Range<usize>, grads: &mut [S]) {
    let n = x.len();
    let gw = &mut grads[w_range];
    for (o, &d) in d_out.iter().enumerate() {
        for (g, &v) in gw[o * n..(o + 1) * n].iter_mut().zip(x) {
            *g += d * v;
        }
    }
    for (g, &d) in grads[b_range].iter_mut().zip(d_out) {
        *g += d;
    }
}

thread_local! {
    static CACHE_POOL: std::cell::RefCell<Vec<Box<dyn std::any::Any>>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` with a per-thread cache matching `arch`, allocating on first use.
fn with_pooled_cache<S: Scalar, R>(arch: &ArchDescriptor, f: impl FnOnce(&mut ForwardCache<S>) -> R) -> R {
    let taken = CACHE_POOL.with(|pool| {
        let mut pool = pool.borrow_mut();
        let pos = pool
            .iter()
            .position(|b| b.downcast_ref::<ForwardCache<S>>().is_some_and(|c| c.arch == *arch));
        pos.map(|i| pool.swap_remove(i))
    });
    let mut boxed = match taken {
        Some(b) => b.downcast::<ForwardCache<S>>().expect("pooled cache type"),
        None => Box::new(ForwardCache::new(arch)),
    };
    let out = f(&mut boxed);
    CACHE_POOL.with(|pool| {
        let mut pool = pool.borrow_mut();
        if pool.len() < 8 {
            pool.push(boxed);
        }
    });
    out
}

fn broadcast<S: Scalar>(per_channel: &[S], hw: usize, out: &mut [S]) {
    for (chunk, &v) in out.chunks_exact_mut(hw).zip(per_channel) {
        chunk.fill(v);
    }
}

fn relu<S: Scalar>(x: &[S], out: &mut [S]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v.max(S::zero());
    }
}

fn relu_grad_in_place<S: Scalar>(pre: &[S], d: &mut [S]) {
    for (g, &p) in d.iter_mut().zip(pre) {
        if p <= S::zero() {
            *g = S::zero();
        }
    }
}

fn channel_sums<S: Scalar>(x: &[S], channels: usize, hw: usize) -> Vec<S> {
    (0..channels)
        .map(|ch| x[ch * hw..(ch + 1) * hw].iter().copied().sum())
        .collect()
}

/// Unrolls 3×3 zero-padded neighbourhoods: row `i·9 + ky·3 + kx` holds
/// input channel `i` shifted by `(ky-1, kx-1)`.
fn im2col<S: Scalar>(input: &[S], cin: usize, h: usize, w: usize, cols: &mut [S]) {
    let hw = h * w;
    let cols = &mut cols[..cin * 9 * hw];
    cols.fill(S::zero());
    for i in 0..cin {
        let src = &input[i * hw..(i + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(i * 9 + ky * 3 + kx) * hw..(i * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let (x0, x1) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
                    let s0 = sy as usize * w + x0 + kx - 1;
                    row[y * w + x0..y * w + x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Scatter-adds column gradients back onto the input planes.
fn col2im_add<S: Scalar>(cols: &[S], cin: usize, h: usize, w: usize, d_in: &mut [S]) {
    let hw = h * w;
    for i in 0..cin {
        let dst = &mut d_in[i * hw..(i + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(i * 9 + ky * 3 + kx) * hw..(i * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let (x0, x1) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
                    let s0 = sy as usize * w + x0 + kx - 1;
                    axpy(S::one(), &row[y * w + x0..y * w + x1], &mut dst[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

#[inline]
fn axpy<S: Scalar>(a: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent accumulators so it vectorises.
#[inline]
fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    let mut acc = [S::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for k in 0..8 {
            acc[k] += a[k] * b[k];
        }
    }
    let mut s = acc.iter().copied().sum::<S>();
    for (&a, &b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}

const TILE: usize = 64;

/// `c += a·b` for row-major `a: m×kk`, `b: kk×n`, `c: m×n`, tiled over `n`
/// so each output tile stays in registers while `k` runs.
fn gemm_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, kk: usize, n: usize) {
    let mut p0 = 0;
    while p0 < n {
        let len = TILE.min(n - p0);
        for o in 0..m {
            let row = &a[o * kk..(o + 1) * kk];
            let dst = &mut c[o * n + p0..o * n + p0 + len];
            if len == TILE {
                let mut acc = [S::zero(); TILE];
                acc.copy_from_slice(dst);
                for (k, &wv) in row.iter().enumerate() {
                    let src: &[S; TILE] = b[k * n + p0..k * n + p0 + TILE].try_into().unwrap();
                    for j in 0..TILE {
                        acc[j] += wv * src[j];
                    }
                }
                dst.copy_from_slice(&acc);
            } else {
                for (k, &wv) in row.iter().enumerate() {
                    axpy(wv, &b[k * n + p0..k * n + p0 + len], dst);
                }
            }
        }
        p0 += len;
    }
}

/// `c += a·bᵀ` for `a: m×n`, `b: kk×n`, `c: m×kk`; four rows of `b` share
/// each load of `a`.
fn gemm_nt_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, kk: usize, n: usize) {
    const L: usize = 16;
    let body = n - n % L;
    for o in 0..m {
        let ar = &a[o * n..(o + 1) * n];
        let mut k = 0;
        while k + 4 <= kk {
            let rows = [
                &b[k * n..(k + 1) * n],
                &b[(k + 1) * n..(k + 2) * n],
                &b[(k + 2) * n..(k + 3) * n],
                &b[(k + 3) * n..(k + 4) * n],
            ];
            let mut acc = [[S::zero(); L]; 4];
            let mut p = 0;
            while p < body {
                let av: &[S; L] = ar[p..p + L].try_into().unwrap();
                let x0: &[S; L] = rows[0][p..p + L].try_into().unwrap();
                let x1: &[S; L] = rows[1][p..p + L].try_into().unwrap();
                let x2: &[S; L] = rows[2][p..p + L].try_into().unwrap();
                let x3: &[S; L] = rows[3][p..p + L].try_into().unwrap();
                for j in 0..L {
                    acc[0][j] += av[j] * x0[j];
                    acc[1][j] += av[j] * x1[j];
                    acc[2][j] += av[j] * x2[j];
                    acc[3][j] += av[j] * x3[j];
                }
                p += L;
            }
            for r in 0..4 {
                let mut s = acc[r].iter().copied().sum::<S>();
                for j in body..n {
                    s += ar[j] * rows[r][j];
                }
                c[o * kk + k + r] += s;
            }
            k += 4;
        }
        for k in k..kk {
            c[o * kk + k] += dot(ar, &b[k * n..(k + 1) * n]);
        }
    }
}

/// `out[o] += Σ_k w[o][k]·cols[k]` where `cols` comes from [`im2col`].
fn conv3x3<S: Scalar>(wt: &[S], cols: &[S], cin: usize, cout: usize, hw: usize, out: &mut [S]) {
    gemm_acc(wt, cols, out, cout, cin * 9, hw);
}

/// Accumulates the kernel gradient of [`conv3x3`].
fn conv3x3_grad_w<S: Scalar>(cols: &[S], d_out: &[S], cin: usize, cout: usize, hw: usize, gw: &mut [S]) {
    gemm_nt_acc(d_out, cols, gw, cout, cin * 9, hw);
}

/// Accumulates the input gradient of [`conv3x3`].
#[allow(clippy::too_many_arguments)]
fn conv3x3_grad_x<S: Scalar>(
    wt: &[S],
    d_out: &[S],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    wt_t: &mut [S],
    d_cols: &mut [S],
    d_in: &mut [S],
) {
    let hw = h * w;
    let kk = cin * 9;
    let wt_t = &mut wt_t[..kk * cout];
    for o in 0..cout {
        for k in 0..kk {
            wt_t[k * cout + o] = wt[o * kk + k];
        }
    }
    let d_cols = &mut d_cols[..kk * hw];
    d_cols.fill(S::zero());
    gemm_acc(wt_t, d_out, d_cols, kk, cout, hw);
    col2im_add(d_cols, cin, h, w, d_in);
}
