//! Two-stream illumination encoder, the negative-key queue and InfoNCE.
//!
//! One stream reads the pixels of a patch, the other reads its channel-wise
//! spectrum (real and imaginary parts stacked as channels and standardized).
//! Each stream is six 3x3 convolutions, a global average pool and a
//! two-layer MLP; the two embeddings are concatenated and L2-normalized.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::nn::{self, Conv2d, Linear};
use crate::params::{join, ParamMut, ParamRef, Parameters};
use crate::spectral::dft2;
use crate::tensor::{Image, Tensor};

pub const STREAM_DEPTH: usize = 6;
const NORM_FLOOR: f64 = 1e-12;

/// Channel widths and strides of one encoder stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderTopology {
    pub channels: [usize; STREAM_DEPTH],
    pub strides: [usize; STREAM_DEPTH],
    pub hidden: usize,
    /// Output length of each stream; the concatenated feature is twice this.
    pub embed_dim: usize,
}

impl Default for EncoderTopology {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64, 64, 128, 128],
            strides: [2, 2, 1, 2, 1, 2],
            hidden: 128,
            embed_dim: 128,
        }
    }
}

impl EncoderTopology {
    /// Smallest accepted patch side: four pixels per axis survive the last
    /// downsampling stage.
    pub fn min_side(&self) -> usize {
        let downs = self.strides.iter().filter(|&&s| s > 1).count() as u32;
        4 * 2usize.pow(downs)
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.embed_dim
    }
}

/// Per-channel standardization of the frequency-stream input.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for SpectrumStats {
    fn default() -> Self {
        Self {
            mean: vec![0.0; 6],
            std: vec![1.0; 6],
        }
    }
}

/// Raw spectrum channels `[re_0, im_0, re_1, im_1, re_2, im_2]`.
fn raw_spectrum_channels(patch: &Image) -> Result<Tensor> {
    let s = dft2(patch)?;
    let (c, h, w) = patch.shape();
    let mut out = Tensor::zeros(2 * c, h, w);
    for ch in 0..c {
        let spec = s.channel(ch);
        let (re, im) = (2 * ch, 2 * ch + 1);
        for (i, z) in spec.iter().enumerate() {
            out.plane_mut(re)[i] = z.re;
            out.plane_mut(im)[i] = z.im;
        }
    }
    Ok(out)
}

impl SpectrumStats {
    /// Mean and standard deviation of every spectrum channel over `patches`.
    pub fn fit<'a>(patches: impl IntoIterator<Item = &'a Image>) -> Result<Self> {
        let mut sum = [0.0; 6];
        let mut sq = [0.0; 6];
        let mut count = 0usize;
        for p in patches {
            let raw = raw_spectrum_channels(p)?;
            if raw.channels() != 6 {
                return Err(shape_err("SpectrumStats::fit", 3, p.channels()));
            }
            for ch in 0..6 {
                for v in raw.plane(ch) {
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
            count += raw.plane_len();
        }
        if count == 0 {
            return Ok(Self::default());
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                let s = math::sqrt(var);
                if s > NORM_FLOOR {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }
}

/// Standardized spectrum channels fed to the frequency stream.
pub fn spectral_input(patch: &Image, stats: &SpectrumStats) -> Result<Tensor> {
    let mut raw = raw_spectrum_channels(patch)?;
    for ch in 0..raw.channels() {
        let (m, s) = (stats.mean[ch], stats.std[ch]);
        raw.plane_mut(ch).iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    Ok(raw)
}

/// Six convolutions, global average pooling and a two-layer MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub convs: Vec<Conv2d>,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
struct StreamCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    pooled: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl Stream {
    fn zeros(in_channels: usize, topo: &EncoderTopology) -> Self {
        let mut convs = Vec::with_capacity(STREAM_DEPTH);
        let mut c_in = in_channels;
        for (&c, &s) in topo.channels.iter().zip(&topo.strides) {
            convs.push(Conv2d::zeros(c_in, c, s));
            c_in = c;
        }
        Self {
            convs,
            fc1: Linear::zeros(c_in, topo.hidden),
            fc2: Linear::zeros(topo.hidden, topo.embed_dim),
        }
    }

    fn init<R: Rng + ?Sized>(in_channels: usize, topo: &EncoderTopology, rng: &mut R) -> Self {
        let mut convs = Vec::with_capacity(STREAM_DEPTH);
        let mut c_in = in_channels;
        for (&c, &s) in topo.channels.iter().zip(&topo.strides) {
            convs.push(Conv2d::init(c_in, c, s, 1.0, rng));
            c_in = c;
        }
        let fc1 = Linear::init(c_in, topo.hidden, 1.0, rng);
        let fc2 = Linear::init(topo.hidden, topo.embed_dim, 1.0, rng);
        Self { convs, fc1, fc2 }
    }

    fn forward(&self, x: Tensor) -> Vec<f64> {
        let mut x = x;
        for conv in &self.convs {
            x = nn::leaky_relu_tensor(&conv.forward(&x));
        }
        let pooled = nn::global_avg_pool(&x);
        let hidden: Vec<f64> = self.fc1.forward(&pooled).into_iter().map(nn::leaky_relu).collect();
        self.fc2.forward(&hidden)
    }

    fn forward_cached(&self, x: Tensor) -> (Vec<f64>, StreamCache) {
        let mut inputs = Vec::with_capacity(STREAM_DEPTH);
        let mut pre = Vec::with_capacity(STREAM_DEPTH);
        let mut x = x;
        for conv in &self.convs {
            let p = conv.forward(&x);
            let next = nn::leaky_relu_tensor(&p);
            inputs.push(x);
            pre.push(p);
            x = next;
        }
        let pooled = nn::global_avg_pool(&x);
        let hidden_pre = self.fc1.forward(&pooled);
        let hidden: Vec<f64> = hidden_pre.iter().map(|&v| nn::leaky_relu(v)).collect();
        let out = self.fc2.forward(&hidden);
        (
            out,
            StreamCache {
                inputs,
                pre,
                pooled,
                hidden_pre,
                hidden,
            },
        )
    }

    fn backward(&self, cache: &StreamCache, dout: &[f64], grad: &mut Stream) {
        let mut dh = self.fc2.backward(&cache.hidden, dout, &mut grad.fc2);
        for (g, p) in dh.iter_mut().zip(&cache.hidden_pre) {
            *g *= nn::leaky_relu_grad(*p);
        }
        let dpool = self.fc1.backward(&cache.pooled, &dh, &mut grad.fc1);
        let last = cache.pre.last().expect("stream has convolutions");
        let mut dx = nn::global_avg_pool_backward(&dpool, last.shape());
        for i in (0..self.convs.len()).rev() {
            nn::leaky_relu_backward(&cache.pre[i], &mut dx);
            let want = i > 0;
            match self.convs[i].backward(&cache.inputs[i], &dx, &mut grad.convs[i], want) {
                Some(next) => dx = next,
                None => break,
            }
        }
    }
}

impl Parameters for Stream {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.collect(&join(prefix, &format!("conv{i}")), out);
        }
        self.fc1.collect(&join(prefix, "fc1"), out);
        self.fc2.collect(&join(prefix, "fc2"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.collect_mut(&join(prefix, &format!("conv{i}")), out);
        }
        self.fc1.collect_mut(&join(prefix, "fc1"), out);
        self.fc2.collect_mut(&join(prefix, "fc2"), out);
    }
}

/// Embedding produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationFeature {
    pub vector: Vec<f64>,
    pub normalized: bool,
}

impl IlluminationFeature {
    pub fn zeros(len: usize) -> Self {
        Self {
            vector: vec![0.0; len],
            normalized: false,
        }
    }

    pub fn unit(vector: Vec<f64>) -> Self {
        let mut v = vector;
        let n = norm(&v).max(NORM_FLOOR);
        v.iter_mut().for_each(|x| *x /= n);
        Self {
            vector: v,
            normalized: true,
        }
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.vector, other)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    math::sqrt(dot(a, a))
}

/// Parameters of both streams plus the frequency-input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    topology: EncoderTopology,
    pub spatial: Stream,
    pub frequency: Stream,
    /// Not trained; fitted once from the training set.
    pub stats: SpectrumStats,
}

/// Intermediate values needed to backpropagate through [`EncoderParams::encode_cached`].
#[derive(Debug, Clone)]
pub struct EncodeCache {
    spatial: StreamCache,
    frequency: StreamCache,
    raw: Vec<f64>,
    norm: f64,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(topology: EncoderTopology, rng: &mut R) -> Self {
        let spatial = Stream::init(3, &topology, rng);
        let frequency = Stream::init(6, &topology, rng);
        Self {
            topology,
            spatial,
            frequency,
            stats: SpectrumStats::default(),
        }
    }

    pub fn zeros(topology: EncoderTopology) -> Self {
        Self {
            topology,
            spatial: Stream::zeros(3, &topology),
            frequency: Stream::zeros(6, &topology),
            stats: SpectrumStats::default(),
        }
    }

    pub fn topology(&self) -> &EncoderTopology {
        &self.topology
    }

    pub fn feature_dim(&self) -> usize {
        self.topology.feature_dim()
    }

    fn check_patch(&self, patch: &Image) -> Result<()> {
        let (c, h, w) = patch.shape();
        let min = self.topology.min_side();
        if c != 3 {
            return Err(shape_err("encode channels", 3, c));
        }
        if h != w {
            return Err(shape_err("encode expects a square patch", (h, h), (h, w)));
        }
        if h < min {
            return Err(Error::PatchTooLarge {
                size: min,
                height: h,
                width: w,
            });
        }
        patch.ensure_finite("encoder input")
    }

    /// Unit-norm concatenated embedding of `patch`.
    pub fn encode(&self, patch: &Image) -> Result<IlluminationFeature> {
        self.check_patch(patch)?;
        let freq_in = spectral_input(patch, &self.stats)?;
        let mut raw = self.spatial.forward(patch.clone());
        raw.extend(self.frequency.forward(freq_in));
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output"));
        }
        Ok(IlluminationFeature::unit(raw))
    }

    pub fn encode_cached(&self, patch: &Image) -> Result<(IlluminationFeature, EncodeCache)> {
        self.check_patch(patch)?;
        let freq_in = spectral_input(patch, &self.stats)?;
        let (mut raw, spatial) = self.spatial.forward_cached(patch.clone());
        let (freq, frequency) = self.frequency.forward_cached(freq_in);
        raw.extend(freq);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output"));
        }
        let n = norm(&raw).max(NORM_FLOOR);
        let feat = IlluminationFeature {
            vector: raw.iter().map(|v| v / n).collect(),
            normalized: true,
        };
        Ok((
            feat,
            EncodeCache {
                spatial,
                frequency,
                raw,
                norm: n,
            },
        ))
    }

    /// Accumulate into `grad` the parameter gradient for an upstream
    /// gradient `dfeat` on the normalized feature.
    pub fn backward(&self, cache: &EncodeCache, dfeat: &[f64], grad: &mut EncoderParams) {
        let n = cache.norm;
        let y: Vec<f64> = cache.raw.iter().map(|v| v / n).collect();
        let proj = dot(&y, dfeat);
        let draw: Vec<f64> = dfeat.iter().zip(&y).map(|(g, yi)| (g - yi * proj) / n).collect();
        let e = self.topology.embed_dim;
        self.spatial.backward(&cache.spatial, &draw[..e], &mut grad.spatial);
        self.frequency.backward(&cache.frequency, &draw[e..], &mut grad.frequency);
    }
}

impl Parameters for EncoderParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.spatial.collect(&join(prefix, "spatial"), out);
        self.frequency.collect(&join(prefix, "frequency"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.spatial.collect_mut(&join(prefix, "spatial"), out);
        self.frequency.collect_mut(&join(prefix, "frequency"), out);
    }
}

/// Contrastive pretraining settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub momentum: f64,
    pub queue_size: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            momentum: 0.999,
            queue_size: 4096,
            pretrain_epochs: 200,
            batch_size: 16,
            patch_size: 192,
            lr: 1e-3,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("contrastive: {m}")));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau must be positive");
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1]");
        }
        if self.queue_size == 0 || self.pretrain_epochs == 0 || self.batch_size == 0 || self.patch_size == 0 {
            return bad("queue_size, pretrain_epochs, batch_size and patch_size must be positive");
        }
        if self.batch_size > self.queue_size {
            return bad("batch_size may not exceed queue_size");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        Ok(())
    }
}

/// FIFO ring buffer of unit-norm key vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    dim: usize,
    capacity: usize,
    keys: Vec<f64>,
    cursor: usize,
    len: usize,
}

impl NegativeQueue {
    pub fn empty(capacity: usize, dim: usize) -> Self {
        assert!(capacity > 0 && dim > 0);
        Self {
            dim,
            capacity,
            keys: vec![0.0; capacity * dim],
            cursor: 0,
            len: 0,
        }
    }

    /// Queue filled with random unit vectors, the usual starting state.
    pub fn random<R: Rng + ?Sized>(capacity: usize, dim: usize, rng: &mut R) -> Self {
        let mut q = Self::empty(capacity, dim);
        for slot in q.keys.chunks_exact_mut(dim) {
            for v in slot.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let n = norm(slot).max(NORM_FLOOR);
            slot.iter_mut().for_each(|v| *v /= n);
        }
        q.len = capacity;
        q
    }

    /// Rebuild from stored state; every filled key must be unit-norm.
    pub fn from_parts(capacity: usize, dim: usize, keys: Vec<f64>, cursor: usize, len: usize) -> Result<Self> {
        if keys.len() != capacity * dim || cursor >= capacity || len > capacity {
            return Err(shape_err("NegativeQueue::from_parts", capacity * dim, keys.len()));
        }
        Ok(Self {
            dim,
            capacity,
            keys,
            cursor,
            len,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn raw(&self) -> &[f64] {
        &self.keys
    }

    /// Key stored in `slot`.
    pub fn slot(&self, slot: usize) -> &[f64] {
        &self.keys[slot * self.dim..][..self.dim]
    }

    /// Filled keys in slot order.
    pub fn keys(&self) -> impl Iterator<Item = &[f64]> {
        self.keys.chunks_exact(self.dim).take(self.len)
    }

    /// Overwrite the oldest entries with `batch`, advancing the cursor.
    pub fn push<K: AsRef<[f64]>>(&mut self, batch: &[K]) -> Result<()> {
        if batch.len() > self.capacity {
            return Err(Error::QueueOverflow {
                capacity: self.capacity,
                batch: batch.len(),
            });
        }
        for k in batch {
            let k = k.as_ref();
            if k.len() != self.dim {
                return Err(shape_err("queue key", self.dim, k.len()));
            }
            if (norm(k) - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "queue keys must be unit-norm (norm {})",
                    norm(k)
                )));
            }
        }
        for k in batch {
            self.keys[self.cursor * self.dim..][..self.dim].copy_from_slice(k.as_ref());
            self.cursor = (self.cursor + 1) % self.capacity;
            self.len = (self.len + 1).min(self.capacity);
        }
        Ok(())
    }
}

/// InfoNCE value and its gradient with respect to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNce {
    pub loss: f64,
    pub grad_q: Vec<f64>,
    /// Softmax probability assigned to the positive key.
    pub positive_prob: f64,
}

/// `-ln( exp(q.k+/tau) / (exp(q.k+/tau) + sum_j exp(q.k_j/tau)) )` over the
/// positive and every queued key. Keys are constants.
pub fn info_nce(q: &IlluminationFeature, k_plus: &IlluminationFeature, queue: &NegativeQueue, tau: f64) -> Result<InfoNce> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    if queue.is_empty() {
        return Err(Error::EmptyQueue);
    }
    if q.len() != queue.dim() || k_plus.len() != queue.dim() {
        return Err(shape_err("info_nce", queue.dim(), (q.len(), k_plus.len())));
    }
    let mut logits = Vec::with_capacity(queue.len() + 1);
    logits.push(q.dot(&k_plus.vector) / tau);
    logits.extend(queue.keys().map(|k| q.dot(k) / tau));
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| math::exp(l - max)).collect();
    let z: f64 = weights.iter().sum();
    let loss = (max + math::ln(z) - logits[0]).max(0.0);

    let mut grad_q: Vec<f64> = k_plus.vector.iter().map(|v| v * (weights[0] / z - 1.0)).collect();
    for (k, w) in queue.keys().zip(&weights[1..]) {
        let p = w / z;
        for (g, v) in grad_q.iter_mut().zip(k) {
            *g += p * v;
        }
    }
    grad_q.iter_mut().for_each(|g| *g /= tau);
    Ok(InfoNce {
        loss,
        grad_q,
        positive_prob: weights[0] / z,
    })
}

/// Whether `q.k_plus` strictly exceeds `q.k` for every distractor.
pub fn positive_ranks_first<K: AsRef<[f64]>>(q: &IlluminationFeature, k_plus: &IlluminationFeature, distractors: &[K]) -> bool {
    let s = q.dot(&k_plus.vector);
    distractors.iter().all(|k| q.dot(k.as_ref()) < s)
}
