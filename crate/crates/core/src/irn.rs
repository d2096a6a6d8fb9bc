//! Feature-aware image reconstruction network.
//!
//! Every FA layer maps the illumination feature through its own affine map
//! to a depthwise 3x3 kernel `w` (one per channel) and a channel modulation
//! vector `v`. An FA block applies two FA layers, each followed by a 3x3
//! convolution: `Z1 = v * F`, `Z2 = F (*) w`, `conv(Z1 + Z2)`. Three
//! residual groups of three blocks and a closing convolution sit between a
//! head convolution and a tail convolution with a global input skip.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::encoder::IlluminationFeature;
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, depthwise_conv, depthwise_conv_backward, Conv2d, Linear};
use crate::params::{join, ParamMut, ParamRef, Parameters};
use crate::tensor::{FeatureMap, Image};

pub const GROUPS: usize = 3;
pub const BLOCKS_PER_GROUP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IrnTopology {
    /// Feature width `C` between head and tail.
    pub channels: usize,
    /// Length of the conditioning illumination feature.
    pub feature_dim: usize,
}

impl Default for IrnTopology {
    fn default() -> Self {
        Self {
            channels: 64,
            feature_dim: 256,
        }
    }
}

/// Dynamic kernels produced by one FA layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FaKernelSet {
    /// `[c][ky][kx]`, length `9 C`.
    pub w: Vec<f64>,
    /// Length `C`.
    pub v: Vec<f64>,
}

impl FaKernelSet {
    pub fn channels(&self) -> usize {
        self.v.len()
    }

    /// `v = 1`, `w` = centre tap only.
    pub fn identity(channels: usize) -> Self {
        let mut w = vec![0.0; 9 * channels];
        for c in 0..channels {
            w[c * 9 + 4] = 1.0;
        }
        Self {
            w,
            v: vec![1.0; channels],
        }
    }
}

/// Affine map from the illumination feature to one [`FaKernelSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct FaLayer {
    pub map: Linear,
    channels: usize,
}

impl FaLayer {
    pub fn zeros(feature_dim: usize, channels: usize) -> Self {
        Self {
            map: Linear::zeros(feature_dim, 10 * channels),
            channels,
        }
    }

    /// Small random weights around `v = 1`, `w = 0`.
    pub fn init<R: Rng + ?Sized>(feature_dim: usize, channels: usize, rng: &mut R) -> Self {
        let mut map = Linear::init(feature_dim, 10 * channels, 0.05, rng);
        for b in &mut map.bias[9 * channels..] {
            *b = 1.0;
        }
        Self { map, channels }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernels(&self, feat: &IlluminationFeature) -> Result<FaKernelSet> {
        if feat.len() != self.map.in_features() {
            return Err(shape_err("fa_layer feature", self.map.in_features(), feat.len()));
        }
        let mut out = self.map.forward(&feat.vector);
        let v = out.split_off(9 * self.channels);
        Ok(FaKernelSet { w: out, v })
    }

    fn backward(&self, feat: &IlluminationFeature, dw: &[f64], dv: &[f64], grad: &mut FaLayer, dfeat: &mut [f64]) {
        let mut dy = Vec::with_capacity(10 * self.channels);
        dy.extend_from_slice(dw);
        dy.extend_from_slice(dv);
        let df = self.map.backward(&feat.vector, &dy, &mut grad.map);
        for (a, b) in dfeat.iter_mut().zip(df) {
            *a += b;
        }
    }
}

impl Parameters for FaLayer {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.map.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.map.collect_mut(prefix, out);
    }
}

/// `(Z1, Z2) = (v * F, F (*) w)`.
pub fn modulate(f: &FeatureMap, k: &FaKernelSet) -> Result<(FeatureMap, FeatureMap)> {
    if f.channels() != k.channels() {
        return Err(shape_err("fa_block channels", k.channels(), f.channels()));
    }
    let mut z1 = f.clone();
    for (c, &s) in k.v.iter().enumerate() {
        z1.plane_mut(c).iter_mut().for_each(|x| *x *= s);
    }
    let z2 = depthwise_conv(f, &k.w);
    Ok((z1, z2))
}

fn modulate_sum(f: &FeatureMap, k: &FaKernelSet) -> Result<FeatureMap> {
    let (mut z1, z2) = modulate(f, k)?;
    z1.add_assign(&z2);
    Ok(z1)
}

/// Gradient of `v * F + F (*) w` with respect to `F`, `w` and `v`.
fn modulate_backward(f: &FeatureMap, k: &FaKernelSet, dz: &FeatureMap) -> (FeatureMap, Vec<f64>, Vec<f64>) {
    let (mut df, dw) = depthwise_conv_backward(f, &k.w, dz);
    let mut dv = vec![0.0; k.channels()];
    for c in 0..k.channels() {
        let g = dz.plane(c);
        let x = f.plane(c);
        dv[c] = g.iter().zip(x).map(|(a, b)| a * b).sum();
        let s = k.v[c];
        for (d, gi) in df.plane_mut(c).iter_mut().zip(g) {
            *d += s * gi;
        }
    }
    (df, dw, dv)
}

#[derive(Debug, Clone)]
struct StageCache {
    input: FeatureMap,
    kernels: FaKernelSet,
    fused: FeatureMap,
    pre: FeatureMap,
}

/// Two FA stages, each `lrelu(conv(v * F + F (*) w))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaBlock {
    pub fa: [FaLayer; 2],
    pub conv: [Conv2d; 2],
}

#[derive(Debug, Clone)]
pub struct FaBlockCache {
    stages: [StageCache; 2],
}

impl FaBlock {
    pub fn zeros(topo: &IrnTopology) -> Self {
        let c = topo.channels;
        Self {
            fa: [FaLayer::zeros(topo.feature_dim, c), FaLayer::zeros(topo.feature_dim, c)],
            conv: [Conv2d::zeros(c, c, 1), Conv2d::zeros(c, c, 1)],
        }
    }

    pub fn init<R: Rng + ?Sized>(topo: &IrnTopology, rng: &mut R) -> Self {
        let c = topo.channels;
        let fa0 = FaLayer::init(topo.feature_dim, c, rng);
        let conv0 = Conv2d::init(c, c, 1, 0.5, rng);
        let fa1 = FaLayer::init(topo.feature_dim, c, rng);
        let conv1 = Conv2d::init(c, c, 1, 0.5, rng);
        Self {
            fa: [fa0, fa1],
            conv: [conv0, conv1],
        }
    }

    pub fn forward(&self, f: &FeatureMap, feat: &IlluminationFeature) -> Result<FeatureMap> {
        let mut x = f.clone();
        for (fa, conv) in self.fa.iter().zip(&self.conv) {
            let k = fa.kernels(feat)?;
            let fused = modulate_sum(&x, &k)?;
            x = nn::leaky_relu_tensor(&conv.forward(&fused));
        }
        Ok(x)
    }

    pub fn forward_cached(&self, f: &FeatureMap, feat: &IlluminationFeature) -> Result<(FeatureMap, FaBlockCache)> {
        let mut x = f.clone();
        let mut stages = Vec::with_capacity(2);
        for (fa, conv) in self.fa.iter().zip(&self.conv) {
            let kernels = fa.kernels(feat)?;
            let fused = modulate_sum(&x, &kernels)?;
            let pre = conv.forward(&fused);
            let next = nn::leaky_relu_tensor(&pre);
            stages.push(StageCache {
                input: x,
                kernels,
                fused,
                pre,
            });
            x = next;
        }
        let [s0, s1]: [StageCache; 2] = stages.try_into().expect("two stages");
        Ok((x, FaBlockCache { stages: [s0, s1] }))
    }

    fn backward(
        &self,
        cache: &FaBlockCache,
        feat: &IlluminationFeature,
        dout: FeatureMap,
        grad: &mut FaBlock,
        dfeat: &mut [f64],
    ) -> FeatureMap {
        let mut d = dout;
        for i in (0..2).rev() {
            let s = &cache.stages[i];
            nn::leaky_relu_backward(&s.pre, &mut d);
            let dfused = self.conv[i]
                .backward(&s.fused, &d, &mut grad.conv[i], true)
                .expect("input gradient requested");
            let (dx, dw, dv) = modulate_backward(&s.input, &s.kernels, &dfused);
            self.fa[i].backward(feat, &dw, &dv, &mut grad.fa[i], dfeat);
            d = dx;
        }
        d
    }
}

impl Parameters for FaBlock {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for i in 0..2 {
            self.fa[i].collect(&join(prefix, &format!("fa{i}")), out);
            self.conv[i].collect(&join(prefix, &format!("conv{i}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let [fa0, fa1] = &mut self.fa;
        let [c0, c1] = &mut self.conv;
        fa0.collect_mut(&join(prefix, "fa0"), out);
        c0.collect_mut(&join(prefix, "conv0"), out);
        fa1.collect_mut(&join(prefix, "fa1"), out);
        c1.collect_mut(&join(prefix, "conv1"), out);
    }
}

/// `F + conv(B3(B2(B1(F))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGroup {
    pub blocks: Vec<FaBlock>,
    pub conv: Conv2d,
}

#[derive(Debug, Clone)]
pub struct GroupCache {
    blocks: Vec<FaBlockCache>,
    body: FeatureMap,
}

impl ResidualGroup {
    pub fn zeros(topo: &IrnTopology) -> Self {
        Self {
            blocks: (0..BLOCKS_PER_GROUP).map(|_| FaBlock::zeros(topo)).collect(),
            conv: Conv2d::zeros(topo.channels, topo.channels, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(topo: &IrnTopology, rng: &mut R) -> Self {
        let blocks = (0..BLOCKS_PER_GROUP).map(|_| FaBlock::init(topo, rng)).collect();
        Self {
            blocks,
            conv: Conv2d::init(topo.channels, topo.channels, 1, 0.1, rng),
        }
    }

    pub fn forward(&self, f: &FeatureMap, feat: &IlluminationFeature) -> Result<FeatureMap> {
        let mut x = f.clone();
        for b in &self.blocks {
            x = b.forward(&x, feat)?;
        }
        let mut out = self.conv.forward(&x);
        out.add_assign(f);
        Ok(out)
    }

    pub fn forward_cached(&self, f: &FeatureMap, feat: &IlluminationFeature) -> Result<(FeatureMap, GroupCache)> {
        let mut x = f.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward_cached(&x, feat)?;
            blocks.push(c);
            x = y;
        }
        let mut out = self.conv.forward(&x);
        out.add_assign(f);
        Ok((out, GroupCache { blocks, body: x }))
    }

    fn backward(
        &self,
        cache: &GroupCache,
        feat: &IlluminationFeature,
        dout: &FeatureMap,
        grad: &mut ResidualGroup,
        dfeat: &mut [f64],
    ) -> FeatureMap {
        let mut d = self
            .conv
            .backward(&cache.body, dout, &mut grad.conv, true)
            .expect("input gradient requested");
        for i in (0..self.blocks.len()).rev() {
            d = self.blocks[i].backward(&cache.blocks[i], feat, d, &mut grad.blocks[i], dfeat);
        }
        d.add_assign(dout);
        d
    }
}

impl Parameters for ResidualGroup {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&join(prefix, &format!("block{i}")), out);
        }
        self.conv.collect(&join(prefix, "conv"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&join(prefix, &format!("block{i}")), out);
        }
        self.conv.collect_mut(&join(prefix, "conv"), out);
    }
}

/// Head convolution, three residual groups, tail convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct IrnParams {
    topology: IrnTopology,
    pub head: Conv2d,
    pub groups: Vec<ResidualGroup>,
    pub tail: Conv2d,
}

#[derive(Debug, Clone)]
pub struct IrnCache {
    low: Image,
    head_pre: FeatureMap,
    groups: Vec<(FeatureMap, GroupCache)>,
    last: FeatureMap,
    unclamped: Image,
}

impl IrnParams {
    /// Every weight and bias zero: the network is the identity on images.
    pub fn zeros(topology: IrnTopology) -> Self {
        Self {
            topology,
            head: Conv2d::zeros(3, topology.channels, 1),
            groups: (0..GROUPS).map(|_| ResidualGroup::zeros(&topology)).collect(),
            tail: Conv2d::zeros(topology.channels, 3, 1),
        }
    }

    /// Random body with a zero tail, so the initial output equals the input.
    pub fn init<R: Rng + ?Sized>(topology: IrnTopology, rng: &mut R) -> Self {
        let head = Conv2d::init(3, topology.channels, 1, 1.0, rng);
        let groups = (0..GROUPS).map(|_| ResidualGroup::init(&topology, rng)).collect();
        Self {
            topology,
            head,
            groups,
            tail: Conv2d::zeros(topology.channels, 3, 1),
        }
    }

    pub fn topology(&self) -> &IrnTopology {
        &self.topology
    }

    fn check_inputs(&self, low: &Image, feat: &IlluminationFeature) -> Result<()> {
        if low.channels() != 3 {
            return Err(shape_err("reconstruct channels", 3, low.channels()));
        }
        if feat.len() != self.topology.feature_dim {
            return Err(shape_err("reconstruct feature", self.topology.feature_dim, feat.len()));
        }
        low.ensure_finite("reconstruct input")
    }

    pub fn reconstruct(&self, low: &Image, feat: &IlluminationFeature) -> Result<Image> {
        self.check_inputs(low, feat)?;
        let mut x = nn::leaky_relu_tensor(&self.head.forward(low));
        x.ensure_finite("head")?;
        for (i, g) in self.groups.iter().enumerate() {
            x = g.forward(&x, feat)?;
            ensure_group_finite(&x, i)?;
        }
        let mut out = self.tail.forward(&x);
        out.add_assign(low);
        out.ensure_finite("tail")?;
        Ok(out.clamp_unit())
    }

    pub fn reconstruct_cached(&self, low: &Image, feat: &IlluminationFeature) -> Result<(Image, IrnCache)> {
        self.check_inputs(low, feat)?;
        let head_pre = self.head.forward(low);
        let mut x = nn::leaky_relu_tensor(&head_pre);
        x.ensure_finite("head")?;
        let mut groups = Vec::with_capacity(self.groups.len());
        for (i, g) in self.groups.iter().enumerate() {
            let (y, c) = g.forward_cached(&x, feat)?;
            ensure_group_finite(&y, i)?;
            groups.push((x, c));
            x = y;
        }
        let mut unclamped = self.tail.forward(&x);
        unclamped.add_assign(low);
        unclamped.ensure_finite("tail")?;
        let out = unclamped.clamp_unit();
        Ok((
            out,
            IrnCache {
                low: low.clone(),
                head_pre,
                groups,
                last: x,
                unclamped,
            },
        ))
    }

    /// Accumulate parameter gradients for an upstream gradient on the output
    /// image; returns the gradient with respect to the illumination feature.
    pub fn backward(&self, cache: &IrnCache, feat: &IlluminationFeature, dout: &Image, grad: &mut IrnParams) -> Vec<f64> {
        let mut dfeat = vec![0.0; feat.len()];
        let mut d = dout.clone();
        for (g, u) in d.data_mut().iter_mut().zip(cache.unclamped.data()) {
            if !(0.0..=1.0).contains(u) {
                *g = 0.0;
            }
        }
        let mut dx = self
            .tail
            .backward(&cache.last, &d, &mut grad.tail, true)
            .expect("input gradient requested");
        for i in (0..self.groups.len()).rev() {
            let (_, gc) = &cache.groups[i];
            dx = self.groups[i].backward(gc, feat, &dx, &mut grad.groups[i], &mut dfeat);
        }
        nn::leaky_relu_backward(&cache.head_pre, &mut dx);
        self.head.backward(&cache.low, &dx, &mut grad.head, false);
        dfeat
    }
}

fn ensure_group_finite(x: &FeatureMap, index: usize) -> Result<()> {
    const NAMES: [&str; GROUPS] = ["residual group 1", "residual group 2", "residual group 3"];
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(NAMES[index.min(GROUPS - 1)]))
    }
}

impl Parameters for IrnParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.head.collect(&join(prefix, "head"), out);
        for (i, g) in self.groups.iter().enumerate() {
            g.collect(&join(prefix, &format!("group{i}")), out);
        }
        self.tail.collect(&join(prefix, "tail"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.head.collect_mut(&join(prefix, "head"), out);
        for (i, g) in self.groups.iter_mut().enumerate() {
            g.collect_mut(&join(prefix, &format!("group{i}")), out);
        }
        self.tail.collect_mut(&join(prefix, "tail"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn topo(c: usize, d: usize) -> IrnTopology {
        IrnTopology {
            channels: c,
            feature_dim: d,
        }
    }

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        Tensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_feat(rng: &mut ChaCha8Rng, d: usize) -> IlluminationFeature {
        IlluminationFeature::unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn fa_layer_with_zero_feature_returns_bias() {
        let mut layer = FaLayer::zeros(6, 2);
        layer.map.bias = (0..20).map(|i| i as f64).collect();
        let k = layer.kernels(&IlluminationFeature::zeros(6)).unwrap();
        assert_eq!(k.w, (0..18).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(k.v, vec![18.0, 19.0]);
        assert!(layer.kernels(&IlluminationFeature::zeros(5)).is_err());
    }

    #[test]
    fn fa_layer_shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = FaLayer::init(256, 64, &mut rng);
        let f = random_feat(&mut rng, 256);
        let k = layer.kernels(&f).unwrap();
        assert_eq!(k.w.len(), 9 * 64);
        assert_eq!(k.v.len(), 64);
        assert_eq!(layer.kernels(&f).unwrap(), k);
    }

    #[test]
    fn zero_kernels_annihilate_and_identity_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_map(&mut rng, 4, 6, 6);
        let zero = FaKernelSet {
            w: vec![0.0; 36],
            v: vec![0.0; 4],
        };
        let z = modulate_sum(&f, &zero).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        let mut block = FaBlock::zeros(&topo(4, 3));
        block.conv[1].bias = vec![0.3, -0.5, 0.0, 1.0];
        let out = block.forward(&f, &IlluminationFeature::zeros(3)).unwrap();
        for c in 0..4 {
            let expected = nn::leaky_relu(block.conv[1].bias[c]);
            assert!(out.plane(c).iter().all(|&v| v == expected));
        }

        let doubled = modulate_sum(&f, &FaKernelSet::identity(4)).unwrap();
        for (a, b) in doubled.data().iter().zip(f.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let f = Tensor::zeros(3, 4, 4);
        assert!(modulate(&f, &FaKernelSet::identity(4)).is_err());
        let block = FaBlock::zeros(&topo(4, 2));
        assert!(block.forward(&f, &IlluminationFeature::zeros(2)).is_err());
    }

    #[test]
    fn modulation_scales_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_map(&mut rng, 3, 5, 5);
        let mut k = FaKernelSet::identity(3);
        k.v = vec![0.7, -1.1, 2.0];
        let (z1, _) = modulate(&f, &k).unwrap();
        let mut k2 = k.clone();
        k2.v[1] *= 3.0;
        let (z1b, _) = modulate(&f, &k2).unwrap();
        for ((a, b), x) in z1.plane(1).iter().zip(z1b.plane(1)).zip(f.plane(1)) {
            assert_eq!(*b, k2.v[1] * x);
            assert!((b - 3.0 * a).abs() <= 1e-12);
        }
        assert_eq!(z1.plane(0), z1b.plane(0));
    }

    #[test]
    fn shapes_are_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = topo(4, 8);
        let block = FaBlock::init(&t, &mut rng);
        let feat = random_feat(&mut rng, 8);
        let f = random_map(&mut rng, 4, 8, 8);
        assert_eq!(block.forward(&f, &feat).unwrap().shape(), (4, 8, 8));

        let t = topo(64, 16);
        let group = ResidualGroup::init(&t, &mut rng);
        let feat = random_feat(&mut rng, 16);
        let f = random_map(&mut rng, 64, 48, 48);
        assert_eq!(group.forward(&f, &feat).unwrap().shape(), (64, 48, 48));
    }

    #[test]
    fn zero_group_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let group = ResidualGroup::zeros(&topo(4, 5));
        let f = random_map(&mut rng, 4, 7, 9);
        assert_eq!(group.forward(&f, &random_feat(&mut rng, 5)).unwrap(), f);
    }

    #[test]
    fn group_is_not_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = topo(4, 5);
        let mut group = ResidualGroup::init(&t, &mut rng);
        group.conv = Conv2d::init(4, 4, 1, 1.0, &mut rng);
        for b in &mut group.blocks {
            for c in &mut b.conv {
                c.bias.iter_mut().for_each(|v| *v = 0.3);
            }
        }
        let feat = random_feat(&mut rng, 5);
        let f = random_map(&mut rng, 4, 6, 6);
        let mut f2 = f.clone();
        f2.scale(2.0);
        let mut y = group.forward(&f, &feat).unwrap();
        y.scale(2.0);
        let y2 = group.forward(&f2, &feat).unwrap();
        let diff: f64 = y.data().iter().zip(y2.data()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn zero_network_is_identity_and_output_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = topo(4, 6);
        let low = Tensor::from_fn(3, 10, 12, |_, _, _| rng.random_range(0.0..1.0));
        let irn = IrnParams::zeros(t);
        assert_eq!(irn.reconstruct(&low, &random_feat(&mut rng, 6)).unwrap(), low);

        let mut wild = IrnParams::init(t, &mut rng);
        wild.tail = Conv2d::init(4, 3, 1, 5.0, &mut rng);
        let out = wild.reconstruct(&low, &random_feat(&mut rng, 6)).unwrap();
        assert_eq!(out.shape(), low.shape());
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn non_finite_activation_names_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = topo(4, 6);
        let mut irn = IrnParams::zeros(t);
        irn.groups[1].conv.bias[0] = f64::INFINITY;
        let low = Tensor::filled(3, 6, 6, 0.5);
        assert_eq!(
            irn.reconstruct(&low, &random_feat(&mut rng, 6)),
            Err(Error::NonFinite("residual group 2"))
        );
    }
}
