use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conditions::{BranchKeep, ConditionBundle};
use crate::error::{Error, Result};
use crate::nn::{
    avg_pool2, avg_pool2_backward, param_checksum, silu, silu_backward, upsample2,
    upsample2_backward, AttentionBlock, AttentionCache, Conv2d, Dense, Module, Param,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Width of the frozen semantic feature vector: per image half, channel
/// means of both pyramid levels (8 + 16).
pub const SEMANTIC_FEATURES: usize = 48;

/// Channels of the generated image.
pub const IMAGE_CHANNELS: usize = 3;

/// Sizes of the generator network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Side length of the square images the generator works on.
    pub resolution: usize,
    pub base_channels: usize,
    /// Pose-encoder output channels per image half; `p_st` has twice this.
    pub pose_channels: usize,
    pub mask_channels: usize,
    /// Width of `f_st` and of the timestep conditioning vector.
    pub embed_dim: usize,
    /// Width of the sinusoidal timestep encoding.
    pub time_dim: usize,
    /// Seed of the frozen semantic encoder's weights.
    pub semantic_seed: u64,
    /// Seed of every trainable parameter's initial value.
    pub init_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            base_channels: 16,
            pose_channels: 4,
            mask_channels: 8,
            embed_dim: 32,
            time_dim: 16,
            semantic_seed: 0x5eed,
            init_seed: 1,
        }
    }
}

impl GeneratorConfig {
    /// A sub-thousand-parameter network for gradient checks.
    pub fn miniature() -> Self {
        Self {
            resolution: 4,
            base_channels: 2,
            pose_channels: 1,
            mask_channels: 1,
            embed_dim: 2,
            time_dim: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 || !self.resolution.is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "resolution must be even and at least 2, got {}",
                self.resolution
            )));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::Invalid(format!("time_dim must be even, got {}", self.time_dim)));
        }
        let widths = [self.base_channels, self.pose_channels, self.mask_channels, self.embed_dim];
        if widths.contains(&0) {
            return Err(Error::Invalid("network widths must be positive".into()));
        }
        Ok(())
    }

    /// Channels of `p_st`.
    pub fn pose_embed_channels(&self) -> usize {
        2 * self.pose_channels
    }
}

/// Sinusoidal encoding of a timestep.
pub fn timestep_encoding<S: Scalar>(t: usize, dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut v = vec![S::zero(); dim];
    for k in 0..half {
        let freq = (-(1000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        v[k] = S::of(arg.sin());
        v[half + k] = S::of(arg.cos());
    }
    Tensor::from_vec(&[dim], v)
}

fn channel_sums<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = x.chw();
    let n = h * w;
    Tensor::from_vec(
        &[c],
        (0..c).map(|i| x.data()[i * n..(i + 1) * n].iter().copied().sum()).collect(),
    )
}

fn add_channel_bias<S: Scalar>(x: &mut Tensor<S>, bias: &Tensor<S>) {
    let (c, h, w) = x.chw();
    let n = h * w;
    let b = bias.data();
    for (i, plane) in x.data_mut().chunks_mut(n).enumerate().take(c) {
        plane.iter_mut().for_each(|v| *v += b[i]);
    }
}

fn broadcast<S: Scalar>(v: &Tensor<S>, h: usize, w: usize) -> Tensor<S> {
    let data = v
        .data()
        .iter()
        .flat_map(|&x| std::iter::repeat_n(x, h * w))
        .collect();
    Tensor::from_vec(&[v.len(), h, w], data)
}

/// `[c, h, 2w]` to `[2c, h, w]`: left half's channels, then the right half's.
fn stack_halves<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let w = x.chw().2 / 2;
    Tensor::concat_channels(&[&x.crop_width(0, w), &x.crop_width(w, w)])
}

fn unstack_halves<S: Scalar>(d: &Tensor<S>) -> Tensor<S> {
    let (c2, h, w) = d.chw();
    let parts = d.split_channels(&[c2 / 2, c2 / 2]);
    let mut out = Tensor::zeros(&[c2 / 2, h, 2 * w]);
    parts[0].add_into_width(&mut out, 0);
    parts[1].add_into_width(&mut out, w);
    out
}

/// Channel means of the left and right width halves of `x`, appended to `out`.
fn half_means<S: Scalar>(x: &Tensor<S>, half: usize, out: &mut Vec<S>) {
    let (c, h, w) = x.chw();
    let hw = w / 2;
    let norm = S::of((h * hw) as f64);
    for ch in 0..c {
        let mut acc = S::zero();
        for y in 0..h {
            let row = &x.data()[(ch * h + y) * w..(ch * h + y + 1) * w];
            acc += row[half * hw..(half + 1) * hw].iter().copied().sum::<S>();
        }
        out.push(acc / norm);
    }
}

/// Fixed random convolutional pyramid standing in for a pretrained image
/// encoder. Its weights are a pure function of the seed and never train.
#[derive(Debug, Clone)]
pub struct SemanticEncoder<S> {
    conv1: Conv2d<S>,
    conv2: Conv2d<S>,
    seed: u64,
}

impl<S: Scalar> SemanticEncoder<S> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            conv1: Conv2d::new("semantic.conv1", IMAGE_CHANNELS, 8, 3, 1.0, &mut rng),
            conv2: Conv2d::new("semantic.conv2", 8, 16, 3, 1.0, &mut rng),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Pooled features of a width-concatenated image pair `[3, h, 2w]`.
    pub fn features(&self, pair: &Tensor<S>) -> Tensor<S> {
        let a = silu(&self.conv1.forward(pair));
        let b = silu(&self.conv2.forward(&avg_pool2(&a)));
        let mut out = Vec::with_capacity(SEMANTIC_FEATURES);
        for half in 0..2 {
            half_means(&a, half, &mut out);
            half_means(&b, half, &mut out);
        }
        Tensor::from_vec(&[SEMANTIC_FEATURES], out)
    }

    pub fn checksum(&self) -> String {
        param_checksum(self)
    }
}

impl<S: Scalar> Module<S> for SemanticEncoder<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.conv1.visit_params(f);
        self.conv2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.conv1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
    }
}

/// Two dense layers with a SiLU between them.
#[derive(Debug, Clone)]
pub struct Mlp<S> {
    l1: Dense<S>,
    l2: Dense<S>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<S> {
    x: Tensor<S>,
    h: Tensor<S>,
}

impl<S: Scalar> Mlp<S> {
    fn new(name: &str, input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            l1: Dense::new(&format!("{name}.l1"), input, hidden, 1.0, rng),
            l2: Dense::new(&format!("{name}.l2"), hidden, output, 1.0, rng),
        }
    }

    fn forward(&self, x: &Tensor<S>) -> (Tensor<S>, MlpCache<S>) {
        let h = self.l1.forward(x);
        let y = self.l2.forward(&silu(&h));
        (y, MlpCache { x: x.clone(), h })
    }

    fn backward_params(&mut self, cache: &MlpCache<S>, dy: &Tensor<S>) {
        let da = self.l2.backward(&silu(&cache.h), dy);
        let dh = silu_backward(&cache.h, &da);
        self.l1.backward_params(&cache.x, &dh);
    }
}

impl<S: Scalar> Module<S> for Mlp<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.l1.visit_params(f);
        self.l2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.l1.visit_params_mut(f);
        self.l2.visit_params_mut(f);
    }
}

/// Stack of convolutions with SiLU between layers (none after the last).
#[derive(Debug, Clone)]
pub struct ConvStack<S> {
    convs: Vec<Conv2d<S>>,
}

#[derive(Debug, Clone)]
pub struct ConvStackCache<S> {
    inputs: Vec<Tensor<S>>,
    pre: Vec<Tensor<S>>,
}

impl<S: Scalar> ConvStack<S> {
    fn new(name: &str, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let convs = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(&format!("{name}.conv{}", i + 1), w[0], w[1], 3, 1.0, rng))
            .collect();
        Self { convs }
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    fn forward(&self, x: &Tensor<S>) -> (Tensor<S>, ConvStackCache<S>) {
        let mut cache = ConvStackCache {
            inputs: Vec::with_capacity(self.convs.len()),
            pre: Vec::with_capacity(self.convs.len()),
        };
        let mut cur = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let z = conv.forward(&cur);
            cache.inputs.push(cur);
            if i + 1 < self.convs.len() {
                cur = silu(&z);
                cache.pre.push(z);
            } else {
                cur = z;
            }
        }
        (cur, cache)
    }

    /// Parameter gradients only; the stack's input is never trainable.
    fn backward_params(&mut self, cache: &ConvStackCache<S>, dy: &Tensor<S>) {
        let mut d = dy.clone();
        for i in (0..self.convs.len()).rev() {
            if i + 1 < self.convs.len() {
                d = silu_backward(&cache.pre[i], &d);
            }
            if i == 0 {
                self.convs[0].backward_params(&cache.inputs[0], &d);
            } else {
                d = self.convs[i].backward(&cache.inputs[i], &d);
            }
        }
    }
}

impl<S: Scalar> Module<S> for ConvStack<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.convs.iter().for_each(|c| c.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.convs.iter_mut().for_each(|c| c.visit_params_mut(f));
    }
}

/// The conditioning encoders. Only `semantic` is frozen; [`Module`] visits
/// the trainable parts.
#[derive(Debug, Clone)]
pub struct EncoderSet<S> {
    pub semantic: SemanticEncoder<S>,
    /// Projects frozen semantic features to `f_st`.
    pub projection: Mlp<S>,
    /// Four convolutions over the pose-map pair.
    pub pose: ConvStack<S>,
    /// Masked source plus indicator channel to `i_sm`.
    pub mask: ConvStack<S>,
    resolution: usize,
}

impl<S: Scalar> EncoderSet<S> {
    fn new(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let (e, p, m) = (config.embed_dim, config.pose_channels, config.mask_channels);
        Self {
            semantic: SemanticEncoder::new(config.semantic_seed),
            projection: Mlp::new("projection", SEMANTIC_FEATURES, e, e, rng),
            pose: ConvStack::new("pose", &[IMAGE_CHANNELS, p, p, p, p], rng),
            mask: ConvStack::new("mask", &[IMAGE_CHANNELS + 1, m, m], rng),
            resolution: config.resolution,
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn f_st(&self, semantic_features: &Tensor<S>) -> Tensor<S> {
        self.projection.forward(semantic_features).0
    }

    pub fn p_st(&self, pose_pair: &Tensor<S>) -> Tensor<S> {
        stack_halves(&self.pose.forward(pose_pair).0)
    }

    pub fn i_sm(&self, mask_input: &Tensor<S>) -> Tensor<S> {
        self.mask.forward(mask_input).0
    }
}

impl<S: Scalar> Module<S> for EncoderSet<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.projection.visit_params(f);
        self.pose.visit_params(f);
        self.mask.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.projection.visit_params_mut(f);
        self.pose.visit_params_mut(f);
        self.mask.visit_params_mut(f);
    }
}

/// Convolutional residual block with a per-channel conditioning shift.
#[derive(Debug, Clone)]
struct ResBlock<S> {
    conv1: Conv2d<S>,
    cond: Dense<S>,
    conv2: Conv2d<S>,
}

#[derive(Debug, Clone)]
struct ResCache<S> {
    x: Tensor<S>,
    a: Tensor<S>,
    h1: Tensor<S>,
    b: Tensor<S>,
}

impl<S: Scalar> ResBlock<S> {
    fn new(name: &str, channels: usize, embed: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), channels, channels, 3, 1.0, rng),
            cond: Dense::new(&format!("{name}.cond"), embed, channels, 1.0, rng),
            conv2: Conv2d::new(&format!("{name}.conv2"), channels, channels, 3, 0.5, rng),
        }
    }

    fn forward(&self, x: &Tensor<S>, c: &Tensor<S>) -> (Tensor<S>, ResCache<S>) {
        let a = silu(x);
        let mut h1 = self.conv1.forward(&a);
        add_channel_bias(&mut h1, &self.cond.forward(c));
        let b = silu(&h1);
        let mut y = self.conv2.forward(&b);
        y.add_assign(x);
        (y, ResCache { x: x.clone(), a, h1, b })
    }

    fn backward(&mut self, cache: &ResCache<S>, dy: &Tensor<S>, c: &Tensor<S>, dc: &mut Tensor<S>) -> Tensor<S> {
        let db = self.conv2.backward(&cache.b, dy);
        let dh1 = silu_backward(&cache.h1, &db);
        dc.add_assign(&self.cond.backward(c, &channel_sums(&dh1)));
        let da = self.conv1.backward(&cache.a, &dh1);
        let mut dx = silu_backward(&cache.x, &da);
        dx.add_assign(dy);
        dx
    }
}

impl<S: Scalar> Module<S> for ResBlock<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.conv1.visit_params(f);
        self.cond.visit_params(f);
        self.conv2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.conv1.visit_params_mut(f);
        self.cond.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
    }
}

/// Two-level U-Net: residual blocks at full resolution, then residual,
/// attention and residual blocks at half resolution, then back up with a
/// skip connection.
#[derive(Debug, Clone)]
struct UNet<S> {
    conv_in: Conv2d<S>,
    res1: ResBlock<S>,
    res2: ResBlock<S>,
    attn: AttentionBlock<S>,
    res3: ResBlock<S>,
    merge: Conv2d<S>,
    res4: ResBlock<S>,
    conv_out: Conv2d<S>,
    channels: usize,
}

#[derive(Debug, Clone)]
struct UNetCache<S> {
    x_in: Tensor<S>,
    r1: ResCache<S>,
    h1_shape: Vec<usize>,
    r2: ResCache<S>,
    attn: AttentionCache<S>,
    r3: ResCache<S>,
    merged: Tensor<S>,
    r4: ResCache<S>,
    h6: Tensor<S>,
    out_in: Tensor<S>,
}

impl<S: Scalar> UNet<S> {
    fn new(in_ch: usize, c: usize, embed: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv_in: Conv2d::new("unet.conv_in", in_ch, c, 3, 1.0, rng),
            res1: ResBlock::new("unet.res1", c, embed, rng),
            res2: ResBlock::new("unet.res2", c, embed, rng),
            attn: AttentionBlock::new("unet.attn", c, rng),
            res3: ResBlock::new("unet.res3", c, embed, rng),
            merge: Conv2d::new("unet.merge", 2 * c, c, 3, 1.0, rng),
            res4: ResBlock::new("unet.res4", c, embed, rng),
            conv_out: Conv2d::new("unet.conv_out", c, IMAGE_CHANNELS, 3, 0.1, rng),
            channels: c,
        }
    }

    fn forward(&self, x_in: &Tensor<S>, c: &Tensor<S>) -> (Tensor<S>, UNetCache<S>) {
        let h0 = self.conv_in.forward(x_in);
        let (h1, r1) = self.res1.forward(&h0, c);
        let (h2, r2) = self.res2.forward(&avg_pool2(&h1), c);
        let (h3, attn) = self.attn.forward_train(&h2);
        let (h4, r3) = self.res3.forward(&h3, c);
        let merged = Tensor::concat_channels(&[&upsample2(&h4), &h1]);
        let h5 = self.merge.forward(&merged);
        let (h6, r4) = self.res4.forward(&h5, c);
        let out_in = silu(&h6);
        let out = self.conv_out.forward(&out_in);
        let cache = UNetCache {
            x_in: x_in.clone(),
            r1,
            h1_shape: h1.shape().to_vec(),
            r2,
            attn,
            r3,
            merged,
            r4,
            h6,
            out_in,
        };
        (out, cache)
    }

    /// Returns `(dL/dx_in, dL/dc)`.
    fn backward(&mut self, cache: &UNetCache<S>, dy: &Tensor<S>, c: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
        let mut dc = Tensor::zeros(c.shape());
        let d_out_in = self.conv_out.backward(&cache.out_in, dy);
        let dh6 = silu_backward(&cache.h6, &d_out_in);
        let dh5 = self.res4.backward(&cache.r4, &dh6, c, &mut dc);
        let dm = self.merge.backward(&cache.merged, &dh5);
        let mut parts = dm.split_channels(&[self.channels, self.channels]);
        let dh1_skip = parts.pop().expect("two parts");
        let dh4 = upsample2_backward(&parts[0]);
        let dh3 = self.res3.backward(&cache.r3, &dh4, c, &mut dc);
        let dh2 = self.attn.backward(&cache.attn, &dh3);
        let dpool = self.res2.backward(&cache.r2, &dh2, c, &mut dc);
        let mut dh1 = avg_pool2_backward(&cache.h1_shape, &dpool);
        dh1.add_assign(&dh1_skip);
        let dh0 = self.res1.backward(&cache.r1, &dh1, c, &mut dc);
        let dx = self.conv_in.backward(&cache.x_in, &dh0);
        (dx, dc)
    }
}

impl<S: Scalar> Module<S> for UNet<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.conv_in.visit_params(f);
        self.res1.visit_params(f);
        self.res2.visit_params(f);
        self.attn.visit_params(f);
        self.res3.visit_params(f);
        self.merge.visit_params(f);
        self.res4.visit_params(f);
        self.conv_out.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.conv_in.visit_params_mut(f);
        self.res1.visit_params_mut(f);
        self.res2.visit_params_mut(f);
        self.attn.visit_params_mut(f);
        self.res3.visit_params_mut(f);
        self.merge.visit_params_mut(f);
        self.res4.visit_params_mut(f);
        self.conv_out.visit_params_mut(f);
    }
}

/// The pose-conditioned noise predictor `eps_theta(x_t, f_st, p_st, i_sm, t)`
/// together with its encoders and the learned null embeddings used when a
/// branch is dropped.
#[derive(Debug, Clone)]
pub struct Generator<S> {
    config: GeneratorConfig,
    encoders: EncoderSet<S>,
    null_f: Param<S>,
    null_p: Param<S>,
    null_i: Param<S>,
    time_mlp: Mlp<S>,
    net: UNet<S>,
}

impl<S: Scalar> Generator<S> {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let encoders = EncoderSet::new(&config, &mut rng);
        let e = config.embed_dim;
        let in_ch = IMAGE_CHANNELS + config.pose_embed_channels() + config.mask_channels;
        Ok(Self {
            null_f: Param::randn("null.f_st", &[e], 0.1, &mut rng),
            null_p: Param::randn("null.p_st", &[config.pose_embed_channels()], 0.1, &mut rng),
            null_i: Param::randn("null.i_sm", &[config.mask_channels], 0.1, &mut rng),
            time_mlp: Mlp::new("time", config.time_dim, e, e, &mut rng),
            net: UNet::new(in_ch, config.base_channels, e, &mut rng),
            encoders,
            config,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn encoders(&self) -> &EncoderSet<S> {
        &self.encoders
    }

    /// Noise prediction from the bundle's precomputed embeddings, with the
    /// branches not in `keep` replaced by their null embeddings.
    pub fn predict(&self, x_t: &Tensor<S>, bundle: &ConditionBundle<S>, keep: BranchKeep, t: usize) -> Tensor<S> {
        let (_, h, w) = x_t.chw();
        let f = if keep.image { bundle.f_st.clone() } else { self.null_f.value.clone() };
        let p = if keep.pose { bundle.p_st.clone() } else { broadcast(&self.null_p.value, h, w) };
        let i = if keep.image { bundle.i_sm.clone() } else { broadcast(&self.null_i.value, h, w) };
        let (temb, _) = self.time_mlp.forward(&timestep_encoding(t, self.config.time_dim));
        let c = silu(&temb.zip_map(&f, |a, b| a + b));
        let x_in = Tensor::concat_channels(&[x_t, &p, &i]);
        self.net.forward(&x_in, &c).0
    }

    /// Recomputes every embedding from the branch inputs, runs the network,
    /// and adds `weight * d|pred - eps|^2 / dtheta` into the gradient
    /// accumulators. Returns the prediction.
    pub fn accumulate_gradients(
        &mut self,
        x_t: &Tensor<S>,
        bundle: &ConditionBundle<S>,
        keep: BranchKeep,
        t: usize,
        eps: &Tensor<S>,
        weight: S,
    ) -> Tensor<S> {
        let (_, h, w) = x_t.chw();
        let (f, proj_cache) = if keep.image {
            let (f, c) = self.encoders.projection.forward(&bundle.semantic_features);
            (f, Some(c))
        } else {
            (self.null_f.value.clone(), None)
        };
        let (p, pose_cache) = if keep.pose {
            let (out, c) = self.encoders.pose.forward(&bundle.pose_pair);
            (stack_halves(&out), Some(c))
        } else {
            (broadcast(&self.null_p.value, h, w), None)
        };
        let (i, mask_cache) = if keep.image {
            let (out, c) = self.encoders.mask.forward(&bundle.mask_input);
            (out, Some(c))
        } else {
            (broadcast(&self.null_i.value, h, w), None)
        };
        let (temb, time_cache) = self.time_mlp.forward(&timestep_encoding(t, self.config.time_dim));
        let cond = temb.zip_map(&f, |a, b| a + b);
        let c = silu(&cond);
        let x_in = Tensor::concat_channels(&[x_t, &p, &i]);
        let (pred, net_cache) = self.net.forward(&x_in, &c);

        let two_w = S::of(2.0) * weight;
        let dpred = pred.zip_map(eps, |a, b| two_w * (a - b));

        let (dx_in, dc) = self.net.backward(&net_cache, &dpred, &c);
        let dcond = silu_backward(&cond, &dc);
        self.time_mlp.backward_params(&time_cache, &dcond);
        match &proj_cache {
            Some(pc) => self.encoders.projection.backward_params(pc, &dcond),
            None => self.null_f.grad.add_assign(&dcond),
        }
        let pc = self.config.pose_embed_channels();
        let parts = dx_in.split_channels(&[IMAGE_CHANNELS, pc, self.config.mask_channels]);
        match &pose_cache {
            Some(cache) => self.encoders.pose.backward_params(cache, &unstack_halves(&parts[1])),
            None => self.null_p.grad.add_assign(&channel_sums(&parts[1])),
        }
        match &mask_cache {
            Some(cache) => self.encoders.mask.backward_params(cache, &parts[2]),
            None => self.null_i.grad.add_assign(&channel_sums(&parts[2])),
        }
        pred
    }

    /// Checksum of the frozen semantic encoder.
    pub fn frozen_checksum(&self) -> String {
        self.encoders.semantic.checksum()
    }
}

impl<S: Scalar> Module<S> for Generator<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.encoders.visit_params(f);
        f(&self.null_f);
        f(&self.null_p);
        f(&self.null_i);
        self.time_mlp.visit_params(f);
        self.net.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.encoders.visit_params_mut(f);
        f(&mut self.null_f);
        f(&mut self.null_p);
        f(&mut self.null_i);
        self.time_mlp.visit_params_mut(f);
        self.net.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_stack_and_unstack_are_adjoint() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 4], vec![1., 2., 3., 4.]);
        let s = stack_halves(&x);
        assert_eq!(s.shape(), &[2, 1, 2]);
        assert_eq!(s.data(), &[1., 2., 3., 4.]);
        assert_eq!(unstack_halves(&s), x);
    }

    #[test]
    fn timestep_encoding_is_bounded_and_distinct() {
        let a = timestep_encoding::<f64>(3, 16);
        let b = timestep_encoding::<f64>(4, 16);
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        assert!(a.max_abs_diff(&b) > 1e-3);
    }

    #[test]
    fn miniature_network_stays_under_a_thousand_parameters() {
        let g = Generator::<f64>::new(GeneratorConfig::miniature()).unwrap();
        let n = g.num_params();
        assert!((100..=1000).contains(&n), "{n} parameters");
    }

    #[test]
    fn semantic_encoder_is_a_function_of_its_seed() {
        let a = SemanticEncoder::<f32>::new(9);
        assert_eq!(a.checksum(), SemanticEncoder::<f32>::new(9).checksum());
        assert_ne!(a.checksum(), SemanticEncoder::<f32>::new(10).checksum());
    }

    #[test]
    fn odd_resolution_is_rejected() {
        let c = GeneratorConfig {
            resolution: 7,
            ..GeneratorConfig::default()
        };
        assert!(Generator::<f32>::new(c).is_err());
    }
}
