//! The five networks of the restoration pipeline: content encoder,
//! distortion encoder, shared decoder, restoration decoder and the
//! feature discriminator.
//!
//! The published method does not fix an architecture, so the layout here is
//! deliberately small: `depth` stages of 3x3 convolution + LeakyReLU for the
//! encoders, with the last `log2(downsample)` stages striding by two, and a
//! mirrored decoder using nearest-neighbour upsampling. No normalization
//! layers are used anywhere: per-instance normalization would force the
//! distortion encoder's response on clean and distorted inputs to share one
//! scale, which directly contradicts the zero-response objective placed on
//! clean inputs.

use ndarray::{Array3, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, FeatureRole};
use crate::image::ImageTensor;
use crate::nn::ops::{
    global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward, pixel_shuffle2,
    pixel_shuffle2_backward, sigmoid, sigmoid_backward_from_output, sigmoid_scalar, Dense,
    LEAKY_SLOPE,
};
use crate::nn::{Conv2d, ConvCtx, GradMap, NetParams};

/// Pre-activation bound for the discriminator head; keeps the squashed
/// score strictly inside (0, 1) so the adversarial logs stay finite.
const SCORE_CLAMP: f64 = 30.0;

/// Everything needed to rebuild the stage layout of encoders and decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub downsample: usize,
}

impl ArchDescriptor {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        if cfg.base_width == 0 || cfg.depth == 0 {
            return Err(Error::Config(
                "base_width and depth must be positive".into(),
            ));
        }
        if !cfg.downsample.is_power_of_two()
            || (cfg.downsample.trailing_zeros() as usize) > cfg.depth
        {
            return Err(Error::Config(format!(
                "downsample {} incompatible with depth {}",
                cfg.downsample, cfg.depth
            )));
        }
        Ok(ArchDescriptor {
            in_channels: 3,
            base_width: cfg.base_width,
            depth: cfg.depth,
            downsample: cfg.downsample,
        })
    }

    /// Output channels of encoder stage `i`: doubled per stage, capped 8x.
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_width << i.min(3)
    }

    /// Encoder stage strides: the last `log2(downsample)` stages stride 2.
    pub fn stage_stride(&self, i: usize) -> usize {
        let strided = self.downsample.trailing_zeros() as usize;
        if i >= self.depth - strided {
            2
        } else {
            1
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.stage_channels(self.depth - 1)
    }

    /// Latent spatial dims for a given input, which must divide evenly.
    pub fn latent_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h == 0 || w == 0 || h % self.downsample != 0 || w % self.downsample != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} not divisible by downsample factor {}",
                self.downsample
            )));
        }
        Ok((h / self.downsample, w / self.downsample))
    }
}

// ---------------------------------------------------------------------------
// Encoder

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderRole {
    Content,
    Distortion,
}

/// Activation slope of the distortion encoder. A near-zero leak matters
/// there: gated-off units must contribute (almost) nothing to the mean
/// activation on clean inputs, otherwise the leak alone puts a floor under
/// the clean-to-distorted response ratio.
const DISTORTION_SLOPE: f64 = 0.01;

/// Stage stack mapping an image to a latent grid, exposing every stage
/// output (the regularization loss constrains all of them).
#[derive(Debug, Clone)]
pub struct EncoderNet {
    pub role: EncoderRole,
    name: String,
    stages: Vec<Conv2d>,
    desc: ArchDescriptor,
    slope: f64,
}

/// Cached encoder forward pass for backprop.
pub struct EncoderFwd {
    conv_ctxs: Vec<ConvCtx>,
    preacts: Vec<Array3<f64>>,
    /// Post-activation stage outputs; the last one is the latent.
    pub outputs: Vec<Array3<f64>>,
}

impl EncoderNet {
    fn build(role: EncoderRole, desc: ArchDescriptor, name: &str, rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::with_capacity(desc.depth);
        let mut c_in = desc.in_channels;
        for i in 0..desc.depth {
            let c_out = desc.stage_channels(i);
            stages.push(Conv2d::new(c_in, c_out, 3, desc.stage_stride(i), 1, rng));
            c_in = c_out;
        }
        EncoderNet {
            role,
            name: name.to_string(),
            stages,
            desc,
            slope: match role {
                EncoderRole::Content => LEAKY_SLOPE,
                EncoderRole::Distortion => DISTORTION_SLOPE,
            },
        }
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        self.desc
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    fn feature_role(&self) -> FeatureRole {
        match self.role {
            EncoderRole::Content => FeatureRole::Content,
            EncoderRole::Distortion => FeatureRole::Distortion,
        }
    }

    /// Maps an image to its final latent plus every stage output, one per
    /// stage (the last entry is the latent itself).
    pub fn encode(&self, img: &ImageTensor) -> Result<(FeatureMap, Vec<FeatureMap>)> {
        let (_, h, w) = img.shape();
        self.desc.latent_spatial(h, w)?;
        let mut x = img.data().clone();
        let mut intermediates = Vec::with_capacity(self.stages.len());
        for conv in &self.stages {
            x = leaky_relu(&conv.forward(&x), self.slope);
            intermediates.push(FeatureMap::new(x.clone(), self.feature_role())?);
        }
        let latent = intermediates.last().expect("depth >= 1").clone();
        Ok((latent, intermediates))
    }

    /// Forward pass over a raw grid, keeping per-stage state for backprop.
    pub fn forward_train(&self, x: &Array3<f64>) -> EncoderFwd {
        let mut conv_ctxs = Vec::with_capacity(self.stages.len());
        let mut preacts = Vec::with_capacity(self.stages.len());
        let mut outputs = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for conv in &self.stages {
            let (pre, ctx) = conv.forward_train(&cur);
            cur = leaky_relu(&pre, self.slope);
            conv_ctxs.push(ctx);
            preacts.push(pre);
            outputs.push(cur.clone());
        }
        EncoderFwd {
            conv_ctxs,
            preacts,
            outputs,
        }
    }

    /// Backprop given d(loss)/d(latent) plus optional extra gradients on
    /// every stage output (used by the regularization loss). Returns the
    /// parameter gradients; the image gradient is discarded.
    pub fn backward(
        &self,
        fwd: &EncoderFwd,
        grad_latent: &Array3<f64>,
        extra_stage_grads: Option<&[Array3<f64>]>,
    ) -> GradMap {
        let depth = self.stages.len();
        if let Some(extra) = extra_stage_grads {
            assert_eq!(extra.len(), depth, "one extra gradient per stage");
        }
        let mut grads = GradMap::new();
        let mut g = grad_latent.clone();
        for i in (0..depth).rev() {
            if let Some(extra) = extra_stage_grads {
                g += &extra[i];
            }
            let g_pre = leaky_relu_backward(&fwd.preacts[i], &g, self.slope);
            let (g_in, conv_grads) = self.stages[i].backward(&fwd.conv_ctxs[i], &g_pre);
            grads.add(
                format!("{}.stage{i}.weight", self.name),
                conv_grads.weight.into_dyn(),
            );
            grads.add(
                format!("{}.stage{i}.bias", self.name),
                conv_grads.bias.into_dyn(),
            );
            g = g_in;
        }
        grads
    }
}

impl NetParams for EncoderNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, f64>)) {
        for (i, conv) in self.stages.iter().enumerate() {
            f(
                &format!("{}.stage{i}.weight", self.name),
                conv.weight.view().into_dyn(),
            );
            f(
                &format!("{}.stage{i}.bias", self.name),
                conv.bias.view().into_dyn(),
            );
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>)) {
        let name = self.name.clone();
        for (i, conv) in self.stages.iter_mut().enumerate() {
            f(
                &format!("{name}.stage{i}.weight"),
                conv.weight.view_mut().into_dyn(),
            );
            f(
                &format!("{name}.stage{i}.bias"),
                conv.bias.view_mut().into_dyn(),
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Decoder

struct DecStageSpec {
    c_in: usize,
    c_out: usize,
    upsample: bool,
}

/// Largest singular value, estimated by a fixed number of power
/// iterations from a deterministic start vector.
fn spectral_norm(w: &ndarray::Array2<f64>) -> f64 {
    let n = w.ncols();
    let mut v = ndarray::Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..8 {
        let mut u = w.dot(&v);
        let nu = u.dot(&u).sqrt().max(1e-12);
        u.mapv_inplace(|x| x / nu);
        v = w.t().dot(&u);
        let nv = v.dot(&v).sqrt().max(1e-12);
        v.mapv_inplace(|x| x / nv);
        sigma = nv;
    }
    sigma
}

/// Mirror of the encoder: 3x3 convolutions with sub-pixel (pixel-shuffle)
/// 2x upsampling wherever the mirrored encoder stage strode, plus one
/// full-resolution refinement stage, LeakyReLU between stages and a
/// sigmoid on the final RGB output.
#[derive(Debug, Clone)]
pub struct DecoderNet {
    name: String,
    stages: Vec<Conv2d>,
    upsamples: Vec<bool>,
    desc: ArchDescriptor,
    init_sigmas: Vec<f64>,
}

/// Cached decoder forward pass for backprop.
pub struct DecoderFwd {
    conv_ctxs: Vec<ConvCtx>,
    preacts: Vec<Array3<f64>>,
    acts: Vec<Array3<f64>>,
    /// Final output grid in [0, 1].
    pub output: Array3<f64>,
}

impl DecoderNet {
    fn stage_specs(desc: &ArchDescriptor) -> Vec<DecStageSpec> {
        let d = desc.depth;
        let refine_ch = (desc.stage_channels(0) / 2).max(4);
        let mut specs: Vec<DecStageSpec> = (0..d)
            .map(|i| {
                let mirrored = d - 1 - i;
                let c_in = desc.stage_channels(mirrored);
                let c_out = if i == d - 1 {
                    refine_ch
                } else {
                    desc.stage_channels(mirrored - 1)
                };
                DecStageSpec {
                    c_in,
                    c_out,
                    upsample: desc.stage_stride(mirrored) == 2,
                }
            })
            .collect();
        specs.push(DecStageSpec {
            c_in: refine_ch,
            c_out: desc.in_channels,
            upsample: false,
        });
        specs
    }

    fn build(desc: ArchDescriptor, name: &str, rng: &mut ChaCha8Rng) -> Self {
        let specs = Self::stage_specs(&desc);
        // upsampling stages convolve to 4x the channels, which the shuffle
        // then trades for a 2x2 spatial block
        let stages: Vec<Conv2d> = specs
            .iter()
            .map(|s| {
                let c_out = if s.upsample { s.c_out * 4 } else { s.c_out };
                Conv2d::new(s.c_in, c_out, 3, 1, 1, rng)
            })
            .collect();
        let init_sigmas = stages.iter().map(|c| spectral_norm(&c.weight)).collect();
        DecoderNet {
            name: name.to_string(),
            stages,
            upsamples: specs.iter().map(|s| s.upsample).collect(),
            desc,
            init_sigmas,
        }
    }

    /// Rescales any stage whose largest singular value grew beyond
    /// `factor` times its initialization value. Bounding the decoder's
    /// directional gain removes the degenerate optimum where the
    /// distortion latent shrinks toward zero while the decoder amplifies
    /// its subspace to compensate; with the gain capped, a usable
    /// distortion code has to keep a healthy scale, and silencing the
    /// distortion encoder on clean input has to come from the encoder
    /// itself.
    pub fn project_weight_norms(&mut self, factor: f64) {
        for (conv, &init) in self.stages.iter_mut().zip(&self.init_sigmas) {
            let limit = factor * init;
            let sigma = spectral_norm(&conv.weight);
            if sigma > limit {
                let scale = limit / sigma;
                conv.weight.mapv_inplace(|w| w * scale);
            }
        }
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        self.desc
    }

    /// Maps a latent back to an image; output values are squashed into
    /// [0, 1] by the final sigmoid.
    pub fn decode(&self, fmap: &FeatureMap) -> Result<ImageTensor> {
        let (c, _, _) = fmap.shape();
        if c != self.desc.latent_channels() {
            return Err(Error::Shape(format!(
                "latent has {c} channels, decoder expects {}",
                self.desc.latent_channels()
            )));
        }
        let mut x = fmap.data().clone();
        let depth = self.stages.len();
        for (i, conv) in self.stages.iter().enumerate() {
            let pre = conv.forward(&x);
            x = if i == depth - 1 {
                sigmoid(&pre)
            } else {
                leaky_relu(&pre, LEAKY_SLOPE)
            };
            if self.upsamples[i] {
                x = pixel_shuffle2(&x);
            }
        }
        ImageTensor::new(x)
    }

    pub fn forward_train(&self, latent: &Array3<f64>) -> DecoderFwd {
        let depth = self.stages.len();
        let mut conv_ctxs = Vec::with_capacity(depth);
        let mut preacts = Vec::with_capacity(depth);
        let mut acts = Vec::with_capacity(depth);
        let mut cur = latent.clone();
        for (i, conv) in self.stages.iter().enumerate() {
            let (pre, ctx) = conv.forward_train(&cur);
            let act = if i == depth - 1 {
                sigmoid(&pre)
            } else {
                leaky_relu(&pre, LEAKY_SLOPE)
            };
            cur = if self.upsamples[i] {
                pixel_shuffle2(&act)
            } else {
                act.clone()
            };
            conv_ctxs.push(ctx);
            preacts.push(pre);
            acts.push(act);
        }
        DecoderFwd {
            conv_ctxs,
            preacts,
            acts,
            output: cur,
        }
    }

    /// Backprop given d(loss)/d(output). Returns (d(loss)/d(latent),
    /// parameter gradients).
    pub fn backward(&self, fwd: &DecoderFwd, grad_out: &Array3<f64>) -> (Array3<f64>, GradMap) {
        let depth = self.stages.len();
        let mut grads = GradMap::new();
        let mut g = grad_out.clone();
        for i in (0..depth).rev() {
            if self.upsamples[i] {
                g = pixel_shuffle2_backward(&g);
            }
            let g_pre = if i == depth - 1 {
                sigmoid_backward_from_output(&fwd.acts[i], &g)
            } else {
                leaky_relu_backward(&fwd.preacts[i], &g, LEAKY_SLOPE)
            };
            let (g_in, conv_grads) = self.stages[i].backward(&fwd.conv_ctxs[i], &g_pre);
            grads.add(
                format!("{}.stage{i}.weight", self.name),
                conv_grads.weight.into_dyn(),
            );
            grads.add(
                format!("{}.stage{i}.bias", self.name),
                conv_grads.bias.into_dyn(),
            );
            g = g_in;
        }
        (g, grads)
    }
}

impl NetParams for DecoderNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, f64>)) {
        for (i, conv) in self.stages.iter().enumerate() {
            f(
                &format!("{}.stage{i}.weight", self.name),
                conv.weight.view().into_dyn(),
            );
            f(
                &format!("{}.stage{i}.bias", self.name),
                conv.bias.view().into_dyn(),
            );
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>)) {
        let name = self.name.clone();
        for (i, conv) in self.stages.iter_mut().enumerate() {
            f(
                &format!("{name}.stage{i}.weight"),
                conv.weight.view_mut().into_dyn(),
            );
            f(
                &format!("{name}.stage{i}.bias"),
                conv.bias.view_mut().into_dyn(),
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Feature discriminator

/// Scores a latent grid with a value strictly inside (0, 1). Two parallel
/// paths feed one logit: a conv stack with a 1x1 per-position logit head
/// (texture/spatial cues, averaged), and a dense head over the per-channel
/// means and standard deviations (global statistics, where distortion
/// signatures mostly live). The summed logit is clamped and squashed.
#[derive(Debug, Clone)]
pub struct FeatureDiscriminatorNet {
    name: String,
    convs: Vec<Conv2d>,
    head: Conv2d,
    stats_head: Dense,
}

/// Cached discriminator forward pass for backprop.
pub struct DiscFwd {
    conv_ctxs: Vec<ConvCtx>,
    preacts: Vec<Array3<f64>>,
    head_ctx: ConvCtx,
    logit_shape: (usize, usize, usize),
    input: Array3<f64>,
    stats: ndarray::Array1<f64>,
    channel_mean: ndarray::Array1<f64>,
    channel_std: ndarray::Array1<f64>,
    /// Squashed score in (0, 1).
    pub score: f64,
}

const STD_EPS: f64 = 1e-8;

impl FeatureDiscriminatorNet {
    fn build(latent_channels: usize, name: &str, rng: &mut ChaCha8Rng) -> Self {
        let c1 = latent_channels.max(4);
        let c2 = (latent_channels / 2).max(4);
        let c3 = (latent_channels / 4).max(4);
        let convs = vec![
            Conv2d::new(latent_channels, c1, 3, 1, 1, rng),
            Conv2d::new(c1, c2, 3, 2, 1, rng),
            Conv2d::new(c2, c3, 3, 2, 1, rng),
        ];
        let head = Conv2d::new(c3, 1, 1, 1, 0, rng);
        let stats_head = Dense::new(2 * latent_channels, 1, rng);
        FeatureDiscriminatorNet {
            name: name.to_string(),
            convs,
            head,
            stats_head,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.convs[0].c_in
    }

    /// Probability-like score for one latent grid.
    pub fn discriminate(&self, fmap: &FeatureMap) -> Result<f64> {
        let (c, _, _) = fmap.shape();
        if c != self.input_channels() {
            return Err(Error::Shape(format!(
                "latent has {c} channels, discriminator expects {}",
                self.input_channels()
            )));
        }
        Ok(self.forward_train(fmap.data()).score)
    }

    pub fn forward_train(&self, latent: &Array3<f64>) -> DiscFwd {
        let mut conv_ctxs = Vec::with_capacity(self.convs.len());
        let mut preacts = Vec::with_capacity(self.convs.len());
        let mut cur = latent.clone();
        for conv in &self.convs {
            let (pre, ctx) = conv.forward_train(&cur);
            cur = leaky_relu(&pre, LEAKY_SLOPE);
            conv_ctxs.push(ctx);
            preacts.push(pre);
        }
        let (logits, head_ctx) = self.head.forward_train(&cur);
        let logit_shape = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);

        // channel statistics path
        let c = latent.shape()[0];
        let n = (latent.shape()[1] * latent.shape()[2]) as f64;
        let mut channel_mean = ndarray::Array1::zeros(c);
        let mut channel_std = ndarray::Array1::zeros(c);
        let mut stats = ndarray::Array1::zeros(2 * c);
        for ch in 0..c {
            let plane = latent.index_axis(ndarray::Axis(0), ch);
            let mean = plane.sum() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = (var + STD_EPS).sqrt();
            channel_mean[ch] = mean;
            channel_std[ch] = std;
            stats[ch] = mean;
            stats[c + ch] = std;
        }
        let stats_logit = self.stats_head.forward(&stats)[0];

        let raw = global_avg_pool(&logits)[0] + stats_logit;
        // the clamp bounds the score away from 0 and 1; gradients pass
        // straight through so saturated logits can always be pulled back
        let pre_clamp = raw.clamp(-SCORE_CLAMP, SCORE_CLAMP);
        DiscFwd {
            conv_ctxs,
            preacts,
            head_ctx,
            logit_shape,
            input: latent.clone(),
            stats,
            channel_mean,
            channel_std,
            score: sigmoid_scalar(pre_clamp),
        }
    }

    /// Backprop given d(loss)/d(score). Returns (d(loss)/d(latent),
    /// parameter gradients).
    pub fn backward(&self, fwd: &DiscFwd, d_score: f64) -> (Array3<f64>, GradMap) {
        let mut grads = GradMap::new();
        let s = fwd.score;
        let d_raw = d_score * s * (1.0 - s);
        let d_logits =
            global_avg_pool_backward(&ndarray::arr1(&[d_raw]), fwd.logit_shape);
        let (mut g, head_grads) = self.head.backward(&fwd.head_ctx, &d_logits);
        grads.add(format!("{}.head.weight", self.name), head_grads.weight.into_dyn());
        grads.add(format!("{}.head.bias", self.name), head_grads.bias.into_dyn());
        for i in (0..self.convs.len()).rev() {
            let g_pre = leaky_relu_backward(&fwd.preacts[i], &g, LEAKY_SLOPE);
            let (g_in, conv_grads) = self.convs[i].backward(&fwd.conv_ctxs[i], &g_pre);
            grads.add(
                format!("{}.conv{i}.weight", self.name),
                conv_grads.weight.into_dyn(),
            );
            grads.add(
                format!("{}.conv{i}.bias", self.name),
                conv_grads.bias.into_dyn(),
            );
            g = g_in;
        }

        // statistics path: d(raw)/d(stats) through the dense head, then
        // d(mean)/dx = 1/n and d(std)/dx = (x - mean) / (n * std)
        let d_stats_out = ndarray::arr1(&[d_raw]);
        let (d_stats, stats_grads) = self.stats_head.backward(&fwd.stats, &d_stats_out);
        grads.add(
            format!("{}.stats.weight", self.name),
            stats_grads.weight.into_dyn(),
        );
        grads.add(
            format!("{}.stats.bias", self.name),
            stats_grads.bias.into_dyn(),
        );
        let c = fwd.input.shape()[0];
        let n = (fwd.input.shape()[1] * fwd.input.shape()[2]) as f64;
        for ch in 0..c {
            let d_mean = d_stats[ch];
            let d_std = d_stats[c + ch];
            let mean = fwd.channel_mean[ch];
            let std = fwd.channel_std[ch];
            let mut plane = g.index_axis_mut(ndarray::Axis(0), ch);
            plane.zip_mut_with(&fwd.input.index_axis(ndarray::Axis(0), ch), |gv, &xv| {
                *gv += d_mean / n + d_std * (xv - mean) / (n * std);
            });
        }
        (g, grads)
    }
}

impl NetParams for FeatureDiscriminatorNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, f64>)) {
        for (i, conv) in self.convs.iter().enumerate() {
            f(
                &format!("{}.conv{i}.weight", self.name),
                conv.weight.view().into_dyn(),
            );
            f(
                &format!("{}.conv{i}.bias", self.name),
                conv.bias.view().into_dyn(),
            );
        }
        f(&format!("{}.head.weight", self.name), self.head.weight.view().into_dyn());
        f(&format!("{}.head.bias", self.name), self.head.bias.view().into_dyn());
        f(
            &format!("{}.stats.weight", self.name),
            self.stats_head.weight.view().into_dyn(),
        );
        f(
            &format!("{}.stats.bias", self.name),
            self.stats_head.bias.view().into_dyn(),
        );
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>)) {
        let name = self.name.clone();
        for (i, conv) in self.convs.iter_mut().enumerate() {
            f(
                &format!("{name}.conv{i}.weight"),
                conv.weight.view_mut().into_dyn(),
            );
            f(
                &format!("{name}.conv{i}.bias"),
                conv.bias.view_mut().into_dyn(),
            );
        }
        f(&format!("{name}.head.weight"), self.head.weight.view_mut().into_dyn());
        f(&format!("{name}.head.bias"), self.head.bias.view_mut().into_dyn());
        f(
            &format!("{name}.stats.weight"),
            self.stats_head.weight.view_mut().into_dyn(),
        );
        f(
            &format!("{name}.stats.bias"),
            self.stats_head.bias.view_mut().into_dyn(),
        );
    }
}

// ---------------------------------------------------------------------------
// Construction

/// Network ids; double as parameter name prefixes in checkpoints.
pub const CONTENT_ENCODER_ID: &str = "e_c";
pub const DISTORTION_ENCODER_ID: &str = "e_d";
pub const DECODER_ID: &str = "dec";
pub const RESTORE_DECODER_ID: &str = "d_res";
pub const DISCRIMINATOR_ID: &str = "d_adv";

/// The full network set built from one config.
pub struct Networks {
    pub content_encoder: EncoderNet,
    pub distortion_encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub restoration_decoder: DecoderNet,
    pub discriminator: FeatureDiscriminatorNet,
}

/// Builds all five networks deterministically from `cfg.seed`. Each network
/// draws from its own seeded stream, so any subset can be rebuilt
/// bit-identically later.
pub fn build_networks(cfg: &RunConfig, input_shape: (usize, usize)) -> Result<Networks> {
    let desc = ArchDescriptor::from_config(cfg)?;
    desc.latent_spatial(input_shape.0, input_shape.1)?;
    let stream = |idx: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(idx);
        rng
    };
    Ok(Networks {
        content_encoder: EncoderNet::build(
            EncoderRole::Content,
            desc,
            CONTENT_ENCODER_ID,
            &mut stream(0),
        ),
        distortion_encoder: EncoderNet::build(
            EncoderRole::Distortion,
            desc,
            DISTORTION_ENCODER_ID,
            &mut stream(1),
        ),
        decoder: DecoderNet::build(desc, DECODER_ID, &mut stream(2)),
        restoration_decoder: DecoderNet::build(desc, RESTORE_DECODER_ID, &mut stream(3)),
        discriminator: FeatureDiscriminatorNet::build(
            desc.latent_channels(),
            DISCRIMINATOR_ID,
            &mut stream(4),
        ),
    })
}

/// Rebuilds a single network with fresh (seeded) parameters; used when
/// loading checkpoints and for the from-scratch training baseline.
pub(crate) fn build_like(cfg: &RunConfig) -> Result<Networks> {
    // any valid spatial extent works; only the descriptor matters here
    build_networks(cfg, (cfg.downsample, cfg.downsample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::params_checksum;
    use ndarray::Array3;

    fn desk_cfg() -> RunConfig {
        RunConfig {
            patch_size: 64,
            ..RunConfig::default()
        }
    }

    fn image(h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(Array3::from_shape_fn((3, h, w), |(c, y, x)| {
            ((c + 1) as f64 * 0.11 + (y * w + x) as f64 * 1e-4).fract()
        }))
        .unwrap()
    }

    #[test]
    fn latent_shape_matches_downsample_arithmetic() {
        let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
        let img = image(64, 64);
        let (latent_c, _) = nets.content_encoder.encode(&img).unwrap();
        let (latent_d, _) = nets.distortion_encoder.encode(&img).unwrap();
        assert_eq!(latent_c.shape(), (128, 16, 16));
        assert_eq!(latent_c.shape(), latent_d.shape());
    }

    #[test]
    fn indivisible_input_rejected() {
        let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
        assert!(build_networks(&desk_cfg(), (63, 63)).is_err());
        assert!(nets.content_encoder.encode(&image(63, 63)).is_err());
    }

    #[test]
    fn intermediate_count_equals_depth() {
        let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
        let (latent, inter) = nets.content_encoder.encode(&image(32, 32)).unwrap();
        assert_eq!(inter.len(), nets.content_encoder.depth());
        assert_eq!(inter.last().unwrap().data(), latent.data());
    }

    #[test]
    fn zero_image_yields_zero_intermediates() {
        // freshly built stages carry zero bias, so the stack is linear at zero
        let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
        let zero = ImageTensor::new(Array3::zeros((3, 16, 16))).unwrap();
        let (_, inter) = nets.distortion_encoder.encode(&zero).unwrap();
        for fm in &inter {
            assert!(fm.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn decode_inverts_spatial_shape() {
        let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
        let img = image(64, 48);
        let (latent, _) = nets.content_encoder.encode(&img).unwrap();
        assert_eq!(latent.shape(), (128, 16, 12));
        let out = nets.decoder.decode(&latent).unwrap();
        assert_eq!(out.shape(), img.shape());
    }

    #[test]
    fn decode_values_squashed_into_unit_interval() {
        let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
        let (latent, _) = nets.content_encoder.encode(&image(32, 32)).unwrap();
        let out = nets.decoder.decode(&latent).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn same_seed_bit_identical_networks() {
        let a = build_networks(&desk_cfg(), (64, 64)).unwrap();
        let b = build_networks(&desk_cfg(), (64, 64)).unwrap();
        assert_eq!(
            params_checksum(&a.content_encoder),
            params_checksum(&b.content_encoder)
        );
        assert_eq!(params_checksum(&a.decoder), params_checksum(&b.decoder));
        assert_eq!(
            params_checksum(&a.discriminator),
            params_checksum(&b.discriminator)
        );
        // distinct streams produce distinct networks
        assert_ne!(
            params_checksum(&a.content_encoder),
            params_checksum(&a.distortion_encoder)
        );
    }

    #[test]
    fn encode_deterministic_for_fixed_build() {
        let img = image(32, 32);
        let run = || {
            let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
            let (latent, _) = nets.content_encoder.encode(&img).unwrap();
            latent.data().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn discriminator_score_strictly_inside_unit_interval() {
        let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
        let (latent, _) = nets.content_encoder.encode(&image(32, 32)).unwrap();
        let s = nets.discriminator.discriminate(&latent).unwrap();
        assert!(s > 0.0 && s < 1.0);
        // extreme input keeps the score inside the open interval
        let extreme = FeatureMap::new(
            Array3::from_elem((128, 8, 8), 1e9),
            crate::feature::FeatureRole::Content,
        )
        .unwrap();
        let s = nets.discriminator.discriminate(&extreme).unwrap();
        assert!(s > 0.0 && s < 1.0, "score {s}");
    }

    #[test]
    fn discriminator_deterministic() {
        let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
        let (latent, _) = nets.content_encoder.encode(&image(32, 32)).unwrap();
        let a = nets.discriminator.discriminate(&latent).unwrap();
        let b = nets.discriminator.discriminate(&latent).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn restoration_decoder_same_parameter_count_as_decoder() {
        let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
        assert_eq!(
            nets.decoder.param_count(),
            nets.restoration_decoder.param_count()
        );
    }

    #[test]
    fn decoder_rejects_wrong_latent_channels() {
        let nets = build_networks(&desk_cfg(), (64, 64)).unwrap();
        let bad = FeatureMap::new(
            Array3::zeros((7, 16, 16)),
            crate::feature::FeatureRole::Combined,
        )
        .unwrap();
        assert!(nets.decoder.decode(&bad).is_err());
    }
}
