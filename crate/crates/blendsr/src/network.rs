//! Full network assembly: a feature-extraction convolution, a chain of
//! densely connected basic units each ending in a blended attention block,
//! a 1x1 bottleneck, a deconvolution upsampling stage and a reconstruction
//! convolution.
//!
//! Dense connectivity appears at two levels. Inside a unit, layer i
//! consumes the channel concatenation of the unit input and all previous
//! layer outputs. Between units, unit j consumes the concatenation of the
//! extracted features and every previous unit's output, and the bottleneck
//! consumes all of them.

use crate::attention::{reduced_channels, BlendedAttention, BlendedAttentionGrad};
use crate::error::{Error, Result};
use crate::layers::{prelu_backward, prelu_forward, prelu_init, relu_backward, relu_forward, Conv2d, Conv2dGrad, Deconv2d, Deconv2dGrad};
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Hyperparameters that determine every tensor shape in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scale: usize,
    pub in_channels: usize,
    pub num_units: usize,
    pub layers_per_unit: usize,
    pub growth: usize,
    pub feat_channels: usize,
    pub bottleneck_channels: usize,
    pub attention_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            scale: 2,
            in_channels: 3,
            num_units: 8,
            layers_per_unit: 8,
            growth: 16,
            feat_channels: 128,
            bottleneck_channels: 256,
            attention_ratio: 16,
        }
    }
}

impl ModelConfig {
    /// Tiny preset used by tests and the CLI `--toy` flag.
    pub fn toy(scale: usize) -> Self {
        Self {
            scale,
            in_channels: 3,
            num_units: 2,
            layers_per_unit: 2,
            growth: 8,
            feat_channels: 16,
            bottleneck_channels: 32,
            attention_ratio: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 2..=4) {
            return Err(Error::Config(format!("scale must be 2, 3 or 4, got {}", self.scale)));
        }
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("num_units", self.num_units),
            ("layers_per_unit", self.layers_per_unit),
            ("growth", self.growth),
            ("feat_channels", self.feat_channels),
            ("bottleneck_channels", self.bottleneck_channels),
            ("attention_ratio", self.attention_ratio),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Channels each unit emits: one growth block per in-unit layer.
    pub fn unit_out_channels(&self) -> usize {
        self.growth * self.layers_per_unit
    }

    /// Channels unit `j` (1-based) consumes: features plus all previous
    /// unit outputs.
    pub fn unit_in_channels(&self, j: usize) -> usize {
        self.feat_channels + (j - 1) * self.unit_out_channels()
    }

    /// Channels entering the bottleneck: features plus every unit output.
    pub fn bottleneck_in_channels(&self) -> usize {
        self.feat_channels + self.num_units * self.unit_out_channels()
    }

    /// Deconvolution (stride, kernel, pad) triples for the configured
    /// scale; every triple satisfies k - 2p = s so each stage scales
    /// spatial size by exactly its stride.
    pub fn deconv_plan(&self) -> Vec<(usize, usize, usize)> {
        match self.scale {
            2 => vec![(2, 4, 1)],
            3 => vec![(3, 5, 1)],
            4 => vec![(2, 4, 1), (2, 4, 1)],
            _ => unreachable!("validate() rejects other scales"),
        }
    }
}

/// One basic unit: densely connected conv/ReLU layers followed by a
/// blended attention block over their concatenated outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicUnit<S = f32> {
    pub convs: Vec<Conv2d<S>>,
    pub attention: BlendedAttention<S>,
}

#[derive(Debug, Clone)]
pub struct BasicUnitGrad<S = f32> {
    pub convs: Vec<Conv2dGrad<S>>,
    pub attention: BlendedAttentionGrad<S>,
}

/// One upsampling stage: transposed convolution plus per-channel PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleStage<S = f32> {
    pub deconv: Deconv2d<S>,
    pub prelu: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct UpsampleStageGrad<S = f32> {
    pub deconv: Deconv2dGrad<S>,
    pub prelu: Vec<S>,
}

/// The full parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S = f32> {
    pub config: ModelConfig,
    pub feature_conv: Conv2d<S>,
    pub units: Vec<BasicUnit<S>>,
    pub bottleneck: Conv2d<S>,
    pub upsample: Vec<UpsampleStage<S>>,
    pub recon_conv: Conv2d<S>,
}

/// Gradient set mirroring [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelGrad<S = f32> {
    pub feature_conv: Conv2dGrad<S>,
    pub units: Vec<BasicUnitGrad<S>>,
    pub bottleneck: Conv2dGrad<S>,
    pub upsample: Vec<UpsampleStageGrad<S>>,
    pub recon_conv: Conv2dGrad<S>,
}

/// Intermediate activations exposed for diagnostics and topology tests.
pub struct ForwardTrace<S = f32> {
    /// Output of the feature-extraction conv + ReLU.
    pub features: Tensor<S>,
    /// Output of each basic unit in order.
    pub unit_outputs: Vec<Tensor<S>>,
    pub output: Tensor<S>,
}

/// Builds the full parameter set for `cfg`, deterministically from `seed`.
pub fn build_model<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feature_conv = Conv2d::init(cfg.in_channels, cfg.feat_channels, 3, 1, 1, true, &mut rng);
    let mut units = Vec::with_capacity(cfg.num_units);
    for j in 1..=cfg.num_units {
        let unit_in = cfg.unit_in_channels(j);
        let mut convs = Vec::with_capacity(cfg.layers_per_unit);
        for i in 0..cfg.layers_per_unit {
            convs.push(Conv2d::init(unit_in + cfg.growth * i, cfg.growth, 3, 1, 1, true, &mut rng));
        }
        let attention = BlendedAttention::init(cfg.unit_out_channels(), cfg.attention_ratio, &mut rng);
        units.push(BasicUnit { convs, attention });
    }
    let bottleneck = Conv2d::init(cfg.bottleneck_in_channels(), cfg.bottleneck_channels, 1, 1, 0, true, &mut rng);
    let mut upsample = Vec::new();
    for (s, k, p) in cfg.deconv_plan() {
        upsample.push(UpsampleStage {
            deconv: Deconv2d::init(cfg.bottleneck_channels, cfg.bottleneck_channels, k, s, p, &mut rng),
            prelu: prelu_init(cfg.bottleneck_channels),
        });
    }
    let recon_conv = Conv2d::init(cfg.bottleneck_channels, cfg.in_channels, 3, 1, 1, true, &mut rng);
    Ok(ModelParams { config: *cfg, feature_conv, units, bottleneck, upsample, recon_conv })
}

/// Exact learnable scalar count (weights + biases + PReLU slopes) for a
/// configuration, without building the model.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let mut total = cfg.feat_channels * cfg.in_channels * 9 + cfg.feat_channels;
    let uo = cfg.unit_out_channels();
    let mid = reduced_channels(uo, cfg.attention_ratio);
    for j in 1..=cfg.num_units {
        let unit_in = cfg.unit_in_channels(j);
        for i in 0..cfg.layers_per_unit {
            total += cfg.growth * (unit_in + cfg.growth * i) * 9 + cfg.growth;
        }
        total += mid * uo; // attention reduce weight, no bias
        total += uo * mid + uo; // attention expand weight + bias
    }
    total += cfg.bottleneck_channels * cfg.bottleneck_in_channels() + cfg.bottleneck_channels;
    for (_, k, _) in cfg.deconv_plan() {
        total += cfg.bottleneck_channels * cfg.bottleneck_channels * k * k + 2 * cfg.bottleneck_channels;
    }
    total += cfg.in_channels * cfg.bottleneck_channels * 9 + cfg.in_channels;
    Ok(total)
}

struct UnitForward<S> {
    pre_acts: Vec<Tensor<S>>,
    acts: Vec<Tensor<S>>,
    concat: Tensor<S>,
}

fn unit_forward_full<S: Scalar>(x: &Tensor<S>, unit: &BasicUnit<S>) -> Result<(Tensor<S>, UnitForward<S>)> {
    let mut pre_acts = Vec::with_capacity(unit.convs.len());
    let mut acts: Vec<Tensor<S>> = Vec::with_capacity(unit.convs.len());
    for conv in &unit.convs {
        let input = {
            let mut parts: Vec<&Tensor<S>> = vec![x];
            parts.extend(acts.iter());
            concat_channels(&parts)?
        };
        let pre = conv.forward(&input)?;
        acts.push(relu_forward(&pre));
        pre_acts.push(pre);
    }
    let concat = concat_channels(&acts.iter().collect::<Vec<_>>())?;
    let (y, _tau) = unit.attention.forward(&concat)?;
    Ok((y, UnitForward { pre_acts, acts, concat }))
}

/// Runs one basic unit: dense conv/ReLU chain, concat, attention.
pub fn unit_forward<S: Scalar>(x: &Tensor<S>, unit: &BasicUnit<S>) -> Result<Tensor<S>> {
    Ok(unit_forward_full(x, unit)?.0)
}

/// Backward through one unit; returns the gradient for the unit input and
/// the parameter gradients. Recomputes the unit's forward internally.
pub fn unit_backward<S: Scalar>(x: &Tensor<S>, unit: &BasicUnit<S>, grad_y: &Tensor<S>) -> Result<(Tensor<S>, BasicUnitGrad<S>)> {
    let (_, cache) = unit_forward_full(x, unit)?;
    let growth = unit.convs[0].out_channels();
    let layers = unit.convs.len();

    let (grad_concat, attention_grad) = unit.attention.backward(&cache.concat, grad_y)?;

    // per-layer output gradients start as slices of the concat gradient and
    // accumulate contributions from every later layer's input
    let mut grad_acts: Vec<Tensor<S>> = (0..layers)
        .map(|i| grad_concat.slice_channels(i * growth, (i + 1) * growth))
        .collect::<Result<_>>()?;
    let mut grad_x = Tensor::zeros(x.n(), x.c(), x.h(), x.w());
    let mut conv_grads: Vec<Option<Conv2dGrad<S>>> = (0..layers).map(|_| None).collect();

    for i in (0..layers).rev() {
        let grad_pre = relu_backward(&cache.pre_acts[i], &grad_acts[i])?;
        let input = {
            let mut parts: Vec<&Tensor<S>> = vec![x];
            parts.extend(cache.acts[..i].iter());
            concat_channels(&parts)?
        };
        let (grad_in, cg) = unit.convs[i].backward(&input, &grad_pre)?;
        conv_grads[i] = Some(cg);
        grad_x.accumulate(&grad_in.slice_channels(0, x.c())?)?;
        for (m, ga) in grad_acts.iter_mut().enumerate().take(i) {
            let from = x.c() + m * growth;
            ga.accumulate(&grad_in.slice_channels(from, from + growth)?)?;
        }
    }

    let convs = conv_grads.into_iter().map(|g| g.expect("filled in reverse pass")).collect();
    Ok((grad_x, BasicUnitGrad { convs, attention: attention_grad }))
}

impl<S: Scalar> ModelParams<S> {
    /// Checks that adjacent layers agree on channel counts and that the
    /// layer list matches the configuration's plan.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let expect = |cond: bool, what: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::Config(format!("model does not match its config: {what}")))
            }
        };
        expect(self.feature_conv.in_channels() == cfg.in_channels, "feature conv input")?;
        expect(self.feature_conv.out_channels() == cfg.feat_channels, "feature conv output")?;
        expect(self.units.len() == cfg.num_units, "unit count")?;
        for (jz, unit) in self.units.iter().enumerate() {
            let unit_in = cfg.unit_in_channels(jz + 1);
            expect(unit.convs.len() == cfg.layers_per_unit, "layers per unit")?;
            for (i, conv) in unit.convs.iter().enumerate() {
                expect(conv.in_channels() == unit_in + cfg.growth * i, "in-unit conv input")?;
                expect(conv.out_channels() == cfg.growth, "in-unit conv output")?;
            }
            expect(unit.attention.channels() == cfg.unit_out_channels(), "attention width")?;
        }
        expect(self.bottleneck.in_channels() == cfg.bottleneck_in_channels(), "bottleneck input")?;
        expect(self.bottleneck.out_channels() == cfg.bottleneck_channels, "bottleneck output")?;
        let plan = cfg.deconv_plan();
        expect(self.upsample.len() == plan.len(), "deconv stage count")?;
        for (stage, (s, k, p)) in self.upsample.iter().zip(plan) {
            expect(stage.deconv.stride == s && stage.deconv.kernel() == k && stage.deconv.pad == p, "deconv geometry")?;
            expect(stage.deconv.in_channels() == cfg.bottleneck_channels, "deconv input")?;
            expect(stage.deconv.out_channels() == cfg.bottleneck_channels, "deconv output")?;
            expect(stage.prelu.len() == cfg.bottleneck_channels, "prelu width")?;
        }
        expect(self.recon_conv.in_channels() == cfg.bottleneck_channels, "recon input")?;
        expect(self.recon_conv.out_channels() == cfg.in_channels, "recon output")?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut total = self.feature_conv.param_count();
        for unit in &self.units {
            total += unit.convs.iter().map(Conv2d::param_count).sum::<usize>();
            total += unit.attention.param_count();
        }
        total += self.bottleneck.param_count();
        for stage in &self.upsample {
            total += stage.deconv.param_count() + stage.prelu.len();
        }
        total + self.recon_conv.param_count()
    }

    /// Full forward pass: LR batch in, SR batch out (not clamped).
    pub fn forward(&self, lr_batch: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward_trace(lr_batch)?.output)
    }

    /// Forward pass that also exposes per-stage activations.
    pub fn forward_trace(&self, lr_batch: &Tensor<S>) -> Result<ForwardTrace<S>> {
        if lr_batch.c() != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                self.config.in_channels,
                lr_batch.c()
            )));
        }
        let features = relu_forward(&self.feature_conv.forward(lr_batch)?);
        let mut outs: Vec<Tensor<S>> = vec![features];
        for unit in &self.units {
            let input = concat_channels(&outs.iter().collect::<Vec<_>>())?;
            outs.push(unit_forward(&input, unit)?);
        }
        let bn_in = concat_channels(&outs.iter().collect::<Vec<_>>())?;
        let mut t = relu_forward(&self.bottleneck.forward(&bn_in)?);
        for stage in &self.upsample {
            t = prelu_forward(&stage.deconv.forward(&t)?, &stage.prelu)?;
        }
        let output = self.recon_conv.forward(&t)?;
        let features = outs.remove(0);
        Ok(ForwardTrace { features, unit_outputs: outs, output })
    }

    /// Exact reverse-mode gradients of sum(grad_out . forward(lr_batch))
    /// with respect to every parameter. Dense fan-out nodes accumulate the
    /// gradients of every consumer.
    pub fn backward(&self, lr_batch: &Tensor<S>, grad_out: &Tensor<S>) -> Result<ModelGrad<S>> {
        let cfg = &self.config;
        if lr_batch.c() != cfg.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                cfg.in_channels,
                lr_batch.c()
            )));
        }

        // forward, caching what the reverse pass consumes
        let feat_pre = self.feature_conv.forward(lr_batch)?;
        let mut outs: Vec<Tensor<S>> = vec![relu_forward(&feat_pre)];
        for unit in &self.units {
            let input = concat_channels(&outs.iter().collect::<Vec<_>>())?;
            outs.push(unit_forward(&input, unit)?);
        }
        let bn_in = concat_channels(&outs.iter().collect::<Vec<_>>())?;
        let bn_pre = self.bottleneck.forward(&bn_in)?;
        let mut stage_inputs = Vec::with_capacity(self.upsample.len());
        let mut stage_pres = Vec::with_capacity(self.upsample.len());
        let mut t = relu_forward(&bn_pre);
        for stage in &self.upsample {
            let pre = stage.deconv.forward(&t)?;
            stage_inputs.push(t);
            t = prelu_forward(&pre, &stage.prelu)?;
            stage_pres.push(pre);
        }

        let expect_out = (lr_batch.n(), cfg.in_channels, t.h(), t.w());
        if (grad_out.n(), grad_out.c(), grad_out.h(), grad_out.w()) != expect_out {
            return Err(Error::Shape(format!(
                "grad_out shape {} does not match model output (n={}, c={}, h={}, w={})",
                grad_out.shape(),
                expect_out.0,
                expect_out.1,
                expect_out.2,
                expect_out.3
            )));
        }

        // reconstruction and upsampling stages
        let (mut grad_t, recon_grad) = self.recon_conv.backward(&t, grad_out)?;
        let mut upsample_grads = Vec::with_capacity(self.upsample.len());
        upsample_grads.resize_with(self.upsample.len(), || None);
        for (i, stage) in self.upsample.iter().enumerate().rev() {
            let (grad_pre, grad_slopes) = prelu_backward(&stage_pres[i], &stage.prelu, &grad_t)?;
            let (grad_in, dg) = stage.deconv.backward(&stage_inputs[i], &grad_pre)?;
            upsample_grads[i] = Some(UpsampleStageGrad { deconv: dg, prelu: grad_slopes });
            grad_t = grad_in;
        }

        // bottleneck
        let grad_bn_pre = relu_backward(&bn_pre, &grad_t)?;
        let (grad_bn_in, bottleneck_grad) = self.bottleneck.backward(&bn_in, &grad_bn_pre)?;

        // gradient per dense node: features at block 0, unit j at block j
        let uo = cfg.unit_out_channels();
        let block_start = |j: usize| if j == 0 { 0 } else { cfg.feat_channels + (j - 1) * uo };
        let block_end = |j: usize| if j == 0 { cfg.feat_channels } else { cfg.feat_channels + j * uo };
        let mut grad_outs: Vec<Tensor<S>> = (0..=cfg.num_units)
            .map(|j| grad_bn_in.slice_channels(block_start(j), block_end(j)))
            .collect::<Result<_>>()?;

        let mut unit_grads = Vec::with_capacity(cfg.num_units);
        unit_grads.resize_with(cfg.num_units, || None);
        for j in (1..=cfg.num_units).rev() {
            let input = concat_channels(&outs[..j].iter().collect::<Vec<_>>())?;
            let (grad_in, ug) = unit_backward(&input, &self.units[j - 1], &grad_outs[j])?;
            unit_grads[j - 1] = Some(ug);
            for m in (0..j).rev() {
                let g = grad_in.slice_channels(block_start(m), block_end(m))?;
                grad_outs[m].accumulate(&g)?;
            }
        }

        let grad_feat_pre = relu_backward(&feat_pre, &grad_outs[0])?;
        let (_, feature_grad) = self.feature_conv.backward(lr_batch, &grad_feat_pre)?;

        Ok(ModelGrad {
            feature_conv: feature_grad,
            units: unit_grads.into_iter().map(|g| g.expect("filled in reverse pass")).collect(),
            bottleneck: bottleneck_grad,
            upsample: upsample_grads.into_iter().map(|g| g.expect("filled in reverse pass")).collect(),
            recon_conv: recon_grad,
        })
    }

    /// Visits every parameter tensor as `(name, shape, values)` in a fixed
    /// order shared with [`ModelGrad::visit`], checkpointing and the
    /// optimizer.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&str, &[usize], &'a [S])) {
        visit_conv(&self.feature_conv, "feature_conv", f);
        for (j, unit) in self.units.iter().enumerate() {
            for (i, conv) in unit.convs.iter().enumerate() {
                visit_conv(conv, &format!("units.{j}.convs.{i}"), f);
            }
            visit_conv(&unit.attention.reduce, &format!("units.{j}.attention.reduce"), f);
            visit_conv(&unit.attention.expand, &format!("units.{j}.attention.expand"), f);
        }
        visit_conv(&self.bottleneck, "bottleneck", f);
        for (i, stage) in self.upsample.iter().enumerate() {
            let w = &stage.deconv.weight;
            f(&format!("upsample.{i}.deconv.weight"), &[w.n(), w.c(), w.h(), w.w()], w.data());
            f(&format!("upsample.{i}.deconv.bias"), &[stage.deconv.bias.len()], &stage.deconv.bias);
            f(&format!("upsample.{i}.prelu"), &[stage.prelu.len()], &stage.prelu);
        }
        visit_conv(&self.recon_conv, "recon_conv", f);
    }

    /// Mutable counterpart of [`visit`], same order and names.
    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &[usize], &mut [S])) {
        visit_conv_mut(&mut self.feature_conv, "feature_conv", f);
        for (j, unit) in self.units.iter_mut().enumerate() {
            for (i, conv) in unit.convs.iter_mut().enumerate() {
                visit_conv_mut(conv, &format!("units.{j}.convs.{i}"), f);
            }
            visit_conv_mut(&mut unit.attention.reduce, &format!("units.{j}.attention.reduce"), f);
            visit_conv_mut(&mut unit.attention.expand, &format!("units.{j}.attention.expand"), f);
        }
        visit_conv_mut(&mut self.bottleneck, "bottleneck", f);
        for (i, stage) in self.upsample.iter_mut().enumerate() {
            let shape = {
                let w = &stage.deconv.weight;
                [w.n(), w.c(), w.h(), w.w()]
            };
            f(&format!("upsample.{i}.deconv.weight"), &shape, stage.deconv.weight.data_mut());
            let blen = stage.deconv.bias.len();
            f(&format!("upsample.{i}.deconv.bias"), &[blen], &mut stage.deconv.bias);
            let plen = stage.prelu.len();
            f(&format!("upsample.{i}.prelu"), &[plen], &mut stage.prelu);
        }
        visit_conv_mut(&mut self.recon_conv, "recon_conv", f);
    }
}

impl<S: Scalar> ModelGrad<S> {
    /// Same traversal order and names as [`ModelParams::visit`].
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&str, &[usize], &'a [S])) {
        visit_conv_grad(&self.feature_conv, "feature_conv", f);
        for (j, unit) in self.units.iter().enumerate() {
            for (i, conv) in unit.convs.iter().enumerate() {
                visit_conv_grad(conv, &format!("units.{j}.convs.{i}"), f);
            }
            visit_conv_grad(&unit.attention.reduce, &format!("units.{j}.attention.reduce"), f);
            visit_conv_grad(&unit.attention.expand, &format!("units.{j}.attention.expand"), f);
        }
        visit_conv_grad(&self.bottleneck, "bottleneck", f);
        for (i, stage) in self.upsample.iter().enumerate() {
            let w = &stage.deconv.weight;
            f(&format!("upsample.{i}.deconv.weight"), &[w.n(), w.c(), w.h(), w.w()], w.data());
            f(&format!("upsample.{i}.deconv.bias"), &[stage.deconv.bias.len()], &stage.deconv.bias);
            f(&format!("upsample.{i}.prelu"), &[stage.prelu.len()], &stage.prelu);
        }
        visit_conv_grad(&self.recon_conv, "recon_conv", f);
    }
}

fn visit_conv<'a, S: Scalar>(conv: &'a Conv2d<S>, name: &str, f: &mut impl FnMut(&str, &[usize], &'a [S])) {
    let w = &conv.weight;
    f(&format!("{name}.weight"), &[w.n(), w.c(), w.h(), w.w()], w.data());
    if let Some(b) = &conv.bias {
        f(&format!("{name}.bias"), &[b.len()], b);
    }
}

fn visit_conv_mut<S: Scalar>(conv: &mut Conv2d<S>, name: &str, f: &mut impl FnMut(&str, &[usize], &mut [S])) {
    let shape = {
        let w = &conv.weight;
        [w.n(), w.c(), w.h(), w.w()]
    };
    f(&format!("{name}.weight"), &shape, conv.weight.data_mut());
    if let Some(b) = &mut conv.bias {
        let blen = b.len();
        f(&format!("{name}.bias"), &[blen], b);
    }
}

fn visit_conv_grad<'a, S: Scalar>(grad: &'a Conv2dGrad<S>, name: &str, f: &mut impl FnMut(&str, &[usize], &'a [S])) {
    let w = &grad.weight;
    f(&format!("{name}.weight"), &[w.n(), w.c(), w.h(), w.w()], w.data());
    if let Some(b) = &grad.bias {
        f(&format!("{name}.bias"), &[b.len()], b);
    }
}
