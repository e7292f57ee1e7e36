//! The generator (U-Net), the conditional patch discriminator and the
//! convolutional-recurrent recognizer.

use candle_core::{Device, Tensor, D};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::layers::{dropout, leaky_relu, BatchNorm2d, BiGru, Conv2d, Ctx, Linear, UpConv2d, Visitor};
use crate::error::{Error, Result};

/// Total convolution count required of the generator.
pub const GENERATOR_CONV_LAYERS: usize = 23;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    /// Downsampling levels in the encoder; the decoder mirrors them.
    pub depth: usize,
    pub base_channels: usize,
    pub batch_norm: bool,
    /// Dropout at the deepest encoder level and the bottleneck.
    pub dropout: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec { depth: 4, base_channels: 64, batch_norm: true, dropout: 0.5 }
    }
}

impl GeneratorSpec {
    /// Two convs per encoder level, two in the bottleneck, an up-convolution
    /// plus two convs per decoder level, and the output projection.
    pub fn conv_layer_count(&self) -> usize {
        2 * self.depth + 2 + 3 * self.depth + 1
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_layer_count() != GENERATOR_CONV_LAYERS {
            return Err(Error::Config(format!(
                "generator depth {} gives {} conv layers, expected {GENERATOR_CONV_LAYERS}",
                self.depth,
                self.conv_layer_count()
            )));
        }
        if self.base_channels == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("generator needs base_channels > 0 and dropout in [0,1)".into()));
        }
        Ok(())
    }
}

/// conv → (BN) → activation
struct ConvUnit {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
}

impl ConvUnit {
    fn new(rng: &mut impl RngCore, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bn: bool, dev: &Device) -> Result<Self> {
        Ok(ConvUnit {
            conv: Conv2d::new(rng, cin, cout, k, stride, pad, dev)?,
            bn: if bn { Some(BatchNorm2d::new(cout, dev)?) } else { None },
        })
    }

    fn forward_linear(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        match &self.bn {
            Some(bn) => bn.forward(&y, ctx),
            None => Ok(y),
        }
    }

    fn visit(&self, prefix: &str, f: &mut Visitor) {
        self.conv.visit(&format!("{prefix}.conv"), f);
        if let Some(bn) = &self.bn {
            bn.visit(&format!("{prefix}.bn"), f);
        }
    }
}

struct DoubleConv {
    a: ConvUnit,
    b: ConvUnit,
}

impl DoubleConv {
    fn new(rng: &mut impl RngCore, cin: usize, cout: usize, bn: bool, dev: &Device) -> Result<Self> {
        Ok(DoubleConv {
            a: ConvUnit::new(rng, cin, cout, 3, 1, 1, bn, dev)?,
            b: ConvUnit::new(rng, cout, cout, 3, 1, 1, bn, dev)?,
        })
    }

    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let x = self.a.forward_linear(x, ctx)?.relu()?;
        Ok(self.b.forward_linear(&x, ctx)?.relu()?)
    }

    fn visit(&self, prefix: &str, f: &mut Visitor) {
        self.a.visit(&format!("{prefix}.0"), f);
        self.b.visit(&format!("{prefix}.1"), f);
    }
}

pub struct Generator {
    spec: GeneratorSpec,
    down: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    up: Vec<UpConv2d>,
    decode: Vec<DoubleConv>,
    head: Conv2d,
}

impl Generator {
    pub fn new(spec: &GeneratorSpec, rng: &mut impl RngCore, dev: &Device) -> Result<Self> {
        spec.validate()?;
        let ch = |l: usize| spec.base_channels << l;
        let mut down = Vec::new();
        let mut cin = 1;
        for l in 0..spec.depth {
            down.push(DoubleConv::new(rng, cin, ch(l), spec.batch_norm, dev)?);
            cin = ch(l);
        }
        let deepest = ch(spec.depth - 1);
        let bottleneck = DoubleConv::new(rng, deepest, deepest, spec.batch_norm, dev)?;
        let mut up = Vec::new();
        let mut decode = Vec::new();
        let mut cur = deepest;
        for l in (0..spec.depth).rev() {
            up.push(UpConv2d::new(rng, cur, ch(l), dev)?);
            decode.push(DoubleConv::new(rng, 2 * ch(l), ch(l), spec.batch_norm, dev)?);
            cur = ch(l);
        }
        let head = Conv2d::new(rng, cur, 1, 1, 1, 0, dev)?;
        Ok(Generator { spec: spec.clone(), down, bottleneck, up, decode, head })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// `(batch, 1, H, W)` → `(batch, 1, H, W)` with values in `[0, 1]`.
    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let f = self.spec.downsample_factor();
        if c != 1 || h % f != 0 || w % f != 0 {
            return Err(Error::Contract(format!(
                "generator input must be single-channel with H, W divisible by {f}, got {:?}",
                x.dims()
            )));
        }
        let mut skips = Vec::with_capacity(self.spec.depth);
        let mut cur = x.clone();
        for (l, block) in self.down.iter().enumerate() {
            cur = block.forward(&cur, ctx)?;
            if l + 1 == self.spec.depth {
                cur = dropout(&cur, self.spec.dropout, ctx)?;
            }
            skips.push(cur.clone());
            cur = cur.max_pool2d(2)?;
        }
        cur = self.bottleneck.forward(&cur, ctx)?;
        cur = dropout(&cur, self.spec.dropout, ctx)?;
        for (up, block) in self.up.iter().zip(&self.decode) {
            let skip = skips.pop().expect("one skip per level");
            let u = up.forward(&cur)?.relu()?;
            cur = block.forward(&Tensor::cat(&[u, skip], 1)?, ctx)?;
        }
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&cur)?)?)
    }

    pub fn visit(&self, f: &mut Visitor) {
        for (i, b) in self.down.iter().enumerate() {
            b.visit(&format!("down{i}"), f);
        }
        self.bottleneck.visit("bottleneck", f);
        for (i, (u, b)) in self.up.iter().zip(&self.decode).enumerate() {
            u.visit(&format!("up{i}"), f);
            b.visit(&format!("decode{i}"), f);
        }
        self.head.visit("head", f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    pub base_channels: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec { base_channels: 64 }
    }
}

impl DiscriminatorSpec {
    pub const INPUT_CHANNELS: usize = 2;
    pub const DOWNSAMPLE_FACTOR: usize = 16;

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("discriminator base_channels must be positive".into()));
        }
        Ok(())
    }
}

pub struct Discriminator {
    spec: DiscriminatorSpec,
    stages: Vec<ConvUnit>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(spec: &DiscriminatorSpec, rng: &mut impl RngCore, dev: &Device) -> Result<Self> {
        spec.validate()?;
        let mut stages = Vec::new();
        let mut cin = DiscriminatorSpec::INPUT_CHANNELS;
        for l in 0..4 {
            let cout = spec.base_channels << l;
            stages.push(ConvUnit::new(rng, cin, cout, 4, 2, 1, l > 0, dev)?);
            cin = cout;
        }
        let head = Conv2d::new(rng, cin, 1, 3, 1, 1, dev)?;
        Ok(Discriminator { spec: spec.clone(), stages, head })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    /// Scores a (degraded, candidate) pair, both `(batch, 1, H, W)`, with a
    /// `(batch, 1, H/16, W/16)` map of probabilities that the candidate is
    /// the real clean image.
    pub fn forward(&self, degraded: &Tensor, candidate: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        if degraded.dims() != candidate.dims() {
            return Err(Error::Contract(format!(
                "discriminator pair shapes differ: {:?} vs {:?}",
                degraded.dims(),
                candidate.dims()
            )));
        }
        let (_, c, h, w) = degraded.dims4()?;
        let f = DiscriminatorSpec::DOWNSAMPLE_FACTOR;
        if c != 1 || h % f != 0 || w % f != 0 {
            return Err(Error::Contract(format!(
                "discriminator inputs must be single-channel with H, W divisible by {f}, got {:?}",
                degraded.dims()
            )));
        }
        let mut x = Tensor::cat(&[degraded, candidate], 1)?;
        for stage in &self.stages {
            x = leaky_relu(&stage.forward_linear(&x, ctx)?, 0.2)?;
        }
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&x)?)?)
    }

    pub fn visit(&self, f: &mut Visitor) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&format!("stage{i}"), f);
        }
        self.head.visit("head", f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognizerSpec {
    /// Output channels of the five convolutional blocks.
    pub channels: [usize; 5],
    pub gru_hidden: usize,
    pub dropout: f64,
    /// `|charset| + 1`.
    pub class_count: usize,
}

impl RecognizerSpec {
    /// Strides of the five blocks (applied to both axes).
    pub const STRIDES: [usize; 5] = [2, 1, 2, 1, 2];

    pub fn new(class_count: usize) -> Self {
        RecognizerSpec { channels: [16, 32, 48, 64, 80], gru_hidden: 128, dropout: 0.2, class_count }
    }

    pub fn downsample_factor() -> usize {
        Self::STRIDES.iter().product()
    }

    pub fn frame_count(width: usize) -> usize {
        width / Self::downsample_factor()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 || self.gru_hidden == 0 || self.channels.contains(&0) {
            return Err(Error::Config("recognizer needs ≥ 2 classes and positive widths".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("recognizer dropout must be in [0,1)".into()));
        }
        Ok(())
    }
}

struct GatedBlock {
    unit: ConvUnit,
    gate: Conv2d,
    dropout: f64,
}

pub struct Recognizer {
    spec: RecognizerSpec,
    blocks: Vec<GatedBlock>,
    rnn: [BiGru; 2],
    out: Linear,
}

impl Recognizer {
    pub fn new(spec: &RecognizerSpec, rng: &mut impl RngCore, dev: &Device) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::new();
        let mut cin = 1;
        for (i, (&cout, &stride)) in spec.channels.iter().zip(&RecognizerSpec::STRIDES).enumerate() {
            blocks.push(GatedBlock {
                unit: ConvUnit::new(rng, cin, cout, 3, stride, 1, true, dev)?,
                gate: Conv2d::new(rng, cout, 2 * cout, 3, 1, 1, dev)?,
                dropout: if i >= 2 { spec.dropout } else { 0.0 },
            });
            cin = cout;
        }
        let hs = spec.gru_hidden;
        let rnn = [BiGru::new(rng, cin, hs, dev)?, BiGru::new(rng, 2 * hs, hs, dev)?];
        let out = Linear::new(rng, 2 * hs, spec.class_count, dev)?;
        Ok(Recognizer { spec: spec.clone(), blocks, rnn, out })
    }

    pub fn spec(&self) -> &RecognizerSpec {
        &self.spec
    }

    /// `(batch, 1, H, W)` → `(batch, T, classes)` log-probabilities with
    /// `T = W / 8`.
    pub fn forward_log_probs(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let f = RecognizerSpec::downsample_factor();
        if c != 1 || h % f != 0 || w % f != 0 {
            return Err(Error::Contract(format!(
                "recognizer input must be single-channel with H, W divisible by {f}, got {:?}",
                x.dims()
            )));
        }
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = leaky_relu(&block.unit.forward_linear(&cur, ctx)?, 0.01)?;
            let g = block.gate.forward(&cur)?;
            let ch = g.dim(1)? / 2;
            cur = (g.narrow(1, 0, ch)? * candle_nn::ops::sigmoid(&g.narrow(1, ch, ch)?)?)?;
            cur = dropout(&cur, block.dropout, ctx)?;
        }
        // (B, C, H', T) → (B, T, C)
        let mut seq = cur.max(2)?.transpose(1, 2)?.contiguous()?;
        for rnn in &self.rnn {
            seq = rnn.forward(&seq)?;
        }
        let logits = self.out.forward(&seq)?;
        Ok(candle_nn::ops::log_softmax(&logits, D::Minus1)?)
    }

    pub fn visit(&self, f: &mut Visitor) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.unit.visit(&format!("block{i}"), f);
            b.gate.visit(&format!("block{i}.gate"), f);
        }
        for (i, r) in self.rnn.iter().enumerate() {
            r.visit(&format!("rnn{i}"), f);
        }
        self.out.visit("out", f);
    }
}
