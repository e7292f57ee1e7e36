//! Small layer library on top of candle tensors. Parameters are plain
//! `Var`s initialized from a caller-supplied seeded generator so that model
//! construction is reproducible.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::norm::{channel_stats, with_f32, BatchNormOp};
use crate::error::{Error, Result};

/// How a parameter participates in optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution / linear weights and biases.
    Weight,
    /// Learnable normalization scale and shift.
    Norm,
    /// Running statistics; never touched by an optimizer.
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }
}

pub type Visitor<'a> = dyn FnMut(&str, &Var, ParamKind) + 'a;

/// Forward-pass behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch statistics, running statistics updated.
    Train,
    /// Dropout off, running statistics.
    Eval,
    /// Dropout active but normalization uses (and never updates) running
    /// statistics.
    FrozenNorm,
    /// Dropout off, batch statistics, running statistics left untouched.
    /// Used when a network only scores another network's output.
    Probe,
}

/// Per-call forward context: the mode plus the generator that draws
/// dropout masks.
pub struct Ctx<'a> {
    pub mode: Mode,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Ctx<'a> {
    pub fn eval() -> Ctx<'static> {
        Ctx { mode: Mode::Eval, rng: None }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Ctx { mode: Mode::Train, rng: Some(rng) }
    }

    pub fn frozen_norm(rng: &'a mut ChaCha8Rng) -> Self {
        Ctx { mode: Mode::FrozenNorm, rng: Some(rng) }
    }

    pub fn probe() -> Ctx<'static> {
        Ctx { mode: Mode::Probe, rng: None }
    }

    fn dropout_active(&self) -> bool {
        matches!(self.mode, Mode::Train | Mode::FrozenNorm)
    }
}

fn uniform(rng: &mut impl RngCore, shape: &[usize], bound: f64, dev: &Device) -> Result<Var> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect();
    Ok(Var::from_tensor(&Tensor::from_vec(data, shape, dev)?)?)
}

pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(rng: &mut impl RngCore, cin: usize, cout: usize, k: usize, stride: usize, padding: usize, dev: &Device) -> Result<Self> {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        Ok(Conv2d {
            weight: uniform(rng, &[cout, cin, k, k], bound, dev)?,
            bias: uniform(rng, &[cout], bound, dev)?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(super::conv::conv2d(x, &self.weight, &self.bias, self.stride, self.padding)?)
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor) {
        f(&format!("{prefix}.weight"), &self.weight, ParamKind::Weight);
        f(&format!("{prefix}.bias"), &self.bias, ParamKind::Weight);
    }
}

/// 2×2 stride-2 transposed convolution: doubles both spatial dimensions.
pub struct UpConv2d {
    pub weight: Var,
    pub bias: Var,
}

impl UpConv2d {
    pub fn new(rng: &mut impl RngCore, cin: usize, cout: usize, dev: &Device) -> Result<Self> {
        let bound = 1.0 / ((cout * 4) as f64).sqrt();
        Ok(UpConv2d {
            weight: uniform(rng, &[cin, cout, 2, 2], bound, dev)?,
            bias: uniform(rng, &[cout], bound, dev)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = super::conv::up_conv2x2(x, &self.weight)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor) {
        f(&format!("{prefix}.weight"), &self.weight, ParamKind::Weight);
        f(&format!("{prefix}.bias"), &self.bias, ParamKind::Weight);
    }
}

pub struct BatchNorm2d {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: Var,
    pub running_var: Var,
}

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

impl BatchNorm2d {
    pub fn new(c: usize, dev: &Device) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Var::ones(c, DType::F32, dev)?,
            beta: Var::zeros(c, DType::F32, dev)?,
            running_mean: Var::zeros(c, DType::F32, dev)?,
            running_var: Var::ones(c, DType::F32, dev)?,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let x = x.contiguous()?;
        let (b, c, h, w) = x.dims4()?;
        let batch = matches!(ctx.mode, Mode::Train | Mode::Probe);
        let (mean, var) = if batch {
            let (mean, var) = with_f32(&x, |v| channel_stats(v, b, c, h * w))?;
            if ctx.mode == Mode::Train {
                let n = (b * h * w) as f64;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                update_running(&self.running_mean, &mean, 1.0, x.device())?;
                update_running(&self.running_var, &var, unbiased, x.device())?;
            }
            (mean, var)
        } else {
            let cast = |v: &Var| -> Result<Vec<f64>> {
                Ok(v.as_tensor().to_vec1::<f32>()?.into_iter().map(f64::from).collect())
            };
            (cast(&self.running_mean)?, cast(&self.running_var)?)
        };
        let op = BatchNormOp { mean, var, eps: BN_EPS, batch };
        Ok(x.apply_op3(self.gamma.as_tensor(), self.beta.as_tensor(), op)?)
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor) {
        f(&format!("{prefix}.gamma"), &self.gamma, ParamKind::Norm);
        f(&format!("{prefix}.beta"), &self.beta, ParamKind::Norm);
        f(&format!("{prefix}.running_mean"), &self.running_mean, ParamKind::Buffer);
        f(&format!("{prefix}.running_var"), &self.running_var, ParamKind::Buffer);
    }
}

fn update_running(buffer: &Var, batch: &[f64], scale: f64, dev: &Device) -> Result<()> {
    let old: Vec<f32> = buffer.as_tensor().to_vec1()?;
    let blended: Vec<f32> = old
        .iter()
        .zip(batch)
        .map(|(&o, &n)| ((1.0 - BN_MOMENTUM) * o as f64 + BN_MOMENTUM * n * scale) as f32)
        .collect();
    buffer.set(&Tensor::from_vec(blended, batch.len(), dev)?)?;
    Ok(())
}

/// Inverted dropout with masks drawn from the context generator.
pub fn dropout(x: &Tensor, rate: f64, ctx: &mut Ctx) -> Result<Tensor> {
    if rate <= 0.0 || !ctx.dropout_active() {
        return Ok(x.clone());
    }
    let rng = ctx
        .rng
        .as_deref_mut()
        .ok_or_else(|| Error::Contract("dropout in training mode needs a generator".into()))?;
    let keep = 1.0 - rate;
    let scale = (1.0 / keep) as f32;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
    Ok((x * mask)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(rng: &mut impl RngCore, cin: usize, cout: usize, dev: &Device) -> Result<Self> {
        let bound = 1.0 / (cin as f64).sqrt();
        Ok(Linear { weight: uniform(rng, &[cout, cin], bound, dev)?, bias: uniform(rng, &[cout], bound, dev)? })
    }

    /// Applies to the last dimension of a 2-D or 3-D input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let wt = self.weight.t()?;
        let y = match x.rank() {
            2 => x.matmul(&wt)?,
            _ => x.broadcast_matmul(&wt)?,
        };
        Ok(y.broadcast_add(&self.bias)?)
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor) {
        f(&format!("{prefix}.weight"), &self.weight, ParamKind::Weight);
        f(&format!("{prefix}.bias"), &self.bias, ParamKind::Weight);
    }
}

/// One direction of a gated recurrent unit, gate order (reset, update, new).
pub struct GruCell {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
    hidden: usize,
}

impl GruCell {
    pub fn new(rng: &mut impl RngCore, input: usize, hidden: usize, dev: &Device) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(GruCell {
            w_ih: uniform(rng, &[3 * hidden, input], bound, dev)?,
            w_hh: uniform(rng, &[3 * hidden, hidden], bound, dev)?,
            b_ih: uniform(rng, &[3 * hidden], bound, dev)?,
            b_hh: uniform(rng, &[3 * hidden], bound, dev)?,
            hidden,
        })
    }

    /// Runs over `(batch, time, input)` and returns `(batch, time, hidden)`.
    pub fn forward(&self, x: &Tensor, reverse: bool) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let hs = self.hidden;
        let xp = x.broadcast_matmul(&self.w_ih.t()?)?.broadcast_add(&self.b_ih)?;
        let w_hh_t = self.w_hh.t()?;
        let mut h = Tensor::zeros((b, hs), x.dtype(), x.device())?;
        let mut outputs = vec![None; t];
        let steps: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        for step in steps {
            let xi = xp.narrow(1, step, 1)?.squeeze(1)?;
            let hh = h.matmul(&w_hh_t)?.broadcast_add(&self.b_hh)?;
            let r = candle_nn::ops::sigmoid(&(xi.narrow(1, 0, hs)? + hh.narrow(1, 0, hs)?)?)?;
            let z = candle_nn::ops::sigmoid(&(xi.narrow(1, hs, hs)? + hh.narrow(1, hs, hs)?)?)?;
            let n = (xi.narrow(1, 2 * hs, hs)? + (r * hh.narrow(1, 2 * hs, hs)?)?)?.tanh()?;
            h = ((z.affine(-1.0, 1.0)? * n)? + (z * &h)?)?;
            outputs[step] = Some(h.unsqueeze(1)?);
        }
        let outputs: Vec<Tensor> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
        Ok(Tensor::cat(&outputs, 1)?)
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor) {
        f(&format!("{prefix}.w_ih"), &self.w_ih, ParamKind::Weight);
        f(&format!("{prefix}.w_hh"), &self.w_hh, ParamKind::Weight);
        f(&format!("{prefix}.b_ih"), &self.b_ih, ParamKind::Weight);
        f(&format!("{prefix}.b_hh"), &self.b_hh, ParamKind::Weight);
    }
}

pub struct BiGru {
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
}

impl BiGru {
    pub fn new(rng: &mut impl RngCore, input: usize, hidden: usize, dev: &Device) -> Result<Self> {
        Ok(BiGru {
            forward_cell: GruCell::new(rng, input, hidden, dev)?,
            backward_cell: GruCell::new(rng, input, hidden, dev)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.forward_cell.forward(x, false)?;
        let b = self.backward_cell.forward(x, true)?;
        Ok(Tensor::cat(&[f, b], D::Minus1)?)
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor) {
        self.forward_cell.visit(&format!("{prefix}.fwd"), f);
        self.backward_cell.visit(&format!("{prefix}.bwd"), f);
    }
}
