//! Differentiable tensor versions of the loss terms. Each reduces with a
//! plain mean over all elements, matching the scalar functions in the
//! parent module.

use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor};

use super::{ctc, AdversarialForm, LOG_EPS};
use crate::error::{Error, Result};

fn clamp(t: &Tensor) -> candle_core::Result<Tensor> {
    t.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!("{what}: shapes {:?} and {:?} differ", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn discriminator_loss(score_real: &Tensor, score_fake: &Tensor) -> Result<Tensor> {
    same_shape(score_real, score_fake, "discriminator_loss")?;
    let real = clamp(score_real)?.log()?.neg()?;
    let fake = clamp(score_fake)?.affine(-1.0, 1.0)?.log()?.neg()?;
    Ok((real + fake)?.mean_all()?)
}

pub fn generator_adversarial_loss(score_fake: &Tensor, form: AdversarialForm) -> Result<Tensor> {
    let c = clamp(score_fake)?;
    let t = match form {
        AdversarialForm::NonSaturating => c.log()?.neg()?,
        AdversarialForm::Saturating => c.affine(-1.0, 1.0)?.log()?,
    };
    Ok(t.mean_all()?)
}

pub fn pixel_bce(generated: &Tensor, gt: &Tensor) -> Result<Tensor> {
    same_shape(generated, gt, "pixel_bce")?;
    let g = clamp(generated)?;
    let pos = (gt * g.log()?)?;
    let neg = (gt.affine(-1.0, 1.0)? * g.affine(-1.0, 1.0)?.log()?)?;
    Ok((pos + neg)?.neg()?.mean_all()?)
}

/// Per-sample CTC negative log-likelihood over `(batch, frames, classes)`
/// log-probabilities. Backpropagates through the forward-backward
/// occupation probabilities.
struct CtcOp {
    labels: Vec<Vec<usize>>,
    blank: usize,
}

impl CtcOp {
    fn per_sample<F>(&self, data: &[f64], b: usize, t: usize, k: usize, mut f: F) -> candle_core::Result<()>
    where
        F: FnMut(usize, &[f64], &[usize]) -> candle_core::Result<()>,
    {
        if self.labels.len() != b {
            candle_core::bail!("ctc: {} label sequences for batch of {b}", self.labels.len());
        }
        for (i, labels) in self.labels.iter().enumerate() {
            f(i, &data[i * t * k..(i + 1) * t * k], labels)?;
        }
        Ok(())
    }
}

fn wrap(e: Error) -> candle_core::Error {
    candle_core::Error::Msg(e.to_string())
}

impl CustomOp1 for CtcOp {
    fn name(&self) -> &'static str {
        "ctc-loss"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, t, k) = layout.shape().dims3()?;
        let Some((start, end)) = layout.contiguous_offsets() else {
            candle_core::bail!("ctc: input must be contiguous");
        };
        let data: Vec<f64> = match storage {
            CpuStorage::F32(v) => v[start..end].iter().map(|&x| x as f64).collect(),
            CpuStorage::F64(v) => v[start..end].to_vec(),
            _ => candle_core::bail!("ctc: unsupported dtype"),
        };
        let mut out = vec![0.0f64; b];
        self.per_sample(&data, b, t, k, |i, lp, labels| {
            out[i] = ctc::ctc_nll(lp, k, labels, self.blank).map_err(wrap)?;
            Ok(())
        })?;
        let storage = match storage {
            CpuStorage::F64(_) => CpuStorage::F64(out),
            _ => CpuStorage::F32(out.into_iter().map(|x| x as f32).collect()),
        };
        Ok((storage, Shape::from(b)))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let (b, t, k) = arg.dims3()?;
        let data: Vec<f64> = arg.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let upstream: Vec<f64> = grad_res.to_dtype(DType::F64)?.to_vec1()?;
        let mut grad = vec![0.0f64; data.len()];
        self.per_sample(&data, b, t, k, |i, lp, labels| {
            let (_, g) = ctc::ctc_nll_and_grad(lp, k, labels, self.blank).map_err(wrap)?;
            let scale = upstream[i];
            for (dst, src) in grad[i * t * k..(i + 1) * t * k].iter_mut().zip(g) {
                *dst = src * scale;
            }
            Ok(())
        })?;
        let g = Tensor::from_vec(grad, (b, t, k), arg.device())?.to_dtype(arg.dtype())?;
        Ok(Some(g))
    }
}

/// Per-sample CTC losses, shape `(batch,)`. Samples whose labels cannot fit
/// yield `+∞`; callers are expected to drop them before reducing.
pub fn ctc_loss(log_probs: &Tensor, labels: &[Vec<usize>], blank: usize) -> Result<Tensor> {
    let (b, _, k) = log_probs.dims3()?;
    if labels.len() != b {
        return Err(Error::Contract(format!("ctc: {} label sequences for batch of {b}", labels.len())));
    }
    if blank >= k {
        return Err(Error::Argument(format!("blank {blank} outside {k} classes")));
    }
    let op = CtcOp { labels: labels.to_vec(), blank };
    Ok(log_probs.contiguous()?.apply_op1(op)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    #[test]
    fn matches_scalar_versions() {
        let dev = Device::Cpu;
        let real = [0.2, 0.9, 0.6, 0.4];
        let fake = [0.7, 0.1, 0.5, 0.3];
        let r = Tensor::new(&real, &dev).unwrap();
        let f = Tensor::new(&fake, &dev).unwrap();
        let d = discriminator_loss(&r, &f).unwrap().to_scalar::<f64>().unwrap();
        assert!((d - super::super::discriminator_loss(&real, &fake).unwrap()).abs() < 1e-12);
        let b = pixel_bce(&r, &f).unwrap().to_scalar::<f64>().unwrap();
        assert!((b - super::super::pixel_bce(&real, &fake).unwrap()).abs() < 1e-12);
        for form in [AdversarialForm::NonSaturating, AdversarialForm::Saturating] {
            let g = generator_adversarial_loss(&f, form).unwrap().to_scalar::<f64>().unwrap();
            assert!((g - super::super::generator_adversarial_loss(&fake, form).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ctc_op_gradient_matches_scalar() {
        let dev = Device::Cpu;
        let probs = [0.2, 0.5, 0.3, 0.6, 0.1, 0.3, 0.25, 0.25, 0.5];
        let lp: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
        let x = Var::from_tensor(&Tensor::from_vec(lp.clone(), (1, 3, 3), &dev).unwrap()).unwrap();
        let loss = ctc_loss(x.as_tensor(), &[vec![0, 1]], 2).unwrap();
        let total = (loss.sum_all().unwrap() * 2.0).unwrap();
        let grads = total.backward().unwrap();
        let g: Vec<f64> = grads.get(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let (v, expect) = ctc::ctc_nll_and_grad(&lp, 3, &[0, 1], 2).unwrap();
        assert!((total.to_scalar::<f64>().unwrap() - 2.0 * v).abs() < 1e-12);
        for (a, b) in g.iter().zip(expect) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }
}
