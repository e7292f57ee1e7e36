//! Fused per-channel batch normalization with an analytic backward pass.

use candle_core::{CpuStorage, CustomOp3, Layout, Shape, Storage, Tensor};

/// Runs `f` on the contiguous f32 data of a CPU tensor without copying.
pub(crate) fn with_f32<R>(t: &Tensor, f: impl FnOnce(&[f32]) -> R) -> candle_core::Result<R> {
    let t = t.contiguous()?;
    let (storage, layout) = t.storage_and_layout();
    let Storage::Cpu(CpuStorage::F32(v)) = &*storage else { candle_core::bail!("expected an f32 cpu tensor") };
    let Some((start, end)) = layout.contiguous_offsets() else { candle_core::bail!("expected a contiguous tensor") };
    Ok(f(&v[start..end]))
}

/// Per-channel mean and biased variance of `(batch, c, h, w)` data.
pub(crate) fn channel_stats(x: &[f32], b: usize, c: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (b * plane) as f64;
    let mut mean = vec![0f64; c];
    let mut var = vec![0f64; c];
    for ch in 0..c {
        let planes = || (0..b).map(move |bi| &x[(bi * c + ch) * plane..(bi * c + ch + 1) * plane]);
        let m = planes().map(|p| p.iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>() / n;
        let v = planes()
            .map(|p| p.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n;
        mean[ch] = m;
        var[ch] = v;
    }
    (mean, var)
}

/// `gamma · (x - mean) / sqrt(var + eps) + beta` with the given statistics.
/// When `batch` is set the statistics are those of `x` itself and the
/// gradient flows through them.
pub(crate) struct BatchNormOp {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
    pub batch: bool,
}

impl BatchNormOp {
    fn dims(&self, l: &Layout) -> candle_core::Result<(usize, usize, usize)> {
        let &[b, c, h, w] = l.dims() else { candle_core::bail!("batch norm input must be 4-D, got {:?}", l.dims()) };
        if c != self.mean.len() {
            candle_core::bail!("batch norm has {} channels, input has {c}", self.mean.len());
        }
        Ok((b, c, h * w))
    }

    fn inv_std(&self) -> Vec<f64> {
        self.var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect()
    }
}

fn slice<'a>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [f32]> {
    let CpuStorage::F32(v) = s else { candle_core::bail!("batch norm supports f32 only") };
    let Some((start, end)) = l.contiguous_offsets() else { candle_core::bail!("batch norm needs contiguous inputs") };
    Ok(&v[start..end])
}

impl CustomOp3 for BatchNormOp {
    fn name(&self) -> &'static str {
        "fused-batch-norm"
    }

    fn cpu_fwd(
        &self,
        xs: &CpuStorage,
        xl: &Layout,
        gs: &CpuStorage,
        gl: &Layout,
        bs: &CpuStorage,
        bl: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, c, plane) = self.dims(xl)?;
        let (x, gamma, beta) = (slice(xs, xl)?, slice(gs, gl)?, slice(bs, bl)?);
        let inv = self.inv_std();
        let mut out = vec![0f32; x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let o = (bi * c + ch) * plane;
                let scale = gamma[ch] as f64 * inv[ch];
                let shift = beta[ch] as f64 - self.mean[ch] * scale;
                let (scale, shift) = (scale as f32, shift as f32);
                for (d, &v) in out[o..o + plane].iter_mut().zip(&x[o..o + plane]) {
                    *d = v * scale + shift;
                }
            }
        }
        Ok((CpuStorage::F32(out), xl.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (b, c, h, w) = x.dims4()?;
        let plane = h * w;
        let n = (b * plane) as f64;
        let inv = self.inv_std();
        let gamma: Vec<f32> = gamma.to_vec1()?;
        let (dx, dgamma, dbeta) = with_f32(x, |x| {
            with_f32(grad, |g| {
                let mut dgamma = vec![0f64; c];
                let mut dbeta = vec![0f64; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let o = (bi * c + ch) * plane;
                        let (m, s) = (self.mean[ch], inv[ch]);
                        for (&gv, &xv) in g[o..o + plane].iter().zip(&x[o..o + plane]) {
                            dbeta[ch] += gv as f64;
                            dgamma[ch] += gv as f64 * (xv as f64 - m) * s;
                        }
                    }
                }
                let mut dx = vec![0f32; x.len()];
                for bi in 0..b {
                    for ch in 0..c {
                        let o = (bi * c + ch) * plane;
                        let (m, s) = (self.mean[ch], inv[ch]);
                        let k = gamma[ch] as f64 * s;
                        // d/dx of the normalized value, including the path
                        // through the batch mean and variance when present.
                        let (mean_g, mean_gx) = if self.batch { (dbeta[ch] / n, dgamma[ch] / n) } else { (0.0, 0.0) };
                        for ((d, &gv), &xv) in dx[o..o + plane].iter_mut().zip(&g[o..o + plane]).zip(&x[o..o + plane]) {
                            let xhat = (xv as f64 - m) * s;
                            *d = (k * (gv as f64 - mean_g - xhat * mean_gx)) as f32;
                        }
                    }
                }
                (dx, dgamma, dbeta)
            })
        })??;
        let dev = x.device();
        let to32 = |v: Vec<f64>| v.into_iter().map(|v| v as f32).collect::<Vec<_>>();
        Ok((
            Some(Tensor::from_vec(dx, x.shape(), dev)?),
            Some(Tensor::from_vec(to32(dgamma), c, dev)?),
            Some(Tensor::from_vec(to32(dbeta), c, dev)?),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f32> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar().unwrap()
    }

    /// The same normalization composed from differentiable tensor ops.
    fn composed(x: &Tensor, g: &Tensor, b: &Tensor, stats: Option<(&Tensor, &Tensor)>) -> Tensor {
        let c = x.dim(1).unwrap();
        let (mean, var) = match stats {
            Some((m, v)) => (m.reshape((1, c, 1, 1)).unwrap(), v.reshape((1, c, 1, 1)).unwrap()),
            None => {
                let m = x.mean_keepdim(0).unwrap().mean_keepdim(2).unwrap().mean_keepdim(3).unwrap();
                let v = x.broadcast_sub(&m).unwrap().sqr().unwrap();
                let v = v.mean_keepdim(0).unwrap().mean_keepdim(2).unwrap().mean_keepdim(3).unwrap();
                (m, v)
            }
        };
        let xhat = x.broadcast_sub(&mean).unwrap().broadcast_div(&(var + 1e-5).unwrap().sqrt().unwrap()).unwrap();
        xhat.broadcast_mul(&g.reshape((1, c, 1, 1)).unwrap())
            .unwrap()
            .broadcast_add(&b.reshape((1, c, 1, 1)).unwrap())
            .unwrap()
    }

    #[test]
    fn matches_composed_ops_in_both_modes() {
        let x = Var::from_tensor(&rand(&[3, 4, 5, 6], 1)).unwrap();
        let g = Var::from_tensor(&rand(&[4], 2)).unwrap();
        let b = Var::from_tensor(&rand(&[4], 3)).unwrap();
        let probe = rand(&[3, 4, 5, 6], 4);
        let rm = rand(&[4], 5);
        let rv = (rand(&[4], 6).abs().unwrap() + 0.5).unwrap();
        for batch in [true, false] {
            let (mean, var) = if batch {
                with_f32(&x, |v| channel_stats(v, 3, 4, 30)).unwrap()
            } else {
                let f = |t: &Tensor| t.to_vec1::<f32>().unwrap().into_iter().map(f64::from).collect::<Vec<_>>();
                (f(&rm), f(&rv))
            };
            let op = BatchNormOp { mean, var, eps: 1e-5, batch };
            let ours = x.apply_op3(&g, &b, op).unwrap();
            let theirs = composed(&x, &g, &b, (!batch).then_some((&rm, &rv)));
            assert!(max_diff(&ours, &theirs) < 1e-4);
            let go = (ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let gt = (theirs * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            for v in [&x, &g, &b] {
                assert!(max_diff(go.get(v).unwrap(), gt.get(v).unwrap()) < 1e-3, "batch={batch}");
            }
        }
    }
}
