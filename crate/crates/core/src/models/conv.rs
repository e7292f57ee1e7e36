//! Convolution as im2col + GEMM with an explicit backward pass. Candle's
//! CPU convolution gradient is computed as a convolution with an
//! image-sized kernel, which is far too slow for training.

use candle_core::{CpuStorage, CustomOp3, Layout, Shape, Tensor};

use super::norm::with_f32;

/// Inner dimensions up to this size skip gemm's operand packing.
const SMALL_INNER: usize = 32;
/// Upper bound on the im2col buffer, in elements. Output rows are processed
/// in blocks so that wide layers at full page resolution stay small.
const BLOCK_ELEMS: usize = 1 << 22;

/// Row-major `m × k` view with row stride `ld`.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f32],
    ld: usize,
}

impl<'a> Mat<'a> {
    fn new(data: &'a [f32], ld: usize) -> Self {
        Mat { data, ld }
    }
}

/// `C (m×n, row stride ldc) (+)= A (m×k) · B (k×n)`.
fn sgemm(m: usize, n: usize, k: usize, a: Mat, b: Mat, c: &mut [f32], ldc: usize, accumulate: bool) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.ld >= k && b.ld >= n && ldc >= n);
    assert!(c.len() >= (m - 1) * ldc + n);
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                c[i * ldc..i * ldc + n].fill(0.0);
            }
        }
        return;
    }
    assert!(a.data.len() >= (m - 1) * a.ld + k && b.data.len() >= (k - 1) * b.ld + n);
    if k <= SMALL_INNER {
        // Packing costs more than the product itself when the inner
        // dimension is tiny; row-wise axpy vectorizes fine.
        for i in 0..m {
            let crow = &mut c[i * ldc..i * ldc + n];
            if !accumulate {
                crow.fill(0.0);
            }
            for j in 0..k {
                let s = a.data[i * a.ld + j];
                for (d, v) in crow.iter_mut().zip(&b.data[j * b.ld..j * b.ld + n]) {
                    *d += s * v;
                }
            }
        }
        return;
    }
    // SAFETY: the assertions above bound every index reachable through the
    // given strides, and `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            ldc as isize,
            accumulate,
            a.data.as_ptr(),
            1,
            a.ld as isize,
            b.data.as_ptr(),
            1,
            b.ld as isize,
            1.0,
            1.0,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

/// Transposes the `rows × cols` block of `a` (row stride `lda`) into `out`.
fn transpose_into(a: &[f32], rows: usize, cols: usize, lda: usize, out: &mut [f32]) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * lda + c];
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    block_elems: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Output rows per block.
    fn block_rows(&self) -> usize {
        (self.block_elems / (self.patch_len() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// For kernel tap `(ky, kx)` and output row `oy`: the source row, and the
    /// half-open range of output columns whose source column is in bounds.
    #[inline]
    fn span(&self, oy: usize, ky: usize, kx: usize) -> Option<(usize, usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        if y >= self.h {
            return None;
        }
        let lo = if self.pad > kx { (self.pad - kx).div_ceil(self.stride) } else { 0 };
        let hi = if self.w + self.pad > kx { (self.w + self.pad - kx).div_ceil(self.stride).min(self.wo) } else { 0 };
        (lo < hi).then_some((y, lo, hi))
    }
}

/// Output rows `oy0..oy1` of one image `(cin, h, w)` as columns
/// `(cin·k·k, (oy1-oy0)·wo)`.
fn im2col(g: &Geometry, img: &[f32], oy0: usize, oy1: usize, cols: &mut [f32]) {
    let pb = (oy1 - oy0) * g.wo;
    cols[..g.patch_len() * pb].fill(0.0);
    for ci in 0..g.cin {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * pb;
                for oy in oy0..oy1 {
                    let Some((y, lo, hi)) = g.span(oy, ky, kx) else { continue };
                    let at = row + (oy - oy0) * g.wo;
                    let dst = &mut cols[at + lo..at + hi];
                    let x0 = lo * g.stride + kx - g.pad;
                    let src = &plane[y * g.w..(y + 1) * g.w];
                    if g.stride == 1 {
                        dst.copy_from_slice(&src[x0..x0 + dst.len()]);
                    } else {
                        for (i, d) in dst.iter_mut().enumerate() {
                            *d = src[x0 + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto an image.
fn col2im(g: &Geometry, cols: &[f32], oy0: usize, oy1: usize, img: &mut [f32]) {
    let pb = (oy1 - oy0) * g.wo;
    for ci in 0..g.cin {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * pb;
                for oy in oy0..oy1 {
                    let Some((y, lo, hi)) = g.span(oy, ky, kx) else { continue };
                    let at = row + (oy - oy0) * g.wo;
                    let src = &cols[at + lo..at + hi];
                    let x0 = lo * g.stride + kx - g.pad;
                    let dst = &mut plane[y * g.w..(y + 1) * g.w];
                    if g.stride == 1 {
                        for (d, s) in dst[x0..x0 + src.len()].iter_mut().zip(src) {
                            *d += s;
                        }
                    } else {
                        for (i, s) in src.iter().enumerate() {
                            dst[x0 + i * g.stride] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Row blocks `(oy0, oy1)` covering the output.
fn blocks(g: &Geometry) -> impl Iterator<Item = (usize, usize)> {
    let (rb, ho) = (g.block_rows(), g.ho);
    (0..ho).step_by(rb).map(move |oy0| (oy0, (oy0 + rb).min(ho)))
}

struct Conv2dOp {
    stride: usize,
    pad: usize,
    block_elems: usize,
}

impl Conv2dOp {
    fn geometry(&self, x: &[usize], w: &[usize]) -> candle_core::Result<(usize, usize, Geometry)> {
        let [b, cin, h, wd] = x else { candle_core::bail!("conv input must be 4-D, got {x:?}") };
        let [cout, wcin, k, k2] = w else { candle_core::bail!("conv kernel must be 4-D, got {w:?}") };
        if wcin != cin || k != k2 {
            candle_core::bail!("conv kernel {w:?} does not fit input {x:?}");
        }
        if h + 2 * self.pad < *k || wd + 2 * self.pad < *k {
            candle_core::bail!("conv kernel {k} larger than padded input {x:?}");
        }
        let ho = (h + 2 * self.pad - k) / self.stride + 1;
        let wo = (wd + 2 * self.pad - k) / self.stride + 1;
        let g = Geometry { cin: *cin, h: *h, w: *wd, k: *k, stride: self.stride, pad: self.pad, ho, wo, block_elems: self.block_elems };
        Ok((*b, *cout, g))
    }

    fn forward(b: usize, cout: usize, g: &Geometry, x: &[f32], w: &[f32], bias: &[f32]) -> Vec<f32> {
        let (kk, p) = (g.patch_len(), g.positions());
        let in_len = g.cin * g.h * g.w;
        let mut cols = vec![0f32; kk * g.block_rows() * g.wo];
        let mut out = vec![0f32; b * cout * p];
        for (bi, ob) in out.chunks_exact_mut(cout * p).enumerate() {
            for (row, &bv) in ob.chunks_exact_mut(p).zip(bias) {
                row.fill(bv);
            }
            let img = &x[bi * in_len..(bi + 1) * in_len];
            for (oy0, oy1) in blocks(g) {
                let pb = (oy1 - oy0) * g.wo;
                im2col(g, img, oy0, oy1, &mut cols);
                sgemm(cout, pb, kk, Mat::new(w, kk), Mat::new(&cols, pb), &mut ob[oy0 * g.wo..], p, true);
            }
        }
        out
    }

    /// Input, kernel and bias gradients for the output gradient `gv`.
    fn backward(b: usize, cout: usize, g: &Geometry, xv: &[f32], wv: &[f32], gv: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let (kk, p) = (g.patch_len(), g.positions());
        let in_len = g.cin * g.h * g.w;
        let cap = g.block_rows() * g.wo;
        let mut cols = vec![0f32; kk * cap];
        let mut dcols = vec![0f32; kk * cap];
        let mut gt = vec![0f32; cap * cout];
        let mut dx = vec![0f32; b * in_len];
        // Transposed operands keep every product in plain row-major form.
        let mut wt = vec![0f32; kk * cout];
        transpose_into(wv, cout, kk, kk, &mut wt);
        let mut dwt = vec![0f32; kk * cout];
        let mut db = vec![0f64; cout];
        let mut first = true;
        for bi in 0..b {
            let gb = &gv[bi * cout * p..(bi + 1) * cout * p];
            for (ch, row) in gb.chunks_exact(p).enumerate() {
                db[ch] += row.iter().map(|&v| v as f64).sum::<f64>();
            }
            let img = &xv[bi * in_len..(bi + 1) * in_len];
            for (oy0, oy1) in blocks(g) {
                let pb = (oy1 - oy0) * g.wo;
                let gblock = &gb[oy0 * g.wo..];
                im2col(g, img, oy0, oy1, &mut cols);
                transpose_into(gblock, cout, pb, p, &mut gt);
                // dWᵀ += cols · dYᵀ
                sgemm(kk, cout, pb, Mat::new(&cols, pb), Mat::new(&gt, cout), &mut dwt, cout, !first);
                first = false;
                // dcols = Wᵀ · dY
                sgemm(kk, pb, cout, Mat::new(&wt, cout), Mat::new(gblock, p), &mut dcols, pb, false);
                col2im(g, &dcols, oy0, oy1, &mut dx[bi * in_len..(bi + 1) * in_len]);
            }
        }
        let mut dw = vec![0f32; cout * kk];
        transpose_into(&dwt, kk, cout, cout, &mut dw);
        (dx, dw, db.into_iter().map(|v| v as f32).collect())
    }
}

fn f32_slice<'a>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [f32]> {
    let CpuStorage::F32(v) = s else { candle_core::bail!("conv supports f32 only") };
    let Some((start, end)) = l.contiguous_offsets() else { candle_core::bail!("conv needs contiguous inputs") };
    Ok(&v[start..end])
}

impl CustomOp3 for Conv2dOp {
    fn name(&self) -> &'static str {
        "im2col-conv2d"
    }

    fn cpu_fwd(
        &self,
        xs: &CpuStorage,
        xl: &Layout,
        ws: &CpuStorage,
        wl: &Layout,
        bs: &CpuStorage,
        bl: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, cout, g) = self.geometry(xl.dims(), wl.dims())?;
        let (x, w, bias) = (f32_slice(xs, xl)?, f32_slice(ws, wl)?, f32_slice(bs, bl)?);
        if bias.len() != cout {
            candle_core::bail!("conv bias has {} entries for {cout} channels", bias.len());
        }
        let out = Self::forward(b, cout, &g, x, w, bias);
        Ok((CpuStorage::F32(out), Shape::from((b, cout, g.ho, g.wo))))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        bias: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (b, cout, g) = self.geometry(x.dims(), w.dims())?;
        let (dx, dw, db) = with_f32(x, |xv| {
            with_f32(w, |wv| with_f32(grad, |gv| Self::backward(b, cout, &g, xv, wv, gv)))
        })???;
        Ok((
            Some(Tensor::from_vec(dx, x.shape(), x.device())?),
            Some(Tensor::from_vec(dw, w.shape(), w.device())?),
            Some(Tensor::from_vec(db, bias.shape(), bias.device())?),
        ))
    }
}

/// Square-kernel 2-D convolution of `(batch, cin, h, w)` with a
/// `(cout, cin, k, k)` kernel and a per-channel bias.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> candle_core::Result<Tensor> {
    if stride == 0 {
        candle_core::bail!("conv stride must be positive");
    }
    conv2d_blocked(x, kernel, bias, stride, padding, BLOCK_ELEMS)
}

fn conv2d_blocked(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    block_elems: usize,
) -> candle_core::Result<Tensor> {
    let op = Conv2dOp { stride, pad: padding, block_elems };
    x.contiguous()?.apply_op3(&kernel.contiguous()?, &bias.contiguous()?, op)
}

/// 2×2 stride-2 transposed convolution with a `(cin, cout, 2, 2)` kernel,
/// written as a matmul over channels followed by a pixel shuffle.
pub fn up_conv2x2(x: &Tensor, kernel: &Tensor) -> candle_core::Result<Tensor> {
    let (b, cin, h, w) = x.dims4()?;
    let (kcin, cout, kh, kw) = kernel.dims4()?;
    if kcin != cin || kh != 2 || kw != 2 {
        candle_core::bail!("up-conv kernel {:?} does not fit input {:?}", kernel.dims(), x.dims());
    }
    let rows = x.permute((0, 2, 3, 1))?.contiguous()?.reshape((b * h * w, cin))?;
    let y = rows.matmul(&kernel.reshape((cin, cout * 4))?)?;
    y.reshape(vec![b, h, w, cout, 2, 2])?
        .permute(vec![0, 3, 1, 4, 2, 5])?
        .contiguous()?
        .reshape((b, cout, 2 * h, 2 * w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar().unwrap()
    }

    #[test]
    fn forward_matches_candle() {
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 4), (2, 1, 3), (1, 0, 1)] {
            let x = rand(&[2, 3, 9, 12], 1);
            let w = rand(&[4, 3, k, k], 2);
            let bias = rand(&[4], 8);
            let ours = conv2d(&x, &w, &bias, stride, pad).unwrap();
            let theirs = x.conv2d(&w, pad, stride, 1, 1).unwrap().broadcast_add(&bias.reshape((1, 4, 1, 1)).unwrap()).unwrap();
            assert_eq!(ours.dims(), theirs.dims());
            assert!(max_diff(&ours, &theirs) < 1e-4);
        }
        let x = rand(&[2, 3, 4, 5], 3);
        let w = rand(&[3, 2, 2, 2], 4);
        let ours = up_conv2x2(&x, &w).unwrap();
        let theirs = x.conv_transpose2d(&w, 0, 0, 2, 1).unwrap();
        assert!(max_diff(&ours, &theirs) < 1e-5);
    }

    #[test]
    fn row_blocks_cover_the_output() {
        let g = Geometry { cin: 3, h: 10, w: 7, k: 3, stride: 1, pad: 1, ho: 10, wo: 7, block_elems: 0 };
        let spans: Vec<_> = (0..g.ho).step_by(3).map(|a| (a, (a + 3).min(g.ho))).collect();
        let x = rand(&[1, 3, 10, 7], 11).flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let mut whole = vec![0f32; g.patch_len() * g.positions()];
        im2col(&g, &x, 0, g.ho, &mut whole);
        let mut back_whole = vec![0f32; x.len()];
        col2im(&g, &whole, 0, g.ho, &mut back_whole);
        let mut back_blocks = vec![0f32; x.len()];
        for (a, b) in spans {
            let pb = (b - a) * g.wo;
            let mut cols = vec![0f32; g.patch_len() * pb];
            im2col(&g, &x, a, b, &mut cols);
            for r in 0..g.patch_len() {
                let full = &whole[r * g.positions() + a * g.wo..r * g.positions() + b * g.wo];
                assert_eq!(&cols[r * pb..(r + 1) * pb], full);
            }
            col2im(&g, &cols, a, b, &mut back_blocks);
        }
        assert_eq!(back_whole, back_blocks);
    }

    #[test]
    fn blocked_conv_matches_single_block() {
        for (stride, pad) in [(1, 1), (2, 1)] {
            let run = |block: usize| {
                let x = Var::from_tensor(&rand(&[2, 3, 9, 6], 12)).unwrap();
                let w = Var::from_tensor(&rand(&[5, 3, 3, 3], 13)).unwrap();
                let b = Var::from_tensor(&rand(&[5], 14)).unwrap();
                let y = conv2d_blocked(&x, &w, &b, stride, pad, block).unwrap();
                let probe = rand(y.dims(), 15);
                let grads = (&y * &probe).unwrap().sum_all().unwrap().backward().unwrap();
                let flat = |t: &Tensor| t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
                [flat(&y), flat(grads.get(&x).unwrap()), flat(grads.get(&w).unwrap()), flat(grads.get(&b).unwrap())]
            };
            // 27 patch values × 6 columns: a budget of 200 gives one row per block.
            let (one, many) = (run(BLOCK_ELEMS), run(200));
            for (a, b) in one.iter().zip(&many) {
                assert!(a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-5));
            }
        }
    }

    #[test]
    fn gradients_match_candle() {
        let x = Var::from_tensor(&rand(&[2, 3, 8, 10], 5)).unwrap();
        let w = Var::from_tensor(&rand(&[4, 3, 3, 3], 6)).unwrap();
        let bias = Var::from_tensor(&rand(&[4], 9)).unwrap();
        let probe = rand(&[2, 4, 4, 5], 7);
        let ours = conv2d(x.as_tensor(), w.as_tensor(), bias.as_tensor(), 2, 1).unwrap();
        let ours = (ours * &probe).unwrap().sum_all().unwrap();
        let theirs = x.conv2d(&w, 1, 2, 1, 1).unwrap().broadcast_add(&bias.reshape((1, 4, 1, 1)).unwrap()).unwrap();
        let theirs = (theirs * &probe).unwrap().sum_all().unwrap();
        let go = ours.backward().unwrap();
        let gt = theirs.backward().unwrap();
        assert!(max_diff(go.get(&x).unwrap(), gt.get(&x).unwrap()) < 1e-4);
        assert!(max_diff(go.get(&w).unwrap(), gt.get(&w).unwrap()) < 1e-4);
        assert!(max_diff(go.get(&bias).unwrap(), gt.get(&bias).unwrap()) < 1e-4);
    }
}
