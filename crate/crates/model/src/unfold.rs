//! Patch extraction (im2col) with its adjoint as the backward pass.
//!
//! Convolution becomes unfold followed by a batched matrix product, whose
//! gradients candle already computes efficiently.

use std::ops::AddAssign;

use candle_core::{bail, CpuStorage, CustomOp1, Layout, Result, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Unfold {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: (usize, usize),
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Unfold {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = self.kernel;
        (
            (h + 2 * self.pad.0 - kh) / self.stride + 1,
            (w + 2 * self.pad.1 - kw) / self.stride + 1,
        )
    }

    fn dims(&self, shape: &Shape) -> Result<Dims> {
        let (n, c, h, w) = shape.dims4()?;
        let (kh, kw) = self.kernel;
        if h + 2 * self.pad.0 < kh || w + 2 * self.pad.1 < kw {
            bail!("kernel {kh}x{kw} larger than padded input {h}x{w}");
        }
        let (oh, ow) = self.output_size(h, w);
        Ok(Dims { n, c, h, w, oh, ow })
    }

    /// Visits each run of output columns that reads one image row:
    /// `(column offset, input offset, length)`, stepping `stride` through the input.
    fn for_each_run(&self, d: Dims, mut f: impl FnMut(usize, usize, usize)) {
        let (kh, kw) = self.kernel;
        let (s, ph, pw) = (self.stride, self.pad.0, self.pad.1);
        let k = d.c * kh * kw;
        let l = d.oh * d.ow;
        for j in 0..kw {
            // Output columns whose input x = ox * s + j - pw lies in [0, w).
            let lo = pw.saturating_sub(j).div_ceil(s);
            let hi = ((d.w + pw).saturating_sub(j)).div_ceil(s).min(d.ow);
            if lo >= hi {
                continue;
            }
            for b in 0..d.n {
                for ch in 0..d.c {
                    let in_base = (b * d.c + ch) * d.h * d.w;
                    for i in 0..kh {
                        let col_base = (b * k + (ch * kh + i) * kw + j) * l;
                        for oy in 0..d.oh {
                            let y = oy * s + i;
                            if y < ph || y - ph >= d.h {
                                continue;
                            }
                            let x0 = lo * s + j - pw;
                            f(col_base + oy * d.ow + lo, in_base + (y - ph) * d.w + x0, hi - lo);
                        }
                    }
                }
            }
        }
    }

    fn unfold<T: Copy + Default>(&self, x: &[T], d: Dims) -> Vec<T> {
        let (kh, kw) = self.kernel;
        let s = self.stride;
        let mut out = vec![T::default(); d.n * d.c * kh * kw * d.oh * d.ow];
        self.for_each_run(d, |o, i, len| {
            if s == 1 {
                out[o..o + len].copy_from_slice(&x[i..i + len]);
            } else {
                for (dst, src) in out[o..o + len].iter_mut().zip(x[i..].iter().step_by(s)) {
                    *dst = *src;
                }
            }
        });
        out
    }

    fn fold<T: Copy + Default + AddAssign>(&self, cols: &[T], d: Dims) -> Vec<T> {
        let s = self.stride;
        let mut out = vec![T::default(); d.n * d.c * d.h * d.w];
        self.for_each_run(d, |o, i, len| {
            for (dst, src) in out[i..].iter_mut().step_by(s).zip(&cols[o..o + len]) {
                *dst += *src;
            }
        });
        out
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => bail!("unfold expects a contiguous input"),
    }
}

impl CustomOp1 for Unfold {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = self.dims(layout.shape())?;
        let shape = Shape::from((d.n, d.c * self.kernel.0 * self.kernel.1, d.oh * d.ow));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.unfold(contiguous(v, layout)?, d)),
            CpuStorage::F64(v) => CpuStorage::F64(self.unfold(contiguous(v, layout)?, d)),
            _ => bail!("unfold supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<Option<Tensor>> {
        let fold = Fold {
            unfold: *self,
            input: arg.shape().clone(),
        };
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&fold)?))
    }
}

/// Sums columns back onto the image; the adjoint of [`Unfold`].
struct Fold {
    unfold: Unfold,
    input: Shape,
}

impl CustomOp1 for Fold {
    fn name(&self) -> &'static str {
        "fold"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = self.unfold.dims(&self.input)?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.unfold.fold(contiguous(v, layout)?, d)),
            CpuStorage::F64(v) => CpuStorage::F64(self.unfold.fold(contiguous(v, layout)?, d)),
            _ => bail!("fold supports f32 and f64 only"),
        };
        Ok((out, self.input.clone()))
    }
}

/// Ungrouped 2-D convolution as unfold plus matmul. `weight` is `(O, C, kh, kw)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, pad: (usize, usize)) -> Result<Tensor> {
    let (o, c, kh, kw) = weight.dims4()?;
    let (n, _, h, w) = x.dims4()?;
    let op = Unfold {
        kernel: (kh, kw),
        stride,
        pad,
    };
    let (oh, ow) = op.output_size(h, w);
    let cols = x.contiguous()?.apply_op1(op)?;
    let y = weight.reshape((o, c * kh * kw))?.broadcast_matmul(&cols)?;
    y.reshape((n, o, oh, ow))
}
