//! Max and average pooling with padding and a hand-written backward pass.
//!
//! candle only differentiates pooling when kernel and stride coincide, which
//! rules out the 3x3/stride-2 and padded pools of most backbones. Each output
//! cell here is described by one window per axis, which covers plain, padded
//! and adaptive pooling with a single kernel.

use std::sync::Arc;

use candle_core::{bail, CpuStorage, CustomOp1, CustomOp2, Layout, Result, Shape, Tensor};

/// Half-open input range `[start, end)` and the divisor it contributes to averages.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Window {
    start: usize,
    end: usize,
    divisor: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Reduce {
    Max,
    Avg,
}

#[derive(Clone, Debug)]
struct Pool {
    reduce: Reduce,
    rows: Arc<Vec<Window>>,
    cols: Arc<Vec<Window>>,
}

fn strided(len: usize, kernel: usize, stride: usize, pad: usize, ceil: bool, include_pad: bool) -> Vec<Window> {
    let span = len + 2 * pad - kernel;
    let mut out = if ceil {
        span.div_ceil(stride) + 1
    } else {
        span / stride + 1
    };
    // A window that would start entirely inside the right padding is dropped.
    if ceil && (out - 1) * stride >= len + pad {
        out -= 1;
    }
    (0..out)
        .map(|o| {
            let start = (o * stride) as isize - pad as isize;
            let padded_end = (start + kernel as isize).min((len + pad) as isize);
            let lo = start.max(0) as usize;
            let hi = (padded_end as usize).min(len);
            let divisor = if include_pad {
                (padded_end - start) as usize
            } else {
                hi - lo
            };
            Window {
                start: lo,
                end: hi,
                divisor,
            }
        })
        .collect()
}

fn adaptive(len: usize, out: usize) -> Vec<Window> {
    (0..out)
        .map(|o| {
            let start = o * len / out;
            let end = ((o + 1) * len).div_ceil(out);
            Window {
                start,
                end,
                divisor: end - start,
            }
        })
        .collect()
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => bail!("pooling expects a contiguous input"),
    }
}

impl Pool {
    fn output_dims(&self, layout: &Layout) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, w) = layout.shape().dims4()?;
        let fits = |ws: &[Window], len: usize| ws.last().is_some_and(|w| w.end <= len);
        if !fits(&self.rows, h) || !fits(&self.cols, w) {
            bail!("pooling windows built for a different input size");
        }
        Ok((n, c, h, w))
    }

    fn forward<T: Copy + PartialOrd + Into<f64> + FromF64>(
        &self,
        x: &[T],
        planes: usize,
        h: usize,
        w: usize,
    ) -> Vec<T> {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for r in self.rows.iter() {
                for c in self.cols.iter() {
                    out.push(match self.reduce {
                        Reduce::Max => {
                            let mut best = plane[r.start * w + c.start];
                            for y in r.start..r.end {
                                for v in &plane[y * w + c.start..y * w + c.end] {
                                    if *v > best {
                                        best = *v;
                                    }
                                }
                            }
                            best
                        }
                        Reduce::Avg => {
                            let mut acc = 0.0f64;
                            for y in r.start..r.end {
                                for v in &plane[y * w + c.start..y * w + c.end] {
                                    acc += (*v).into();
                                }
                            }
                            T::from_f64(acc / (r.divisor * c.divisor) as f64)
                        }
                    });
                }
            }
        }
        out
    }

    fn backward<T: Copy + PartialOrd + Into<f64> + FromF64>(
        &self,
        x: &[T],
        grad: &[T],
        planes: usize,
        h: usize,
        w: usize,
    ) -> Vec<T> {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut acc = vec![0.0f64; planes * h * w];
        for p in 0..planes {
            let plane = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut acc[p * h * w..(p + 1) * h * w];
            for (i, r) in self.rows.iter().enumerate() {
                for (j, c) in self.cols.iter().enumerate() {
                    let g: f64 = grad[(p * oh + i) * ow + j].into();
                    match self.reduce {
                        Reduce::Max => {
                            let mut at = r.start * w + c.start;
                            for y in r.start..r.end {
                                for k in y * w + c.start..y * w + c.end {
                                    if plane[k] > plane[at] {
                                        at = k;
                                    }
                                }
                            }
                            dst[at] += g;
                        }
                        Reduce::Avg => {
                            let share = g / (r.divisor * c.divisor) as f64;
                            for y in r.start..r.end {
                                for v in &mut dst[y * w + c.start..y * w + c.end] {
                                    *v += share;
                                }
                            }
                        }
                    }
                }
            }
        }
        acc.into_iter().map(T::from_f64).collect()
    }
}

pub(crate) trait FromF64 {
    fn from_f64(v: f64) -> Self;
}

impl FromF64 for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl FromF64 for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl CustomOp1 for Pool {
    fn name(&self) -> &'static str {
        "window-pool"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = self.output_dims(layout)?;
        let shape = Shape::from((n, c, self.rows.len(), self.cols.len()));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.forward(contiguous(v, layout)?, n * c, h, w)),
            CpuStorage::F64(v) => CpuStorage::F64(self.forward(contiguous(v, layout)?, n * c, h, w)),
            _ => bail!("pooling supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<Option<Tensor>> {
        let grad = arg.apply_op2_no_bwd(&grad_res.contiguous()?, &PoolGrad(self.clone()))?;
        Ok(Some(grad))
    }
}

struct PoolGrad(Pool);

impl CustomOp2 for PoolGrad {
    fn name(&self) -> &'static str {
        "window-pool-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = self.0.output_dims(l1)?;
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(g)) => {
                CpuStorage::F32(self.0.backward(contiguous(x, l1)?, contiguous(g, l2)?, n * c, h, w))
            }
            (CpuStorage::F64(x), CpuStorage::F64(g)) => {
                CpuStorage::F64(self.0.backward(contiguous(x, l1)?, contiguous(g, l2)?, n * c, h, w))
            }
            _ => bail!("pooling gradient needs matching f32 or f64 inputs"),
        };
        Ok((out, l1.shape().clone()))
    }
}

fn apply(x: &Tensor, reduce: Reduce, rows: Vec<Window>, cols: Vec<Window>) -> Result<Tensor> {
    let pool = Pool {
        reduce,
        rows: Arc::new(rows),
        cols: Arc::new(cols),
    };
    x.contiguous()?.apply_op1(pool)
}

/// Square max pooling; padded cells never win.
pub fn max_pool2d(x: &Tensor, kernel: usize, stride: usize, pad: usize, ceil: bool) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let rows = strided(h, kernel, stride, pad, ceil, false);
    let cols = strided(w, kernel, stride, pad, ceil, false);
    apply(x, Reduce::Max, rows, cols)
}

/// Square average pooling; `include_pad` counts zero padding in the divisor.
pub fn avg_pool2d(x: &Tensor, kernel: usize, stride: usize, pad: usize, include_pad: bool) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let rows = strided(h, kernel, stride, pad, false, include_pad);
    let cols = strided(w, kernel, stride, pad, false, include_pad);
    apply(x, Reduce::Avg, rows, cols)
}

/// Averages into a fixed `out_h` x `out_w` grid of possibly overlapping cells.
pub fn adaptive_avg_pool2d(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    apply(x, Reduce::Avg, adaptive(h, out_h), adaptive(w, out_w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_match_known_sizes() {
        // 3x3 stride-2 pad-1 pooling of 112 gives 56; of 147 without padding gives 73.
        assert_eq!(strided(112, 3, 2, 1, false, false).len(), 56);
        assert_eq!(strided(147, 3, 2, 0, false, false).len(), 73);
        let w = strided(5, 3, 1, 1, false, true);
        assert_eq!(
            w[0],
            Window {
                start: 0,
                end: 2,
                divisor: 3
            }
        );
        let w = strided(5, 3, 1, 1, false, false);
        assert_eq!(w[0].divisor, 2);
        assert_eq!(
            adaptive(7, 3),
            vec![
                Window {
                    start: 0,
                    end: 3,
                    divisor: 3
                },
                Window {
                    start: 2,
                    end: 5,
                    divisor: 3
                },
                Window {
                    start: 4,
                    end: 7,
                    divisor: 3
                },
            ]
        );
    }
}
