//! Training-mode batch normalisation as one fused op.
//!
//! Written out with broadcasts, the gradient needs reductions over the
//! batch and spatial axes together, which candle performs slowly on CPU.

use candle_core::{bail, CpuStorage, CustomOp1, CustomOp3, Layout, Result, Shape, Tensor};

use crate::pool::FromF64;

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => bail!("batch norm expects contiguous inputs"),
    }
}

/// `(N, C, rest)` view of an input with channels on dimension 1.
fn geometry(shape: &Shape) -> Result<(usize, usize, usize)> {
    let dims = shape.dims();
    if dims.len() < 2 {
        bail!("batch norm needs at least two dimensions, got {dims:?}");
    }
    Ok((dims[0], dims[1], dims[2..].iter().product()))
}

/// Per-channel mean and biased variance, accumulated in f64.
fn moments<T: Copy + Into<f64>>(x: &[T], (n, c, r): (usize, usize, usize)) -> (Vec<f64>, Vec<f64>) {
    let count = (n * r) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let planes = || (0..n).map(move |b| &x[(b * c + ch) * r..(b * c + ch + 1) * r]);
        let m = planes().flatten().map(|v| (*v).into()).sum::<f64>() / count;
        var[ch] = planes().flatten().map(|v| ((*v).into() - m).powi(2)).sum::<f64>() / count;
        mean[ch] = m;
    }
    (mean, var)
}

/// Normalises `x` with batch statistics, then scales by `weight` and shifts by `bias`.
pub struct BatchNormTrain {
    pub eps: f64,
}

impl BatchNormTrain {
    fn fwd<T: Copy + Into<f64> + FromF64>(&self, x: &[T], w: &[T], b: &[T], g: (usize, usize, usize)) -> Vec<T> {
        let (n, c, r) = g;
        let (mean, var) = moments(x, g);
        let mut out = Vec::with_capacity(x.len());
        for bi in 0..n {
            for ch in 0..c {
                let scale = w[ch].into() / (var[ch] + self.eps).sqrt();
                let shift = b[ch].into() - mean[ch] * scale;
                let plane = &x[(bi * c + ch) * r..(bi * c + ch + 1) * r];
                out.extend(plane.iter().map(|v| T::from_f64((*v).into() * scale + shift)));
            }
        }
        out
    }
}

impl CustomOp3 for BatchNormTrain {
    fn name(&self) -> &'static str {
        "batch-norm-train"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let g = geometry(l1.shape())?;
        if l2.shape().elem_count() != g.1 || l3.shape().elem_count() != g.1 {
            bail!("batch norm affine parameters must have {} entries", g.1);
        }
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(w), CpuStorage::F32(b)) => {
                CpuStorage::F32(self.fwd(contiguous(x, l1)?, contiguous(w, l2)?, contiguous(b, l3)?, g))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w), CpuStorage::F64(b)) => {
                CpuStorage::F64(self.fwd(contiguous(x, l1)?, contiguous(w, l2)?, contiguous(b, l3)?, g))
            }
            _ => bail!("batch norm supports matching f32 or f64 inputs only"),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        weight: &Tensor,
        _bias: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        // One packed tensor: dx followed by dweight and dbias.
        let packed = x.apply_op3_no_bwd(weight, &grad.contiguous()?, &BatchNormGrad { eps: self.eps })?;
        let n = x.elem_count();
        let c = weight.elem_count();
        let dx = packed.narrow(0, 0, n)?.reshape(x.shape())?;
        let dw = packed.narrow(0, n, c)?.reshape(weight.shape())?;
        let db = packed.narrow(0, n + c, c)?.reshape(weight.shape())?;
        Ok((Some(dx), Some(dw), Some(db)))
    }
}

struct BatchNormGrad {
    eps: f64,
}

impl BatchNormGrad {
    fn run<T: Copy + Into<f64> + FromF64>(&self, x: &[T], w: &[T], dy: &[T], g: (usize, usize, usize)) -> Vec<T> {
        let (n, c, r) = g;
        let count = (n * r) as f64;
        let (mean, var) = moments(x, g);
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut dw = vec![0.0; c];
        let mut db = vec![0.0; c];
        for bi in 0..n {
            for ch in 0..c {
                let at = (bi * c + ch) * r..(bi * c + ch + 1) * r;
                for (xv, gv) in x[at.clone()].iter().zip(&dy[at]) {
                    let gv: f64 = (*gv).into();
                    db[ch] += gv;
                    dw[ch] += gv * ((*xv).into() - mean[ch]) * inv[ch];
                }
            }
        }
        let mut out = Vec::with_capacity(x.len() + 2 * c);
        for bi in 0..n {
            for ch in 0..c {
                let k = w[ch].into() * inv[ch] / count;
                let at = (bi * c + ch) * r..(bi * c + ch + 1) * r;
                out.extend(x[at.clone()].iter().zip(&dy[at]).map(|(xv, gv)| {
                    let xhat = ((*xv).into() - mean[ch]) * inv[ch];
                    T::from_f64(k * (count * (*gv).into() - db[ch] - xhat * dw[ch]))
                }));
            }
        }
        out.extend(dw.into_iter().chain(db).map(T::from_f64));
        out
    }
}

impl CustomOp3 for BatchNormGrad {
    fn name(&self) -> &'static str {
        "batch-norm-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let g = geometry(l1.shape())?;
        let len = l1.shape().elem_count() + 2 * g.1;
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(w), CpuStorage::F32(dy)) => {
                CpuStorage::F32(self.run(contiguous(x, l1)?, contiguous(w, l2)?, contiguous(dy, l3)?, g))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w), CpuStorage::F64(dy)) => {
                CpuStorage::F64(self.run(contiguous(x, l1)?, contiguous(w, l2)?, contiguous(dy, l3)?, g))
            }
            _ => bail!("batch norm supports matching f32 or f64 inputs only"),
        };
        Ok((out, Shape::from(len)))
    }
}

/// Per-channel batch mean and biased variance, packed as a `(2, C)` tensor.
pub struct Moments;

impl CustomOp1 for Moments {
    fn name(&self) -> &'static str {
        "batch-moments"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = geometry(layout.shape())?;
        let pack = |(m, v): (Vec<f64>, Vec<f64>)| m.into_iter().chain(v);
        let out = match storage {
            CpuStorage::F32(x) => CpuStorage::F32(pack(moments(contiguous(x, layout)?, g)).map(|v| v as f32).collect()),
            CpuStorage::F64(x) => CpuStorage::F64(pack(moments(contiguous(x, layout)?, g)).collect()),
            _ => bail!("batch norm supports f32 and f64 only"),
        };
        Ok((out, Shape::from((2, g.1))))
    }
}
