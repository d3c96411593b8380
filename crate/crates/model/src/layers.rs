//! Building blocks shared by every backbone and the head.

use candle_core::{Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::norm;
use crate::pool;
use crate::store::{Builder, Init};
use crate::unfold;

/// Per-call forward state.
pub struct Ctx {
    /// Batch normalisation uses and records batch statistics.
    pub train: bool,
    pub dropout: bool,
    /// Overrides each normalisation layer's running-average momentum.
    pub stat_momentum: Option<f64>,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            train: false,
            dropout: false,
            stat_momentum: None,
            rng: rand::SeedableRng::seed_from_u64(0),
        }
    }

    pub fn train(rng: ChaCha8Rng) -> Self {
        Self {
            train: true,
            dropout: true,
            stat_momentum: None,
            rng,
        }
    }

    /// Batch statistics without dropout, folded into the running averages with `momentum`.
    pub fn calibrate(momentum: f64) -> Self {
        Self {
            train: true,
            dropout: false,
            stat_momentum: Some(momentum),
            rng: rand::SeedableRng::seed_from_u64(0),
        }
    }
}

pub trait Layer: Send + Sync {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor>;
}

/// Layers applied one after another.
#[derive(Default)]
pub struct Sequential(pub Vec<Box<dyn Layer>>);

impl Sequential {
    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.0.push(Box::new(layer));
    }
}

impl Layer for Sequential {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut x = x.clone();
        for layer in &self.0 {
            x = layer.forward(&x, ctx)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Sigmoid,
}

impl Layer for Activation {
    fn forward(&self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        Ok(match self {
            Self::Relu => x.relu()?,
            Self::Silu => x.silu()?,
            Self::Sigmoid => candle_nn::ops::sigmoid(x)?,
        })
    }
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: (usize, usize),
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Square kernel with "same" padding for stride 1, no bias.
    pub fn k(kernel: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride: 1,
            pad: (kernel / 2, kernel / 2),
            groups: 1,
            bias: false,
        }
    }

    pub fn rect(kh: usize, kw: usize) -> Self {
        Self {
            kernel: (kh, kw),
            stride: 1,
            pad: (kh / 2, kw / 2),
            groups: 1,
            bias: false,
        }
    }

    pub fn stride(self, stride: usize) -> Self {
        Self { stride, ..self }
    }

    pub fn pad(self, pad: usize) -> Self {
        Self {
            pad: (pad, pad),
            ..self
        }
    }

    pub fn groups(self, groups: usize) -> Self {
        Self { groups, ..self }
    }

    pub fn bias(self) -> Self {
        Self { bias: true, ..self }
    }
}

pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub spec: ConvSpec,
}

impl Conv2d {
    pub fn new(b: &Builder, c_in: usize, c_out: usize, spec: ConvSpec) -> Result<Self> {
        let (kh, kw) = spec.kernel;
        // Kaiming normal, fan-out mode.
        let std = (2.0 / (c_out * kh * kw) as f64).sqrt();
        let weight = b.param("weight", &[c_out, c_in / spec.groups, kh, kw], Init::Normal { std })?;
        let bias = if spec.bias {
            Some(b.param("bias", &[c_out], Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Self { weight, bias, spec })
    }
}

impl Layer for Conv2d {
    fn forward(&self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        let s = self.spec;
        let w = self.weight.as_tensor();
        let y = if s.groups == 1 {
            unfold::conv2d(x, w, s.stride, s.pad)?
        } else if s.pad.0 == s.pad.1 {
            x.conv2d(w, s.pad.0, s.stride, 1, s.groups)?
        } else {
            x.pad_with_zeros(2, s.pad.0, s.pad.0)?
                .pad_with_zeros(3, s.pad.1, s.pad.1)?
                .conv2d(w, 0, s.stride, 1, s.groups)?
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?,
            None => y,
        })
    }
}

/// Batch normalisation over dimension 1 of 2-D or 4-D inputs.
pub struct BatchNorm {
    pub weight: Var,
    pub bias: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(b: &Builder, channels: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            weight: b.param("weight", &[channels], Init::Const(1.0))?,
            bias: b.param("bias", &[channels], Init::Const(0.0))?,
            running_mean: b.buffer("running_mean", &[channels], Init::Const(0.0))?,
            running_var: b.buffer("running_var", &[channels], Init::Const(1.0))?,
            eps,
            momentum: 0.1,
        })
    }
}

impl Layer for BatchNorm {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let c = x.dim(1)?;
        if ctx.train {
            let x = x.contiguous()?;
            let stats = x.detach().apply_op1_no_bwd(&norm::Moments)?;
            let n = x.elem_count() / c;
            let m = ctx.stat_momentum.unwrap_or(self.momentum);
            let unbiased = (stats.get(1)? * (n as f64 / (n.max(2) - 1) as f64))?;
            self.running_mean
                .set(&((self.running_mean.as_tensor() * (1.0 - m))? + (stats.get(0)? * m)?)?)?;
            self.running_var
                .set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?)?;
            let op = norm::BatchNormTrain { eps: self.eps };
            return Ok(x.apply_op3(self.weight.as_tensor(), self.bias.as_tensor(), op)?);
        }
        let view: Vec<usize> = (0..x.rank()).map(|d| if d == 1 { c } else { 1 }).collect();
        let scale = ((self.running_var.as_tensor() + self.eps)?.sqrt()?.recip()? * self.weight.as_tensor())?;
        let shift = (self.bias.as_tensor() - (self.running_mean.as_tensor() * &scale)?)?;
        Ok(x.broadcast_mul(&scale.reshape(view.as_slice())?)?
            .broadcast_add(&shift.reshape(view.as_slice())?)?)
    }
}

pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(b: &Builder, c_in: usize, c_out: usize) -> Result<Self> {
        let bound = 1.0 / (c_in as f64).sqrt();
        Ok(Self {
            weight: b.param("weight", &[c_out, c_in], Init::Uniform { bound })?,
            bias: b.param("bias", &[c_out], Init::Uniform { bound })?,
        })
    }

    pub fn zeros(b: &Builder, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: b.param("weight", &[c_out, c_in], Init::Const(0.0))?,
            bias: b.param("bias", &[c_out], Init::Const(0.0))?,
        })
    }
}

impl Layer for Linear {
    fn forward(&self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

/// Inverted dropout drawing its mask from the context stream.
pub struct Dropout(pub f64);

impl Layer for Dropout {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        if !ctx.dropout || self.0 == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.0;
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| {
                if ctx.rng.random::<f64>() < keep {
                    (1.0 / keep) as f32
                } else {
                    0.0
                }
            })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }
}

pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub ceil: bool,
}

impl MaxPool {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
            ceil: false,
        }
    }
}

impl Layer for MaxPool {
    fn forward(&self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        Ok(pool::max_pool2d(x, self.kernel, self.stride, self.pad, self.ceil)?)
    }
}

pub struct AvgPool {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub include_pad: bool,
}

impl Layer for AvgPool {
    fn forward(&self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        Ok(pool::avg_pool2d(
            x,
            self.kernel,
            self.stride,
            self.pad,
            self.include_pad,
        )?)
    }
}

/// Adaptive average pooling to a fixed grid; `flatten` drops the grid for 1x1.
pub struct AdaptiveAvgPool {
    pub out: (usize, usize),
    pub flatten: bool,
}

impl AdaptiveAvgPool {
    pub fn global() -> Self {
        Self {
            out: (1, 1),
            flatten: true,
        }
    }
}

impl Layer for AdaptiveAvgPool {
    fn forward(&self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let y = if self.out == (1, 1) {
            // Same arithmetic as the windowed op, but avoids a copy per plane.
            (x.flatten_from(2)?.sum_keepdim(2)?.unsqueeze(3)? / (h * w) as f64)?
        } else {
            pool::adaptive_avg_pool2d(x, self.out.0, self.out.1)?
        };
        Ok(if self.flatten { y.flatten_from(1)? } else { y })
    }
}

pub struct Flatten;

impl Layer for Flatten {
    fn forward(&self, x: &Tensor, _ctx: &mut Ctx) -> Result<Tensor> {
        Ok(x.flatten_from(1)?)
    }
}

/// Concatenates branch outputs along channels.
pub struct Concat(pub Vec<Box<dyn Layer>>);

impl Layer for Concat {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let outs = self.0.iter().map(|l| l.forward(x, ctx)).collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&outs, 1)?)
    }
}

/// Weighted cross-entropy: `sum_i w[y_i] * -log p(y_i | x_i) / B`.
pub fn weighted_cross_entropy(logits: &Tensor, labels: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let b = logits.dim(0)?;
    let log_p = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = log_p.gather(&labels.unsqueeze(1)?, 1)?.squeeze(1)?;
    let w = weights.index_select(labels, 0)?;
    Ok(((picked * w)?.sum_all()? / -(b as f64))?)
}
