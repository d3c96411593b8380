use candle_core::Tensor;

use crate::error::Result;
use crate::layers::{Activation, AdaptiveAvgPool, BatchNorm, Conv2d, ConvSpec, Ctx, Layer, Sequential};
use crate::store::Builder;

use super::Stage;

const EPS: f64 = 1e-3;

/// Conv, BN and optional SiLU stored under `<i>.0` / `<i>.1`.
fn conv_bn(b: &Builder, c_in: usize, c_out: usize, spec: ConvSpec, act: bool) -> Result<Sequential> {
    let mut s = Sequential::default();
    s.push(Conv2d::new(&b.pp(0), c_in, c_out, spec)?);
    s.push(BatchNorm::new(&b.pp(1), c_out, EPS)?);
    if act {
        s.push(Activation::Silu);
    }
    Ok(s)
}

struct SqueezeExcite {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl Layer for SqueezeExcite {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let s = AdaptiveAvgPool {
            out: (1, 1),
            flatten: false,
        }
        .forward(x, ctx)?;
        let s = self.fc1.forward(&s, ctx)?.silu()?;
        let s = candle_nn::ops::sigmoid(&self.fc2.forward(&s, ctx)?)?;
        Ok(x.broadcast_mul(&s)?)
    }
}

struct Block {
    body: Sequential,
    residual: bool,
}

impl Layer for Block {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let y = self.body.forward(x, ctx)?;
        Ok(if self.residual { (y + x)? } else { y })
    }
}

#[derive(Clone, Copy)]
struct StageCfg {
    fused: bool,
    expand: usize,
    stride: usize,
    c_in: usize,
    c_out: usize,
    layers: usize,
}

const STAGES: [StageCfg; 6] = [
    StageCfg {
        fused: true,
        expand: 1,
        stride: 1,
        c_in: 24,
        c_out: 24,
        layers: 2,
    },
    StageCfg {
        fused: true,
        expand: 4,
        stride: 2,
        c_in: 24,
        c_out: 48,
        layers: 4,
    },
    StageCfg {
        fused: true,
        expand: 4,
        stride: 2,
        c_in: 48,
        c_out: 64,
        layers: 4,
    },
    StageCfg {
        fused: false,
        expand: 4,
        stride: 2,
        c_in: 64,
        c_out: 128,
        layers: 6,
    },
    StageCfg {
        fused: false,
        expand: 6,
        stride: 1,
        c_in: 128,
        c_out: 160,
        layers: 9,
    },
    StageCfg {
        fused: false,
        expand: 6,
        stride: 2,
        c_in: 160,
        c_out: 256,
        layers: 15,
    },
];

fn block(b: &Builder, fused: bool, expand: usize, stride: usize, c_in: usize, c_out: usize) -> Result<Block> {
    let b = b.pp("block");
    let hidden = c_in * expand;
    let k3 = ConvSpec::k(3).stride(stride);
    let mut body = Sequential::default();
    if fused {
        if expand == 1 {
            body.push(conv_bn(&b.pp(0), c_in, c_out, k3, true)?);
        } else {
            body.push(conv_bn(&b.pp(0), c_in, hidden, k3, true)?);
            body.push(conv_bn(&b.pp(1), hidden, c_out, ConvSpec::k(1), false)?);
        }
    } else {
        let squeeze = (c_in / 4).max(1);
        let se = b.pp(2);
        body.push(conv_bn(&b.pp(0), c_in, hidden, ConvSpec::k(1), true)?);
        body.push(conv_bn(&b.pp(1), hidden, hidden, k3.groups(hidden), true)?);
        body.push(SqueezeExcite {
            fc1: Conv2d::new(&se.pp("fc1"), hidden, squeeze, ConvSpec::k(1).bias())?,
            fc2: Conv2d::new(&se.pp("fc2"), squeeze, hidden, ConvSpec::k(1).bias())?,
        });
        body.push(conv_bn(&b.pp(3), hidden, c_out, ConvSpec::k(1), false)?);
    }
    Ok(Block {
        body,
        residual: stride == 1 && c_in == c_out,
    })
}

/// EfficientNetV2-S up to global pooling (1280 features). Stochastic depth is not used.
pub fn build(b: &Builder, c_in: usize) -> Result<Vec<Stage>> {
    let f = b.pp("features");
    let mut stages = vec![Stage::new(
        "features.0",
        conv_bn(&f.pp(0), c_in, 24, ConvSpec::k(3).stride(2), true)?,
    )];
    for (i, cfg) in STAGES.iter().enumerate() {
        let sb = f.pp(i + 1);
        let mut s = Sequential::default();
        for j in 0..cfg.layers {
            let (c_in, stride) = if j == 0 { (cfg.c_in, cfg.stride) } else { (cfg.c_out, 1) };
            s.push(block(&sb.pp(j), cfg.fused, cfg.expand, stride, c_in, cfg.c_out)?);
        }
        stages.push(Stage::new(format!("features.{}", i + 1), s));
    }
    stages.push(Stage::new(
        "features.7",
        conv_bn(&f.pp(7), 256, 1280, ConvSpec::k(1), true)?,
    ));
    stages.push(Stage::new("avgpool", AdaptiveAvgPool::global()));
    Ok(stages)
}
