use candle_core::Tensor;

use crate::error::Result;
use crate::layers::{Activation, AdaptiveAvgPool, BatchNorm, Conv2d, ConvSpec, Ctx, Layer, MaxPool, Sequential};
use crate::store::Builder;

use super::Stage;

const EPS: f64 = 1e-5;

struct Bottleneck {
    body: Sequential,
    downsample: Option<Sequential>,
}

impl Bottleneck {
    fn new(b: &Builder, c_in: usize, width: usize, stride: usize) -> Result<Self> {
        let c_out = width * 4;
        let mut body = Sequential::default();
        body.push(Conv2d::new(&b.pp("conv1"), c_in, width, ConvSpec::k(1))?);
        body.push(BatchNorm::new(&b.pp("bn1"), width, EPS)?);
        body.push(Activation::Relu);
        body.push(Conv2d::new(
            &b.pp("conv2"),
            width,
            width,
            ConvSpec::k(3).stride(stride),
        )?);
        body.push(BatchNorm::new(&b.pp("bn2"), width, EPS)?);
        body.push(Activation::Relu);
        body.push(Conv2d::new(&b.pp("conv3"), width, c_out, ConvSpec::k(1))?);
        body.push(BatchNorm::new(&b.pp("bn3"), c_out, EPS)?);
        let downsample = if stride != 1 || c_in != c_out {
            let d = b.pp("downsample");
            let mut s = Sequential::default();
            s.push(Conv2d::new(&d.pp(0), c_in, c_out, ConvSpec::k(1).stride(stride))?);
            s.push(BatchNorm::new(&d.pp(1), c_out, EPS)?);
            Some(s)
        } else {
            None
        };
        Ok(Self { body, downsample })
    }
}

impl Layer for Bottleneck {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let y = self.body.forward(x, ctx)?;
        let skip = match &self.downsample {
            Some(d) => d.forward(x, ctx)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

/// ResNet-50 up to global pooling (2048 features).
pub fn build(b: &Builder, c_in: usize) -> Result<Vec<Stage>> {
    let mut stages = vec![
        Stage::new(
            "conv1",
            Conv2d::new(&b.pp("conv1"), c_in, 64, ConvSpec::k(7).stride(2))?,
        ),
        Stage::new("bn1", BatchNorm::new(&b.pp("bn1"), 64, EPS)?),
        Stage::new("relu", Activation::Relu),
        Stage::new("maxpool", MaxPool::new(3, 2, 1)),
    ];
    let mut c_in = 64;
    for (i, (blocks, width, stride)) in [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)]
        .into_iter()
        .enumerate()
    {
        let name = format!("layer{}", i + 1);
        let lb = b.pp(&name);
        let mut layer = Sequential::default();
        for j in 0..blocks {
            layer.push(Bottleneck::new(
                &lb.pp(j),
                c_in,
                width,
                if j == 0 { stride } else { 1 },
            )?);
            c_in = width * 4;
        }
        stages.push(Stage::new(name, layer));
    }
    stages.push(Stage::new("avgpool", AdaptiveAvgPool::global()));
    Ok(stages)
}
