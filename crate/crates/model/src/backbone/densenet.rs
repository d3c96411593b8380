use candle_core::Tensor;

use crate::error::Result;
use crate::layers::{
    Activation, AdaptiveAvgPool, AvgPool, BatchNorm, Conv2d, ConvSpec, Ctx, Layer, MaxPool, Sequential,
};
use crate::store::Builder;

use super::Stage;

const EPS: f64 = 1e-5;
const GROWTH: usize = 32;
const BN_SIZE: usize = 4;

/// Each layer appends `GROWTH` channels to everything before it.
struct DenseBlock(Vec<Sequential>);

impl DenseBlock {
    fn new(b: &Builder, layers: usize, c_in: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(layers);
        for i in 0..layers {
            let lb = b.pp(format!("denselayer{}", i + 1));
            let c = c_in + i * GROWTH;
            let mut s = Sequential::default();
            s.push(BatchNorm::new(&lb.pp("norm1"), c, EPS)?);
            s.push(Activation::Relu);
            s.push(Conv2d::new(&lb.pp("conv1"), c, BN_SIZE * GROWTH, ConvSpec::k(1))?);
            s.push(BatchNorm::new(&lb.pp("norm2"), BN_SIZE * GROWTH, EPS)?);
            s.push(Activation::Relu);
            s.push(Conv2d::new(&lb.pp("conv2"), BN_SIZE * GROWTH, GROWTH, ConvSpec::k(3))?);
            out.push(s);
        }
        Ok(Self(out))
    }
}

impl Layer for DenseBlock {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut x = x.clone();
        for layer in &self.0 {
            let y = layer.forward(&x, ctx)?;
            x = Tensor::cat(&[&x, &y], 1)?;
        }
        Ok(x)
    }
}

/// DenseNet-121 up to global pooling (1024 features).
pub fn build(b: &Builder, c_in: usize) -> Result<Vec<Stage>> {
    let f = b.pp("features");
    let mut stages = vec![
        Stage::new(
            "features.conv0",
            Conv2d::new(&f.pp("conv0"), c_in, 64, ConvSpec::k(7).stride(2))?,
        ),
        Stage::new("features.norm0", BatchNorm::new(&f.pp("norm0"), 64, EPS)?),
        Stage::new("features.relu0", Activation::Relu),
        Stage::new("features.pool0", MaxPool::new(3, 2, 1)),
    ];
    let mut c = 64;
    for (i, layers) in [6, 12, 24, 16].into_iter().enumerate() {
        let name = format!("denseblock{}", i + 1);
        stages.push(Stage::new(
            format!("features.{name}"),
            DenseBlock::new(&f.pp(&name), layers, c)?,
        ));
        c += layers * GROWTH;
        if i < 3 {
            let name = format!("transition{}", i + 1);
            let t = f.pp(&name);
            let mut s = Sequential::default();
            s.push(BatchNorm::new(&t.pp("norm"), c, EPS)?);
            s.push(Activation::Relu);
            s.push(Conv2d::new(&t.pp("conv"), c, c / 2, ConvSpec::k(1))?);
            s.push(AvgPool {
                kernel: 2,
                stride: 2,
                pad: 0,
                include_pad: true,
            });
            stages.push(Stage::new(format!("features.{name}"), s));
            c /= 2;
        }
    }
    let mut norm5 = Sequential::default();
    norm5.push(BatchNorm::new(&f.pp("norm5"), c, EPS)?);
    norm5.push(Activation::Relu);
    stages.push(Stage::new("features.norm5", norm5));
    stages.push(Stage::new("avgpool", AdaptiveAvgPool::global()));
    Ok(stages)
}
