use crate::error::Result;
use crate::layers::{
    Activation, AdaptiveAvgPool, AvgPool, BatchNorm, Concat, Conv2d, ConvSpec, Layer, MaxPool, Sequential,
};
use crate::store::Builder;

use super::Stage;

/// Conv without bias, BN (eps 1e-3), ReLU, stored under `<name>.conv` / `<name>.bn`.
fn basic(b: &Builder, name: &str, c_in: usize, c_out: usize, spec: ConvSpec) -> Result<Sequential> {
    let n = b.pp(name);
    let mut s = Sequential::default();
    s.push(Conv2d::new(&n.pp("conv"), c_in, c_out, spec)?);
    s.push(BatchNorm::new(&n.pp("bn"), c_out, 1e-3)?);
    s.push(Activation::Relu);
    Ok(s)
}

fn chain(parts: Vec<Sequential>) -> Sequential {
    Sequential(parts.into_iter().map(|p| Box::new(p) as Box<dyn Layer>).collect())
}

fn pooled(pool: impl Layer + 'static, rest: Option<Sequential>) -> Sequential {
    let mut s = Sequential::default();
    s.push(pool);
    if let Some(r) = rest {
        s.push(r);
    }
    s
}

fn avg3() -> AvgPool {
    AvgPool {
        kernel: 3,
        stride: 1,
        pad: 1,
        include_pad: true,
    }
}

fn boxed(parts: Vec<Sequential>) -> Vec<Box<dyn Layer>> {
    parts.into_iter().map(|p| Box::new(p) as Box<dyn Layer>).collect()
}

fn inception_a(b: &Builder, c_in: usize, pool_features: usize) -> Result<Concat> {
    let k = ConvSpec::k;
    Ok(Concat(boxed(vec![
        basic(b, "branch1x1", c_in, 64, k(1))?,
        chain(vec![
            basic(b, "branch5x5_1", c_in, 48, k(1))?,
            basic(b, "branch5x5_2", 48, 64, k(5))?,
        ]),
        chain(vec![
            basic(b, "branch3x3dbl_1", c_in, 64, k(1))?,
            basic(b, "branch3x3dbl_2", 64, 96, k(3))?,
            basic(b, "branch3x3dbl_3", 96, 96, k(3))?,
        ]),
        pooled(avg3(), Some(basic(b, "branch_pool", c_in, pool_features, k(1))?)),
    ])))
}

fn inception_b(b: &Builder, c_in: usize) -> Result<Concat> {
    let k = ConvSpec::k;
    Ok(Concat(boxed(vec![
        basic(b, "branch3x3", c_in, 384, k(3).stride(2).pad(0))?,
        chain(vec![
            basic(b, "branch3x3dbl_1", c_in, 64, k(1))?,
            basic(b, "branch3x3dbl_2", 64, 96, k(3))?,
            basic(b, "branch3x3dbl_3", 96, 96, k(3).stride(2).pad(0))?,
        ]),
        pooled(MaxPool::new(3, 2, 0), None),
    ])))
}

fn inception_c(b: &Builder, c_in: usize, c7: usize) -> Result<Concat> {
    let (k, r) = (ConvSpec::k, ConvSpec::rect);
    Ok(Concat(boxed(vec![
        basic(b, "branch1x1", c_in, 192, k(1))?,
        chain(vec![
            basic(b, "branch7x7_1", c_in, c7, k(1))?,
            basic(b, "branch7x7_2", c7, c7, r(1, 7))?,
            basic(b, "branch7x7_3", c7, 192, r(7, 1))?,
        ]),
        chain(vec![
            basic(b, "branch7x7dbl_1", c_in, c7, k(1))?,
            basic(b, "branch7x7dbl_2", c7, c7, r(7, 1))?,
            basic(b, "branch7x7dbl_3", c7, c7, r(1, 7))?,
            basic(b, "branch7x7dbl_4", c7, c7, r(7, 1))?,
            basic(b, "branch7x7dbl_5", c7, 192, r(1, 7))?,
        ]),
        pooled(avg3(), Some(basic(b, "branch_pool", c_in, 192, k(1))?)),
    ])))
}

fn inception_d(b: &Builder, c_in: usize) -> Result<Concat> {
    let (k, r) = (ConvSpec::k, ConvSpec::rect);
    Ok(Concat(boxed(vec![
        chain(vec![
            basic(b, "branch3x3_1", c_in, 192, k(1))?,
            basic(b, "branch3x3_2", 192, 320, k(3).stride(2).pad(0))?,
        ]),
        chain(vec![
            basic(b, "branch7x7x3_1", c_in, 192, k(1))?,
            basic(b, "branch7x7x3_2", 192, 192, r(1, 7))?,
            basic(b, "branch7x7x3_3", 192, 192, r(7, 1))?,
            basic(b, "branch7x7x3_4", 192, 192, k(3).stride(2).pad(0))?,
        ]),
        pooled(MaxPool::new(3, 2, 0), None),
    ])))
}

fn inception_e(b: &Builder, c_in: usize) -> Result<Concat> {
    let (k, r) = (ConvSpec::k, ConvSpec::rect);
    let split = |a: Sequential, b: Sequential| Concat(boxed(vec![a, b]));
    let mut b3 = basic(b, "branch3x3_1", c_in, 384, k(1))?;
    b3.push(split(
        basic(b, "branch3x3_2a", 384, 384, r(1, 3))?,
        basic(b, "branch3x3_2b", 384, 384, r(3, 1))?,
    ));
    let mut d3 = chain(vec![
        basic(b, "branch3x3dbl_1", c_in, 448, k(1))?,
        basic(b, "branch3x3dbl_2", 448, 384, k(3))?,
    ]);
    d3.push(split(
        basic(b, "branch3x3dbl_3a", 384, 384, r(1, 3))?,
        basic(b, "branch3x3dbl_3b", 384, 384, r(3, 1))?,
    ));
    Ok(Concat(boxed(vec![
        basic(b, "branch1x1", c_in, 320, k(1))?,
        b3,
        d3,
        pooled(avg3(), Some(basic(b, "branch_pool", c_in, 192, k(1))?)),
    ])))
}

/// Inception v3 without the auxiliary classifier, up to global pooling (2048 features).
pub fn build(b: &Builder, c_in: usize) -> Result<Vec<Stage>> {
    let k = ConvSpec::k;
    let mut stages = vec![
        Stage::new(
            "Conv2d_1a_3x3",
            basic(b, "Conv2d_1a_3x3", c_in, 32, k(3).stride(2).pad(0))?,
        ),
        Stage::new("Conv2d_2a_3x3", basic(b, "Conv2d_2a_3x3", 32, 32, k(3).pad(0))?),
        Stage::new("Conv2d_2b_3x3", basic(b, "Conv2d_2b_3x3", 32, 64, k(3))?),
        Stage::new("maxpool1", MaxPool::new(3, 2, 0)),
        Stage::new("Conv2d_3b_1x1", basic(b, "Conv2d_3b_1x1", 64, 80, k(1))?),
        Stage::new("Conv2d_4a_3x3", basic(b, "Conv2d_4a_3x3", 80, 192, k(3).pad(0))?),
        Stage::new("maxpool2", MaxPool::new(3, 2, 0)),
    ];
    stages.push(Stage::new("Mixed_5b", inception_a(&b.pp("Mixed_5b"), 192, 32)?));
    stages.push(Stage::new("Mixed_5c", inception_a(&b.pp("Mixed_5c"), 256, 64)?));
    stages.push(Stage::new("Mixed_5d", inception_a(&b.pp("Mixed_5d"), 288, 64)?));
    stages.push(Stage::new("Mixed_6a", inception_b(&b.pp("Mixed_6a"), 288)?));
    for (name, c7) in [
        ("Mixed_6b", 128),
        ("Mixed_6c", 160),
        ("Mixed_6d", 160),
        ("Mixed_6e", 192),
    ] {
        stages.push(Stage::new(name, inception_c(&b.pp(name), 768, c7)?));
    }
    stages.push(Stage::new("Mixed_7a", inception_d(&b.pp("Mixed_7a"), 768)?));
    stages.push(Stage::new("Mixed_7b", inception_e(&b.pp("Mixed_7b"), 1280)?));
    stages.push(Stage::new("Mixed_7c", inception_e(&b.pp("Mixed_7c"), 2048)?));
    stages.push(Stage::new("avgpool", AdaptiveAvgPool::global()));
    Ok(stages)
}
