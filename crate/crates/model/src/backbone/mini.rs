use crate::error::Result;
use crate::layers::{Activation, AdaptiveAvgPool, BatchNorm, Conv2d, ConvSpec, MaxPool, Sequential};
use crate::store::Builder;

use super::Stage;

pub const FEATURE_DIM: usize = 64;
pub const INPUT_SIZE: usize = 48;
pub const FIRST_CONV: &str = "features.block1.conv.weight";
pub const CAM_LAYER: &str = "features.block2";

/// Three 3x3 conv/BN/ReLU blocks (16, 32, 64 channels); the first two halve the resolution.
pub fn build(b: &Builder, c_in: usize) -> Result<Vec<Stage>> {
    let f = b.pp("features");
    let mut stages = Vec::new();
    let mut c_in = c_in;
    for (i, c) in [16, 32, FEATURE_DIM].into_iter().enumerate() {
        let name = format!("block{}", i + 1);
        let bb = f.pp(&name);
        let mut s = Sequential::default();
        s.push(Conv2d::new(&bb.pp("conv"), c_in, c, ConvSpec::k(3))?);
        s.push(BatchNorm::new(&bb.pp("bn"), c, 1e-5)?);
        s.push(Activation::Relu);
        if i < 2 {
            s.push(MaxPool::new(2, 2, 0));
        }
        stages.push(Stage::new(format!("features.{name}"), s));
        c_in = c;
    }
    stages.push(Stage::new("avgpool", AdaptiveAvgPool::global()));
    Ok(stages)
}
