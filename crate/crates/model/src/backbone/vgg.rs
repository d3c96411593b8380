use crate::error::Result;
use crate::layers::{Activation, AdaptiveAvgPool, Conv2d, ConvSpec, Dropout, Flatten, Linear, MaxPool, Sequential};
use crate::store::Builder;

use super::Stage;

const CONFIG: [usize; 18] = [
    64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0,
];

/// VGG16 with the last classifier layer removed, leaving 4096 features.
pub fn build(b: &Builder, c_in: usize) -> Result<Vec<Stage>> {
    let mut stages = Vec::new();
    let features = b.pp("features");
    let mut c_in = c_in;
    let mut i = 0;
    for &c in &CONFIG {
        if c == 0 {
            stages.push(Stage::new(format!("features.{i}"), MaxPool::new(2, 2, 0)));
            i += 1;
        } else {
            let conv = Conv2d::new(&features.pp(i), c_in, c, ConvSpec::k(3).bias())?;
            stages.push(Stage::new(format!("features.{i}"), conv));
            stages.push(Stage::new(format!("features.{}", i + 1), Activation::Relu));
            c_in = c;
            i += 2;
        }
    }
    stages.push(Stage::new(
        "avgpool",
        AdaptiveAvgPool {
            out: (7, 7),
            flatten: false,
        },
    ));
    let cls = b.pp("classifier");
    let mut fc0 = Sequential::default();
    fc0.push(Flatten);
    fc0.push(Linear::new(&cls.pp(0), 512 * 7 * 7, 4096)?);
    stages.push(Stage::new("classifier.0", fc0));
    stages.push(Stage::new("classifier.1", Activation::Relu));
    stages.push(Stage::new("classifier.2", Dropout(0.5)));
    stages.push(Stage::new("classifier.3", Linear::new(&cls.pp(3), 4096, 4096)?));
    stages.push(Stage::new("classifier.4", Activation::Relu));
    stages.push(Stage::new("classifier.5", Dropout(0.5)));
    Ok(stages)
}
