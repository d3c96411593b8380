//! Feature extractors, each a list of named stages ending in a flat feature vector.

mod densenet;
mod efficientnet;
mod inception;
mod mini;
mod resnet;
mod vgg;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layers::Layer;
use crate::store::Builder;

/// A top-level step of the forward pass. Grad-CAM addresses stages by name.
pub struct Stage {
    pub name: String,
    pub layer: Box<dyn Layer>,
}

impl Stage {
    pub fn new(name: impl Into<String>, layer: impl Layer + 'static) -> Self {
        Self {
            name: name.into(),
            layer: Box::new(layer),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneId {
    #[serde(rename = "densenet121")]
    DenseNet121,
    #[serde(rename = "efficientnet_v2_s")]
    EfficientNetV2S,
    #[serde(rename = "inception_v3")]
    InceptionV3,
    #[serde(rename = "resnet50")]
    ResNet50,
    #[serde(rename = "vgg16")]
    Vgg16,
    /// Three conv/BN/ReLU blocks; small enough to train on a CPU in seconds.
    #[serde(rename = "mini_vgg")]
    MiniVgg,
}

impl BackboneId {
    /// The five published architectures, in table order.
    pub const PUBLISHED: [Self; 5] = [
        Self::DenseNet121,
        Self::EfficientNetV2S,
        Self::InceptionV3,
        Self::ResNet50,
        Self::Vgg16,
    ];

    pub const ALL: [Self; 6] = [
        Self::DenseNet121,
        Self::EfficientNetV2S,
        Self::InceptionV3,
        Self::ResNet50,
        Self::Vgg16,
        Self::MiniVgg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DenseNet121 => "densenet121",
            Self::EfficientNetV2S => "efficientnet_v2_s",
            Self::InceptionV3 => "inception_v3",
            Self::ResNet50 => "resnet50",
            Self::Vgg16 => "vgg16",
            Self::MiniVgg => "mini_vgg",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::DenseNet121 => "DenseNet121",
            Self::EfficientNetV2S => "EfficientNetV2-S",
            Self::InceptionV3 => "InceptionV3",
            Self::ResNet50 => "ResNet50",
            Self::Vgg16 => "VGG16",
            Self::MiniVgg => "MiniVGG",
        }
    }

    pub fn spec(self) -> BackboneSpec {
        let (feature_dim, input_size, first_conv, cam_layer, expected) = match self {
            Self::DenseNet121 => (1024, 224, "features.conv0.weight", "features.norm5", Some(6.95)),
            Self::EfficientNetV2S => (1280, 224, "features.0.0.weight", "features.7", Some(20.17)),
            Self::InceptionV3 => (2048, 299, "Conv2d_1a_3x3.conv.weight", "Mixed_7c", Some(21.78)),
            Self::ResNet50 => (2048, 224, "conv1.weight", "layer4", Some(23.50)),
            Self::Vgg16 => (4096, 224, "features.0.weight", "features.29", Some(134.26)),
            Self::MiniVgg => (
                mini::FEATURE_DIM,
                mini::INPUT_SIZE,
                mini::FIRST_CONV,
                mini::CAM_LAYER,
                None,
            ),
        };
        BackboneSpec {
            id: self,
            feature_dim,
            input_size,
            first_conv,
            cam_layer,
            backbone_params_expected_m: expected,
        }
    }

    pub(crate) fn build(self, b: &Builder, c_in: usize) -> Result<Vec<Stage>> {
        match self {
            Self::DenseNet121 => densenet::build(b, c_in),
            Self::EfficientNetV2S => efficientnet::build(b, c_in),
            Self::InceptionV3 => inception::build(b, c_in),
            Self::ResNet50 => resnet::build(b, c_in),
            Self::Vgg16 => vgg::build(b, c_in),
            Self::MiniVgg => mini::build(b, c_in),
        }
    }
}

impl fmt::Display for BackboneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key = s.to_ascii_lowercase().replace(['-', ' '], "_");
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == key || b.display_name().to_ascii_lowercase().replace('-', "_") == key)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|b| b.as_str()).collect();
                format!("unknown backbone `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Static facts about a backbone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackboneSpec {
    pub id: BackboneId,
    /// Width of the representation fed to the head.
    pub feature_dim: usize,
    pub input_size: usize,
    /// Name of the first convolution kernel, the one widened for fused input.
    pub first_conv: &'static str,
    /// Stage used for Grad-CAM when none is given.
    pub cam_layer: &'static str,
    /// Published backbone size in millions of parameters.
    pub backbone_params_expected_m: Option<f64>,
}
