//! Exact parameter counts for every backbone, head and fused widening.

use thermofuse_core::Modality;
use thermofuse_model::{build_model, count_params, head_param_count, BackboneId, ModelOptions};

const BACKBONE_COUNTS: [(BackboneId, u64); 5] = [
    (BackboneId::Vgg16, 134_260_544),
    (BackboneId::ResNet50, 23_508_032),
    (BackboneId::DenseNet121, 6_953_856),
    (BackboneId::EfficientNetV2S, 20_177_488),
    (BackboneId::InceptionV3, 21_785_568),
];

/// Extra first-layer weights of a four-channel input: one kernel slice per filter.
fn fused_delta(backbone: BackboneId) -> u64 {
    match backbone {
        BackboneId::Vgg16 => 64 * 3 * 3,
        BackboneId::ResNet50 | BackboneId::DenseNet121 => 64 * 7 * 7,
        BackboneId::EfficientNetV2S => 24 * 3 * 3,
        BackboneId::InceptionV3 => 32 * 3 * 3,
        BackboneId::MiniVgg => 16 * 3 * 3,
    }
}

#[test]
fn head_count_closed_form() {
    let expected = |d: u64| d * 1024 + 1024 + 2 * 1024 + 1024 * 512 + 512 + 2 * 512 + 512 * 6 + 6;
    for d in [64, 1024, 1280, 2048, 4096] {
        assert_eq!(head_param_count(d as usize), expected(d));
    }
    assert_eq!(head_param_count(2048), 2_629_126);
}

#[test]
fn backbone_counts_and_fused_deltas() {
    for (backbone, expected) in BACKBONE_COUNTS {
        let spec = backbone.spec();
        let rgb = count_params(&build_model(backbone, Modality::Rgb, &ModelOptions::default()).unwrap());
        assert_eq!(rgb.backbone, expected, "{backbone}");
        assert_eq!(rgb.head, head_param_count(spec.feature_dim), "{backbone}");
        let published = spec.backbone_params_expected_m.unwrap();
        assert!((rgb.backbone as f64 / 1e6 - published).abs() < 0.01, "{backbone}");

        let fused = count_params(&build_model(backbone, Modality::Fused, &ModelOptions::default()).unwrap());
        assert_eq!(fused.backbone - rgb.backbone, fused_delta(backbone), "{backbone}");
        assert_eq!(fused.head, rgb.head);
    }
}

#[test]
fn thermal_input_is_replicated_to_three_channels() {
    let opts = ModelOptions::default();
    let rgb = count_params(&build_model(BackboneId::MiniVgg, Modality::Rgb, &opts).unwrap());
    let thermal = count_params(&build_model(BackboneId::MiniVgg, Modality::Thermal, &opts).unwrap());
    let fused = count_params(&build_model(BackboneId::MiniVgg, Modality::Fused, &opts).unwrap());
    assert_eq!(rgb, thermal);
    assert_eq!(fused.backbone - rgb.backbone, fused_delta(BackboneId::MiniVgg));
    assert_eq!(rgb.head, head_param_count(64));
}

#[test]
fn feature_dims_match_backbone_outputs() {
    use candle_core::{DType, Device, Tensor};
    use thermofuse_model::layers::Ctx;
    for backbone in [
        BackboneId::MiniVgg,
        BackboneId::ResNet50,
        BackboneId::DenseNet121,
        BackboneId::EfficientNetV2S,
    ] {
        let opts = ModelOptions {
            input_size: Some(64),
            ..ModelOptions::default()
        };
        let model = build_model(backbone, Modality::Rgb, &opts).unwrap();
        let x = Tensor::zeros((2, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let f = model.features(&x, &mut Ctx::eval()).unwrap();
        assert_eq!(f.dims(), &[2, backbone.spec().feature_dim], "{backbone}");
        assert_eq!(model.forward(&x, &mut Ctx::eval()).unwrap().dims(), &[2, 6]);
    }
    // Inception's stem needs at least 75 px; VGG's classifier tolerates any size via adaptive pooling.
    for (backbone, size) in [(BackboneId::InceptionV3, 96), (BackboneId::Vgg16, 32)] {
        let opts = ModelOptions {
            input_size: Some(size),
            ..ModelOptions::default()
        };
        let model = build_model(backbone, Modality::Rgb, &opts).unwrap();
        let x = Tensor::zeros((2, 3, size, size), DType::F32, &Device::Cpu).unwrap();
        let f = model.features(&x, &mut Ctx::eval()).unwrap();
        assert_eq!(f.dims(), &[2, backbone.spec().feature_dim], "{backbone}");
    }
}
