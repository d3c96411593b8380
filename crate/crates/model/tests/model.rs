//! Inference, checkpoints and weight loading.

mod common;

use std::collections::HashMap;

use candle_core::{DType, Tensor};
use thermofuse_core::Modality;
use thermofuse_model::store::Group;
use thermofuse_model::{
    build_model, inflate_input_layer, predict, BackboneId, InflationMode, ModelError, ModelOptions, WeightSource,
};

fn mini(modality: Modality, seed: u64) -> thermofuse_model::Model {
    let opts = ModelOptions {
        weights: WeightSource::Random { seed },
        ..ModelOptions::default()
    };
    build_model(BackboneId::MiniVgg, modality, &opts).unwrap()
}

fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap()
}

#[test]
fn probabilities_sum_to_one_and_repeat() {
    let mut rng = common::rng(1);
    for modality in Modality::ALL {
        let a = mini(modality, 4);
        let b = mini(modality, 4);
        for g in 0..6 {
            let s = common::noise_sample(modality, 48, g, &mut rng);
            let p = predict(&a, &s).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(p, predict(&a, &s).unwrap());
            assert_eq!(p, predict(&b, &s).unwrap());
        }
    }
}

#[test]
fn batch_and_single_predictions_agree() {
    let model = mini(Modality::Fused, 2);
    let mut rng = common::rng(2);
    let samples: Vec<_> = (0..5)
        .map(|g| common::noise_sample(Modality::Fused, 48, g, &mut rng))
        .collect();
    let batch = model.predict_batch(&samples.iter().collect::<Vec<_>>()).unwrap();
    for (s, p) in samples.iter().zip(batch) {
        let single = predict(&model, s).unwrap();
        assert!(single.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}

#[test]
fn zero_final_layer_gives_uniform_output() {
    let opts = ModelOptions {
        zero_final: true,
        ..ModelOptions::default()
    };
    let model = build_model(BackboneId::MiniVgg, Modality::Thermal, &opts).unwrap();
    let s = common::noise_sample(Modality::Thermal, 48, 3, &mut common::rng(3));
    for p in predict(&model, &s).unwrap() {
        assert!((p - 1.0 / 6.0).abs() < 1e-7);
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let model = mini(Modality::Rgb, 0);
    let mut rng = common::rng(4);
    for s in [
        common::noise_sample(Modality::Rgb, 32, 0, &mut rng),
        common::noise_sample(Modality::Fused, 48, 0, &mut rng),
    ] {
        match predict(&model, &s) {
            Err(ModelError::ShapeMismatch { expected, found }) => {
                assert_eq!(expected, (3, 48, 48));
                assert_eq!(found, s.tensor.shape());
            }
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    let a = mini(Modality::Fused, 10);
    a.save(&path).unwrap();
    let b = mini(Modality::Fused, 11);
    let s = common::noise_sample(Modality::Fused, 48, 2, &mut common::rng(5));
    assert_ne!(predict(&a, &s).unwrap(), predict(&b, &s).unwrap());
    b.load(&path).unwrap();
    assert_eq!(predict(&a, &s).unwrap(), predict(&b, &s).unwrap());
    for e in a.store().entries() {
        assert_eq!(
            values(e.var.as_tensor()),
            values(b.store().get(&e.name).unwrap().var.as_tensor())
        );
    }
}

#[test]
fn checkpoint_for_another_architecture_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rgb.ckpt");
    mini(Modality::Rgb, 0).save(&path).unwrap();
    assert!(matches!(
        mini(Modality::Fused, 0).load(&path),
        Err(ModelError::Checkpoint(_))
    ));
    assert!(mini(Modality::Fused, 0).load(dir.path().join("absent.ckpt")).is_err());
}

#[test]
fn missing_pretrained_file() {
    let path = std::path::PathBuf::from("/nonexistent/weights.safetensors");
    let opts = ModelOptions {
        weights: WeightSource::Pretrained { path: path.clone() },
        ..ModelOptions::default()
    };
    match build_model(BackboneId::ResNet50, Modality::Rgb, &opts) {
        Err(ModelError::WeightsUnavailable(p)) => assert_eq!(p, path),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("expected WeightsUnavailable"),
    }
}

/// Backbone tensors of a seeded RGB model, as a torchvision-style weights file would hold them.
fn rgb_backbone_tensors(seed: u64) -> HashMap<String, Tensor> {
    let model = mini(Modality::Rgb, seed);
    model
        .store()
        .entries()
        .iter()
        .filter(|e| e.group == Group::Backbone)
        .map(|e| (e.name.clone(), e.var.as_tensor().copy().unwrap()))
        .collect()
}

#[test]
fn pretrained_rgb_weights_are_inflated_for_fused_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rgb.safetensors");
    let tensors = rgb_backbone_tensors(21);
    candle_core::safetensors::save(&tensors, &path).unwrap();

    for mode in [InflationMode::MeanRgb, InflationMode::Zeros] {
        let opts = ModelOptions {
            weights: WeightSource::Pretrained { path: path.clone() },
            inflation: mode,
            ..ModelOptions::default()
        };
        let model = build_model(BackboneId::MiniVgg, Modality::Fused, &opts).unwrap();
        let first = BackboneId::MiniVgg.spec().first_conv;
        for (name, t) in &tensors {
            let loaded = model.store().get(name).unwrap().var.as_tensor();
            let expected = if name == first {
                inflate_input_layer(t, mode).unwrap()
            } else {
                t.clone()
            };
            assert_eq!(values(loaded), values(&expected), "{name}");
        }
    }
}

#[test]
fn pretrained_file_missing_a_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.safetensors");
    let mut tensors = rgb_backbone_tensors(0);
    let dropped = tensors.keys().find(|k| k.ends_with("running_var")).unwrap().clone();
    tensors.remove(&dropped);
    candle_core::safetensors::save(&tensors, &path).unwrap();
    let opts = ModelOptions {
        weights: WeightSource::Pretrained { path },
        ..ModelOptions::default()
    };
    match build_model(BackboneId::MiniVgg, Modality::Rgb, &opts) {
        Err(ModelError::Checkpoint(msg)) => assert!(msg.contains(&dropped)),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("expected a checkpoint error"),
    }
}

#[test]
fn stage_boundary_and_layer_lookup() {
    let model = mini(Modality::Rgb, 0);
    assert_eq!(model.stage_names().nth(model.head_start()), Some("head.0"));
    assert!(model.stage_index(BackboneId::MiniVgg.spec().cam_layer).unwrap() < model.head_start());
    assert_eq!(model.stage_index("no.such.layer"), None);
    let counts = model.param_counts();
    let head: u64 = model
        .store()
        .entries()
        .iter()
        .filter(|e| e.group == Group::Head && e.name.starts_with("head."))
        .filter(|e| !e.name.contains("running") && !e.name.contains("num_batches"))
        .map(|e| e.var.elem_count() as u64)
        .sum();
    assert_eq!(head, counts.head);
}
