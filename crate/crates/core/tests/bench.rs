use std::time::Duration;

use thermofuse_core::bench::*;

#[test]
fn sleeping_stub_measures_five_ms() {
    let r = time_inference("stub", "rgb", 2, 20, || std::thread::sleep(Duration::from_millis(5)));
    assert!((5.0..=7.0).contains(&r.mean_ms), "mean {}", r.mean_ms);
    assert!(r.min_ms <= r.mean_ms && r.mean_ms <= r.max_ms);
    assert!((r.fps - 1000.0 / r.mean_ms).abs() / r.fps < 0.005);
    assert_eq!(r.batch_size, 1);
}

#[test]
fn identities_hold_for_fast_calls() {
    let mut x = 0u64;
    let r = time_inference("noop", "fused", 20, 200, || {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
        x
    });
    assert!(r.min_ms <= r.mean_ms && r.mean_ms <= r.max_ms);
    assert!((r.fps - 1000.0 / r.mean_ms).abs() / r.fps < 0.005);
    assert_eq!((r.n_warmup, r.n_iter), (20, 200));
}

#[test]
fn report_serializes_every_field() {
    let r = TimingReport::from_samples("m", "rgb", 1, &[1.0, 2.0]);
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    for key in [
        "model_id",
        "modality",
        "mean_ms",
        "min_ms",
        "max_ms",
        "fps",
        "n_warmup",
        "n_iter",
        "batch_size",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }
}
