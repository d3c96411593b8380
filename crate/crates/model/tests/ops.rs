//! Custom convolution, pooling and normalisation ops against candle and finite differences.

use candle_core::{DType, Device, Module, Tensor, Var};
use thermofuse_model::layers::{BatchNorm, Ctx, Layer};
use thermofuse_model::pool::{adaptive_avg_pool2d, avg_pool2d, max_pool2d};
use thermofuse_model::store::Builder;
use thermofuse_model::unfold;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    };
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    flat(a)
        .iter()
        .zip(flat(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// candle's conv with explicit (possibly asymmetric) zero padding.
fn reference_conv(x: &Tensor, w: &Tensor, stride: usize, pad: (usize, usize)) -> Tensor {
    x.pad_with_zeros(2, pad.0, pad.0)
        .unwrap()
        .pad_with_zeros(3, pad.1, pad.1)
        .unwrap()
        .conv2d(w, 0, stride, 1, 1)
        .unwrap()
}

const CONV_CASES: [((usize, usize), usize, (usize, usize)); 6] = [
    ((3, 3), 1, (1, 1)),
    ((3, 3), 2, (1, 1)),
    ((7, 7), 2, (3, 3)),
    ((1, 1), 1, (0, 0)),
    ((1, 7), 1, (0, 3)),
    ((3, 3), 2, (0, 0)),
];

#[test]
fn im2col_conv_matches_candle_forward() {
    for (i, &(k, s, p)) in CONV_CASES.iter().enumerate() {
        let x = randn(&[2, 3, 13, 11], i as u64);
        let w = randn(&[5, 3, k.0, k.1], 100 + i as u64);
        let ours = unfold::conv2d(&x, &w, s, p).unwrap();
        let theirs = reference_conv(&x, &w, s, p);
        assert!(max_diff(&ours, &theirs) < 1e-12, "case {i}");
    }
}

#[test]
fn im2col_conv_gradients_match_candle_at_unit_stride() {
    for (i, &(k, s, p)) in CONV_CASES.iter().enumerate().filter(|(_, c)| c.1 == 1) {
        let x = Var::from_tensor(&randn(&[2, 3, 9, 10], 10 + i as u64)).unwrap();
        let w = Var::from_tensor(&randn(&[4, 3, k.0, k.1], 200 + i as u64)).unwrap();
        let ours = unfold::conv2d(x.as_tensor(), w.as_tensor(), s, p).unwrap();
        let r = randn(ours.dims(), 300 + i as u64);
        let g1 = (ours * &r).unwrap().sum_all().unwrap().backward().unwrap();
        let theirs = reference_conv(x.as_tensor(), w.as_tensor(), s, p);
        let g2 = (theirs * &r).unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&x, &w] {
            let a = g1.get(v.as_tensor()).unwrap();
            let b = g2.get(v.as_tensor()).unwrap();
            assert!(max_diff(a, b) < 1e-10, "case {i}");
        }
    }
}

#[test]
fn im2col_conv_gradients_match_finite_differences() {
    for (i, &(k, s, p)) in CONV_CASES.iter().enumerate() {
        let w = randn(&[4, 3, k.0, k.1], 400 + i as u64);
        check_grad(|x| unfold::conv2d(x, &w, s, p).unwrap(), &[2, 3, 9, 10], 20 + i as u64);
        let x = randn(&[2, 3, 9, 10], 500 + i as u64);
        check_grad(
            |w| unfold::conv2d(&x, w, s, p).unwrap(),
            &[4, 3, k.0, k.1],
            30 + i as u64,
        );
    }
}

#[test]
fn pooling_matches_candle_when_windows_tile() {
    let x = randn(&[2, 3, 8, 12], 1);
    let ours = max_pool2d(&x, 2, 2, 0, false).unwrap();
    assert!(max_diff(&ours, &x.max_pool2d(2).unwrap()) == 0.0);
    let ours = avg_pool2d(&x, 2, 2, 0, true).unwrap();
    assert!(max_diff(&ours, &x.avg_pool2d(2).unwrap()) < 1e-15);
    let ours = adaptive_avg_pool2d(&x, 1, 1).unwrap();
    let mean = x.mean_keepdim(3).unwrap().mean_keepdim(2).unwrap();
    assert!(max_diff(&ours, &mean) < 1e-15);
}

#[test]
fn padded_pooling_shapes_follow_torch_rules() {
    let x = randn(&[1, 2, 147, 147], 2);
    assert_eq!(max_pool2d(&x, 3, 2, 0, false).unwrap().dims(), &[1, 2, 73, 73]);
    let x = randn(&[1, 2, 112, 112], 3);
    assert_eq!(max_pool2d(&x, 3, 2, 1, false).unwrap().dims(), &[1, 2, 56, 56]);
    let x = randn(&[1, 2, 17, 17], 4);
    assert_eq!(avg_pool2d(&x, 3, 1, 1, false).unwrap().dims(), &[1, 2, 17, 17]);
    assert_eq!(adaptive_avg_pool2d(&x, 5, 3).unwrap().dims(), &[1, 2, 5, 3]);
}

#[test]
fn avg_pool_padding_divisors() {
    let x = Tensor::ones((1, 1, 3, 3), DType::F64, &Device::Cpu).unwrap();
    let excl = flat(&avg_pool2d(&x, 3, 1, 1, false).unwrap());
    assert!(excl.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    let incl = flat(&avg_pool2d(&x, 3, 1, 1, true).unwrap());
    assert!((incl[0] - 4.0 / 9.0).abs() < 1e-15);
    assert!((incl[4] - 1.0).abs() < 1e-15);
}

/// Central differences of `sum(f(x) * r)` against autograd.
fn check_grad(f: impl Fn(&Tensor) -> Tensor, shape: &[usize], seed: u64) {
    let x = Var::from_tensor(&randn(shape, seed)).unwrap();
    let y = f(x.as_tensor());
    let r = randn(y.dims(), seed + 1);
    let grads = (&y * &r).unwrap().sum_all().unwrap().backward().unwrap();
    let analytic = flat(grads.get(x.as_tensor()).unwrap());
    let base = flat(x.as_tensor());
    let h = 1e-6;
    let loss = |v: &[f64]| {
        let t = Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap();
        (f(&t) * &r).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
    };
    for i in (0..base.len()).step_by(7) {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        assert!(
            (numeric - analytic[i]).abs() < 1e-6,
            "coordinate {i}: {numeric} vs {}",
            analytic[i]
        );
    }
}

#[test]
fn pooling_gradients_match_finite_differences() {
    check_grad(|x| max_pool2d(x, 3, 2, 1, false).unwrap(), &[1, 2, 9, 9], 10);
    check_grad(|x| max_pool2d(x, 3, 2, 0, true).unwrap(), &[1, 2, 8, 8], 11);
    check_grad(|x| avg_pool2d(x, 3, 1, 1, false).unwrap(), &[1, 2, 7, 7], 12);
    check_grad(|x| avg_pool2d(x, 3, 2, 1, true).unwrap(), &[1, 2, 7, 7], 13);
    check_grad(|x| adaptive_avg_pool2d(x, 3, 2).unwrap(), &[1, 2, 7, 5], 14);
}

fn reference_batch_norm(x: &Tensor, w: &Tensor, b: &Tensor, eps: f64) -> Tensor {
    let c = x.dim(1).unwrap();
    let mean = x
        .mean_keepdim(3)
        .unwrap()
        .mean_keepdim(2)
        .unwrap()
        .mean_keepdim(0)
        .unwrap();
    let centered = x.broadcast_sub(&mean).unwrap();
    let var = centered
        .sqr()
        .unwrap()
        .mean_keepdim(3)
        .unwrap()
        .mean_keepdim(2)
        .unwrap()
        .mean_keepdim(0)
        .unwrap();
    let norm = centered.broadcast_div(&(var + eps).unwrap().sqrt().unwrap()).unwrap();
    norm.broadcast_mul(&w.reshape((1, c, 1, 1)).unwrap())
        .unwrap()
        .broadcast_add(&b.reshape((1, c, 1, 1)).unwrap())
        .unwrap()
}

#[test]
fn fused_batch_norm_matches_reference_with_gradients() {
    let builder = Builder::new(0, DType::F64, &Device::Cpu);
    let bn = BatchNorm::new(&builder, 3, 1e-5).unwrap();
    bn.weight.set(&randn(&[3], 5)).unwrap();
    bn.bias.set(&randn(&[3], 6)).unwrap();
    let x = Var::from_tensor(&(randn(&[4, 3, 5, 6], 7).affine(3.0, 1.0).unwrap())).unwrap();

    let ours = bn
        .forward(x.as_tensor(), &mut Ctx::train(thermofuse_model_rng()))
        .unwrap();
    let theirs = reference_batch_norm(x.as_tensor(), bn.weight.as_tensor(), bn.bias.as_tensor(), 1e-5);
    assert!(max_diff(&ours, &theirs) < 1e-12);

    let r = randn(ours.dims(), 8);
    let g1 = (&ours * &r).unwrap().sum_all().unwrap().backward().unwrap();
    let g2 = (&theirs * &r).unwrap().sum_all().unwrap().backward().unwrap();
    for v in [x.as_tensor(), bn.weight.as_tensor(), bn.bias.as_tensor()] {
        assert!(max_diff(g1.get(v).unwrap(), g2.get(v).unwrap()) < 1e-10);
    }
}

#[test]
fn batch_norm_running_statistics() {
    let builder = Builder::new(0, DType::F64, &Device::Cpu);
    let bn = BatchNorm::new(&builder, 2, 1e-5).unwrap();
    // Channel 0 holds 1..=8, channel 1 holds twice that.
    let data: Vec<f64> = (0..2)
        .flat_map(|b| (0..2).flat_map(move |c| (1..=4).map(move |i| ((b * 4 + i) * (c + 1)) as f64)))
        .collect();
    let x = Tensor::from_vec(data, (2, 2, 2, 2), &Device::Cpu).unwrap();
    bn.forward(&x, &mut Ctx::train(thermofuse_model_rng())).unwrap();
    let mean = flat(bn.running_mean.as_tensor());
    let var = flat(bn.running_var.as_tensor());
    // Values 1..=8: mean 4.5, unbiased variance 6.
    assert!((mean[0] - 0.45).abs() < 1e-12 && (mean[1] - 0.9).abs() < 1e-12);
    assert!((var[0] - (0.9 + 0.6)).abs() < 1e-12 && (var[1] - (0.9 + 2.4)).abs() < 1e-12);

    // Momentum 1 replaces the averages outright.
    bn.forward(&x, &mut Ctx::calibrate(1.0)).unwrap();
    assert!((flat(bn.running_mean.as_tensor())[0] - 4.5).abs() < 1e-12);
    assert!((flat(bn.running_var.as_tensor())[1] - 24.0).abs() < 1e-12);

    // Inference uses the stored statistics, not the batch.
    let y = flat(&bn.forward(&x, &mut Ctx::eval()).unwrap());
    assert!((y[0] - (1.0 - 4.5) / (6.0f64 + 1e-5).sqrt()).abs() < 1e-12);
}

#[test]
fn linear_layer_is_affine() {
    let builder = Builder::new(3, DType::F64, &Device::Cpu);
    let lin = thermofuse_model::layers::Linear::new(&builder, 4, 2).unwrap();
    let x = randn(&[3, 4], 9);
    let ours = lin.forward(&x, &mut Ctx::eval()).unwrap();
    let reference = candle_nn::Linear::new(lin.weight.as_tensor().clone(), Some(lin.bias.as_tensor().clone()));
    assert!(max_diff(&ours, &reference.forward(&x).unwrap()) < 1e-14);
}

fn thermofuse_model_rng() -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(0)
}
