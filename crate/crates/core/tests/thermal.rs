use num::{BigInt, BigRational, Signed, ToPrimitive};
use proptest::prelude::*;
use thermofuse_core::thermal::*;

/// Exact rational value of `c / 100 - 273.15`.
fn exact_celsius(c: u16) -> BigRational {
    BigRational::new(BigInt::from(i64::from(c) - 27_315), BigInt::from(100))
}

fn ulp(x: f64) -> f64 {
    let next = f64::from_bits(x.abs().to_bits() + 1);
    next - x.abs()
}

#[test]
fn every_count_converts_within_one_ulp() {
    for c in 0..=u16::MAX {
        let got = counts_to_celsius(c);
        let err = (BigRational::from_float(got).unwrap() - exact_celsius(c)).abs();
        let tol = BigRational::from_float(ulp(got)).unwrap();
        assert!(err <= tol, "count {c}: {got} is {} off", err.to_f64().unwrap());
    }
}

#[test]
fn spot_conversions() {
    assert_eq!(counts_to_celsius(27_315), 0.0);
    assert_eq!(counts_to_celsius(31_015), 37.0);
    assert_eq!(counts_to_celsius(0), -273.15);
}

fn frame_from(counts: &[u16]) -> RawThermalFrame {
    RawThermalFrame::new(FRAME_WIDTH, FRAME_HEIGHT, counts.to_vec()).unwrap()
}

#[test]
fn transposed_frame_is_rejected() {
    use std::io::Cursor;
    use tiff::encoder::{colortype, TiffEncoder};
    let mut out = Cursor::new(Vec::new());
    TiffEncoder::new(&mut out)
        .unwrap()
        .write_image::<colortype::Gray16>(120, 160, &vec![31_015u16; FRAME_PIXELS])
        .unwrap();
    assert!(matches!(
        decode_raw(&out.into_inner()),
        Err(ThermalError::WrongShape {
            width: 120,
            height: 160
        })
    ));
}

#[test]
fn eight_bit_tiff_is_wrong_depth() {
    use std::io::Cursor;
    use tiff::encoder::{colortype, TiffEncoder};
    let mut out = Cursor::new(Vec::new());
    TiffEncoder::new(&mut out)
        .unwrap()
        .write_image::<colortype::Gray8>(160, 120, &vec![7u8; FRAME_PIXELS])
        .unwrap();
    assert!(matches!(
        decode_raw(&out.into_inner()),
        Err(ThermalError::WrongDepth(_))
    ));
    assert!(matches!(decode_raw(b"not a tiff"), Err(ThermalError::MalformedTiff(_))));
}

#[test]
fn mean_of_map_matches_direct_sum() {
    let counts: Vec<u16> = (0..FRAME_PIXELS).map(|i| 29_000 + (i % 4001) as u16).collect();
    let map = to_celsius(&frame_from(&counts));
    let direct = map.celsius().iter().sum::<f64>() / FRAME_PIXELS as f64;
    assert!((map.mean_c() - direct).abs() <= 1e-9 * direct.abs());
}

#[test]
fn window_examples() {
    let p = WindowParams::default();
    assert_eq!(window_for_mean(37.0, &p).window, ThermalWindow { lo: 30.0, hi: 45.0 });

    let d = window_for_mean(26.4, &p);
    assert_eq!(d.window, ThermalWindow { lo: 26.0, hi: 41.0 });
    assert_eq!(d.steps, -4);
    assert!(!d.floor_saturated);

    let d = window_for_mean(-10.0, &p);
    assert_eq!(d.window, ThermalWindow { lo: 0.0, hi: 15.0 });
    assert!(d.floor_saturated);

    let d = window_for_mean(47.5, &p);
    assert_eq!(d.window, ThermalWindow { lo: 33.0, hi: 48.0 });
}

#[test]
fn normalize_examples() {
    let w = ThermalWindow::DEFAULT;
    assert_eq!(normalize_value(37.5, &w), 0.5);
    assert_eq!(normalize_value(22.0, &w), 0.0);

    let map = to_celsius(&RawThermalFrame::filled(31_015));
    let n = normalize(&map, &adaptive_window(&map, &WindowParams::default()).window);
    assert!(n.values().iter().all(|&v| (f64::from(v) - 7.0 / 15.0).abs() < 1e-7));
    assert!(n.mask().iter().all(|&m| m));

    let cold = to_celsius(&RawThermalFrame::filled(celsius_to_counts(22.0)));
    let n = normalize(&cold, &w);
    assert!(n.values().iter().all(|&v| v == 0.0));
    assert!(n.mask().iter().all(|&m| !m));
}

/// Scalar re-statement of the window rule: walk down (or up) one step at a time.
fn stepwise_window(mean: f64, step: f64, floor: f64) -> (f64, bool) {
    let mut lo = 30.0f64;
    if (30.0..=45.0).contains(&mean) {
        return (lo, false);
    }
    let mut k = 0i64;
    if mean < 30.0 {
        loop {
            k += 1;
            lo = 30.0 - k as f64 * step;
            if lo <= floor {
                lo = floor;
                break;
            }
            if lo <= mean {
                break;
            }
        }
        (lo, mean < lo)
    } else {
        loop {
            k += 1;
            lo = 30.0 + k as f64 * step;
            if lo + 15.0 >= mean {
                break;
            }
        }
        (lo, false)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn raw_frames_round_trip(seed in any::<u64>(), deflate in any::<bool>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let counts: Vec<u16> = (0..FRAME_PIXELS).map(|_| rng.random()).collect();
        let frame = frame_from(&counts);
        let compression = if deflate { TiffCompression::Deflate } else { TiffCompression::None };
        let back = decode_raw(&encode_raw(&frame, compression).unwrap()).unwrap();
        prop_assert_eq!(back.pixels(), frame.pixels());
        let again = encode_raw(&back, compression).unwrap();
        prop_assert_eq!(again, encode_raw(&frame, compression).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn conversion_and_normalization_are_monotone(a in any::<u16>(), b in any::<u16>(), lo in -20.0f64..60.0) {
        let (c1, c2) = (a.min(b), a.max(b));
        let w = ThermalWindow { lo, hi: lo + WINDOW_WIDTH };
        let (t1, t2) = (counts_to_celsius(c1), counts_to_celsius(c2));
        if c1 < c2 {
            prop_assert!(t1 < t2);
        }
        prop_assert!(normalize_value(t1, &w) <= normalize_value(t2, &w));
    }

    #[test]
    fn window_postconditions(mean in -300.0f64..120.0, step in prop::sample::select(vec![0.25, 0.5, 1.0, 0.7, 2.0])) {
        let p = WindowParams::new(step, 0.0).unwrap();
        let d = window_for_mean(mean, &p);
        prop_assert_eq!(d.window.hi - d.window.lo, 15.0);
        prop_assert!(d.window.lo >= 0.0);
        if !d.floor_saturated {
            prop_assert!(d.window.lo <= mean && mean <= d.window.hi);
        }
        prop_assert_eq!(window_for_mean(mean, &p), d);
        let (lo, saturated) = stepwise_window(mean, step, 0.0);
        prop_assert!((d.window.lo - lo).abs() < 1e-9, "lo {} vs stepwise {}", d.window.lo, lo);
        prop_assert_eq!(d.floor_saturated, saturated);
    }

    #[test]
    fn normalized_values_and_mask(base in 20_000u16..40_000, spread in 1u16..3_000, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let counts: Vec<u16> = (0..FRAME_PIXELS).map(|_| base + rng.random_range(0..spread)).collect();
        let (map, decision, n) = process_frame(&frame_from(&counts), &WindowParams::default());
        let w = decision.window;
        for ((&v, &m), &t) in n.values().iter().zip(n.mask()).zip(map.celsius()) {
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(m, w.lo <= t && t <= w.hi);
            let clamped = t < w.lo || t > w.hi;
            prop_assert_eq!(m, !clamped);
        }
    }
}

#[test]
fn equal_means_give_equal_windows() {
    let a: Vec<u16> = (0..FRAME_PIXELS)
        .map(|i| if i % 2 == 0 { 29_000 } else { 30_000 })
        .collect();
    let b = vec![29_500u16; FRAME_PIXELS];
    let p = WindowParams::default();
    let wa = adaptive_window(&to_celsius(&frame_from(&a)), &p);
    let wb = adaptive_window(&to_celsius(&frame_from(&b)), &p);
    assert_eq!(wa.window, wb.window);
}

#[test]
fn outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let counts: Vec<u16> = (0..FRAME_PIXELS).map(|i| 29_500 + (i % 1500) as u16).collect();
    let (_, decision, n) = process_frame(&frame_from(&counts), &WindowParams::default());

    let tiff_path = dir.path().join("n.tiff");
    write_normalized_tiff(&n, &tiff_path).unwrap();
    let (w, h, values) = read_normalized_tiff(&tiff_path).unwrap();
    assert_eq!((w, h), (FRAME_WIDTH, FRAME_HEIGHT));
    assert_eq!(values, n.values());

    let png_path = dir.path().join("n.png");
    write_normalized_png16(&n, &png_path).unwrap();
    let png = image::open(&png_path).unwrap().to_luma16();
    for (p, &v) in png.pixels().zip(n.values()) {
        assert_eq!(p.0[0], (f64::from(v) * 65535.0).round() as u16);
    }

    let sidecar = WindowSidecar::from(&decision);
    let json = serde_json::to_string(&sidecar).unwrap();
    for key in ["lo", "hi", "mean_c", "floor_saturated"] {
        assert!(json.contains(&format!("\"{key}\"")));
    }
}
