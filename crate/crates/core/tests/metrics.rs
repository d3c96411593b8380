use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermofuse_core::metrics::*;
use thermofuse_core::NUM_CLASSES;

const K: usize = NUM_CLASSES;

fn random_matrix(rng: &mut ChaCha8Rng) -> ConfusionMatrix {
    let mut m = [[0u64; K]; K];
    // Mix dense, sparse and diagonal-heavy matrices so empty rows and columns show up.
    let style = rng.random_range(0..3);
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = match style {
                0 => rng.random_range(0..20),
                1 => {
                    if rng.random_bool(0.25) {
                        rng.random_range(1..10)
                    } else {
                        0
                    }
                }
                _ => {
                    if i == j {
                        rng.random_range(0..50)
                    } else {
                        rng.random_range(0..3)
                    }
                }
            };
        }
    }
    if m.iter().flatten().all(|&v| v == 0) {
        m[0][0] = 1;
    }
    ConfusionMatrix(m)
}

/// Expands a matrix back into label lists.
fn materialize(cm: &ConfusionMatrix) -> (Vec<usize>, Vec<usize>) {
    let (mut t, mut p) = (Vec::new(), Vec::new());
    for i in 0..K {
        for j in 0..K {
            for _ in 0..cm.0[i][j] {
                t.push(i);
                p.push(j);
            }
        }
    }
    (t, p)
}

struct Oracle {
    precision: [Option<f64>; K],
    recall: [Option<f64>; K],
    specificity: [Option<f64>; K],
    f1: [Option<f64>; K],
    accuracy: f64,
}

/// Counts TP/FP/FN/TN per class by walking every sample.
fn brute_force(truth: &[usize], pred: &[usize]) -> Oracle {
    let mut o = Oracle {
        precision: [None; K],
        recall: [None; K],
        specificity: [None; K],
        f1: [None; K],
        accuracy: truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64,
    };
    for c in 0..K {
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let div = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        o.precision[c] = div(tp, tp + fp);
        o.recall[c] = div(tp, tp + fn_);
        o.specificity[c] = div(tn, tn + fp);
        o.f1[c] = div(2 * tp, 2 * tp + fp + fn_).filter(|_| tp > 0);
    }
    o
}

/// Pearson correlation of one-hot truth and prediction indicators.
fn mcc_covariance(truth: &[usize], pred: &[usize]) -> f64 {
    let n = truth.len() as f64;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    let mean_x: Vec<f64> = (0..K)
        .map(|k| truth.iter().filter(|&&t| t == k).count() as f64 / n)
        .collect();
    let mean_y: Vec<f64> = (0..K)
        .map(|k| pred.iter().filter(|&&p| p == k).count() as f64 / n)
        .collect();
    for (&t, &p) in truth.iter().zip(pred) {
        for k in 0..K {
            let x = f64::from(u8::from(t == k)) - mean_x[k];
            let y = f64::from(u8::from(p == k)) - mean_y[k];
            xy += x * y;
            xx += x * x;
            yy += y * y;
        }
    }
    if xx == 0.0 || yy == 0.0 {
        0.0
    } else {
        xy / (xx * yy).sqrt()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

#[test]
fn thousand_random_matrices_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let cm = random_matrix(&mut rng);
        let (t, p) = materialize(&cm);
        let report = per_class_metrics(&cm).unwrap();
        let o = brute_force(&t, &p);
        assert!(close(report.accuracy, o.accuracy));
        for c in 0..K {
            let m = report.per_class[c];
            assert!(close(m.precision, o.precision[c].unwrap_or(0.0)));
            assert!(close(m.recall, o.recall[c].unwrap_or(0.0)));
            assert!(close(m.specificity, o.specificity[c].unwrap_or(0.0)));
            assert!(close(m.f1, o.f1[c].unwrap_or(0.0)), "f1 {} vs {:?}", m.f1, o.f1[c]);
            assert_eq!(m.sensitivity, m.recall);
            let flagged = |name: &str| report.undefined.iter().any(|u| u.class == c && u.metric == name);
            assert_eq!(flagged("precision"), o.precision[c].is_none());
            assert_eq!(flagged("recall"), o.recall[c].is_none());
        }
        let macro_p = (0..K).map(|c| o.precision[c].unwrap_or(0.0)).sum::<f64>() / K as f64;
        assert!(close(report.macro_avg.precision, macro_p));
        assert!(
            close(report.mcc, mcc_covariance(&t, &p)),
            "{} vs {}",
            report.mcc,
            mcc_covariance(&t, &p)
        );
        assert!((-1.0..=1.0).contains(&report.mcc));
        for m in report.per_class.iter().chain([&report.macro_avg]) {
            for v in [m.precision, m.recall, m.f1, m.sensitivity, m.specificity] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

#[test]
fn identity_and_uniform_mcc() {
    let mut id = ConfusionMatrix::default();
    for i in 0..K {
        id.0[i][i] = 4;
    }
    assert_eq!(mcc(&id).unwrap(), 1.0);
    assert_eq!(mcc(&ConfusionMatrix([[3; K]; K])).unwrap(), 0.0);
}

#[test]
fn constant_predictor_matches_hand_values() {
    let truth: Vec<usize> = (0..60).map(|i| i % K).collect();
    let pred = vec![2usize; 60];
    let r = evaluate(&truth, &pred, None).unwrap();
    assert!(close(r.per_class[2].precision, 10.0 / 60.0));
    assert_eq!(r.per_class[2].recall, 1.0);
    assert_eq!(r.per_class[2].specificity, 0.0);
    for c in [0, 1, 3, 4, 5] {
        assert_eq!(r.per_class[c].recall, 0.0);
    }
}

#[test]
fn confusion_rows_match_independent_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth: Vec<usize> = (0..1000).map(|_| rng.random_range(0..K)).collect();
    let pred: Vec<usize> = (0..1000).map(|_| rng.random_range(0..K)).collect();
    let cm = confusion(&truth, &pred).unwrap();
    let mut tally = [0u64; K];
    for &t in &truth {
        tally[t] += 1;
    }
    assert_eq!(cm.row_sums(), tally);
    assert_eq!(cm.total(), 1000);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn permutation_and_scale_invariance(seed in any::<u64>(), k in 1u64..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cm = random_matrix(&mut rng);
        let mut perm: [usize; K] = std::array::from_fn(|i| i);
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let a = per_class_metrics(&cm).unwrap();
        let b = per_class_metrics(&cm.permuted(&perm)).unwrap();
        prop_assert!(close(a.mcc, b.mcc));
        prop_assert!(close(a.accuracy, b.accuracy));
        prop_assert!(close(a.macro_avg.f1, b.macro_avg.f1));
        prop_assert!(close(a.macro_avg.precision, b.macro_avg.precision));
        prop_assert!(close(a.macro_avg.specificity, b.macro_avg.specificity));
        for c in 0..K {
            prop_assert!(close(a.per_class[c].f1, b.per_class[perm[c]].f1));
            prop_assert!(close(a.per_class[c].specificity, b.per_class[perm[c]].specificity));
        }
        let scaled = mcc(&cm.scaled(k)).unwrap();
        prop_assert!(close(a.mcc, scaled));
    }
}

/// Pair counting: P(score_pos > score_neg) + 0.5 P(tie).
fn pairwise_auc(truth: &[usize], probs: &[[f64; K]], c: usize) -> Option<f64> {
    let pos: Vec<f64> = truth
        .iter()
        .zip(probs)
        .filter(|(t, _)| **t == c)
        .map(|(_, p)| p[c])
        .collect();
    let neg: Vec<f64> = truth
        .iter()
        .zip(probs)
        .filter(|(t, _)| **t != c)
        .map(|(_, p)| p[c])
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

#[test]
fn auc_matches_pair_counting_on_500_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..120);
        let classes = rng.random_range(2..=K);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        // Coarse scores force plenty of ties.
        let probs: Vec<[f64; K]> = (0..n)
            .map(|_| {
                let raw: [f64; K] = std::array::from_fn(|_| f64::from(rng.random_range(1u8..6)));
                let s: f64 = raw.iter().sum();
                raw.map(|v| v / s)
            })
            .collect();
        let result = roc_auc(&truth, &probs);
        let present: Vec<usize> = (0..K).filter(|c| truth.contains(c)).collect();
        if present.len() < 2 {
            assert_eq!(result, Err(MetricsError::SingleClassOnly(present.len())));
            continue;
        }
        let auc = result.unwrap();
        let mut sum = 0.0;
        for c in 0..K {
            let want = pairwise_auc(&truth, &probs, c);
            match (auc.per_class[c], want) {
                (Some(a), Some(b)) => {
                    assert!(close(a, b), "class {c}: {a} vs {b}");
                    sum += b;
                }
                (None, None) => {}
                (got, want) => panic!("class {c}: {got:?} vs {want:?}"),
            }
        }
        assert!(close(auc.macro_auc, sum / present.len() as f64));
        checked += 1;
    }
    assert!(checked > 450);
}

#[test]
fn listed_fold_accuracies_average() {
    let base = evaluate(&[0, 1, 2, 3, 4, 5], &[0, 1, 2, 3, 4, 5], None).unwrap();
    let folds: Vec<MetricsReport> = [93.98, 90.36, 94.58, 93.37, 93.98]
        .into_iter()
        .map(|a| MetricsReport {
            accuracy: a / 100.0,
            ..base.clone()
        })
        .collect();
    let agg = aggregate_folds(&folds).unwrap();
    assert!((agg.accuracy * 100.0 - 93.254).abs() < 1e-9);
    assert!((agg.accuracy * 100.0 - 93.25).abs() <= 0.01);
    let same = aggregate_folds(&vec![base.clone(); 5]).unwrap();
    assert_eq!(same.per_class, base.per_class);
    assert_eq!(same.mcc, base.mcc);
    assert_eq!(same.support, base.support.map(|s| s * 5));
}
