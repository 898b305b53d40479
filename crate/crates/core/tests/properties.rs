use density_softmax::data::{apply_shift, as_iid_test, load_csv, make_two_moons, save_csv, ShiftSpec};
use density_softmax::density::{compute_scale, kde_fit, DensityModel, LIKELIHOOD_FLOOR};
use density_softmax::metrics::{
    brier, ece, ece_from_bins, mece, ood_detection, reliability_bins, MeceBins, ScoreDirection,
};
use density_softmax::numeric::{argmax, entropy, softmax, Matrix};
use density_softmax::predictor::density_softmax_probs;
use proptest::prelude::*;

fn logits(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, k)
}

/// Prediction sets: rows of softmax outputs plus labels.
fn prediction_set() -> impl Strategy<Value = (Matrix, Vec<usize>)> {
    (2usize..5, 1usize..40).prop_flat_map(|(k, n)| {
        (
            prop::collection::vec(prop::collection::vec(-4.0..4.0f64, k), n),
            prop::collection::vec(0..k, n),
        )
            .prop_map(move |(rows, labels)| {
                let probs: Vec<Vec<f64>> = rows.iter().map(|r| softmax(r).unwrap()).collect();
                (Matrix::from_rows(&probs).unwrap(), labels)
            })
    })
}

fn brute_force_auroc(iid: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &o in ood {
        for &i in iid {
            if o > i {
                wins += 1.0;
            } else if o == i {
                wins += 0.5;
            }
        }
    }
    wins / (iid.len() * ood.len()) as f64
}

proptest! {
    #[test]
    fn softmax_is_permutation_equivariant(u in logits(1..=8), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..u.len()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = softmax(&u).unwrap();
        let permuted: Vec<f64> = perm.iter().map(|&i| u[i]).collect();
        let q = softmax(&permuted).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((q[j] - p[i]).abs() < 1e-15);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_ignores_constant_shift(u in logits(1..=8), c in -50.0..50.0f64) {
        let shifted: Vec<f64> = u.iter().map(|v| v + c).collect();
        let (p, q) = (softmax(&u).unwrap(), softmax(&shifted).unwrap());
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_likelihood_is_softmax(u in logits(2..=10)) {
        prop_assert_eq!(density_softmax_probs(&u, 1.0), softmax(&u).unwrap());
    }

    #[test]
    fn entropy_falls_as_scale_grows(u in logits(2..=10), a in 0.001..1.0f64, b in 0.001..1.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let h_lo = entropy(&density_softmax_probs(&u, lo));
        let h_hi = entropy(&density_softmax_probs(&u, hi));
        prop_assert!(h_lo >= h_hi - 1e-12);
    }

    #[test]
    fn scaling_keeps_argmax_and_lowers_confidence(u in logits(2..=10), s in 1e-6..=1.0f64) {
        let p = softmax(&u).unwrap();
        let q = density_softmax_probs(&u, s);
        prop_assert_eq!(argmax(&p), argmax(&q));
        prop_assert!(q[argmax(&q)] <= p[argmax(&p)] + 1e-15);
    }

    #[test]
    fn floor_likelihood_is_uniform(u in logits(2..=10)) {
        let q = density_softmax_probs(&u, LIKELIHOOD_FLOOR);
        for v in &q {
            prop_assert!((v - 1.0 / u.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ece_ignores_sample_order((p, y) in prediction_set(), bins in 1usize..20) {
        let n = y.len();
        let order: Vec<usize> = (0..n).rev().collect();
        let e1 = ece(&p, &y, bins).unwrap();
        let e2 = ece(&p.select_rows(&order), &order.iter().map(|&i| y[i]).collect::<Vec<_>>(), bins).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&e1));
    }

    #[test]
    fn ece_is_recomputable_from_bins((p, y) in prediction_set(), bins in 1usize..20) {
        let stats = reliability_bins(&p, &y, bins).unwrap();
        prop_assert_eq!(stats.iter().map(|b| b.count).sum::<usize>(), y.len());
        prop_assert_eq!(ece_from_bins(&stats).to_bits(), ece(&p, &y, bins).unwrap().to_bits());
        for b in stats.iter().filter(|b| b.count > 0) {
            prop_assert!(b.conf > b.lower - 1e-12 && b.conf <= b.upper + 1e-12);
            prop_assert!((0.0..=1.0).contains(&b.acc));
        }
    }

    #[test]
    fn mece_non_negative_or_not_applicable((p, y) in prediction_set()) {
        for mode in [MeceBins::All, MeceBins::Misclassified] {
            if let Some(v) = mece(&p, &y, 15, mode).unwrap().value() {
                prop_assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn rank_auroc_equals_pair_count(
        iid in prop::collection::vec(0i32..8, 1..25),
        ood in prop::collection::vec(0i32..8, 1..25),
    ) {
        let iid: Vec<f64> = iid.into_iter().map(f64::from).collect();
        let ood: Vec<f64> = ood.into_iter().map(f64::from).collect();
        let r = ood_detection(&iid, &ood, ScoreDirection::HigherIsOod).unwrap();
        prop_assert_eq!(r.auroc, brute_force_auroc(&iid, &ood));
        let flipped = ood_detection(&iid, &ood, ScoreDirection::LowerIsOod).unwrap();
        prop_assert!((flipped.auroc - (1.0 - r.auroc)).abs() < 1e-12);
        prop_assert!(r.aupr > 0.0 && r.aupr <= 1.0);
    }

    #[test]
    fn scaled_likelihood_in_unit_interval(q in prop::collection::vec(-30.0..30.0f64, 2)) {
        let z = Matrix::new(3, 2, vec![0.0, 0.0, 1.0, 0.5, -0.5, 1.0]).unwrap();
        let kde = DensityModel::Kde(kde_fit(&z, 0.7).unwrap());
        let sd = compute_scale(kde, &z, 2).unwrap();
        let s = sd.scaled_likelihood(&q).unwrap();
        prop_assert!(s > 0.0 && s <= 1.0);
    }

    #[test]
    fn matmul_transpose_identities(a in prop::collection::vec(-3.0..3.0f64, 6), b in prop::collection::vec(-3.0..3.0f64, 12)) {
        let a = Matrix::new(2, 3, a).unwrap();
        let b = Matrix::new(3, 4, b).unwrap();
        let ab = a.matmul(&b).unwrap();
        let bt_at = b.transpose().matmul(&a.transpose()).unwrap();
        prop_assert!(ab.transpose().max_abs_diff(&bt_at) < 1e-12);
        let at = a.transpose();
        prop_assert!(at.t_matmul(&b).unwrap().max_abs_diff(&ab) < 1e-12);
        prop_assert!(a.matmul_t(&a).unwrap().max_abs_diff(&a.matmul(&a.transpose()).unwrap()) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip(seed in any::<u64>(), noise in 0.0..0.5f64, n in 1usize..30) {
        let set = make_two_moons(n, noise, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.csv");
        save_csv(&set, &path).unwrap();
        let back = load_csv(&path).unwrap();
        prop_assert_eq!(&back, &set);
        prop_assert_eq!(back.features.data(), set.features.data());
    }

    #[test]
    fn shifts_keep_labels(seed in any::<u64>(), intensity in 1u8..=5) {
        let test = as_iid_test(make_two_moons(20, 0.1, seed).unwrap());
        let shifted = apply_shift(&test, &ShiftSpec::gaussian_noise(intensity).unwrap(), seed ^ 1).unwrap();
        prop_assert_eq!(&shifted.labels, &test.labels);
        prop_assert_eq!(shifted.domain, density_softmax::data::Domain::Shifted(intensity));
    }
}

#[test]
fn brier_of_uniform_prediction() {
    for k in [2usize, 3, 10] {
        let p = Matrix::filled(k, k, 1.0 / k as f64);
        let y: Vec<usize> = (0..k).collect();
        let expected = (k as f64 - 1.0) / k as f64;
        assert!((brier(&p, &y).unwrap() - expected).abs() < 1e-12, "K = {k}");
    }
}

#[test]
fn mece_equals_ece_when_all_wrong() {
    let p = Matrix::from_rows(&[[0.8, 0.2], [0.3, 0.7], [0.6, 0.4]]).unwrap();
    let y = [1, 0, 1];
    let e = ece(&p, &y, 15).unwrap();
    let m = mece(&p, &y, 15, MeceBins::All).unwrap().value().unwrap();
    assert_eq!(m, e);
}
