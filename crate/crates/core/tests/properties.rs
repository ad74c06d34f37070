use proptest::prelude::*;

use svl_core::adapters::{predict_linear_probe, train_linear_probe, TrainConfig};
use svl_core::eval::{aggregate_group, top1_accuracy, RunResult};
use svl_core::fusion::fuse_predictions;
use svl_core::numerics::{argmax, softmax, Matrix};
use svl_core::pseudolabel::select_pseudolabels;
use svl_core::store::{sample_episode, split_validation, ClassSpace, EmbeddingTable, LabelVector};
use svl_core::zeroshot::{cosine_logits, estimate_lambda, zero_shot_probs, ProbabilityMatrix, Source};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn stochastic(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    (1..=max_rows, 1..=max_cols)
        .prop_flat_map(|(r, c)| matrix(r, c, -8.0, 8.0))
        .prop_map(|logits| softmax(&logits).unwrap())
}

fn pm(m: Matrix<f64>) -> ProbabilityMatrix {
    ProbabilityMatrix::new(m, Source::External).unwrap()
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_over_wide_range(m in (1usize..8, 1usize..12).prop_flat_map(|(r, c)| matrix(r, c, -1e4, 1e4))) {
        let p = softmax(&m).unwrap();
        for row in p.row_iter() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn softmax_shift_invariant(m in (1usize..6, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c, -50.0, 50.0)), shift in -1e3f64..1e3) {
        let a = softmax(&m).unwrap();
        let b = softmax(&m.map(|v| v + shift)).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn lambda_permutation_invariant(m in stochastic(12, 8), rot in 0usize..8) {
        let base = estimate_lambda(&pm(m.clone())).unwrap().value;
        let (r, c) = m.shape();
        let rows_rev = Matrix::from_fn(r, c, |i, j| m.get(r - 1 - i, j));
        let cols_rot = Matrix::from_fn(r, c, |i, j| m.get(i, (j + rot) % c));
        prop_assert!((estimate_lambda(&pm(rows_rev)).unwrap().value - base).abs() <= 1e-12);
        prop_assert!((estimate_lambda(&pm(cols_rot)).unwrap().value - base).abs() <= 1e-12);
    }

    #[test]
    fn fusion_lies_between_inputs(pair in (1usize..10, 1usize..8).prop_flat_map(|(r, c)| (matrix(r, c, -6.0, 6.0), matrix(r, c, -6.0, 6.0))), lambda in 0.0f64..=1.0) {
        let pv = pm(softmax(&pair.0).unwrap());
        let ps = pm(softmax(&pair.1).unwrap());
        let fused = fuse_predictions(&pv, &ps, lambda).unwrap();
        for ((&f, &v), &s) in fused.probs.probs().as_slice().iter().zip(pv.probs().as_slice()).zip(ps.probs().as_slice()) {
            prop_assert!(f >= v.min(s) - 1e-15 && f <= v.max(s) + 1e-15);
        }
    }

    #[test]
    fn accuracy_survives_argmax_preserving_transform(m in stochastic(20, 6), seed in any::<u64>()) {
        let (n, k) = m.shape();
        let labels = LabelVector::new((0..n).map(|i| (i as u64 ^ seed) as usize % k).collect(), k).unwrap();
        // squaring is strictly increasing on [0, 1], so it keeps argmax and ties
        let mut sq = m.map(|v| v * v);
        for r in 0..n {
            let s: f64 = sq.row(r).iter().sum();
            sq.row_mut(r).iter_mut().for_each(|v| *v /= s);
        }
        prop_assert_eq!(top1_accuracy(&pm(m), &labels).unwrap(), top1_accuracy(&pm(sq), &labels).unwrap());
    }

    #[test]
    fn aggregate_mean_within_range(values in prop::collection::vec(0.0f64..=1.0, 1..10)) {
        let runs: Vec<RunResult> = values.iter().enumerate().map(|(i, &top1)| RunResult {
            dataset: "d".into(), method: "m".into(), shots: 1, seed: i as u64, top1, lambda_used: None,
        }).collect();
        let agg = aggregate_group(&runs).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(agg.mean_top1 >= lo && agg.mean_top1 <= hi);
        prop_assert!(agg.std_top1 >= 0.0);
    }

    #[test]
    fn pseudolabels_follow_argmax_and_cap(m in stochastic(60, 6), k in 1usize..6) {
        let p = pm(m);
        let set = select_pseudolabels(&p, k).unwrap();
        let mut counts = vec![0; p.num_classes()];
        for e in &set.entries {
            prop_assert_eq!(e.label, argmax(p.probs().row(e.item)));
            counts[e.label] += 1;
        }
        prop_assert!(counts.iter().all(|&c| c <= k));
    }

    #[test]
    fn episode_and_validation_disjoint(per_class in prop::collection::vec(1usize..12, 1..6), shots in 1usize..9, seed in any::<u64>()) {
        let labels: Vec<usize> = per_class.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let lv = LabelVector::new(labels, per_class.len()).unwrap();
        let ep = sample_episode(&lv, shots, seed).unwrap();
        let val = split_validation(&lv, &ep, seed).unwrap();
        let train = ep.indices();
        prop_assert!(val.indices().iter().all(|i| !train.contains(i)));
        prop_assert_eq!(&ep, &sample_episode(&lv, shots, seed).unwrap());
    }

    #[test]
    fn higher_temperature_sharpens(rows in (1usize..6, 2usize..6, 2usize..8).prop_flat_map(|(n, k, d)| (matrix(n, d, -1.0, 1.0), matrix(k, d, -1.0, 1.0))), t in 0.5f64..8.0) {
        let (img, txt) = rows;
        let img = img.cast::<f32>();
        let txt = txt.cast::<f32>();
        prop_assume!(img.row_norms().iter().chain(txt.row_norms().iter()).all(|&n| n > 1e-3));
        let logits = cosine_logits(&img, &txt, 1.0).unwrap();
        let items = EmbeddingTable::from_features(img, "e").unwrap();
        let classes = ClassSpace::new((0..txt.rows()).map(|c| c.to_string()).collect(), Some(txt)).unwrap();
        let lo = zero_shot_probs(&items, &classes, t).unwrap();
        let hi = zero_shot_probs(&items, &classes, t * 1.5).unwrap();
        for r in 0..lo.num_items() {
            let row = logits.row(r);
            let spread = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - row.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-6 {
                prop_assert!(hi.max_confidences()[r] > lo.max_confidences()[r]);
            }
        }
    }
}

/// Relabeling classes by a permutation permutes zero-initialized probe outputs.
#[test]
fn linear_probe_is_class_permutation_equivariant() {
    let x = Matrix::from_fn(24, 6, |r, c| {
        ((r * 7 + c * 3) % 11) as f32 / 5.0 - 1.0 + if c == r % 4 { 2.0 } else { 0.0 }
    });
    let table = EmbeddingTable::from_features(x, "e").unwrap();
    let labels: Vec<usize> = (0..24).map(|r| r % 4).collect();
    let perm = [2usize, 0, 3, 1];
    let permuted: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 5,
        ..Default::default()
    };
    let (a, _) = train_linear_probe(&table, &LabelVector::new(labels, 4).unwrap(), 4, &cfg).unwrap();
    let (b, _) = train_linear_probe(&table, &LabelVector::new(permuted, 4).unwrap(), 4, &cfg).unwrap();
    let pa = predict_linear_probe(&a, &table).unwrap();
    let pb = predict_linear_probe(&b, &table).unwrap();
    for r in 0..24 {
        for (c, &pc) in perm.iter().enumerate() {
            let diff = (pa.probs().get(r, c) - pb.probs().get(r, pc)).abs();
            assert!(diff <= 1e-6, "row {r} class {c}: {diff}");
        }
    }
}
