mod common;

use std::collections::{BTreeMap, BTreeSet};

use asif::data::{BatchIterator, Dataset, IdentityRegistry, Sample};
use asif::harness::{read_features, read_losses, write_features, write_losses, ExperimentConfig, Method};
use asif::losses::{macro_f1, per_sample_losses, ConfusionMatrix, LossKind};
use asif::model::{DgrSign, DgrState};
use asif::noise::{detect_noisy, flip_count, inject_symmetric, NoiseKind};
use asif::tensor::{Tape, Tensor};
use asif::RngStream;
use common::random_tensor;
use proptest::prelude::*;

fn reversal_chain(x: &Tensor<f64>, w: &Tensor<f64>, targets: &[usize], coefficient: Option<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_requires_grad());
    let h = match coefficient {
        Some(c) => tape.gradient_reversal(xv, c),
        None => xv,
    };
    let wv = tape.constant(w.clone());
    let z = tape.matmul(h, wv).unwrap();
    let r = tape.relu(z);
    let s = tape.scale(r, 0.7);
    let l = tape.softmax_cross_entropy(s, targets).unwrap();
    tape.backward(l).unwrap().get(xv).unwrap().to_vec()
}

fn labelled(labels: &[usize], classes: usize) -> Dataset {
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| Sample {
            id: 3 * i + 1,
            features: vec![i as f64],
            true_label: l,
            observed_label: l,
        })
        .collect();
    Dataset::new(samples, classes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reversal_scales_the_upstream_gradient_exactly(seed in 0u64..10_000, c in -5.0f64..5.0) {
        let mut rng = RngStream::new(seed);
        let x = random_tensor(&mut rng, &[3, 4], 1.0);
        let w = random_tensor(&mut rng, &[4, 5], 1.0);
        let targets = [rng.below(5), rng.below(5), rng.below(5)];
        let plain = reversal_chain(&x, &w, &targets, None);
        let reversed = reversal_chain(&x, &w, &targets, Some(c));
        for (p, r) in plain.iter().zip(&reversed) {
            prop_assert_eq!(*r, -c * p);
        }
    }

    #[test]
    fn symmetric_noise_never_keeps_a_flipped_label(
        labels in prop::collection::vec(0usize..6, 1..200),
        eta in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let noisy = inject_symmetric(&labels, eta, 6, &mut RngStream::new(seed)).unwrap();
        let changed = labels.iter().zip(&noisy).filter(|(a, b)| a != b).count();
        prop_assert_eq!(changed, flip_count(labels.len(), eta).unwrap());
        prop_assert!(noisy.iter().all(|&l| l < 6));
    }

    #[test]
    fn detection_ignores_positive_rescaling(
        losses in prop::collection::vec(0.0f64..50.0, 1..100),
        eta in 0.0f64..=1.0,
        scale in 1e-3f64..1e3,
    ) {
        let a: BTreeMap<usize, f64> = losses.iter().copied().enumerate().collect();
        let b: BTreeMap<usize, f64> = a.iter().map(|(&k, &v)| (k, v * scale)).collect();
        let fa = detect_noisy(&a, eta).unwrap();
        prop_assert_eq!(fa.len(), flip_count(losses.len(), eta).unwrap());
        prop_assert_eq!(fa, detect_noisy(&b, eta).unwrap());
    }

    #[test]
    fn macro_f1_is_invariant_to_class_relabelling(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let a = macro_f1(&ConfusionMatrix::from_predictions(&truth, &pred, 4).unwrap()).unwrap();
        let pt: Vec<usize> = truth.iter().map(|&t| perm[t]).collect();
        let pp: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let b = macro_f1(&ConfusionMatrix::from_predictions(&pt, &pp, 4).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn losses_are_non_negative(seed in 0u64..10_000, spread in 0.1f64..30.0) {
        let mut rng = RngStream::new(seed);
        let logits = random_tensor(&mut rng, &[4, 5], spread);
        let targets: Vec<usize> = (0..4).map(|_| rng.below(5)).collect();
        for kind in [LossKind::Ce, LossKind::Gce { q: 0.7 }, LossKind::Phuber { tau: 10.0 }] {
            for v in per_sample_losses(&logits, &targets, kind).unwrap() {
                prop_assert!(v >= 0.0, "{kind:?}: {v}");
            }
        }
    }

    #[test]
    fn robust_losses_reduce_to_cross_entropy_in_their_limits(p in 0.11f64..1.0) {
        let ce = LossKind::Ce.of_target_prob(p);
        // GCE tends to CE as q -> 0.
        let gce = LossKind::Gce { q: 1e-7 }.of_target_prob(p);
        prop_assert!((gce - ce).abs() < 1e-5 * (1.0 + ce));
        // PHuber is CE wherever p > 1/tau.
        prop_assert_eq!(LossKind::Phuber { tau: 10.0 }.of_target_prob(p), ce);
    }

    #[test]
    fn registry_partitions_observed_classes(
        labels in prop::collection::vec(0usize..5, 1..120),
        relabel in prop::collection::vec(0usize..5, 120),
    ) {
        let d = labelled(&labels, 5);
        let check = |d: &Dataset| -> Result<(), TestCaseError> {
            let reg = IdentityRegistry::build(d);
            prop_assert_eq!(reg.counts().iter().sum::<usize>(), d.len());
            let mut seen = BTreeSet::new();
            for s in d.samples() {
                let (c, k) = reg.lookup(s.id).unwrap();
                prop_assert_eq!(c, s.observed_label);
                prop_assert!(k < reg.counts()[c]);
                prop_assert_eq!(reg.members(c)[k], s.id);
                prop_assert!(seen.insert((c, k)));
            }
            Ok(())
        };
        check(&d)?;
        let map: BTreeMap<usize, usize> = d.ids().into_iter().zip(relabel).collect();
        check(&d.relabel(&map).unwrap())?;
    }

    #[test]
    fn every_epoch_covers_each_sample_once(n in 1usize..300, b in 1usize..64, seed in any::<u64>()) {
        let mut it = BatchIterator::new(n, b, RngStream::new(seed)).unwrap();
        for _ in 0..3 {
            let batches = it.next_epoch();
            prop_assert!(batches.iter().all(|x| !x.is_empty() && x.len() <= b));
            let mut all: Vec<usize> = batches.into_iter().flatten().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn subsampling_is_class_balanced(per_class in 1usize..8, classes in 1usize..6, seed in any::<u64>()) {
        let labels: Vec<usize> = (0..classes * 10).map(|i| i % classes).collect();
        let d = labelled(&labels, classes);
        let n = per_class * classes;
        let a = d.subsample_balanced(n, &mut RngStream::new(seed)).unwrap();
        let b = d.subsample_balanced(n, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n);
        for c in 0..classes {
            prop_assert_eq!(a.samples().iter().filter(|s| s.true_label == c).count(), per_class);
        }
    }

    #[test]
    fn controller_follows_the_update_rule(n_c in 2usize..1000, losses in prop::collection::vec(0.0f64..20.0, 1..10)) {
        let mut dynamic = DgrState::dynamic(n_c).unwrap();
        let mut fixed = DgrState::fixed(n_c, 0.4).unwrap();
        prop_assert_eq!(dynamic.lambda, 1.0);
        let ideal = (n_c as f64).ln();
        for l in losses {
            dynamic.update(l).unwrap();
            fixed.update(l).unwrap();
            prop_assert!((dynamic.lambda - (l - ideal) / ideal).abs() < 1e-12);
            prop_assert_eq!(dynamic.reversal_coefficient(DgrSign::Suppression), -dynamic.lambda);
            prop_assert_eq!(dynamic.reversal_coefficient(DgrSign::Literal), dynamic.lambda);
            prop_assert_eq!(fixed.lambda, 0.4);
        }
    }

    #[test]
    fn features_and_losses_round_trip_exactly(
        rows in prop::collection::btree_map(0usize..10_000, prop::collection::vec(-1e6f64..1e6, 3), 1..20),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f.csv");
        write_features(&f, &rows).unwrap();
        prop_assert_eq!(read_features(&f).unwrap(), rows.clone());
        let losses: BTreeMap<usize, f64> = rows.iter().map(|(&k, v)| (k, v[0].abs())).collect();
        let l = dir.path().join("l.csv");
        write_losses(&l, &losses).unwrap();
        prop_assert_eq!(read_losses(&l).unwrap(), losses);
    }
}

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    (
        (
            prop::sample::select(vec![
                Method::Ce,
                Method::Gce,
                Method::Phuber,
                Method::Asif,
                Method::AsifFixed,
            ]),
            prop::sample::select(vec![NoiseKind::Symmetric, NoiseKind::InstanceDependent]),
            0.0f64..=1.0,
            0usize..100_000,
            1e-6f64..1.0,
            0.0f64..1000.0,
        ),
        (
            1usize..512,
            1usize..500,
            any::<u64>(),
            prop::collection::vec(5usize..256, 1..4),
            0.0f64..0.9,
            any::<bool>(),
            prop::sample::select(vec![DgrSign::Suppression, DgrSign::Literal]),
            -10.0f64..10.0,
        ),
    )
        .prop_map(
            |((method, noise, eta, n, lr, lambda_id), (batch, epochs, seed, widths, dropout, detect, sign, fixed))| {
                ExperimentConfig {
                    method,
                    noise,
                    eta,
                    n,
                    lr,
                    lambda_id,
                    batch_size: batch,
                    epochs,
                    seed,
                    extractor_widths: widths,
                    dropout,
                    detect,
                    probe: !detect,
                    dgr_sign: sign,
                    fixed_lambda: fixed,
                    ..ExperimentConfig::default()
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn config_text_round_trips(config in arb_config()) {
        prop_assert_eq!(ExperimentConfig::parse(&config.to_text()).unwrap(), config);
    }
}
