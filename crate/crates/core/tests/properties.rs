//! Property tests over randomly generated networks and datasets.

use illc_core::cluster::kmeans;
use illc_core::compress::{compress_illc, compress_oneshot, Mode};
use illc_core::data::{split, Dataset};
use illc_core::metrics::{io_unfaithfulness_global, structural_unfaithfulness};
use illc_core::mlp::{Activation, Mlp, OutputActivation};
use illc_core::qbaf::{Polarity, Qbaf};
use illc_core::rng::SplitMix64;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn build_model(sizes: &[usize], activation: Activation, seed: u64) -> Mlp {
    let mut rng = SplitMix64::new(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..sizes.len() - 1 {
        weights.push(Array2::from_shape_fn((sizes[l + 1], sizes[l]), |_| {
            rng.next_gaussian() * (2.0 / sizes[l] as f64).sqrt()
        }));
        biases.push(Array1::from_shape_fn(sizes[l + 1], |_| {
            0.3 * rng.next_gaussian()
        }));
    }
    Mlp::new(
        sizes.to_vec(),
        weights,
        biases,
        activation,
        OutputActivation::Sigmoid,
    )
    .unwrap()
}

fn batch(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = SplitMix64::new(seed);
    Array2::from_shape_fn((n, dim), |_| rng.next_gaussian())
}

fn arb_sizes() -> impl Strategy<Value = Vec<usize>> {
    (
        1usize..=4,
        prop::collection::vec(1usize..=6, 1..=3),
        1usize..=3,
    )
        .prop_map(|(input, hidden, output)| {
            let mut v = vec![input];
            v.extend(hidden);
            v.push(output);
            v
        })
}

fn arb_activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Relu),
        Just(Activation::Sigmoid),
        Just(Activation::Tanh)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Shapes close over any batch size, and each row of a batched forward
    // pass is bitwise the same as evaluating that row alone.
    #[test]
    fn forward_shape_closure_and_batch_equivariance(
        sizes in arb_sizes(),
        activation in arb_activation(),
        seed in any::<u64>(),
        n in 1usize..=7,
    ) {
        let model = build_model(&sizes, activation, seed);
        let x = batch(n, sizes[0], seed ^ 0xABCD);
        let stack = model.forward_collect(&x).unwrap();
        for l in 0..sizes.len() {
            prop_assert_eq!(stack.post(l).dim(), (n, sizes[l]));
        }
        for r in 0..n {
            let row = x.row(r).insert_axis(ndarray::Axis(0)).to_owned();
            let single = model.forward_collect(&row).unwrap();
            for l in 0..sizes.len() {
                for j in 0..sizes[l] {
                    prop_assert_eq!(
                        stack.post(l)[[r, j]].to_bits(),
                        single.post(l)[[0, j]].to_bits()
                    );
                }
            }
        }
    }

    // apply(inverse(y)) recovers y; the other direction is ill-conditioned
    // once the activation saturates.
    #[test]
    fn activation_inverse_consistency(u in 0.001f64..0.999, v in -20.0f64..20.0) {
        let back = Activation::Sigmoid.apply(Activation::Sigmoid.inverse(u).unwrap());
        prop_assert!((back - u).abs() < 1e-12);
        let t = 2.0 * u - 1.0;
        let back = Activation::Tanh.apply(Activation::Tanh.inverse(t).unwrap());
        prop_assert!((back - t).abs() < 1e-12);
        let y = Activation::Relu.apply(v);
        prop_assert_eq!(Activation::Relu.inverse(y).unwrap(), v.max(0.0));
    }

    // The split is a partition, is stratified within one sample, and is a
    // pure function of the seed.
    #[test]
    fn split_partitions_and_is_deterministic(
        n in 6usize..60,
        frac in 0.15f64..0.85,
        seed in any::<u64>(),
        label_seed in any::<u64>(),
    ) {
        let mut rng = SplitMix64::new(label_seed);
        let labels: Vec<u8> = (0..n).map(|_| (rng.next_u64() % 2) as u8).collect();
        // Need both classes present for stratification to mean anything.
        prop_assume!(labels.iter().any(|&l| l == 0) && labels.iter().any(|&l| l == 1));
        let feats = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let data = Dataset::new(feats, labels.clone(), vec!["id".into()]).unwrap();
        let result = split(&data, frac, seed);
        prop_assume!(result.is_ok()); // tiny n with extreme frac can empty a side
        let (train, test) = result.unwrap();

        let mut ids: Vec<i64> = train.features.column(0).iter()
            .chain(test.features.column(0).iter())
            .map(|&v| v as i64)
            .collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n as i64).collect::<Vec<_>>());

        let expected_test = (frac * n as f64).round() as usize;
        prop_assert_eq!(test.n_samples(), expected_test);
        let class1 = labels.iter().filter(|&&l| l == 1).count() as f64;
        let expected1 = expected_test as f64 * class1 / n as f64;
        let got1 = test.labels.iter().filter(|&&l| l == 1).count() as f64;
        prop_assert!((got1 - expected1).abs() <= 1.0);

        let (train2, test2) = split(&data, frac, seed).unwrap();
        prop_assert_eq!(train, train2);
        prop_assert_eq!(test, test2);
    }

    #[test]
    fn kmeans_labels_are_valid_and_deterministic(
        m in 2usize..20,
        dim in 1usize..4,
        k_frac in 0.1f64..1.0,
        seed in any::<u64>(),
    ) {
        let points = batch(m, dim, seed ^ 0x1234);
        let k = ((m as f64 * k_frac).round() as usize).clamp(1, m);
        let a = kmeans(&points, k, seed).unwrap();
        let b = kmeans(&points, k, seed).unwrap();
        prop_assert_eq!(&a.labels, &b.labels);
        let mut used = vec![false; k];
        for &c in &a.labels {
            prop_assert!(c < k);
            used[c] = true;
        }
        prop_assert!(used.iter().all(|&u| u), "empty cluster survived repair");
        prop_assert!(a.inertia >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // No compression, no difference: gamma = 1 reproduces the original
    // network exactly under both procedures.
    #[test]
    fn gamma_one_identity(
        sizes in arb_sizes(),
        activation in arb_activation(),
        seed in any::<u64>(),
    ) {
        let model = build_model(&sizes, activation, seed);
        let x = batch(9, sizes[0], seed ^ 0x77);
        for f in [compress_illc, compress_oneshot] {
            let r = f(&model, &x, 1.0, seed ^ 0x3, Mode::Global, None).unwrap();
            let orig = model.predict(&x).unwrap();
            let comp = r.compressed.model.predict(&x).unwrap();
            for (a, b) in orig.iter().zip(comp.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            let io = io_unfaithfulness_global(&model, &r.compressed, &x).unwrap();
            prop_assert_eq!(io.sum, 0.0);
            let s = structural_unfaithfulness(&model, &r.compressed, &x, None).unwrap();
            prop_assert_eq!(s.total, 0.0);
        }
    }

    // Attack and support partition the edge set by weight sign, and the
    // framework's strengths are exactly the network's activations.
    #[test]
    fn qbaf_polarity_partition_and_semantics(
        sizes in arb_sizes(),
        activation in arb_activation(),
        seed in any::<u64>(),
    ) {
        let model = build_model(&sizes, activation, seed);
        let q = Qbaf::from_mlp(&model);
        q.validate().unwrap();
        for e in &q.edges {
            prop_assert!(e.weight != 0.0);
            let expect = if e.weight < 0.0 { Polarity::Attack } else { Polarity::Support };
            prop_assert_eq!(e.polarity, expect);
        }
        let x = batch(1, sizes[0], seed ^ 0x55);
        let strengths = q.forward(x.row(0).as_slice().unwrap()).unwrap();
        let stack = model.forward_collect(&x).unwrap();
        let mut idx = 0;
        for l in 0..sizes.len() {
            for j in 0..sizes[l] {
                prop_assert_eq!(strengths[idx].to_bits(), stack.post(l)[[0, j]].to_bits());
                idx += 1;
            }
        }
    }

    // Unfaithfulness is nonnegative, and the per-layer decomposition is
    // consistent with the total and its prefix sums.
    #[test]
    fn metrics_nonnegative_and_consistent(
        seed in any::<u64>(),
        gamma in 0.25f64..0.9,
    ) {
        let model = build_model(&[3, 6, 5, 2], Activation::Relu, seed);
        let x = batch(12, 3, seed ^ 0x99);
        let r = compress_illc(&model, &x, gamma, seed, Mode::Global, None).unwrap();
        let io = io_unfaithfulness_global(&model, &r.compressed, &x).unwrap();
        prop_assert!(io.mean >= 0.0 && io.sum >= 0.0);
        prop_assert!((io.sum - io.mean * 12.0).abs() < 1e-12 * io.sum.abs().max(1.0));
        let s = structural_unfaithfulness(&model, &r.compressed, &x, None).unwrap();
        prop_assert!(s.total >= 0.0);
        prop_assert!(s.per_layer.iter().all(|&v| v >= 0.0));
        let sum: f64 = s.per_layer.iter().sum();
        prop_assert!((s.total - sum).abs() < 1e-12 * sum.max(1.0));
        for (i, w) in s.cumulative.windows(2).enumerate() {
            let _ = i;
            prop_assert!(w[1] >= w[0]);
        }
    }
}
