//! Property tests for metric symmetries, simplex preservation, and the
//! gradient-check property at the exact network architectures the flows use.

use amfvi::metrics::{mmd, w2, KernelConfig};
use amfvi::mixture::{apply_floor, effective_experts, ema_step, performance_softmax};
use amfvi::netcore::{Activation, DenseNet, MaskedDenseNet};
use amfvi::Matrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(n: usize, vals: &[f64]) -> Matrix {
    Array2::from_shape_vec((n, 2), vals.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_is_symmetric(
        xs in prop::collection::vec(-5.0f64..5.0, 12),
        ys in prop::collection::vec(-5.0f64..5.0, 12),
    ) {
        let x = points(6, &xs);
        let y = points(6, &ys);
        let a = w2(&x, &y).unwrap();
        let b = w2(&y, &x).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn mmd_is_symmetric_and_v_nonnegative(
        xs in prop::collection::vec(-5.0f64..5.0, 12),
        ys in prop::collection::vec(-5.0f64..5.0, 12),
    ) {
        let x = points(6, &xs);
        let y = points(6, &ys);
        let k = KernelConfig::MedianHeuristic;
        let a = mmd(&x, &y, &k).unwrap();
        let b = mmd(&y, &x, &k).unwrap();
        prop_assert!((a.unbiased - b.unbiased).abs() < 1e-9);
        prop_assert!((a.biased - b.biased).abs() < 1e-9);
        prop_assert!(a.biased >= 0.0);
    }

    #[test]
    fn mmd_median_bandwidth_is_translation_invariant(
        xs in prop::collection::vec(-5.0f64..5.0, 12),
        ys in prop::collection::vec(-5.0f64..5.0, 12),
        shift in -10.0f64..10.0,
    ) {
        let x = points(6, &xs);
        let y = points(6, &ys);
        let k = KernelConfig::MedianHeuristic;
        let base = mmd(&x, &y, &k).unwrap();
        let moved = mmd(&x.mapv(|v| v + shift), &y.mapv(|v| v + shift), &k).unwrap();
        prop_assert!((base.biased - moved.biased).abs() < 1e-9);
    }

    #[test]
    fn ema_and_floor_preserve_the_simplex(
        raw_pi in prop::collection::vec(1e-6f64..1.0, 3),
        scores in prop::collection::vec(-50.0f64..10.0, 3),
        beta in 0.0f64..0.999,
    ) {
        let total: f64 = raw_pi.iter().sum();
        let pi: Vec<f64> = raw_pi.iter().map(|p| p / total).collect();
        let mut next = ema_step(&pi, &scores, beta);
        prop_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        apply_floor(&mut next, 1e-3);
        prop_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(next.iter().all(|&p| p >= 1e-3 * (1.0 - 3.0 * 1e-3)));
        let n_eff = effective_experts(&next);
        prop_assert!((1.0..=3.0 + 1e-12).contains(&n_eff));
    }

    #[test]
    fn softmax_shift_invariance(
        scores in prop::collection::vec(-20.0f64..5.0, 4),
        shift in -30.0f64..30.0,
    ) {
        let a = performance_softmax(&scores);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let b = performance_softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

/// Gradient-check property at the exact architectures used by the flows:
/// the coupling nets (1-64-64-1, tanh) and the masked nets (2 dims, 64-64
/// hidden, four heads). Twenty random parameter/input draws each, central
/// differences with step 1e-5, relative error below 1e-4.
#[test]
fn gradient_check_at_flow_architectures() {
    let step = 1e-5;
    let tol = 1e-4;

    for draw in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);

        // Coupling-style net.
        let mut net = DenseNet::new(&[1, 64, 64, 1], Activation::Tanh, false, &mut rng);
        let x = Array2::from_shape_fn((3, 1), |_| rng.gen_range(-2.0..2.0));
        let upstream = Array2::from_shape_fn((3, 1), |_| rng.gen_range(-1.0..1.0));
        let (grads, _) = net.backward(&x, &upstream).unwrap();
        check_subset(&mut net, None, &x, &upstream, &grads, step, tol, &mut rng);

        // Masked autoregressive net.
        let mut made = MaskedDenseNet::new(2, &[64, 64], vec![1, 2], false, &mut rng);
        let xm = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-2.0..2.0));
        let um = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let (gm, _) = made.backward(&xm, &um).unwrap();
        let masks: Vec<Array2<f64>> = made.masks().to_vec();
        let mut inner = made.net().clone();
        check_subset(&mut inner, Some(&masks), &xm, &um, &gm, step, tol, &mut rng);
    }
}

#[allow(clippy::too_many_arguments)]
fn check_subset(
    net: &mut DenseNet,
    masks: Option<&[Array2<f64>]>,
    x: &Matrix,
    upstream: &Matrix,
    grads: &amfvi::netcore::Gradients,
    step: f64,
    tol: f64,
    rng: &mut ChaCha8Rng,
) {
    let objective = |net: &DenseNet, x: &Matrix| (net.forward(x).unwrap() * upstream.clone()).sum();
    // A random subset of coordinates per draw keeps the suite fast while
    // covering every layer across the twenty draws.
    for l in 0..net.layers().len() {
        let shape = net.layers()[l].weights.raw_dim();
        for _ in 0..12 {
            let i = rng.gen_range(0..shape[0]);
            let j = rng.gen_range(0..shape[1]);
            if let Some(masks) = masks {
                if masks[l][[i, j]] == 0.0 {
                    continue;
                }
            }
            let orig = net.layers()[l].weights[[i, j]];
            net.layers_mut()[l].weights[[i, j]] = orig + step;
            let plus = objective(net, x);
            net.layers_mut()[l].weights[[i, j]] = orig - step;
            let minus = objective(net, x);
            net.layers_mut()[l].weights[[i, j]] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.layers[l].weights[[i, j]];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom < tol,
                "layer {l} W[{i},{j}]: {analytic} vs {numeric}"
            );
        }
    }
}
