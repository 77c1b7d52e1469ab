mod common;

use proptest::prelude::*;
use reflect_sod::losses::{LossWeights, StructuralLoss};
use reflect_sod::network::{Mode, Sfcn, SfcnConfig, SfcnParams};

#[test]
fn probabilities_are_the_foreground_softmax() {
    let config = SfcnConfig::tiny();
    let (pairs, _) = common::random_pairs(&config, 3, 1);
    let mut model = Sfcn::new(config, 2).unwrap();
    for map in model.forward(&pairs, Mode::Eval).unwrap() {
        let soft = map.softmax();
        for ((y, x), &p) in map.probabilities.indexed_iter() {
            assert!((p - soft[[1, y, x]]).abs() < 1e-12);
            assert!((soft[[0, y, x]] + soft[[1, y, x]] - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn eval_mode_is_repeatable() {
    let config = SfcnConfig::tiny();
    let (pairs, _) = common::random_pairs(&config, 2, 3);
    let mut model = Sfcn::new(config, 4).unwrap();
    let a = model.forward(&pairs, Mode::Eval).unwrap();
    let b = model.forward(&pairs, Mode::Eval).unwrap();
    assert_eq!(a, b);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let config = SfcnConfig::tiny();
    let base = SfcnParams::init(&config, 5).unwrap();
    let (pairs, gts) = common::random_pairs(&config, 2, 6);
    let loss = StructuralLoss::new(LossWeights::default()).unwrap();
    let mut model = Sfcn::from_parts(config.clone(), base.clone());
    let maps = model.forward_recorded(&pairs, Mode::Train).unwrap();
    let (_, dprob) = loss.evaluate_with_grad(&common::probs(&maps), &gts).unwrap();
    let analytic = model.backward(&dprob).unwrap().trainable_vector();
    let theta = base.trainable_vector();
    // Every 7th parameter keeps the test quick.
    for i in (0..theta.len()).step_by(7) {
        let f = |v: f64| {
            let mut t = theta.clone();
            t[i] = v;
            common::loss_at(&config, &base, &t, &pairs, &gts, &loss)
        };
        let numeric = (f(theta[i] + 1e-5) - f(theta[i] - 1e-5)) / 2e-5;
        assert!(common::grad_close(analytic[i], numeric, 1e-3, 1e-6), "param {i}: {} vs {numeric}", analytic[i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn output_matches_input_size(h in 2usize..6, w in 2usize..6, seed in 0u64..100) {
        let config = SfcnConfig { input_size: [h * 4, w * 4], ..SfcnConfig::tiny() };
        let (pairs, _) = common::random_pairs(&config, 1, seed);
        let mut model = Sfcn::new(config, seed).unwrap();
        let out = model.forward(&pairs, Mode::Eval).unwrap();
        prop_assert_eq!(out[0].probabilities.dim(), (h * 4, w * 4));
        prop_assert!(out[0].probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
