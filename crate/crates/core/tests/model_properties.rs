use fedveca::data::gen_synthetic;
use fedveca::model::{self, ModelSpec};
use fedveca::numerics::{finite_diff_grad, l2_norm, ParamVector, RngStream};
use proptest::prelude::*;

#[test]
fn full_batch_descent_is_monotone_on_squared_svm() {
    let data = gen_synthetic(200, 5, 2, 2.0, 8).unwrap();
    let spec = ModelSpec::squared_svm(5);
    let idx = data.all_indices();
    let mut w = ParamVector::zeros(spec.param_dim());
    let mut prev = model::loss_at(&spec, &w, &data.samples, &idx).unwrap();
    for step in 0..100 {
        let g = model::full_grad(&spec, &w, &data.samples, &idx).unwrap();
        w.add_scaled(-0.01, &g).unwrap();
        let loss = model::loss_at(&spec, &w, &data.samples, &idx).unwrap();
        assert!(loss <= prev, "step {step}: {loss} > {prev}");
        prev = loss;
    }
}

#[test]
fn full_grad_matches_plain_mean() {
    let data = gen_synthetic(700, 3, 3, 1.0, 2).unwrap();
    let spec = ModelSpec::logistic(3, 3).with_l2(0.1);
    let w = ParamVector::new((0..spec.param_dim()).map(|i| 0.1 * i as f64 - 0.4).collect());
    let chunked = model::full_grad(&spec, &w, &data.samples, &data.all_indices()).unwrap();
    let plain = model::grad(&spec, &w, &data.samples).unwrap();
    assert!(chunked.max_abs_diff(&plain).unwrap() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn analytic_gradient_matches_finite_differences(seed in any::<u64>(), logistic in any::<bool>()) {
        let mut rng = RngStream::new(seed);
        let spec = if logistic {
            ModelSpec::logistic(4, 3).with_l2(0.05)
        } else {
            ModelSpec::squared_svm(4).with_l2(0.05)
        };
        let data = gen_synthetic(64, 4, spec.num_classes.max(2), 1.5, seed).unwrap();
        let w = ParamVector::new((0..spec.param_dim()).map(|_| rng.normal()).collect());
        let analytic = model::grad(&spec, &w, &data.samples).unwrap();
        let numeric = finite_diff_grad(|v| model::loss(&spec, v, &data.samples).unwrap(), &w, 1e-6).unwrap();
        let rel = l2_norm(&analytic.sub(&numeric).unwrap()) / l2_norm(&numeric).max(1e-8);
        prop_assert!(rel <= 1e-5, "relative error {}", rel);
    }

    #[test]
    fn squared_svm_loss_is_convex_along_segments(seed in any::<u64>(), t in 0.0f64..1.0) {
        let mut rng = RngStream::new(seed);
        let spec = ModelSpec::squared_svm(3);
        let data = gen_synthetic(40, 3, 2, 1.0, seed).unwrap();
        let a = ParamVector::new((0..4).map(|_| rng.normal()).collect());
        let b = ParamVector::new((0..4).map(|_| rng.normal()).collect());
        let mid = ParamVector::new(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (1.0 - t) * x + t * y).collect());
        let f = |w: &ParamVector| model::loss(&spec, w, &data.samples).unwrap();
        prop_assert!(f(&mid) <= (1.0 - t) * f(&a) + t * f(&b) + 1e-12);
    }
}
