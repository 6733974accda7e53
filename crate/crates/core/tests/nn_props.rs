mod common;

use common::*;
use ncofdm_lpe::nn::{init, Activation, Loss, Matrix, ModelSpec, OptimizerConfig, OptimizerKind, OptimizerState};
use proptest::prelude::*;

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=10, 2..=4)
        .prop_filter("at most 200 parameters", |d| param_count(d) <= 200 && *d.last().unwrap() >= 2)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn backprop_matches_finite_differences(
        dims in dims_strategy(),
        combo in 0..GRAD_COMBOS.len(),
        seed in any::<u64>(),
        batch in 1usize..4,
    ) {
        let (hidden, out, loss) = GRAD_COMBOS[combo];
        let case = random_case(seed, &dims, hidden, out, loss, batch);
        prop_assume!(kinks_clear(&case.model, &case.x));
        let err = worst_grad_error(&case);
        prop_assert!(err < 1e-5, "dims {:?} combo {} err {}", dims, combo, err);
    }

    #[test]
    fn sigmoid_head_stays_inside_unit_interval(seed in any::<u64>(), scale in 0.1f64..200.0) {
        let spec = ModelSpec::relu_stack(&[6, 8, 5], Activation::Sigmoid).unwrap();
        let model = init(&spec, seed);
        let x = Matrix::from_vec(3, 6, (0..18).map(|i| scale * ((i as f64) - 9.0)).collect()).unwrap();
        let out = model.forward(&x).unwrap();
        prop_assert!(out.output().as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

fn toy_separable(n: usize) -> (Matrix, Matrix) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let t = i as f64 / n as f64 * std::f64::consts::TAU;
        let class = i % 2;
        let shift = if class == 0 { 1.5 } else { -1.5 };
        xs.extend([shift + 0.4 * t.cos(), shift + 0.4 * t.sin()]);
        ys.extend(if class == 0 { [1.0, 0.0] } else { [0.0, 1.0] });
    }
    (Matrix::from_vec(n, 2, xs).unwrap(), Matrix::from_vec(n, 2, ys).unwrap())
}

#[test]
fn sgd_drives_cross_entropy_down_on_separable_set() {
    let (x, y) = toy_separable(64);
    let spec = ModelSpec::relu_stack(&[2, 8, 2], Activation::Softmax).unwrap();
    let mut model = init(&spec, 11);
    let mut opt = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.1).unwrap(), &model).unwrap();
    let first = model.train_step(&mut opt, &x, &y, Loss::CrossEntropy).unwrap();
    let mut last = first;
    for _ in 1..500 {
        last = model.train_step(&mut opt, &x, &y, Loss::CrossEntropy).unwrap();
    }
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn training_trajectory_is_bit_stable() {
    let (x, _) = toy_separable(32);
    let y = Matrix::from_vec(32, 1, (0..32).map(|i| (i % 3) as f64 * 0.25).collect()).unwrap();
    let run = || {
        let spec = ModelSpec::relu_stack(&[2, 6, 1], Activation::Identity).unwrap();
        let mut m = init(&spec, 5);
        let mut opt = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adam, 1e-2).unwrap(), &m).unwrap();
        (0..120)
            .map(|_| m.train_step(&mut opt, &x, &y, Loss::L2).unwrap().to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
