use proptest::prelude::*;
use rvf_tensor::gradcheck::{grad_check, op_suite, GradCheckConfig};
use rvf_tensor::{conv2d, max_pool2d, sum, mul, ConvSpec, PoolSpec, Tensor};

#[test]
fn every_op_passes_central_differences() {
    for check in op_suite(11).unwrap() {
        println!("{:<24} max rel err {:.3e} ({} checked)", check.name, check.report.max_rel_error, check.report.checked);
        assert!(check.passed(1e-6), "{check:?}");
    }
}

fn tensor(shape: &[usize], seed: &[f64]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|i| seed[i % seed.len()] * (1.0 + i as f64 * 0.01)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_gradients_on_random_geometry(
        cin in 1usize..3, cout in 1usize..3, k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3, h in 5usize..8, vals in prop::collection::vec(-2.0f64..2.0, 7..13),
    ) {
        let spec = ConvSpec::same(cin, cout, k, stride);
        let x = tensor(&[1, cin, h, h], &vals);
        let w = tensor(&spec.weight_shape(), &vals[1..]);
        let b = tensor(&[cout], &vals[2..]);
        let oh = spec.output_size(h).unwrap();
        let r = tensor(&[1, cout, oh, oh], &vals[3..]);
        let report = grad_check(
            |v| Ok(sum(&mul(&conv2d(&v[0], &v[1], Some(&v[2]), spec)?, &r)?)),
            &[x, w, b],
            GradCheckConfig::default(),
        ).unwrap();
        prop_assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn pool_output_is_idempotent_for_unit_window(vals in prop::collection::vec(-5.0f64..5.0, 16)) {
        let x = Tensor::new(&[1, 1, 4, 4], vals).unwrap();
        let y = max_pool2d(&x, PoolSpec::new(1, 1, 0)).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }
}
