mod common;

use common::{max_abs_diff, naive_conv, naive_max_pool, naive_unfold, rng, uniform};
use proptest::prelude::*;
use reasdet_core::tensor::{conv, ops};
use reasdet_core::{ConvSpec, Tensor};

#[derive(Debug, Clone)]
struct ConvCase {
    n: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    spec: ConvSpec,
    seed: u64,
}

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (
        1usize..=2,
        1usize..=2,
        1usize..=4,
        1usize..=4,
        prop::sample::select(vec![1usize, 3, 5]),
        1usize..=2,
        1usize..=3,
        any::<u64>(),
    )
        .prop_flat_map(|(n, groups, cig, cog, k, stride, dilation, seed)| {
            let span = dilation * (k - 1) + 1;
            (
                Just((n, groups, cig, cog, k, stride, dilation, seed)),
                span..=16,
                span..=16,
                0..=dilation * (k - 1) / 2,
            )
        })
        .prop_map(
            |((n, groups, cig, cog, k, stride, dilation, seed), h, w, padding)| ConvCase {
                n,
                c_in: groups * cig,
                c_out: groups * cog,
                h,
                w,
                spec: ConvSpec {
                    kernel: k,
                    stride,
                    padding,
                    dilation,
                    groups,
                },
                seed,
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_matches_direct_sum(case in conv_case()) {
        let mut r = rng(case.seed);
        let x = uniform(&[case.n, case.c_in, case.h, case.w], &mut r);
        let k = case.spec.kernel;
        let w = uniform(&[case.c_out, case.c_in / case.spec.groups, k, k], &mut r);
        let b = uniform(&[case.c_out], &mut r);
        let got = conv::conv2d(&x, &w, Some(&b), &case.spec).unwrap();
        let want = naive_conv(&x, &w, Some(&b), &case.spec);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(max_abs_diff(got.data(), want.data()) <= 1e-12);
    }

    #[test]
    fn unfold_matches_gather(case in conv_case()) {
        let x = uniform(&[case.n, case.c_in, case.h, case.w], &mut rng(case.seed));
        let got = conv::unfold(&x, &case.spec).unwrap();
        let want = naive_unfold(&x, &case.spec);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert_eq!(got.data(), want.data());
    }

    #[test]
    fn unfold_then_contract_is_conv(mut case in conv_case()) {
        case.spec.groups = 1;
        let mut r = rng(case.seed);
        let k = case.spec.kernel;
        let x = uniform(&[case.n, case.c_in, case.h, case.w], &mut r);
        let w = uniform(&[case.c_out, case.c_in, k, k], &mut r);
        let cols = conv::unfold(&x, &case.spec).unwrap();
        let (n, ck, ho, wo) = cols.dims4().unwrap();
        let pointwise = w.reshape([case.c_out, ck, 1, 1]).unwrap();
        let via_cols = conv::conv2d(&cols, &pointwise, None, &ConvSpec::same(1)).unwrap();
        let direct = conv::conv2d(&x, &w, None, &case.spec).unwrap();
        prop_assert_eq!(via_cols.shape(), &[n, case.c_out, ho, wo][..]);
        prop_assert!(max_abs_diff(via_cols.data(), direct.data()) <= 1e-12);
    }

    #[test]
    fn max_pool_matches_window_max(
        seed in any::<u64>(),
        (k, p) in prop_oneof![Just((2usize, 0usize)), Just((2, 1)), Just((3, 0)), Just((3, 1)), Just((5, 2))],
        stride in 1usize..=2,
        h in 5usize..=12,
        w in 5usize..=12,
    ) {
        let x = uniform(&[1, 3, h, w], &mut rng(seed));
        let got = ops::max_pool(&x, k, stride, p).unwrap();
        let want = naive_max_pool(&x, k, stride, p);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert_eq!(got.data(), want.data());
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(
        seed in any::<u64>(),
        axis in 0usize..4,
        spread in 0.1f64..50.0,
        shift in -100.0f64..100.0,
    ) {
        let x = uniform(&[2, 3, 4, 5], &mut rng(seed)).map(|v| v * spread);
        let y = ops::softmax(&x, axis).unwrap();
        let sums = ops::sum_axis(&y, axis).unwrap();
        for s in sums.data() {
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
        prop_assert!(y.data().iter().all(|&v| v >= 0.0));
        let shifted = ops::softmax(&x.map(|v| v + shift), axis).unwrap();
        prop_assert!(max_abs_diff(y.data(), shifted.data()) <= 1e-6);
    }

    #[test]
    fn batchnorm_with_identity_statistics_is_identity(seed in any::<u64>(), c in 1usize..6) {
        let x = uniform(&[2, c, 3, 3], &mut rng(seed));
        let (ones, zeros) = (Tensor::ones([c]), Tensor::zeros([c]));
        let stats = ops::NormStats { scale: &ones, shift: &zeros, mean: &zeros, var: &ones, eps: 0.0 };
        prop_assert_eq!(ops::batchnorm_infer(&x, &stats).unwrap(), x);
    }
}

#[test]
fn f32_conv_stays_within_tolerance_of_f64() {
    let mut r = rng(11);
    let spec = ConvSpec::same(3).with_dilation(2).with_groups(2);
    let x = uniform(&[2, 8, 16, 16], &mut r).cast::<f32>().cast::<f64>();
    let w = uniform(&[8, 4, 3, 3], &mut r).cast::<f32>().cast::<f64>();
    let got = conv::conv2d(&x.cast::<f32>(), &w.cast(), None, &spec).unwrap();
    let want = naive_conv(&x, &w, None, &spec);
    assert!(max_abs_diff(&got.cast::<f64>().into_data(), want.data()) <= 1e-5);
}

#[test]
fn empty_conv_output_is_rejected() {
    let x = Tensor::<f64>::zeros([1, 1, 2, 2]);
    let w = Tensor::<f64>::zeros([1, 1, 5, 5]);
    let spec = ConvSpec {
        kernel: 5,
        stride: 1,
        padding: 0,
        dilation: 1,
        groups: 1,
    };
    assert!(conv::conv2d(&x, &w, None, &spec).is_err());
}
