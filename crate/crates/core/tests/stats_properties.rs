use proptest::prelude::*;

use zonal_core::stats::{summarize, wilcoxon_rank_sum, wilcoxon_rank_sum_with, wilcoxon_signed_rank_with, Method};

fn sample(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..40).prop_map(f64::from), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rank_sum_is_symmetric_in_its_samples(a in sample(12), b in sample(12)) {
        prop_assume!(a.iter().chain(&b).any(|v| *v != a[0]));
        let ab = wilcoxon_rank_sum(&a, &b).unwrap();
        let ba = wilcoxon_rank_sum(&b, &a).unwrap();
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
    }

    #[test]
    fn rank_sum_ignores_increasing_affine_maps(a in sample(10), b in sample(10), k in 1i32..5, c in -20i32..20) {
        prop_assume!(a.iter().chain(&b).any(|v| *v != a[0]));
        let map = |v: &[f64]| v.iter().map(|x| f64::from(k) * x + f64::from(c)).collect::<Vec<_>>();
        let p = wilcoxon_rank_sum(&a, &b).unwrap().p_value;
        let q = wilcoxon_rank_sum(&map(&a), &map(&b)).unwrap().p_value;
        prop_assert_eq!(p, q);
    }

    #[test]
    fn signed_rank_is_symmetric_under_swapping(x in sample(15), shift in prop::collection::vec(-5i32..5, 15)) {
        let y: Vec<f64> = x.iter().zip(&shift).map(|(v, s)| v + f64::from(*s)).collect();
        prop_assume!(x.iter().zip(&y).any(|(a, b)| a != b));
        let xy = wilcoxon_signed_rank_with(&x, &y, Method::Exact).unwrap();
        let yx = wilcoxon_signed_rank_with(&y, &x, Method::Exact).unwrap();
        prop_assert!((xy.p_value - yx.p_value).abs() < 1e-12);
        prop_assert!(xy.p_value > 0.0 && xy.p_value <= 1.0);
    }

    #[test]
    fn normal_approximation_tracks_exact_for_moderate_samples(
        a in prop::collection::vec(-1.0f64..1.0, 11..=25),
        b in prop::collection::vec(-0.5f64..1.5, 11..=25),
    ) {
        let exact = wilcoxon_rank_sum_with(&a, &b, Method::Exact).unwrap().p_value;
        let approx = wilcoxon_rank_sum_with(&a, &b, Method::NormalApprox).unwrap().p_value;
        prop_assert!((exact - approx).abs() < 0.02, "exact {exact} approx {approx}");
    }

    #[test]
    fn summary_brackets_the_mean(values in prop::collection::vec(0.0f64..1.0, 1..30)) {
        let s = summarize(&values).unwrap();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mean >= lo - 1e-12 && s.mean <= hi + 1e-12);
        prop_assert_eq!(s.sd.is_some(), values.len() > 1);
    }
}

#[test]
fn auto_switches_to_the_normal_approximation_above_the_exact_limit() {
    let a: Vec<f64> = (0..20).map(f64::from).collect();
    let b: Vec<f64> = (0..10).map(|v| f64::from(v) + 0.5).collect();
    assert_eq!(wilcoxon_rank_sum(&a, &b).unwrap().method, Method::NormalApprox);
    assert_eq!(wilcoxon_rank_sum(&a[..10], &b).unwrap().method, Method::Exact);
}

#[test]
fn identical_pairs_cannot_be_tested() {
    assert!(wilcoxon_signed_rank_with(&[1.0, 2.0], &[1.0, 2.0], Method::Auto).is_err());
}

#[test]
fn summary_formats_like_a_table_cell() {
    assert_eq!(summarize(&[0.70, 0.78]).unwrap().format(2), "0.74±0.06");
    assert_eq!(summarize(&[0.5]).unwrap().format(2), "0.50");
}
