use proptest::prelude::*;

use xmap::evalstats::{p_value, pearson_r, r_squared};

fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

proptest! {
    #[test]
    fn pearson_ignores_positive_affine_maps((xs, ys) in series(), a in 0.01f64..50.0, b in -100.0f64..100.0) {
        let r = pearson_r(&xs, &ys).unwrap();
        let moved: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        prop_assert!((pearson_r(&moved, &ys).unwrap() - r).abs() <= 1e-12);
        let moved: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
        prop_assert!((pearson_r(&xs, &moved).unwrap() - r).abs() <= 1e-12);
    }

    #[test]
    fn r_squared_is_r_times_r((xs, ys) in series()) {
        let r = pearson_r(&xs, &ys).unwrap();
        prop_assert_eq!(r_squared(&xs, &ys).unwrap(), r * r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn p_values_are_seeded_and_floored((xs, ys) in series(), seed in any::<u64>(), n_perms in 99usize..400) {
        let p = p_value(&xs, &ys, n_perms, seed).unwrap();
        prop_assert_eq!(p, p_value(&xs, &ys, n_perms, seed).unwrap());
        prop_assert!(p >= 1.0 / (n_perms + 1) as f64);
        prop_assert!(p <= 1.0);
    }
}
