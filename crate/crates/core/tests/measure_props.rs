use ndarray::Array2;
use proptest::prelude::*;
use tblab::measure::{generate_random_measure, lp_norm, LatticeSpace, Profile};

fn profile() -> impl Strategy<Value = Profile> {
    prop_oneof![
        Just(Profile::Uniform),
        Just(Profile::FractalCantor),
        Just(Profile::Clustered)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_measures_have_unit_growth(seed in any::<u64>(), dim in 1usize..=2, n in 1usize..80, frac in 0.15f64..=1.0, prof in profile()) {
        let d = frac * dim as f64;
        let mu = generate_random_measure(seed, dim, d, n, prof).unwrap();
        let (pass, c) = mu.growth_check().unwrap();
        prop_assert!(pass, "C_gr = {c}");
        prop_assert_eq!(mu.len(), n);
    }

    #[test]
    fn lp_norm_is_homogeneous(
        seed in any::<u64>(),
        vals in prop::collection::vec(-5.0f64..5.0, 24),
        lambda in -10.0f64..10.0,
        p in 1.0f64..6.0,
        rho in 1.0f64..6.0,
    ) {
        let mu = generate_random_measure(seed, 1, 1.0, 8, Profile::Uniform).unwrap();
        let lat = LatticeSpace::new(3, rho).unwrap();
        let f = Array2::from_shape_vec((8, 3), vals).unwrap();
        let a = lp_norm(&mu, (&f * lambda).view(), &lat, p);
        let b = lambda.abs() * lp_norm(&mu, f.view(), &lat, p);
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
    }

    #[test]
    fn lp_norm_is_lattice_monotone(
        seed in any::<u64>(),
        vals in prop::collection::vec(-5.0f64..5.0, 24),
        shrink in prop::collection::vec(0.0f64..=1.0, 24),
        p in 1.0f64..6.0,
        rho in 1.0f64..6.0,
    ) {
        let mu = generate_random_measure(seed, 2, 1.0, 8, Profile::Clustered).unwrap();
        let lat = LatticeSpace::new(3, rho).unwrap();
        let g = Array2::from_shape_vec((8, 3), vals).unwrap();
        let f = &g * &Array2::from_shape_vec((8, 3), shrink).unwrap();
        prop_assert!(lp_norm(&mu, f.view(), &lat, p) <= lp_norm(&mu, g.view(), &lat, p) * (1.0 + 1e-14));
    }
}
