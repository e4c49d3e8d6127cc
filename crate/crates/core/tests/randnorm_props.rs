mod common;

use common::{instance, random, PROFILES};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use tblab::accretive::AccretiveStyle;
use tblab::grid::CubeId;
use tblab::measure::{generate_random_measure, LatticeSpace, Profile};
use tblab::randnorm::{
    carleson_norm, check_decoupling_terms, chi_carleson_bound, chi_sequence, decoupling_check,
    decoupling_exact, khintchine_constants, randomized_norm, rmf_maximal, DecouplingTerm, Method,
    Sampler,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn contraction_never_increases_l2_norm(
        seed in any::<u64>(),
        k in 1usize..10,
        lambdas in prop::collection::vec(-1.0f64..=1.0, 10),
        rho in 1.0f64..5.0,
    ) {
        let mu = generate_random_measure(seed, 1, 1.0, 6, Profile::Uniform).unwrap();
        let lat = LatticeSpace::new(2, rho).unwrap();
        let fam: Vec<Array2<f64>> = (0..k).map(|i| random(6, 2, seed ^ i as u64)).collect();
        let scaled: Vec<Array2<f64>> = fam.iter().zip(&lambdas).map(|(h, &l)| h * l).collect();
        let s = Sampler::default();
        let a = randomized_norm(&mu, &scaled, lat, 2.0, &s);
        let b = randomized_norm(&mu, &fam, lat, 2.0, &s);
        prop_assert_eq!(b.method, Method::Exact);
        prop_assert!(a.value <= b.value * (1.0 + 1e-12));
    }

    #[test]
    fn khintchine_sandwich_on_functions(seed in any::<u64>(), k in 1usize..12, p in 1.0f64..5.0) {
        let mu = generate_random_measure(seed, 2, 1.0, 10, Profile::Clustered).unwrap();
        let fam: Vec<Array2<f64>> = (0..k).map(|i| random(10, 1, seed ^ (i as u64) << 8)).collect();
        let r = randomized_norm(&mu, &fam, LatticeSpace::scalar(), p, &Sampler::default());
        let (a, b) = khintchine_constants(p);
        let q = r.ratio.unwrap();
        prop_assert!(q >= a * (1.0 - 1e-12) && q <= b * (1.0 + 1e-12), "p={} q={} window=[{},{}]", p, q, a, b);
    }

    #[test]
    fn monte_carlo_is_reproducible(seed in any::<u64>(), k in 6usize..20) {
        let mu = generate_random_measure(seed, 1, 1.0, 5, Profile::Uniform).unwrap();
        let fam: Vec<Array2<f64>> = (0..k).map(|i| random(5, 2, seed ^ i as u64)).collect();
        let lat = LatticeSpace::new(2, 3.0).unwrap();
        let s = Sampler { n_exact: 5, mc_trials: 2000, seed };
        let a = randomized_norm(&mu, &fam, lat, 1.5, &s);
        let b = randomized_norm(&mu, &fam, lat, 1.5, &s);
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        prop_assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        prop_assert!(a.value >= 0.0);
    }

    #[test]
    fn scalar_rmf_is_doob_maximal(seed in any::<u64>(), n in 4usize..40) {
        let inst = instance(seed, 1, n, 0.5, AccretiveStyle::Indicator, PROFILES[0]);
        let ctx = &inst.ctx;
        let f = random(ctx.n_atoms(), 1, seed);
        let s = Sampler::default();
        for x in [0, ctx.n_atoms() / 2, ctx.n_atoms() - 1] {
            let doob = (ctx.k_min()..=ctx.top()).map(|k| ctx.expectation(f.view(), k)[[x, 0]].abs()).fold(0.0, f64::max);
            let r = rmf_maximal(ctx, f.view(), x, LatticeSpace::scalar(), &s, 20);
            prop_assert!((r.lower - doob).abs() <= 1e-12 * doob.max(1.0));
            if let Some(u) = r.upper {
                prop_assert!((u - doob).abs() <= 1e-12 * doob.max(1.0));
            }
        }
    }
}

#[test]
fn constant_function_has_constant_rmf() {
    let inst = instance(4, 2, 30, 0.5, AccretiveStyle::Indicator, PROFILES[1]);
    let ctx = &inst.ctx;
    let lat = LatticeSpace::new(3, 4.0).unwrap();
    let c = [0.5, -1.0, 2.0];
    let f = Array2::from_shape_fn((ctx.n_atoms(), 3), |(_, j)| c[j]);
    let r = rmf_maximal(ctx, f.view(), 3, lat, &Sampler::default(), 20);
    let norm = lat.norm(&c);
    assert!(
        (r.lower - norm).abs() <= 1e-9 * norm,
        "{} vs {norm}",
        r.lower
    );
}

#[test]
fn single_cube_indicator_has_unit_carleson_norm() {
    let inst = instance(21, 2, 48, 0.5, AccretiveStyle::Indicator, PROFILES[2]);
    let (mu, index) = (inst.ctx.measure(), inst.ctx.index());
    let s = Sampler::default();
    for t in [1, index.n_levels() / 2, index.n_levels() - 1] {
        let q0 = CubeId { level: t, slot: 0 };
        let mut d = Array1::zeros(mu.len());
        for &x in &index.cube(q0).atoms {
            d[x] = 1.0;
        }
        let rep = carleson_norm(mu, index, &[(index.scale(t), d)], 1.0, &s);
        assert!((rep.value - 1.0).abs() <= 1e-12, "{}", rep.value);
    }
    assert_eq!(
        carleson_norm(
            mu,
            index,
            &[(index.scale(1), Array1::zeros(mu.len()))],
            1.0,
            &s
        )
        .value,
        0.0
    );
}

#[test]
fn stopping_indicators_are_carleson() {
    for (seed, delta) in [(1u64, 0.3), (2, 0.5), (3, 0.8)] {
        let inst = instance(
            seed,
            2,
            64,
            delta,
            AccretiveStyle::SignedPerturbation,
            PROFILES[seed as usize % 3],
        );
        let ctx = &inst.ctx;
        let rep = carleson_norm(
            ctx.measure(),
            ctx.index(),
            &chi_sequence(ctx),
            1.0,
            &Sampler::default(),
        );
        assert!(
            rep.value <= chi_carleson_bound(delta) + 3.0 * rep.stderr,
            "{} > {}",
            rep.value,
            chi_carleson_bound(delta)
        );
    }
}

fn cube_terms(
    inst: &tblab::fixtures::Instance,
    seed: u64,
    constant: bool,
    max_terms: usize,
) -> Vec<DecouplingTerm> {
    let index = inst.ctx.index();
    let n = inst.ctx.n_atoms();
    let mut out = Vec::new();
    let mut s = seed;
    for id in index
        .ids()
        .filter(|id| id.level > 0 && index.children(*id).len() > 1)
    {
        if out.len() == max_terms {
            break;
        }
        let mut values = Array2::zeros((n, 2));
        for child in index.children(id) {
            s += 1;
            let v = random(1, 2, s);
            let v = if constant { random(1, 2, seed) } else { v };
            for &x in &index.cube(child).atoms {
                values.row_mut(x).assign(&v.row(0));
            }
        }
        out.push(DecouplingTerm { cube: id, values });
    }
    out
}

#[test]
fn constant_blocks_decouple_exactly() {
    let inst = instance(5, 1, 24, 0.5, AccretiveStyle::Indicator, PROFILES[0]);
    let (mu, index) = (inst.ctx.measure(), inst.ctx.index());
    let terms = cube_terms(&inst, 5, true, 8);
    assert!(!terms.is_empty());
    let lat = LatticeSpace::new(2, 2.0).unwrap();
    let rep = decoupling_exact(mu, index, &terms, lat, 2.0, &Sampler::default()).unwrap();
    assert!((rep.ratio - 1.0).abs() <= 1e-12, "{}", rep.ratio);
}

#[test]
fn tangent_monte_carlo_matches_enumeration() {
    let inst = instance(6, 1, 20, 0.5, AccretiveStyle::Indicator, PROFILES[0]);
    let (mu, index) = (inst.ctx.measure(), inst.ctx.index());
    let terms = cube_terms(&inst, 6, false, 6);
    let lat = LatticeSpace::new(2, 2.0).unwrap();
    let s = Sampler::new(3);
    let exact = decoupling_exact(mu, index, &terms, lat, 2.0, &s).unwrap();
    let mc = decoupling_check(mu, index, &terms, lat, 2.0, 4000, &s).unwrap();
    assert!(
        (exact.rhs - mc.rhs).abs() <= 3.0 * mc.rhs_stderr + 1e-12,
        "{} vs {} ± {}",
        exact.rhs,
        mc.rhs,
        mc.rhs_stderr
    );
}

#[test]
fn unmeasurable_blocks_are_rejected() {
    let inst = instance(7, 1, 20, 0.5, AccretiveStyle::Indicator, PROFILES[0]);
    let index = inst.ctx.index();
    let mut terms = cube_terms(&inst, 7, false, 1);
    let id = terms[0].cube;
    let atoms = &index.cube(id).atoms;
    let child = index.children(id)[0];
    let big = index.cube(child).atoms.len() > 1;
    if big {
        terms[0].values[[index.cube(child).atoms[0], 0]] += 1.0;
        assert!(check_decoupling_terms(index, &terms).is_err());
    }
    let mut outside = cube_terms(&inst, 7, false, 1);
    let stray = (0..inst.ctx.n_atoms()).find(|x| atoms.binary_search(x).is_err());
    if let Some(x) = stray {
        outside[0].values[[x, 1]] = 1.0;
        assert!(check_decoupling_terms(index, &outside).is_err());
    }
}
