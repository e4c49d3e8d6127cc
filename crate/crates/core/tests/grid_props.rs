use proptest::prelude::*;
use tblab::grid::{is_n_bad, BadnessTable, CubeIndex, DyadicParams, DyadicSystem, WindowSpec};
use tblab::measure::{generate_random_measure, Profile};

fn setup(
    seed: u64,
    dim: usize,
    n: usize,
    r: u32,
) -> (
    tblab::measure::AtomicMeasure,
    DyadicParams,
    DyadicSystem,
    DyadicSystem,
) {
    let params = DyadicParams::new(0.3, r, 1.0, 0.5).unwrap();
    let mu = generate_random_measure(seed, dim, 0.5, n, Profile::Clustered).unwrap();
    let w = WindowSpec::for_params(&params);
    let a = DyadicSystem::build_random(seed ^ 1, &mu, &params, w).unwrap();
    let b = DyadicSystem::build_random(seed ^ 2, &mu, &params, w).unwrap();
    let top = a.top().max(b.top());
    let a = if a.top() < top {
        a.extended_to(seed ^ 1, &mu, top).unwrap()
    } else {
        a
    };
    let b = if b.top() < top {
        b.extended_to(seed ^ 2, &mu, top).unwrap()
    } else {
        b
    };
    (mu, params, a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn occupied_cubes_partition_mass(seed in any::<u64>(), dim in 1usize..=2, n in 1usize..64) {
        let (mu, _, sys, _) = setup(seed, dim, n, 2);
        let index = CubeIndex::locate(&mu, &sys).unwrap();
        prop_assert!(index.is_isolating());
        for t in 0..index.n_levels() {
            let level = index.level(t);
            let mut seen = vec![false; mu.len()];
            let mut mass = 0.0;
            for c in &level.cubes {
                mass += c.mass;
                let b = sys.bounds(&c.cube);
                for &x in &c.atoms {
                    prop_assert!(!seen[x]);
                    seen[x] = true;
                    prop_assert!(b.contains_point(mu.point(x)));
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            prop_assert!((mass - mu.total_mass()).abs() <= 1e-12 * mu.total_mass());
        }
    }

    #[test]
    fn badness_characterisation_both_ways(seed in any::<u64>(), dim in 1usize..=2, n in 1usize..32, r in 1u32..4) {
        let (mu, params, sys, other) = setup(seed, dim, n, r);
        let index = CubeIndex::locate(&mu, &sys).unwrap();
        let table = BadnessTable::build(&index, &sys, &other, &params);
        for id in index.ids() {
            let qb = sys.bounds(&index.cube(id).cube);
            let qs = index.scale(id.level);
            for nn in 0..(other.top() - qs + 1) as i64 {
                let scan = is_n_bad(&qb, qs, &other, nn, &params);
                prop_assert_eq!(scan.bad, table.is_n_bad(id, nn));
                let e = nn.max(r as i64) as i32;
                match scan.witness {
                    Some(w) => {
                        prop_assert!(scan.bad);
                        prop_assert!(w.scale >= qs + e);
                        let thr = qb.side.powf(params.gamma) * DyadicSystem::side(w.scale).powf(1.0 - params.gamma);
                        prop_assert!(qb.dist_to_boundary(&other.bounds(&w)) <= thr);
                    }
                    None => {
                        prop_assert!(!scan.bad);
                        for k in (qs + e)..=other.top() {
                            let thr = qb.side.powf(params.gamma) * DyadicSystem::side(k).powf(1.0 - params.gamma);
                            prop_assert!(other.boundary_gap(&qb, k) > thr);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn params_match_constraints(gamma in 0.001f64..0.999, r in 1u32..10, d in 0.1f64..3.0) {
        let ok = d * gamma / (1.0 - gamma) <= 0.25 + 1e-15 && gamma <= 1.0 / (2.0 * (d + 1.0)) + 1e-15;
        prop_assert_eq!(DyadicParams::new(gamma, r, 1.0, d).is_ok(), ok);
        if ok {
            let p = DyadicParams::new(gamma, r, 1.0, d).unwrap();
            for j in 0..50 {
                let th = p.theta(j) as f64;
                prop_assert!((1.0 - gamma) * th >= gamma * j as f64 + r as f64 - 1e-9);
                prop_assert!((1.0 - gamma) * (th - 1.0) < gamma * j as f64 + r as f64);
            }
        }
    }
}

#[test]
fn shift_bits_are_fair() {
    let params = DyadicParams::new(0.3, 2, 1.0, 0.5).unwrap();
    let mu = generate_random_measure(3, 2, 0.5, 4, Profile::Uniform).unwrap();
    let mut ones = 0usize;
    let mut total = 0usize;
    for s in 0..200u64 {
        let sys =
            DyadicSystem::build_random(s, &mu, &params, WindowSpec::for_params(&params)).unwrap();
        for b in sys.shifts() {
            ones += b.iter().map(|&v| v as usize).sum::<usize>();
            total += b.len();
        }
    }
    let p = ones as f64 / total as f64;
    let se = (0.25 / total as f64).sqrt();
    assert!((p - 0.5).abs() <= 4.0 * se, "{p} over {total}");
}
