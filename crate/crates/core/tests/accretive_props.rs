mod common;

use common::{instance, PROFILES, STYLES};
use proptest::prelude::*;
use tblab::accretive::AccretiveStyle;
use tblab::grid::CubeId;

fn style() -> impl Strategy<Value = AccretiveStyle> {
    prop::sample::select(STYLES.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adapted_means_stay_away_from_zero(seed in any::<u64>(), dim in 1usize..=2, n in 2usize..64, delta in 0.2f64..0.9, st in style(), pi in 0usize..3) {
        let inst = instance(seed, dim, n, delta, st, PROFILES[pi]);
        let ctx = &inst.ctx;
        let mu = ctx.measure();
        let index = ctx.index();
        prop_assert!(ctx.accretive().verify(index, mu).pass);
        for id in index.ids() {
            let b = ctx.b_of(id);
            let c = index.cube(id);
            let integral: f64 = c.atoms.iter().map(|&x| mu.weight(x) * b[x]).sum();
            prop_assert!(integral.abs() >= delta * delta * c.mass * (1.0 - 1e-12));
        }
        for k in ctx.k_min()..=ctx.top() {
            prop_assert!(ctx.eba(k).iter().all(|v| v.abs() >= delta * delta * (1.0 - 1e-12)));
        }
    }

    #[test]
    fn layers_nest_and_decay(seed in any::<u64>(), dim in 1usize..=2, n in 2usize..64, delta in 0.2f64..0.9, st in style(), pi in 0usize..3) {
        let inst = instance(seed, dim, n, delta, st, PROFILES[pi]);
        let (index, layers) = (inst.ctx.index(), inst.ctx.layers());
        prop_assert_eq!(&layers.layers[0], &vec![index.top_id()]);
        for (j, layer) in layers.layers.iter().enumerate() {
            for (a, &q) in layer.iter().enumerate() {
                for &s in &layer[a + 1..] {
                    let lo = if q.level <= s.level { q } else { s };
                    let hi = if q.level <= s.level { s } else { q };
                    prop_assert!(index.ancestor(lo, hi.level) != hi, "{:?} and {:?} overlap", q, s);
                }
                if j > 0 {
                    let containing: Vec<CubeId> = layers.layers[j - 1]
                        .iter()
                        .copied()
                        .filter(|&p| p.level > q.level && index.ancestor(q, p.level) == p)
                        .collect();
                    prop_assert_eq!(containing.len(), 1);
                }
            }
        }
        let rep = layers.decay_report(index, delta);
        prop_assert!(rep.pass, "worst margin {}", rep.worst_margin);
    }

    #[test]
    fn adapted_functions_stabilise_at_atoms(seed in any::<u64>(), dim in 1usize..=2, n in 2usize..48, delta in 0.2f64..0.9, st in style()) {
        let inst = instance(seed, dim, n, delta, st, PROFILES[0]);
        let ctx = &inst.ctx;
        let k = ctx.k_min();
        let (b, e) = (ctx.ba(k), ctx.eba(k));
        for x in 0..ctx.n_atoms() {
            prop_assert!((b[x] - e[x]).abs() <= 1e-15 * b[x].abs().max(1.0));
            prop_assert!(b[x].abs() >= delta * delta * (1.0 - 1e-12));
        }
    }
}

#[test]
fn indicator_systems_have_a_single_layer() {
    for seed in 0..5 {
        let inst = instance(seed, 2, 40, 0.5, AccretiveStyle::Indicator, PROFILES[2]);
        assert!(inst.ctx.layers().is_trivial());
        assert!(inst
            .ctx
            .diff_scales()
            .all(|k| inst.ctx.omega(k).iter().all(|&v| v == 0.0)));
    }
}
