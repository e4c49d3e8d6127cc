//! Pair classification, child containment, the comparable split and collar
//! probabilities.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{bail, Result};
use rand::Rng;
use rayon::prelude::*;
use tblab::cz::{
    boundary_probability, comparable_partition, rcub_check, DiscreteOperator, PairClass, TwoGrid,
};
use tblab::fixtures::two_grid;
use tblab::seed;

use super::operator::{kernel_named, standard_specs};
use super::{random, Shared};
use crate::report::{Check, SuiteOutput};

/// Pairs whose class disagrees with the independently evaluated predicates,
/// or for which not exactly one predicate holds.
fn classification_mismatches(two: &TwoGrid) -> (usize, usize) {
    let (i1, i2) = (two.index1(), two.index2());
    let r = two.params.r as i32;
    let mut pairs = 0;
    let mut bad_pairs = 0;
    for q in i1.ids() {
        for s in i2.ids() {
            pairs += 1;
            let (sq, ss) = (i1.scale(q.level), i2.scale(s.level));
            let (qb, sb) = (two.bounds1(q), two.bounds2(s));
            let (small, large, gap, bad) = if sq <= ss {
                (&qb, &sb, ss - sq, two.bad12.is_bad_for(q, sq, ss))
            } else {
                (&sb, &qb, sq - ss, two.bad21.is_bad_for(s, ss, sq))
            };
            let dist = small.dist(large);
            let separated = !bad && dist >= small.side;
            let deep = !bad && gap > r && large.contains(small);
            let comparable = !bad && gap <= r && dist < small.side;
            let hits = [bad, separated, deep, comparable]
                .iter()
                .filter(|&&b| b)
                .count();
            let expected = if bad {
                PairClass::Bad
            } else if separated {
                PairClass::Separated
            } else if deep {
                PairClass::DeepNested
            } else {
                PairClass::Comparable
            };
            match two.class_of(q, s) {
                Ok(c) if hits == 1 && c == expected => {}
                _ => bad_pairs += 1,
            }
        }
    }
    (pairs, bad_pairs)
}

pub fn comparable(shared: &Shared) -> Result<SuiteOutput> {
    let cfg = shared.cfg;
    let c = &cfg.comparable;
    let rs = &cfg.ledger.rs;
    let Some(&r0) = rs.first() else {
        bail!("classification needs at least one r")
    };
    let mut checks = Vec::new();

    let specs = standard_specs(cfg, r0, "ledger")?;
    let grids: Vec<TwoGrid> = specs
        .par_iter()
        .map(two_grid)
        .collect::<tblab::Result<_>>()?;
    for &r in rs {
        let start = Instant::now();
        let rows: Vec<((usize, usize), (usize, usize))> = grids
            .par_iter()
            .map(|g| -> Result<_> {
                let two = g.with_r(r)?;
                let rc = rcub_check(&two);
                Ok((classification_mismatches(&two), (rc.pairs, rc.exceptions)))
            })
            .collect::<Result<_>>()?;
        let pairs: usize = rows.iter().map(|x| x.0 .0).sum();
        let wrong: usize = rows.iter().map(|x| x.0 .1).sum();
        let nested: usize = rows.iter().map(|x| x.1 .0).sum();
        let exceptions: usize = rows.iter().map(|x| x.1 .1).sum();
        let elapsed = start.elapsed();
        checks.push(
            Check::at_most(format!("classification[r={r}]"), wrong as f64, 0.0)
                .with_note(format!("{pairs} pairs scanned"))
                .with_runtime(elapsed),
        );
        checks.push(
            Check::new(
                format!("child_containment[r={r}]"),
                exceptions == 0 && nested > 0,
                exceptions as f64,
                0.0,
            )
            .with_note(format!("{nested} deeply nested good pairs")),
        );
    }

    let start = Instant::now();
    let specs = standard_specs(cfg, c.split_r, "comparable")?;
    let rows: Vec<(usize, usize, f64)> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| -> Result<_> {
            let two = two_grid(spec)?;
            let mu = two.ctx1.measure();
            let k = kernel_named(cfg, "riesz", spec.dim, spec.d)?
                .expect("riesz exists in every dimension");
            let op = DiscreteOperator::new(k, mu);
            let n = mu.len();
            let psi = random(
                n,
                1,
                seed::derive_indexed(cfg.seed, "split-psi", &[i as i64]),
            )
            .column(0)
            .to_owned();
            let phi = random(
                n,
                1,
                seed::derive_indexed(cfg.seed, "split-phi", &[i as i64]),
            )
            .column(0)
            .to_owned();
            let (i1, i2) = (two.index1(), two.index2());
            let (mut seen, mut inexact, mut worst) = (0usize, 0usize, 0.0f64);
            'outer: for q in i1.ids().filter(|q| q.level > 0) {
                for s in i2.ids().filter(|s| s.level > 0) {
                    if two.class_of(q, s)? != PairClass::Comparable {
                        continue;
                    }
                    for qi in i1.children(q) {
                        for sj in i2.children(s) {
                            let p = comparable_partition(
                                &op,
                                &two,
                                q,
                                qi,
                                s,
                                sj,
                                cfg.aux.eta,
                                &psi,
                                &phi,
                            )?;
                            if !p.exact {
                                inexact += 1;
                            }
                            worst = worst.max(p.residual / (1e-12 * p.whole.abs() + 1e-14));
                        }
                    }
                    seen += 1;
                    if seen >= c.max_comparable_pairs {
                        break 'outer;
                    }
                }
            }
            Ok((seen, inexact, worst))
        })
        .collect::<Result<_>>()?;
    let seen: usize = rows.iter().map(|r| r.0).sum();
    let inexact: usize = rows.iter().map(|r| r.1).sum();
    let worst = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    checks.push(
        Check::new(
            "partition_exact",
            inexact == 0 && seen > 0,
            inexact as f64,
            0.0,
        )
        .with_note(format!("{seen} comparable pairs"))
        .with_runtime(elapsed),
    );
    checks.push(
        Check::at_most("comparable_msum", worst, 1.0)
            .with_note("residual over 1e-12 |whole| + 1e-14".to_string())
            .with_runtime(elapsed),
    );

    let eta = c.collar_eta;
    for &dim in &c.collar_dims {
        let mut rng = seed::rng(seed::derive_indexed(
            cfg.seed,
            "collar-point",
            &[dim as i64],
        ));
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        for &r in &c.collar_rs {
            let start = Instant::now();
            let s = seed::derive_indexed(cfg.seed, "collar", &[dim as i64, r as i64]);
            let full = boundary_probability(dim, r, eta, &x, c.collar_trials, s)?;
            let half = boundary_probability(
                dim,
                r,
                eta / 2.0,
                &x,
                c.collar_trials,
                seed::derive(s, "half"),
            )?;
            let elapsed = start.elapsed();
            for (e, est) in [(eta, &full), (eta / 2.0, &half)] {
                checks.push(
                    Check::at_most_mc(
                        format!("collar_bound[N={dim},r={r},eta={e}]"),
                        est.p_hat,
                        est.bound,
                        est.stderr,
                    )
                    .with_note(format!("{} trials", est.trials))
                    .with_runtime(elapsed),
                );
            }
            let ratio = if full.p_hat > 0.0 {
                half.p_hat / full.p_hat
            } else {
                f64::NAN
            };
            checks.push(
                Check::new(
                    format!("collar_linearity[N={dim},r={r}]"),
                    (0.3..=0.7).contains(&ratio),
                    ratio,
                    0.7,
                )
                .with_note(format!(
                    "halving ratio in [0.3, 0.7]; p_hat {:.5} and {:.5}",
                    full.p_hat, half.p_hat
                ))
                .with_runtime(elapsed),
            );
        }
    }
    Ok(SuiteOutput {
        checks,
        tables: BTreeMap::new(),
    })
}
