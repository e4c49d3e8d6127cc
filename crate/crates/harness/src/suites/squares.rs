//! Square functions, Stein, contraction and maximal-function ratios, and
//! Carleson embeddings, tracked across instance-size doublings.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{anyhow, Result};
use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use tblab::accretive::AccretiveStyle;
use tblab::fixtures::Instance;
use tblab::measure::LatticeSpace;
use tblab::randnorm::{
    carleson_embedding_check, carleson_norm, chi_carleson_bound, chi_sequence, cube_indicators,
    ensemble, improved_contraction_ratio, rmf_maximal, square_function_ratio, stein_ratio, Sampler,
    SquareFamily,
};
use tblab::seed;

use super::{delta_key, growth_with_slack, style_name, LadderKey, Replicates, Shared};
use crate::config::ExperimentConfig;
use crate::report::{Check, SuiteOutput, Table};

fn sampler(cfg: &ExperimentConfig, label: &str, key: &[i64]) -> Sampler {
    Sampler {
        n_exact: cfg.sampler.n_exact,
        mc_trials: cfg.sampler.mc_trials,
        seed: seed::derive_indexed(cfg.seed, label, key),
    }
}

fn growth_check(name: String, series: &[Replicates], max_growth: f64, sizes: &[usize]) -> Check {
    let values: Vec<f64> = series.iter().map(Replicates::mean).collect();
    let stderrs: Vec<f64> = series.iter().map(Replicates::stderr).collect();
    let finite = series
        .iter()
        .all(|s| !s.0.is_empty() && s.0.iter().all(|v| v.is_finite() && *v > 0.0));
    let (raw, slack) = growth_with_slack(&values, &stderrs);
    let note = sizes
        .iter()
        .zip(&values)
        .map(|(n, v)| format!("{n}:{v:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    Check::new(name, finite && slack <= max_growth, raw, max_growth)
        .with_stderr(stderrs.iter().copied().fold(0.0, f64::max))
        .with_note(note)
}

fn ladder<'a>(
    map: &'a BTreeMap<LadderKey, Vec<Instance>>,
    key: LadderKey,
) -> Result<&'a [Instance]> {
    map.get(&key)
        .map(Vec::as_slice)
        .ok_or_else(|| anyhow!("no instances for {key:?}"))
}

struct Series<'a> {
    style: AccretiveStyle,
    delta: f64,
    dim: usize,
    levels: Vec<&'a [Instance]>,
}

fn series<'a>(
    shared: &'a Shared,
    style: AccretiveStyle,
    delta: f64,
    dim: usize,
    sizes: &[usize],
) -> Result<Series<'a>> {
    let map = shared.ladders()?;
    let levels = sizes
        .iter()
        .map(|&atoms| {
            ladder(
                map,
                LadderKey {
                    style,
                    delta_milli: delta_key(delta),
                    dim,
                    atoms,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Series {
        style,
        delta,
        dim,
        levels,
    })
}

/// Per-family sup ratios of one instance, over the random ensemble and every cube indicator.
fn family_ratios(
    cfg: &ExperimentConfig,
    inst: &Instance,
    lattice: LatticeSpace,
    p: f64,
    key: &[i64],
) -> Vec<f64> {
    let ctx = &inst.ctx;
    let mut ens = ensemble(
        seed::derive_indexed(cfg.seed, "ensemble", key),
        ctx.measure(),
        ctx.index(),
        lattice,
        p,
        cfg.sampler.ensemble,
    );
    ens.extend(cube_indicators(ctx.measure(), ctx.index(), lattice, p));
    let s = sampler(cfg, "sqfn", key);
    SquareFamily::ALL
        .iter()
        .map(|&fam| square_function_ratio(ctx, fam, p, lattice, &ens, &s).max_ratio)
        .collect()
}

/// Stein, improved contraction and maximal-function ratios of one instance.
fn extra_ratios(
    cfg: &ExperimentConfig,
    inst: &Instance,
    lattice: LatticeSpace,
    p: f64,
    key: &[i64],
) -> [f64; 3] {
    let ctx = &inst.ctx;
    let mu = ctx.measure();
    let n = ctx.n_atoms();
    let m = lattice.m;
    let s = sampler(cfg, "sqfn-extra", key);
    let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "sqfn-extra-data", key));

    let terms: Vec<(i32, Array2<f64>)> = ctx
        .diff_scales()
        .map(|k| {
            (
                k,
                Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0)),
            )
        })
        .collect();
    let stein = stein_ratio(ctx, &terms, p, lattice, &s);

    let count = 6;
    let xis: Vec<Array1<f64>> = (0..count)
        .map(|_| Array1::from_shape_fn(m, |_| rng.gen_range(-1.0..1.0)))
        .collect();
    let rhos = Array2::from_shape_fn((n, count), |_| rng.gen_range(-1.0..1.0));
    let contraction =
        improved_contraction_ratio(rhos.view(), mu.weights(), &xis, lattice, cfg.t(), &s);

    let ens = ensemble(
        seed::derive_indexed(cfg.seed, "rmf", key),
        mu,
        ctx.index(),
        lattice,
        p,
        2,
    );
    let rmf = ens
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let sum: f64 = (0..n)
                .map(|x| {
                    let rb = rmf_maximal(
                        ctx,
                        f.view(),
                        x,
                        lattice,
                        &s.child("rmf", &[i as i64, x as i64]),
                        0,
                    );
                    mu.weight(x) * rb.upper.unwrap_or(rb.lower).powf(p)
                })
                .sum();
            sum.powf(1.0 / p)
        })
        .fold(0.0, f64::max);
    [stein, contraction, rmf]
}

const EXTRA: [&str; 3] = ["stein", "improved_contraction", "rmf"];

pub fn sqfn(shared: &Shared) -> Result<SuiteOutput> {
    let cfg = shared.cfg;
    let q = &cfg.sqfn;
    let mut checks = Vec::new();
    let mut table = Table::new(&[
        "p",
        "rho",
        "style",
        "delta",
        "dim",
        "quantity",
        "atoms",
        "mean_ratio",
        "stderr",
        "max_ratio",
    ]);
    for &p in &q.ps {
        for &rho in &q.rhos {
            let lattice = LatticeSpace::new(cfg.lattice.m, rho)?;
            for (si, &style) in q.styles.iter().enumerate() {
                for &delta in &q.deltas {
                    for &dim in &q.dims {
                        let start = Instant::now();
                        let ser = series(shared, style, delta, dim, &q.sizes)?;
                        let extras = si == 0;
                        let mut sups = vec![
                            vec![Replicates::default(); q.sizes.len()];
                            SquareFamily::ALL.len()
                        ];
                        let mut extra_sups =
                            vec![vec![Replicates::default(); q.sizes.len()]; EXTRA.len()];
                        for (level, insts) in ser.levels.iter().enumerate() {
                            let per: Vec<(Vec<f64>, Option<[f64; 3]>)> = insts
                                .par_iter()
                                .enumerate()
                                .map(|(i, inst)| {
                                    let key = [
                                        dim as i64,
                                        q.sizes[level] as i64,
                                        i as i64,
                                        (p * 100.0) as i64,
                                        (rho * 100.0) as i64,
                                    ];
                                    let fam = family_ratios(cfg, inst, lattice, p, &key);
                                    let extra =
                                        extras.then(|| extra_ratios(cfg, inst, lattice, p, &key));
                                    (fam, extra)
                                })
                                .collect();
                            for (fam, extra) in per {
                                for (j, v) in fam.into_iter().enumerate() {
                                    sups[j][level].push(v);
                                }
                                if let Some(e) = extra {
                                    for (j, v) in e.into_iter().enumerate() {
                                        extra_sups[j][level].push(v);
                                    }
                                }
                            }
                        }
                        let elapsed = start.elapsed();
                        let tag = format!(
                            "p={p},rho={rho},style={},delta={delta},N={dim}",
                            style_name(ser.style)
                        );
                        let mut emit = |quantity: &str, s: &[Replicates]| {
                            for (level, reps) in s.iter().enumerate() {
                                table.push([
                                    p.to_string(),
                                    rho.to_string(),
                                    style_name(ser.style).to_string(),
                                    ser.delta.to_string(),
                                    ser.dim.to_string(),
                                    quantity.to_string(),
                                    q.sizes[level].to_string(),
                                    reps.mean().to_string(),
                                    reps.stderr().to_string(),
                                    reps.max().to_string(),
                                ]);
                            }
                            checks.push(
                                growth_check(
                                    format!("{quantity}_growth[{tag}]"),
                                    s,
                                    q.max_growth,
                                    &q.sizes,
                                )
                                .with_runtime(elapsed),
                            );
                        };
                        for (fam, s) in SquareFamily::ALL.iter().zip(&sups) {
                            emit(fam.name(), s);
                        }
                        if extras {
                            for (name, s) in EXTRA.iter().zip(&extra_sups) {
                                emit(name, s);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(SuiteOutput {
        checks,
        tables: BTreeMap::from([("ratio_vs_size".to_string(), table)]),
    })
}

pub fn carleson(shared: &Shared) -> Result<SuiteOutput> {
    let cfg = shared.cfg;
    let battery = shared.battery()?;
    let mut checks = Vec::new();

    let chi: Vec<(f64, f64, f64)> = battery
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let ctx = &inst.ctx;
            let rep = carleson_norm(
                ctx.measure(),
                ctx.index(),
                &chi_sequence(ctx),
                1.0,
                &sampler(cfg, "chi-carleson", &[i as i64]),
            );
            (rep.value, rep.stderr, chi_carleson_bound(inst.spec.delta))
        })
        .collect();
    let worst = chi
        .iter()
        .map(|c| (c.0 - 3.0 * c.1) / c.2)
        .fold(0.0, f64::max);
    checks.push(
        Check::at_most("chi_carleson", worst, 1.0)
            .with_note(format!("{} fixtures, Car^1 over 1 + 1/tau", chi.len())),
    );

    let q = &cfg.sqfn;
    let Some(&style) = q.styles.first() else {
        return Ok(SuiteOutput {
            checks,
            tables: BTreeMap::new(),
        });
    };
    for &p in &q.ps {
        for &rho in &q.rhos {
            let lattice = LatticeSpace::new(cfg.lattice.m, rho)?;
            for &delta in &q.deltas {
                for &dim in &q.dims {
                    let start = Instant::now();
                    let ser = series(shared, style, delta, dim, &q.sizes)?;
                    let mut ones = vec![Replicates::default(); q.sizes.len()];
                    let mut sign_ratio = 0.0f64;
                    let mut sign_floor = f64::INFINITY;
                    for (level, insts) in ser.levels.iter().enumerate() {
                        let per: Vec<Result<(f64, f64)>> = insts
                            .par_iter()
                            .enumerate()
                            .map(|(i, inst)| {
                                let ctx = &inst.ctx;
                                let key = [
                                    dim as i64,
                                    q.sizes[level] as i64,
                                    i as i64,
                                    (p * 100.0) as i64,
                                    (rho * 100.0) as i64,
                                ];
                                let ens = ensemble(
                                    seed::derive_indexed(cfg.seed, "embedding", &key),
                                    ctx.measure(),
                                    ctx.index(),
                                    lattice,
                                    p,
                                    cfg.sampler.ensemble.min(8),
                                );
                                let d = chi_sequence(ctx);
                                let s = sampler(cfg, "embedding", &key);
                                let plain =
                                    carleson_embedding_check(ctx, &d, None, &ens, p, lattice, &s)?;
                                let mut rng = seed::rng(seed::derive_indexed(
                                    cfg.seed,
                                    "embedding-signs",
                                    &key,
                                ));
                                // c_k = ±1, constant on each cube of D_k.
                                let index = ctx.index();
                                let signs: Vec<Array1<f64>> = d
                                    .iter()
                                    .map(|(k, _)| {
                                        let level = index.level_of(*k);
                                        let per: Vec<f64> = (0..index.level(level).cubes.len())
                                            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                                            .collect();
                                        Array1::from_shape_fn(ctx.n_atoms(), |x| {
                                            per[index.atom_cube(level, x).slot]
                                        })
                                    })
                                    .collect();
                                let signed = carleson_embedding_check(
                                    ctx,
                                    &d,
                                    Some(&signs),
                                    &ens,
                                    p,
                                    lattice,
                                    &s,
                                )?;
                                Ok((plain.max_ratio, signed.max_ratio))
                            })
                            .collect();
                        for r in per {
                            let (a, b) = r?;
                            ones[level].push(a);
                            if a > 0.0 {
                                sign_ratio = sign_ratio.max(b / a);
                                sign_floor = sign_floor.min(b / a);
                            }
                        }
                    }
                    let tag = format!(
                        "p={p},rho={rho},style={},delta={delta},N={dim}",
                        style_name(style)
                    );
                    let elapsed = start.elapsed();
                    checks.push(
                        growth_check(
                            format!("embedding_growth[{tag}]"),
                            &ones,
                            q.max_growth,
                            &q.sizes,
                        )
                        .with_runtime(elapsed),
                    );
                    let spread = sign_ratio.max(1.0 / sign_floor);
                    checks.push(
                        Check::at_most(format!("embedding_signs[{tag}]"), spread, 2.0)
                            .with_note(format!(
                                "signed/plain ratio in [{sign_floor:.4}, {sign_ratio:.4}]"
                            ))
                            .with_runtime(elapsed),
                    );
                }
            }
        }
    }
    Ok(SuiteOutput {
        checks,
        tables: BTreeMap::new(),
    })
}
