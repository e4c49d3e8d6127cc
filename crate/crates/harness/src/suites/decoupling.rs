//! Tangent-sequence decoupling: bracket stability across sizes, the kernel
//! variant, and agreement with full enumeration on small instances.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use tblab::accretive::AccretiveStyle;
use tblab::fixtures::{FixtureSpec, Instance};
use tblab::grid::CubeId;
use tblab::measure::LatticeSpace;
use tblab::randnorm::{
    decoupling_check, decoupling_exact, decoupling_terms_from_diffs, decoupling_trick, ensemble,
    DecouplingTerm, Sampler,
};
use tblab::seed;

use super::{delta_key, growth_with_slack, LadderKey, Replicates, Shared};
use crate::config::ExperimentConfig;
use crate::report::{Check, SuiteOutput, Table};

fn sampler(cfg: &ExperimentConfig, label: &str, key: &[i64]) -> Sampler {
    Sampler {
        n_exact: cfg.sampler.n_exact,
        mc_trials: cfg.sampler.mc_trials,
        seed: seed::derive_indexed(cfg.seed, label, key),
    }
}

fn terms_for(
    cfg: &ExperimentConfig,
    inst: &Instance,
    lattice: LatticeSpace,
    p: f64,
    count: usize,
    key: &[i64],
) -> Vec<Vec<DecouplingTerm>> {
    let ctx = &inst.ctx;
    ensemble(
        seed::derive_indexed(cfg.seed, "decoupling-f", key),
        ctx.measure(),
        ctx.index(),
        lattice,
        p,
        count,
    )
    .iter()
    .map(|f| decoupling_terms_from_diffs(ctx, f.view()))
    .filter(|t| !t.is_empty())
    .collect()
}

/// Bounded kernel for the kernel variant: `|k_A(x, z)| <= 1`.
fn trick_kernel(cube: CubeId, x: usize, z: usize) -> f64 {
    (0.37 * x as f64 + 1.13 * z as f64 + 0.71 * cube.level as f64 + 0.05 * cube.slot as f64).cos()
}

/// `max_n max(hi_{n+1} / hi_n, lo_n / lo_{n+1})`.
fn bracket_growth(lo: &[f64], hi: &[f64]) -> f64 {
    lo.windows(2)
        .zip(hi.windows(2))
        .map(|(l, h)| (h[1] / h[0]).max(l[0] / l[1]))
        .fold(0.0, f64::max)
}

/// Bracket of one instance: `(min ratio_low, max ratio_high, max trick ratio)` over its test functions.
fn instance_bracket(
    cfg: &ExperimentConfig,
    inst: &Instance,
    lattice: LatticeSpace,
    p: f64,
    k: &[i64],
) -> Result<(f64, f64, f64, usize)> {
    let d = &cfg.decoupling;
    let fams = terms_for(cfg, inst, lattice, p, d.functions, k);
    let (mut l, mut h, mut t) = (f64::INFINITY, 0.0f64, 0.0f64);
    let (mu, index) = (inst.ctx.measure(), inst.ctx.index());
    for (j, terms) in fams.iter().enumerate() {
        let mut kj = k.to_vec();
        kj.push(j as i64);
        let rep = decoupling_check(
            mu,
            index,
            terms,
            lattice,
            p,
            d.trials,
            &sampler(cfg, "decoupling", &kj),
        )?;
        l = l.min(rep.ratio_low);
        h = h.max(rep.ratio_high);
        let (tl, tr) = decoupling_trick(
            mu,
            index,
            terms,
            trick_kernel,
            lattice,
            p,
            &sampler(cfg, "trick", &kj),
        )?;
        if tr > 0.0 {
            t = t.max(tl / tr);
        }
    }
    Ok((l, h, t, fams.len()))
}

fn note(series: &[Replicates], sizes: &[usize]) -> String {
    sizes
        .iter()
        .zip(series)
        .map(|(n, r)| format!("{n}:{:.4}", r.mean()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn decoupling(shared: &Shared) -> Result<SuiteOutput> {
    let cfg = shared.cfg;
    let d = &cfg.decoupling;
    let lattice = cfg.lattice()?;
    let map = shared.ladders()?;
    let mut checks = Vec::new();
    let mut table = Table::new(&[
        "p",
        "dim",
        "atoms",
        "instance",
        "ratio_low",
        "ratio_high",
        "trick_ratio",
        "functions",
    ]);
    for &p in &d.ps {
        for &dim in &d.dims {
            let start = Instant::now();
            let n = d.sizes.len();
            let (mut lo, mut hi, mut trick) = (
                vec![Replicates::default(); n],
                vec![Replicates::default(); n],
                vec![Replicates::default(); n],
            );
            for (level, &atoms) in d.sizes.iter().enumerate() {
                let key = LadderKey {
                    style: AccretiveStyle::SignedPerturbation,
                    delta_milli: delta_key(d.delta),
                    dim,
                    atoms,
                };
                let insts = map
                    .get(&key)
                    .ok_or_else(|| anyhow!("no instances for {key:?}"))?;
                if insts.len() < d.instances {
                    return Err(anyhow!("only {} instances for {key:?}", insts.len()));
                }
                let rows: Vec<Result<(f64, f64, f64, usize)>> = insts[..d.instances]
                    .par_iter()
                    .enumerate()
                    .map(|(i, inst)| {
                        instance_bracket(
                            cfg,
                            inst,
                            lattice,
                            p,
                            &[dim as i64, atoms as i64, (p * 100.0) as i64, i as i64],
                        )
                    })
                    .collect();
                for (i, r) in rows.into_iter().enumerate() {
                    let (l, h, t, count) = r?;
                    table.push([
                        p.to_string(),
                        dim.to_string(),
                        atoms.to_string(),
                        i.to_string(),
                        l.to_string(),
                        h.to_string(),
                        t.to_string(),
                        count.to_string(),
                    ]);
                    lo[level].push(l);
                    hi[level].push(h);
                    trick[level].push(t);
                }
            }
            let elapsed = start.elapsed();
            let tag = format!("p={p},N={dim}");
            let mean = |s: &[Replicates]| s.iter().map(Replicates::mean).collect::<Vec<_>>();
            let se = |s: &[Replicates]| s.iter().map(Replicates::stderr).collect::<Vec<_>>();
            let finite = |s: &[Replicates]| {
                s.iter()
                    .all(|r| !r.0.is_empty() && r.0.iter().all(|v| v.is_finite() && *v > 0.0))
            };

            // The upper end may not grow and the lower end may not shrink.
            let raw = bracket_growth(&mean(&lo), &mean(&hi));
            let rev = |v: Vec<f64>| v.into_iter().rev().collect::<Vec<_>>();
            let slack = growth_with_slack(&mean(&hi), &se(&hi))
                .1
                .max(growth_with_slack(&rev(mean(&lo)), &rev(se(&lo))).1);
            let bracket_note = d
                .sizes
                .iter()
                .zip(lo.iter().zip(&hi))
                .map(|(n, (l, h))| format!("{n}:[{:.3},{:.3}]", l.mean(), h.mean()))
                .collect::<Vec<_>>()
                .join(" ");
            checks.push(
                Check::new(
                    format!("bracket_growth[{tag}]"),
                    finite(&lo) && finite(&hi) && slack <= d.max_growth,
                    raw,
                    d.max_growth,
                )
                .with_stderr(se(&hi).into_iter().chain(se(&lo)).fold(0.0, f64::max))
                .with_note(bracket_note)
                .with_runtime(elapsed),
            );
            let (raw, slack) = growth_with_slack(&mean(&trick), &se(&trick));
            checks.push(
                Check::new(
                    format!("trick_growth[{tag}]"),
                    finite(&trick) && slack <= d.max_growth,
                    raw,
                    d.max_growth,
                )
                .with_stderr(se(&trick).into_iter().fold(0.0, f64::max))
                .with_note(note(&trick, &d.sizes))
                .with_runtime(elapsed),
            );
        }
    }
    checks.extend(enumeration_checks(cfg, lattice)?);
    Ok(SuiteOutput {
        checks,
        tables: BTreeMap::from([("decoupling_brackets".to_string(), table)]),
    })
}

/// Monte Carlo against exact enumeration of the tangent product space on
/// instances with few cubes.
fn enumeration_checks(cfg: &ExperimentConfig, lattice: LatticeSpace) -> Result<Vec<Check>> {
    let d = &cfg.decoupling;
    let mut checks = Vec::new();
    for &p in &d.ps {
        let mut worst = 0.0f64;
        let mut compared = 0;
        'seeds: for s in 0..64i64 {
            for &dim in &d.dims {
                let atoms = [6, 8, 10][(s % 3) as usize];
                let spec = FixtureSpec::new(
                    seed::derive_indexed(cfg.seed, "small", &[s, dim as i64]),
                    dim,
                    atoms,
                    d.delta,
                    AccretiveStyle::SignedPerturbation,
                    2,
                )?;
                let Ok(inst) = Instance::build(&spec) else {
                    continue;
                };
                let (mu, index) = (inst.ctx.measure(), inst.ctx.index());
                let key = [s, dim as i64, (p * 100.0) as i64];
                for terms in terms_for(cfg, &inst, lattice, p, 1, &key) {
                    let cells: f64 = terms
                        .iter()
                        .map(|t| index.children(t.cube).len() as f64)
                        .product();
                    if terms.len() > d.max_cubes || cells > (1u64 << 20) as f64 {
                        continue;
                    }
                    let exact = decoupling_exact(
                        mu,
                        index,
                        &terms,
                        lattice,
                        p,
                        &sampler(cfg, "enum", &key),
                    )?;
                    let mc = decoupling_check(
                        mu,
                        index,
                        &terms,
                        lattice,
                        p,
                        d.small_trials,
                        &sampler(cfg, "enum", &key),
                    )?;
                    let dev = (mc.rhs - exact.rhs).abs();
                    let z = if mc.rhs_stderr > 0.0 {
                        dev / mc.rhs_stderr
                    } else if dev <= 1e-12 * exact.rhs {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    worst = worst.max(z);
                    compared += 1;
                    if compared == 8 {
                        break 'seeds;
                    }
                }
            }
        }
        let pass = compared >= 4 && worst <= 3.0;
        checks.push(
            Check::new(format!("enumeration_match[p={p}]"), pass, worst, 3.0)
                .with_note(format!("{compared} instances, deviation in stderr units")),
        );
    }
    Ok(checks)
}
