//! Operator-side suites: matrix decay, the exact pairing ledger and the
//! paraproduct.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{bail, Result};
use rayon::prelude::*;
use tblab::accretive::AccretiveStyle;
use tblab::cz::{
    decay_bound_check, pairing_decomposition, paraproduct_check, slope_sweep, DiscreteOperator,
    Kernel, PairClass, TwoGrid,
};
use tblab::fixtures::{two_grid, two_grid_on, FixtureSpec};
use tblab::measure::Profile;
use tblab::seed;

use super::{random, Shared};
use crate::config::ExperimentConfig;
use crate::report::{Check, SuiteOutput, Table};

pub const KERNELS: [&str; 3] = ["riesz", "dipole", "hilbert"];

/// The standard battery: one- and two-dimensional instances across profiles
/// and the non-indicator styles, seeded from the root seed.
pub fn standard_specs(cfg: &ExperimentConfig, r: u32, label: &str) -> Result<Vec<FixtureSpec>> {
    let shapes = [
        (1, Profile::Uniform, AccretiveStyle::SignedPerturbation, 0.4),
        (1, Profile::FractalCantor, AccretiveStyle::Oscillatory, 0.5),
        (2, Profile::Uniform, AccretiveStyle::SignedPerturbation, 0.4),
        (2, Profile::Clustered, AccretiveStyle::Oscillatory, 0.6),
    ];
    shapes
        .iter()
        .enumerate()
        .map(|(i, &(dim, profile, style, delta))| {
            let s = seed::derive_indexed(cfg.seed, label, &[i as i64]);
            Ok(FixtureSpec::new(s, dim, cfg.battery.atoms, delta, style, r)?.with_profile(profile))
        })
        .collect()
}

pub fn kernel_named(
    cfg: &ExperimentConfig,
    name: &str,
    dim: usize,
    d: f64,
) -> Result<Option<Kernel>> {
    let eps = cfg.kernel.eps;
    Ok(match name {
        "riesz" => Some(Kernel::riesz(d, eps)?),
        "dipole" => Some(Kernel::random_dipole(
            seed::derive(cfg.seed, "dipole"),
            dim,
            d,
            eps,
        )?),
        "hilbert" if dim == 1 => Some(Kernel::hilbert(eps)?),
        "hilbert" => None,
        other => bail!("unknown kernel {other}"),
    })
}

/// The configured measure, kernel and separation parameter on two grids.
pub fn base_instance(cfg: &ExperimentConfig) -> Result<(TwoGrid, DiscreteOperator)> {
    let spec = cfg.base_spec()?;
    let mu = cfg.base_measure()?;
    let two = two_grid_on(&spec, &mu)?;
    let op = DiscreteOperator::new(cfg.kernel(mu.dim(), spec.d)?, &mu);
    Ok((two, op))
}

pub fn matrix(shared: &Shared) -> Result<SuiteOutput> {
    let cfg = shared.cfg;
    let m = &cfg.matrix;
    let specs = standard_specs(cfg, cfg.dyadic.r, "matrix")?;
    let grids: Vec<TwoGrid> = specs
        .par_iter()
        .map(two_grid)
        .collect::<tblab::Result<_>>()?;
    let mut checks = Vec::new();
    for name in KERNELS {
        let start = Instant::now();
        let rows: Vec<Option<(usize, usize, usize, f64, f64)>> = specs
            .par_iter()
            .zip(&grids)
            .map(|(spec, two)| -> Result<_> {
                let mu = two.ctx1.measure();
                let Some(k) = kernel_named(cfg, name, spec.dim, spec.d)? else {
                    return Ok(None);
                };
                let op = DiscreteOperator::new(k, mu);
                let rep = decay_bound_check(&op, two)?;
                Ok(Some((
                    rep.separated,
                    rep.deep_nested,
                    rep.violations,
                    rep.worst_margin_separated.max(rep.worst_margin_deep),
                    rep.separated_constant,
                )))
            })
            .collect::<Result<_>>()?;
        let rows: Vec<_> = rows.into_iter().flatten().collect();
        let (sep, deep, viol) = rows
            .iter()
            .fold((0, 0, 0), |a, r| (a.0 + r.0, a.1 + r.1, a.2 + r.2));
        let margin = rows.iter().map(|r| r.3).fold(0.0, f64::max);
        let sep_c = rows.iter().map(|r| r.4).fold(0.0, f64::max);
        let elapsed = start.elapsed();
        checks.push(
            Check::at_most(format!("decay_bound[kernel={name}]"), viol as f64, 0.0)
                .with_note(format!("{sep} separated, {deep} deep-nested pairs; worst margin {margin:.4}; measured separated constant {sep_c:.4}"))
                .with_runtime(elapsed),
        );
        checks.push(Check::new(
            format!("decay_coverage[kernel={name}]"),
            sep > 0 && deep > 0,
            (sep.min(deep)) as f64,
            1.0,
        ));

        for dim in [1usize, 2] {
            let Some(k) = kernel_named(cfg, name, dim, cfg.measure.d.min(dim as f64))? else {
                continue;
            };
            let fit = slope_sweep(&k, dim, 1.0, &m.slope_distances)?;
            checks.push(
                Check::at_most(
                    format!("decay_slope[kernel={name},N={dim}]"),
                    fit.rel_error,
                    m.slope_tolerance,
                )
                .with_note(format!(
                    "slope {:.4}, expected {:.4}",
                    fit.slope, fit.expected
                )),
            );
            let mu = specs
                .iter()
                .zip(&grids)
                .find(|(s, _)| s.dim == dim)
                .map(|(_, g)| g.ctx1.measure())
                .expect("battery covers both dimensions");
            let kc = k.validate(
                mu,
                m.kernel_samples,
                seed::derive_indexed(cfg.seed, "kernel", &[dim as i64]),
            )?;
            checks.push(
                Check::new(
                    format!("kernel_constants[kernel={name},N={dim}]"),
                    kc.pass,
                    kc.size_ratio.max(kc.smooth_ratio),
                    1.0 + 1e-12,
                )
                .with_note(format!(
                    "size ratio {:.4}, smoothness ratio {:.4}",
                    kc.size_ratio, kc.smooth_ratio
                )),
            );
        }
    }

    let (two, op) = base_instance(cfg)?;
    let rep = decay_bound_check(&op, &two)?;
    let mut table = Table::new(&[
        "class",
        "small_in_first",
        "l_small",
        "l_large",
        "long_distance",
        "value",
        "bound",
    ]);
    for r in &rep.records {
        table.push([
            r.class.name().to_string(),
            r.small_in_first.to_string(),
            r.l_small.to_string(),
            r.l_large.to_string(),
            r.long_distance.to_string(),
            r.value.to_string(),
            r.bound.to_string(),
        ]);
    }
    checks.push(
        Check::at_most("base_decay_bound", rep.violations as f64, 0.0)
            .with_note(format!("{} pairs", rep.records.len())),
    );
    Ok(SuiteOutput {
        checks,
        tables: BTreeMap::from([("decay_pairs".to_string(), table)]),
    })
}

struct LedgerStats {
    residual: f64,
    bad_mass: f64,
    mass: f64,
}

pub fn ledger(shared: &Shared) -> Result<SuiteOutput> {
    let cfg = shared.cfg;
    let rs = &cfg.ledger.rs;
    let Some(&r0) = rs.first() else {
        bail!("ledger needs at least one r")
    };
    let specs = standard_specs(cfg, r0, "ledger")?;
    let grids: Vec<TwoGrid> = specs
        .par_iter()
        .map(two_grid)
        .collect::<tblab::Result<_>>()?;
    let mut checks = Vec::new();
    let mut worst_residual = 0.0f64;
    for name in KERNELS {
        let start = Instant::now();
        // stats[r][fixture]
        let mut stats: Vec<Vec<LedgerStats>> = Vec::new();
        for &r in rs {
            let row: Vec<Option<LedgerStats>> = specs
                .par_iter()
                .zip(&grids)
                .enumerate()
                .map(|(i, (spec, base))| -> Result<_> {
                    let Some(k) = kernel_named(cfg, name, spec.dim, spec.d)? else {
                        return Ok(None);
                    };
                    let two = base.with_r(r)?;
                    let mu = two.ctx1.measure();
                    let op = DiscreteOperator::new(k, mu);
                    let n = mu.len();
                    let f = random(
                        n,
                        cfg.lattice.m,
                        seed::derive_indexed(cfg.seed, "ledger-f", &[i as i64]),
                    );
                    let g = random(
                        n,
                        cfg.lattice.m,
                        seed::derive_indexed(cfg.seed, "ledger-g", &[i as i64]),
                    );
                    let l = pairing_decomposition(&op, &two, f.view(), g.view())?;
                    let mass: f64 = l.classes.values().map(|c| c.abs_mass).sum();
                    Ok(Some(LedgerStats {
                        residual: l.identity_residual,
                        bad_mass: l.classes[&PairClass::Bad].abs_mass,
                        mass,
                    }))
                })
                .collect::<Result<_>>()?;
            stats.push(row.into_iter().flatten().collect());
        }
        let elapsed = start.elapsed();
        let residual = stats
            .iter()
            .flatten()
            .map(|s| s.residual)
            .fold(0.0, f64::max);
        worst_residual = worst_residual.max(residual);
        checks.push(
            Check::at_most(format!("ledger_identity[kernel={name}]"), residual, 1e-10)
                .with_runtime(elapsed),
        );

        let aggregate: Vec<f64> = stats
            .iter()
            .map(|row| {
                row.iter().map(|s| s.bad_mass).sum::<f64>()
                    / row
                        .iter()
                        .map(|s| s.mass)
                        .sum::<f64>()
                        .max(f64::MIN_POSITIVE)
            })
            .collect();
        let strict = aggregate.windows(2).all(|w| w[1] < w[0]);
        let worst_step = aggregate
            .windows(2)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max);
        let note = rs
            .iter()
            .zip(&aggregate)
            .map(|(r, a)| format!("r={r}:{a:.4e}"))
            .collect::<Vec<_>>()
            .join(" ");
        checks.push(
            Check::new(
                format!("bad_mass_decrease[kernel={name}]"),
                strict,
                worst_step,
                1.0,
            )
            .with_note(note),
        );

        let fixtures = stats.first().map_or(0, Vec::len);
        let mut rises = 0;
        for i in 0..fixtures {
            let frac: Vec<f64> = stats
                .iter()
                .map(|row| row[i].bad_mass / row[i].mass.max(f64::MIN_POSITIVE))
                .collect();
            rises += frac
                .windows(2)
                .filter(|w| w[1] > w[0] * (1.0 + 1e-12))
                .count();
        }
        checks.push(
            Check::at_most(
                format!("bad_mass_monotone[kernel={name}]"),
                rises as f64,
                0.0,
            )
            .with_note(format!("{fixtures} fixtures")),
        );
    }

    let (two, op) = base_instance(cfg)?;
    let n = op.measure().len();
    let f = random(n, cfg.lattice.m, seed::derive(cfg.seed, "base-f"));
    let g = random(n, cfg.lattice.m, seed::derive(cfg.seed, "base-g"));
    let l = pairing_decomposition(&op, &two, f.view(), g.view())?;
    let mut table = Table::new(&["class", "l_q", "l_r", "long_distance", "value"]);
    for row in &l.rows {
        table.push([
            row.class.name().to_string(),
            row.l_q.to_string(),
            row.l_r.to_string(),
            row.long_distance.to_string(),
            row.value.to_string(),
        ]);
    }
    checks.push(
        Check::at_most("base_ledger_identity", l.identity_residual, 1e-10).with_note(format!(
            "{} pairs, bad mass fraction {:.4e}",
            l.rows.len(),
            l.bad_mass_fraction
        )),
    );
    Ok(SuiteOutput {
        checks,
        tables: BTreeMap::from([("ledger_pairs".to_string(), table)]),
    })
}

pub fn paraproduct(shared: &Shared) -> Result<SuiteOutput> {
    let cfg = shared.cfg;
    let specs = standard_specs(cfg, cfg.paraproduct.r, "paraproduct")?;
    let rows: Vec<(tblab::cz::ParaproductReport, usize)> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| -> Result<_> {
            let two = two_grid(spec)?;
            let mu = two.ctx1.measure();
            let k = match kernel_named(cfg, &cfg.kernel.name, spec.dim, spec.d)? {
                Some(k) => k,
                None => Kernel::riesz(spec.d, cfg.kernel.eps)?,
            };
            let op = DiscreteOperator::new(k, mu);
            let n = mu.len();
            let g = random(
                n,
                cfg.lattice.m,
                seed::derive_indexed(cfg.seed, "para-g", &[i as i64]),
            );
            let f = random(
                n,
                cfg.lattice.m,
                seed::derive_indexed(cfg.seed, "para-f", &[i as i64]),
            );
            Ok((paraproduct_check(&op, &two, g.view(), f.view()), n))
        })
        .collect::<Result<_>>()?;
    let equiv: usize = rows.iter().map(|r| r.0.smap.equivalence_violations).sum();
    let mono: usize = rows.iter().map(|r| r.0.smap.monotonicity_violations).sum();
    let pairs: usize = rows.iter().map(|r| r.0.smap.pairs).sum();
    let nonempty: usize = rows.iter().map(|r| r.0.smap.nonempty).sum();
    let residual = rows.iter().map(|r| r.0.residual).fold(0.0, f64::max);
    let tele = rows
        .iter()
        .map(|r| r.0.telescoping_residual)
        .fold(0.0, f64::max);
    let note = format!(
        "{} fixtures, {pairs} pairs scanned, {nonempty} cubes with a stopping cube",
        rows.len()
    );
    let checks = vec![
        Check::at_most("smap_equivalence", equiv as f64, 0.0).with_note(note.clone()),
        Check::at_most("smap_monotonicity", mono as f64, 0.0).with_note(note.clone()),
        Check::at_least("smap_nonempty", nonempty as f64, 1.0),
        Check::at_most("paraproduct_duality", residual, 1e-12),
        Check::at_most("paraproduct_telescoping", tele, 1e-12),
    ];
    Ok(SuiteOutput {
        checks,
        tables: BTreeMap::new(),
    })
}
