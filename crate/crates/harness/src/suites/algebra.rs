//! Exact martingale identities and layer decay on the random battery.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::Result;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use tblab::accretive::{tau, AccretiveStyle};
use tblab::fixtures::Instance;
use tblab::martingale::{column, MartingaleContext};
use tblab::measure::pairing;
use tblab::seed;

use super::{max_abs, random, Shared};
use crate::report::{Check, SuiteOutput};

/// Worst value of each measured quantity over the battery.
#[derive(Default)]
struct Worst(BTreeMap<&'static str, f64>);

impl Worst {
    fn note(&mut self, key: &'static str, v: f64) {
        let e = self.0.entry(key).or_insert(0.0);
        // NaN must win so that it surfaces as a failure.
        if v.is_nan() || v > *e {
            *e = v;
        }
    }

    fn merge(mut self, other: Worst) -> Worst {
        for (k, v) in other.0 {
            self.note(k, v);
        }
        self
    }

    fn get(&self, key: &str) -> f64 {
        self.0.get(key).copied().unwrap_or(0.0)
    }
}

fn rows_scaled(f: &Array2<f64>, s: &Array1<f64>) -> Array2<f64> {
    let mut out = f.clone();
    for (mut row, &v) in out.outer_iter_mut().zip(s) {
        row *= v;
    }
    out
}

/// `|a - b|_∞ / max(|a|_∞, |b|_∞, floor)`.
fn rel(a: &Array2<f64>, b: &Array2<f64>, floor: f64) -> f64 {
    let scale = max_abs(a).max(max_abs(b)).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        max_abs(&(a - b)) / scale
    }
}

/// `A_k g = E_k(b_k^a g) / E_k b_k^a`, written out from the definition.
fn a_k(ctx: &MartingaleContext, g: &Array2<f64>, k: i32) -> Array2<f64> {
    let inner = ctx.expectation(rows_scaled(g, &ctx.ba(k)).view(), k);
    rows_scaled(&inner, &ctx.eba(k).mapv(|v| 1.0 / v))
}

fn measure(ctx: &MartingaleContext, s: u64, w: &mut Worst) {
    let n = ctx.n_atoms();
    let (mu, index) = (ctx.measure(), ctx.index());
    let delta = ctx.delta();
    let f = random(n, 2, seed::derive(s, "f"));
    let g = random(n, 2, seed::derive(s, "g"));
    let nf = max_abs(&f);

    let rec = ctx.reconstruct(f.view());
    w.note("reconstruction", rec.residual / nf);
    let top = ctx.reconstruct(rec.top.view());
    let mut series = Array2::<f64>::zeros(f.raw_dim());
    let mut largest = max_abs(&rec.top);
    for (_, d) in &top.diffs {
        series += d;
        largest = largest.max(max_abs(d));
    }
    w.note(
        "top_term_series",
        max_abs(&series) / largest.max(f64::MIN_POSITIVE),
    );

    let eks: Vec<Array2<f64>> = (ctx.k_min()..=ctx.top())
        .map(|k| ctx.adapted_expectation(f.view(), k))
        .collect();
    for (i, k) in (ctx.k_min()..=ctx.top()).enumerate() {
        for ej in eks.iter().take(i + 1) {
            let kl = ctx.adapted_expectation(ej.view(), k);
            w.note("adapted_composition", rel(&kl, &eks[i], nf));
        }
    }

    for k in ctx.diff_scales() {
        let d = ctx.adapted_diff(f.view(), k);
        let dd = ctx.adapted_diff(d.view(), k);
        let rhs = &d + &rows_scaled(&ctx.expectation(f.view(), k), &ctx.omega(k));
        w.note("squared_difference", rel(&dd, &rhs, nf));

        let adj = ctx.adapted_diff_adjoint(g.view(), k);
        let formula = a_k(ctx, &g, k - 1) - a_k(ctx, &g, k);
        w.note("adjoint_formula", rel(&adj, &formula, max_abs(&g)));
        let lhs = pairing(mu, adj.view(), f.view());
        let rhs = pairing(mu, g.view(), d.view());
        // Relative to the pairing of absolute values, which bounds the rounding error.
        let abs = |a: &Array2<f64>| a.mapv(f64::abs);
        let scale = pairing(mu, abs(&adj).view(), abs(&f).view()).max(pairing(
            mu,
            abs(&g).view(),
            abs(&d).view(),
        ));
        w.note(
            "adjoint_duality",
            (lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE),
        );

        let chi = ctx.chi(k - 1);
        let same = chi.mapv(|c| 1.0 - c);
        let prev = ctx.eba(k - 1);
        let next = ctx.expectation(column(ctx.ba(k).view()), k - 1);
        let mut worst = 0.0f64;
        for x in 0..n {
            let scale = prev[x].abs().max(next[[x, 0]].abs());
            worst = worst.max((same[x] * (prev[x] - next[[x, 0]])).abs() / scale);
        }
        w.note("unchanged_means", worst);
        w.note(
            "chi_pointwise",
            if chi == ctx.chi_pointwise(k) {
                0.0
            } else {
                1.0
            },
        );

        let om = ctx.omega(k);
        let bound = delta.powi(-2) + delta.powi(-4);
        w.note(
            "omega_sup",
            om.iter().fold(0.0f64, |a, v| a.max(v.abs())) / bound,
        );
        w.note(
            "omega_support",
            (0..n).filter(|&x| chi[x] == 0.0 && om[x] != 0.0).count() as f64,
        );
        let mean = ctx.expectation(column(om.view()), k - 1);
        w.note("omega_mean_zero", max_abs(&mean) / bound);
    }

    let d2 = delta * delta;
    for q in index.ids().filter(|q| q.level > 0) {
        let cq = index.cube(q);
        let d = ctx.adapted_diff_local(f.view(), q);
        let dd = ctx.adapted_diff_local(d.view(), q);
        let avg = |atoms: &[usize], mass: f64| -> Array1<f64> {
            let mut a = Array1::zeros(f.ncols());
            for &x in atoms {
                a.scaled_add(mu.weight(x), &f.row(x));
            }
            a / mass
        };
        let fq = avg(&cq.atoms, cq.mass);
        let wq = ctx.omega_local(q);
        let mut rhs = d.clone();
        for (x, mut row) in rhs.outer_iter_mut().enumerate() {
            if wq[x] != 0.0 {
                row.scaled_add(wq[x], &fq);
            }
        }
        w.note("local_squared_difference", rel(&dd, &rhs, nf));

        let mut sum = Array2::<f64>::zeros(f.raw_dim());
        for child in index.children(q) {
            let ci = index.cube(child);
            let phi = ctx.phi(q, child);
            let fi = avg(&ci.atoms, ci.mass);
            for (x, mut row) in sum.outer_iter_mut().enumerate() {
                if phi[x] != 0.0 {
                    row.scaled_add(phi[x], &fi);
                }
            }
            let integral: f64 = (0..n).map(|x| mu.weight(x) * phi[x]).sum();
            let l1: f64 = (0..n).map(|x| mu.weight(x) * phi[x].abs()).sum();
            w.note("haar_mean_zero", integral.abs() / cq.mass);
            w.note(
                "haar_sup",
                phi.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (2.0 / d2),
            );
            w.note("haar_l1", l1 / (2.0 / d2 * ci.mass));
            w.note(
                "haar_support",
                (0..n)
                    .filter(|&x| phi[x] != 0.0 && cq.atoms.binary_search(&x).is_err())
                    .count() as f64,
            );
        }
        w.note("haar_expansion", max_abs(&(&d - &sum)) / nf);
    }
}

const EXACT: f64 = 1e-12;

/// Family and bound: relative residuals, ratios to the explicit constants, or
/// violation counts.
const IDENTITY_CHECKS: [(&str, f64); 18] = [
    ("reconstruction", 1e-10),
    ("top_term_series", EXACT),
    ("adapted_composition", EXACT),
    ("squared_difference", EXACT),
    ("local_squared_difference", EXACT),
    ("adjoint_formula", EXACT),
    ("adjoint_duality", EXACT),
    ("haar_expansion", EXACT),
    ("haar_sup", 1.0 + EXACT),
    ("haar_l1", 1.0 + EXACT),
    ("haar_support", 0.0),
    ("haar_mean_zero", EXACT),
    ("omega_support", 0.0),
    ("omega_sup", 1.0 + EXACT),
    ("omega_mean_zero", EXACT),
    ("unchanged_means", EXACT),
    ("chi_pointwise", 0.0),
    ("nontrivial_layers", 0.0),
];

pub fn identities(shared: &Shared) -> Result<SuiteOutput> {
    let battery = shared.battery()?;
    let start = Instant::now();
    let worst = battery
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut w = Worst::default();
            measure(
                &inst.ctx,
                seed::derive_indexed(shared.cfg.seed, "identities", &[i as i64]),
                &mut w,
            );
            let trivial =
                inst.spec.style != AccretiveStyle::Indicator && inst.ctx.layers().is_trivial();
            w.note("nontrivial_layers", if trivial { 1.0 } else { 0.0 });
            w
        })
        .reduce(Worst::default, Worst::merge);
    let elapsed = start.elapsed();
    let note = format!("{} fixtures", battery.len());
    let checks = IDENTITY_CHECKS
        .iter()
        .map(|&(name, bound)| {
            Check::at_most(name, worst.get(name), bound)
                .with_note(note.clone())
                .with_runtime(elapsed)
        })
        .collect();
    Ok(SuiteOutput {
        checks,
        tables: BTreeMap::new(),
    })
}

pub fn layers(shared: &Shared) -> Result<SuiteOutput> {
    let battery = shared.battery()?;
    let rows: Vec<(f64, f64, bool, usize)> = battery
        .par_iter()
        .map(|inst: &Instance| {
            let l = inst.ctx.layers();
            let index = inst.ctx.index();
            let rep = l.decay_report(index, inst.spec.delta);
            let ratio = rep
                .rows
                .iter()
                .map(|r| r.ratio / r.bound)
                .fold(0.0, f64::max);
            let tau_gap = if l.depth() > 1 {
                tau(inst.spec.delta) - l.tau_emp(index)
            } else {
                f64::NEG_INFINITY
            };
            (ratio, tau_gap, rep.pass, l.depth())
        })
        .collect();
    let worst = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let fails = rows.iter().filter(|r| !r.2).count();
    let tau_gap = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let deepest = rows.iter().map(|r| r.3).max().unwrap_or(0);
    let note = format!("{} fixtures, deepest layer stack {deepest}", battery.len());
    let checks = vec![
        Check::at_most("layer_decay", worst, 1.0 + 1e-12).with_note(note.clone()),
        Check::at_most("layer_decay_failures", fails as f64, 0.0).with_note(note.clone()),
        Check::at_most("layer_tau", tau_gap.max(-1.0), 1e-12)
            .with_note("largest tau(delta) - empirical tau".to_string()),
    ];
    Ok(SuiteOutput {
        checks,
        tables: BTreeMap::new(),
    })
}
