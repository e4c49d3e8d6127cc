//! Monte Carlo probability of bad cubes over random grids.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::Result;
use tblab::grid::{bad_probability_mc, DyadicParams, QShape};
use tblab::seed;

use super::Shared;
use crate::report::{Check, SuiteOutput, Table};

/// Lower corners of the unit test cube: the origin and a generic point.
fn corners(dim: usize) -> [Vec<f64>; 2] {
    [
        vec![0.0; dim],
        (0..dim).map(|a| 0.3719 + 0.2113 * a as f64).collect(),
    ]
}

pub fn badcubes(shared: &Shared) -> Result<SuiteOutput> {
    let cfg = shared.cfg;
    let b = &cfg.badcubes;
    let mut checks = Vec::new();
    let mut table = Table::new(&[
        "gamma", "r", "dim", "n", "corner", "p_hat", "stderr", "bound", "trials",
    ]);
    for &gamma in &b.gammas {
        for &r in &b.rs {
            let params = DyadicParams::new(gamma, r, cfg.dyadic.alpha, cfg.measure.d)?;
            for &dim in &b.dims {
                for (c, corner) in corners(dim).into_iter().enumerate() {
                    for &n in &b.ns {
                        let s = seed::derive_indexed(
                            cfg.seed,
                            "badcubes",
                            &[(gamma * 1e3) as i64, r as i64, dim as i64, c as i64, n],
                        );
                        let start = Instant::now();
                        let est = bad_probability_mc(
                            &QShape {
                                corner: corner.clone(),
                            },
                            n,
                            &params,
                            b.trials,
                            s,
                        )?;
                        let name = format!(
                            "bad_probability[gamma={gamma},r={r},N={dim},n={n},corner={c}]"
                        );
                        checks.push(
                            Check::at_most_mc(name, est.p_hat, est.bound, est.stderr)
                                .with_note(format!("{} trials", est.trials))
                                .with_runtime(start.elapsed()),
                        );
                        table.push([
                            gamma.to_string(),
                            r.to_string(),
                            dim.to_string(),
                            n.to_string(),
                            c.to_string(),
                            est.p_hat.to_string(),
                            est.stderr.to_string(),
                            est.bound.to_string(),
                            est.trials.to_string(),
                        ]);
                    }
                }
            }
        }
    }
    Ok(SuiteOutput {
        checks,
        tables: BTreeMap::from([("bad_probability".to_string(), table)]),
    })
}
