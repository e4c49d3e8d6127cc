//! Suite orchestration. Each suite turns config into a list of checks; module
//! errors surface as a failing `error` check instead of aborting the run.

mod algebra;
mod decoupling;
mod geometry;
mod operator;
mod probability;
mod squares;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use anyhow::{anyhow, Result};
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use tblab::accretive::AccretiveStyle;
use tblab::fixtures::{FixtureSpec, Instance};
use tblab::measure::Profile;
use tblab::seed;

use crate::config::ExperimentConfig;
use crate::report::{Check, SuiteOutput, SuiteReport};

pub const PROFILES: [Profile; 3] = [Profile::Uniform, Profile::FractalCantor, Profile::Clustered];

/// Fixture sets shared between suites, built on first use.
pub struct Shared<'a> {
    pub cfg: &'a ExperimentConfig,
    battery: OnceLock<Result<Vec<Instance>, String>>,
    ladders: OnceLock<Result<BTreeMap<LadderKey, Vec<Instance>>, String>>,
}

/// One size series of single-grid instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LadderKey {
    pub style: AccretiveStyle,
    /// `δ` in thousandths.
    pub delta_milli: u32,
    pub dim: usize,
    pub atoms: usize,
}

impl LadderKey {
    fn tuple(&self) -> (u8, u32, usize, usize) {
        (self.style as u8, self.delta_milli, self.dim, self.atoms)
    }
}

impl Ord for LadderKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.tuple().cmp(&other.tuple())
    }
}

impl PartialOrd for LadderKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> Shared<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        Self {
            cfg,
            battery: OnceLock::new(),
            ladders: OnceLock::new(),
        }
    }

    /// Random fixtures cycling through the configured `δ`, styles, dimensions
    /// and profiles; non-indicator fixtures are redrawn until their layers are
    /// nontrivial.
    pub fn battery(&self) -> Result<&[Instance]> {
        let b = self
            .battery
            .get_or_init(|| build_battery(self.cfg).map_err(|e| format!("{e:#}")));
        b.as_deref().map_err(|e| anyhow!("battery: {e}"))
    }

    /// Instances for the size-doubling suites, with layers at least two deep.
    pub fn ladders(&self) -> Result<&BTreeMap<LadderKey, Vec<Instance>>> {
        let l = self
            .ladders
            .get_or_init(|| build_ladders(self.cfg).map_err(|e| format!("{e:#}")));
        l.as_ref().map_err(|e| anyhow!("ladders: {e}"))
    }
}

fn build_battery(cfg: &ExperimentConfig) -> Result<Vec<Instance>> {
    let b = &cfg.battery;
    (0..b.fixtures)
        .into_par_iter()
        .map(|i| {
            let delta = b.deltas[i % b.deltas.len()];
            let dim = b.dims[(i / b.styles.len()) % b.dims.len()];
            let profile = PROFILES[i % PROFILES.len()];
            let mut last = None;
            // Some styles never stop in some dimensions; fall through to the next one.
            for shift in 0..b.styles.len() {
                let style = b.styles[(i + shift) % b.styles.len()];
                for attempt in 0..256 {
                    let s = seed::derive_indexed(
                        cfg.seed,
                        "battery",
                        &[i as i64, shift as i64, attempt],
                    );
                    let spec = FixtureSpec::new(s, dim, b.atoms, delta, style, cfg.dyadic.r)?
                        .with_profile(profile);
                    match Instance::build(&spec) {
                        Ok(inst)
                            if style == AccretiveStyle::Indicator
                                || !inst.ctx.layers().is_trivial() =>
                        {
                            return Ok(inst)
                        }
                        Ok(_) => {}
                        Err(e) => last = Some(e),
                    }
                }
            }
            Err(match last {
                Some(e) => anyhow!("fixture {i}: {e}"),
                None => anyhow!("fixture {i}: no draw with nontrivial layers"),
            })
        })
        .collect()
}

fn ladder_keys(cfg: &ExperimentConfig) -> Vec<LadderKey> {
    let mut keys = Vec::new();
    let s = &cfg.sqfn;
    for &style in &s.styles {
        for &delta in &s.deltas {
            for &dim in &s.dims {
                for &atoms in &s.sizes {
                    keys.push(LadderKey {
                        style,
                        delta_milli: (delta * 1000.0).round() as u32,
                        dim,
                        atoms,
                    });
                }
            }
        }
    }
    let d = &cfg.decoupling;
    for &dim in &d.dims {
        for &atoms in &d.sizes {
            let k = LadderKey {
                style: AccretiveStyle::SignedPerturbation,
                delta_milli: (d.delta * 1000.0).round() as u32,
                dim,
                atoms,
            };
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys
}

fn build_ladders(cfg: &ExperimentConfig) -> Result<BTreeMap<LadderKey, Vec<Instance>>> {
    let keys = ladder_keys(cfg);
    let built: Vec<Result<(LadderKey, Vec<Instance>)>> = keys
        .par_iter()
        .map(|&key| {
            let mut out = Vec::new();
            let delta = key.delta_milli as f64 / 1000.0;
            for attempt in 0..(64 * cfg.sqfn.instances.max(1)) {
                if out.len() == cfg.sqfn.instances {
                    break;
                }
                let s = seed::derive_indexed(
                    cfg.seed,
                    "ladder",
                    &[
                        key.dim as i64,
                        key.atoms as i64,
                        key.style as i64,
                        attempt as i64,
                    ],
                );
                let spec =
                    FixtureSpec::new(s, key.dim, key.atoms, delta, key.style, cfg.sqfn.window_r)?;
                if let Ok(inst) = Instance::build(&spec) {
                    if inst.ctx.layers().depth() >= 2 {
                        out.push(inst);
                    }
                }
            }
            if out.len() < cfg.sqfn.instances {
                return Err(anyhow!("only {} layered instances for {key:?}", out.len()));
            }
            Ok((key, out))
        })
        .collect();
    built.into_iter().collect()
}

pub fn delta_key(delta: f64) -> u32 {
    (delta * 1000.0).round() as u32
}

pub fn style_name(s: AccretiveStyle) -> &'static str {
    match s {
        AccretiveStyle::Indicator => "indicator",
        AccretiveStyle::SignedPerturbation => "signed-perturbation",
        AccretiveStyle::Oscillatory => "oscillatory",
    }
}

/// Uniform values in `[-1, 1)`.
pub fn random(n: usize, m: usize, s: u64) -> Array2<f64> {
    let mut rng = seed::rng(s);
    Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0))
}

pub fn max_abs(f: &Array2<f64>) -> f64 {
    f.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Per-instance values at one size. Growth checks follow their mean across
/// instances, with the replicate stderr as slack.
#[derive(Debug, Clone, Default)]
pub struct Replicates(pub Vec<f64>);

impl Replicates {
    pub fn push(&mut self, v: f64) {
        self.0.push(v);
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len().max(1) as f64
    }

    pub fn stderr(&self) -> f64 {
        let k = self.0.len();
        if k < 2 {
            return 0.0;
        }
        let m = self.mean();
        let var = self.0.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Largest consecutive growth of a doubling series, with and without the
/// `3σ` slack on both ends.
pub fn growth_with_slack(values: &[f64], stderrs: &[f64]) -> (f64, f64) {
    let raw = tblab::randnorm::doubling_growth(values);
    let slack = values
        .windows(2)
        .zip(stderrs.windows(2))
        .map(|(v, s)| (v[1] - 3.0 * s[1]).max(0.0) / (v[0] + 3.0 * s[0]))
        .fold(0.0, f64::max);
    (raw, slack)
}

type SuiteFn = fn(&Shared) -> Result<SuiteOutput>;

fn suite_fn(name: &str) -> Option<SuiteFn> {
    Some(match name {
        "identities" => algebra::identities,
        "layers" => algebra::layers,
        "badcubes" => probability::badcubes,
        "sqfn" => squares::sqfn,
        "carleson" => squares::carleson,
        "decoupling" => decoupling::decoupling,
        "matrix" => operator::matrix,
        "paraproduct" => operator::paraproduct,
        "comparable" => geometry::comparable,
        "ledger" => operator::ledger,
        _ => return None,
    })
}

/// Run one suite; a module error becomes a failing check.
pub fn run_one(shared: &Shared, name: &str) -> SuiteOutput {
    let start = Instant::now();
    let result = match suite_fn(name) {
        Some(f) => f(shared),
        None => Err(anyhow!("unknown suite {name}")),
    };
    let mut out = result.unwrap_or_else(|e| SuiteOutput {
        checks: vec![Check::failure("error", format!("{name}: {e:#}"))],
        tables: BTreeMap::new(),
    });
    let elapsed = start.elapsed();
    for c in out.checks.iter_mut().filter(|c| c.runtime.is_zero()) {
        c.runtime = elapsed;
    }
    out
}

/// Run the selected suites in name order.
pub fn run(cfg: &ExperimentConfig) -> SuiteReport {
    let shared = Shared::new(cfg);
    let mut names: Vec<&str> = cfg.suites.iter().map(String::as_str).collect();
    names.sort_unstable();
    names.dedup();
    let mut report = SuiteReport::new(cfg);
    for name in names {
        report.insert(name, run_one(&shared, name));
    }
    report
}
